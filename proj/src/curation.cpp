#include "ssvg/curation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ssvg {

double robustness(const Box& reg_box, const Box& quant_box) {
  return giou(to_corners(reg_box), to_corners(quant_box));
}

QuantizedBox argmax_bins(const Mat& quant_logits) {
  if (quant_logits.rows != 4) throw std::invalid_argument("argmax_bins: expected 4 x B logits");
  int arg[4];
  for (int c = 0; c < 4; ++c) {
    arg[c] = 0;
    for (int b = 1; b < quant_logits.cols; ++b)
      if (quant_logits(c, b) > quant_logits(c, arg[c])) arg[c] = b;
  }
  return {arg[0], arg[1], arg[2], arg[3]};
}

double confidence(const Mat& quant_logits, ConfidenceCombine combine) {
  if (quant_logits.rows != 4 || quant_logits.cols < 2)
    throw std::invalid_argument("confidence: expected 4 x B logits");
  double maxp[2];
  for (int c = 0; c < 2; ++c) {  // x and y rows only
    const double* lr = quant_logits.row(c);
    double mx = lr[0];
    for (int b = 1; b < quant_logits.cols; ++b) mx = std::max(mx, lr[b]);
    double sum = 0.0;
    double top = 0.0;
    for (int b = 0; b < quant_logits.cols; ++b) {
      const double e = std::exp(lr[b] - mx);
      sum += e;
      top = std::max(top, e);
    }
    maxp[c] = top / sum;
  }
  return combine == ConfidenceCombine::kProduct ? maxp[0] * maxp[1] : 0.5 * (maxp[0] + maxp[1]);
}

std::vector<double> minmax_normalize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("minmax_normalize: empty pool");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> out(values.size());
  if (hi == lo) {
    std::fill(out.begin(), out.end(), 1.0);
    return out;
  }
  const double inv = 1.0 / (hi - lo);
  for (size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) * inv;
  return out;
}

std::vector<double> fuse(const std::vector<ScoreTriple>& triples) {
  std::vector<double> f(triples.size()), r(triples.size()), c(triples.size());
  for (size_t i = 0; i < triples.size(); ++i) {
    f[i] = triples[i].faith;
    r[i] = triples[i].robust;
    c[i] = triples[i].conf;
  }
  const auto nf = minmax_normalize(f);
  const auto nr = minmax_normalize(r);
  const auto nc = minmax_normalize(c);
  std::vector<double> out(triples.size());
  for (size_t i = 0; i < triples.size(); ++i) out[i] = nf[i] * nr[i] * nc[i];
  return out;
}

void fuse_pool(std::vector<PseudoLabel>& pool) {
  std::vector<ScoreTriple> triples(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) triples[i] = pool[i].scores;
  const auto fused = fuse(triples);
  for (size_t i = 0; i < pool.size(); ++i) pool[i].i_act = fused[i];
}

std::vector<PseudoLabel> sample_top(const std::vector<PseudoLabel>& pool, double n_percent,
                                    int base) {
  if (n_percent <= 0.0 || n_percent > 100.0)
    throw std::invalid_argument("sample_top: n_percent must be in (0, 100]");
  const size_t budget = static_cast<size_t>(std::llround(n_percent / 100.0 * base));
  std::vector<PseudoLabel> sorted = pool;
  std::sort(sorted.begin(), sorted.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
    if (a.i_act != b.i_act) return a.i_act > b.i_act;
    return a.sample_id < b.sample_id;
  });
  if (budget < sorted.size()) {
    sorted.resize(budget);
  } else if (budget > sorted.size()) {
    std::fprintf(stderr, "[ssvg] sample_top: pool (%zu) smaller than budget (%zu), taking all\n",
                 sorted.size(), budget);
  }
  for (auto& pl : sorted) pl.selected = true;
  return sorted;
}

void save_pseudo_manifest(const std::string& path, const std::vector<PseudoLabel>& pool) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_pseudo_manifest: cannot open " + path);
  f << "sample_id,cx,cy,w,h,bx,by,bw,bh,faith,robust,conf,i_act,selected\n";
  char buf[320];
  for (const auto& pl : pool) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%.10g,%.10g,%.10g,%.10g,%d,%d,%d,%d,%.10g,%.10g,%.10g,%.10g,%d\n",
                  pl.sample_id, pl.box.cx, pl.box.cy, pl.box.w, pl.box.h, pl.qbox.bx, pl.qbox.by,
                  pl.qbox.bw, pl.qbox.bh, pl.scores.faith, pl.scores.robust, pl.scores.conf,
                  pl.i_act, pl.selected ? 1 : 0);
    f << buf;
  }
}

}  // namespace ssvg
