#include "ssvg/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ssvg/parallel.hpp"
#include "ssvg/pngplot.hpp"
#include "ssvg/rng.hpp"

namespace ssvg {

EvalResult acc_at_05(const ModelParams& params, const std::vector<Sample>& testset, int threads) {
  if (testset.empty()) throw std::invalid_argument("acc_at_05: empty test set");
  const int n = static_cast<int>(testset.size());
  std::vector<uint8_t> hit_reg(static_cast<size_t>(n)), hit_qt(static_cast<size_t>(n));
  parallel_for(n, threads, [&](int i) {
    const Sample& s = testset[static_cast<size_t>(i)];
    if (!s.gold) throw std::invalid_argument("acc_at_05: test sample without gold box");
    ForwardResult fw;
    forward(params, s.scene, s.query.tokens, fw);
    const CornerBox gold = to_corners(*s.gold);
    hit_reg[static_cast<size_t>(i)] = iou(to_corners(fw.box), gold) > 0.5 ? 1 : 0;
    const Box qbox = dequantize(argmax_bins(fw.quant_logits), params.cfg.bins);
    hit_qt[static_cast<size_t>(i)] = iou(to_corners(qbox), gold) > 0.5 ? 1 : 0;
  });
  EvalResult out;
  out.n = n;
  int r = 0, q = 0;
  for (int i = 0; i < n; ++i) {
    r += hit_reg[static_cast<size_t>(i)];
    q += hit_qt[static_cast<size_t>(i)];
  }
  out.acc_reg = 100.0 * r / n;
  out.acc_quant = 100.0 * q / n;
  return out;
}

double accuracy_of_top(const std::vector<const PseudoLabel*>& ranked,
                       const std::unordered_map<int, Box>& gold_by_id, int threshold_percent) {
  const size_t k = static_cast<size_t>(
      std::llround(threshold_percent / 100.0 * static_cast<double>(ranked.size())));
  const size_t take = std::max<size_t>(1, std::min(k, ranked.size()));
  int hits = 0;
  for (size_t i = 0; i < take; ++i) {
    const PseudoLabel* pl = ranked[i];
    const auto it = gold_by_id.find(pl->sample_id);
    if (it == gold_by_id.end()) throw std::invalid_argument("accuracy_of_top: missing gold box");
    if (iou(to_corners(pl->box), to_corners(it->second)) > 0.5) ++hits;
  }
  return 100.0 * hits / static_cast<double>(take);
}

double curve_auc(const std::vector<double>& accuracies) {
  if (accuracies.empty()) return 0.0;
  double s = 0.0;
  for (double a : accuracies) s += a;
  return s / static_cast<double>(accuracies.size());
}

QualityCurve quality_curve(const std::vector<PseudoLabel>& pool,
                           const std::unordered_map<int, Box>& gold_by_id, uint64_t random_seed) {
  if (pool.size() < 10) throw std::invalid_argument("quality_curve: pool must have >= 10 entries");
  QualityCurve out;
  out.thresholds = {50, 40, 30, 20, 10};

  auto ranked_by = [&](auto key) {
    std::vector<const PseudoLabel*> v(pool.size());
    for (size_t i = 0; i < pool.size(); ++i) v[i] = &pool[i];
    std::stable_sort(v.begin(), v.end(), [&](const PseudoLabel* a, const PseudoLabel* b) {
      const double ka = key(*a), kb = key(*b);
      if (ka != kb) return ka > kb;
      return a->sample_id < b->sample_id;
    });
    return v;
  };
  auto curve_of = [&](const std::vector<const PseudoLabel*>& ranked) {
    std::vector<double> accs;
    for (int th : out.thresholds) accs.push_back(accuracy_of_top(ranked, gold_by_id, th));
    return accs;
  };

  // the random control is the mean over several shuffles, estimating the
  // no-signal expectation rather than one noisy draw
  {
    std::vector<const PseudoLabel*> shuffled(pool.size());
    for (size_t i = 0; i < pool.size(); ++i) shuffled[i] = &pool[i];
    std::vector<double> mean(out.thresholds.size(), 0.0);
    const int reps = 16;
    for (int rep = 0; rep < reps; ++rep) {
      Rng rng(substream(random_seed, "ranker-random", static_cast<uint64_t>(rep)));
      rng.shuffle(shuffled);
      const auto accs = curve_of(shuffled);
      for (size_t i = 0; i < accs.size(); ++i) mean[i] += accs[i] / reps;
    }
    out.curves.emplace_back("random", std::move(mean));
  }
  out.curves.emplace_back("robust", curve_of(ranked_by([](const PseudoLabel& p) { return p.scores.robust; })));
  out.curves.emplace_back("conf", curve_of(ranked_by([](const PseudoLabel& p) { return p.scores.conf; })));
  out.curves.emplace_back("faith", curve_of(ranked_by([](const PseudoLabel& p) { return p.scores.faith; })));
  out.curves.emplace_back("fused", curve_of(ranked_by([](const PseudoLabel& p) { return p.i_act; })));
  return out;
}

std::vector<AblationRow> ablation(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                                  const std::vector<std::pair<std::string, MetricMask>>& variants) {
  DataSplits sp = make_splits(dataset, cfg);
  ModelParams params = init_params(cfg.model, substream(cfg.seed, "init"));
  OptState opt = make_opt_state(params);
  burn_in(params, opt, sp.labeled, cfg, nullptr);

  std::vector<AblationRow> rows;
  for (const auto& [name, mask] : variants) {
    ModelParams p = params;
    OptState o = opt;
    StageOptions so;
    so.mask = mask;
    so.stage_index = 1;
    const StageReport rep = active_stage(p, o, sp.labeled, sp.unlabeled, sp.test, cfg, so);
    AblationRow row;
    row.name = name;
    row.mask = mask;
    row.acc_reg = rep.eval_acc_reg;
    row.acc_quant = rep.eval_acc_quant;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- emission ----------------------------------------------------------------

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

void write_curves_csv(const std::string& path, const QualityCurve& curve) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_curves_csv: cannot open " + path);
  f << "ranker";
  for (int th : curve.thresholds) f << ",top" << th;
  f << "\n";
  for (const auto& [name, accs] : curve.curves) {
    f << name;
    for (double a : accs) f << "," << fmt(a);
    f << "\n";
  }
}

QualityCurve read_curves_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_curves_csv: cannot open " + path);
  QualityCurve out;
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("read_curves_csv: empty file");
  auto head = split_csv_line(line);
  for (size_t i = 1; i < head.size(); ++i)
    out.thresholds.push_back(std::atoi(head[i].c_str() + 3));  // strip "top"
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    std::vector<double> accs;
    for (size_t i = 1; i < cells.size(); ++i) accs.push_back(std::strtod(cells[i].c_str(), nullptr));
    out.curves.emplace_back(cells[0], std::move(accs));
  }
  return out;
}

void write_curves_png(const std::string& path, const QualityCurve& curve) {
  std::vector<PlotSeries> series;
  for (const auto& [name, accs] : curve.curves) {
    PlotSeries s;
    s.label = name;
    for (size_t i = 0; i < curve.thresholds.size(); ++i) {
      s.xs.push_back(curve.thresholds[i]);
      s.ys.push_back(accs[i]);
    }
    series.push_back(std::move(s));
  }
  line_plot_png(path, "PSEUDO-LABEL QUALITY BY RANKER", series, "TOP-K %", "ACC@0.5 %");
}

void write_stage_reports_csv(const std::string& path, const std::vector<StageReport>& reports) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_stage_reports_csv: cannot open " + path);
  f << "stage,pool_size,selected,mean_fused,steps,acc_reg,acc_quant\n";
  for (const auto& r : reports) {
    f << r.stage << "," << r.pool_size << "," << r.selected_count << "," << fmt(r.mean_fused) << ","
      << r.steps << "," << fmt(r.eval_acc_reg) << "," << fmt(r.eval_acc_quant) << "\n";
  }
}

std::vector<StageReport> read_stage_reports_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_stage_reports_csv: cannot open " + path);
  std::vector<StageReport> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto c = split_csv_line(line);
    if (c.size() != 7) throw std::runtime_error("read_stage_reports_csv: bad row: " + line);
    StageReport r;
    r.stage = std::atoi(c[0].c_str());
    r.pool_size = std::atoi(c[1].c_str());
    r.selected_count = std::atoi(c[2].c_str());
    r.mean_fused = std::strtod(c[3].c_str(), nullptr);
    r.steps = std::atoi(c[4].c_str());
    r.eval_acc_reg = std::strtod(c[5].c_str(), nullptr);
    r.eval_acc_quant = std::strtod(c[6].c_str(), nullptr);
    out.push_back(r);
  }
  return out;
}

void write_losses_csv(const std::string& path, const std::vector<StageReport>& reports) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_losses_csv: cannot open " + path);
  f << "stage,epoch,loss\n";
  for (const auto& r : reports) {
    for (size_t e = 0; e < r.epoch_losses.size(); ++e)
      f << r.stage << "," << e << "," << fmt(r.epoch_losses[e]) << "\n";
  }
}

void write_accuracy_png(const std::string& path, const std::vector<StageReport>& reports) {
  PlotSeries reg, qt;
  reg.label = "REG HEAD";
  qt.label = "QUANT HEAD";
  for (const auto& r : reports) {
    if (r.eval_acc_reg < 0) continue;
    reg.xs.push_back(r.stage);
    reg.ys.push_back(r.eval_acc_reg);
    qt.xs.push_back(r.stage);
    qt.ys.push_back(r.eval_acc_quant);
  }
  line_plot_png(path, "TEST ACCURACY BY STAGE", {reg, qt}, "STAGE", "ACC@0.5 %");
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_ablation_csv: cannot open " + path);
  f << "name,faith,robust,conf,acc_reg,acc_quant\n";
  for (const auto& r : rows) {
    f << r.name << "," << (r.mask.faith ? 1 : 0) << "," << (r.mask.robust ? 1 : 0) << ","
      << (r.mask.conf ? 1 : 0) << "," << fmt(r.acc_reg) << "," << fmt(r.acc_quant) << "\n";
  }
}

void write_ablation_png(const std::string& path, const std::vector<AblationRow>& rows) {
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& r : rows) {
    labels.push_back(r.name);
    values.push_back(r.acc_reg);
  }
  bar_plot_png(path, "ONE-STAGE ACCURACY BY METRIC SUBSET", labels, values);
}

}  // namespace ssvg
