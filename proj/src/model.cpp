#include "ssvg/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ssvg/rng.hpp"

namespace ssvg {

namespace {

constexpr double kLnEps = 1e-5;

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& f) {
  f("visual_w", Partition::kBackbone, p.visual_w);
  f("visual_b", Partition::kBackbone, p.visual_b);
  f("text_emb", Partition::kBackbone, p.text_emb);
  f("pos_emb", Partition::kBackbone, p.pos_emb);
  f("query_emb", Partition::kFusion, p.query_emb);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    auto& lp = p.layers[l];
    const std::string base = "layers." + std::to_string(l) + ".";
    f(base + "wq", Partition::kFusion, lp.wq);
    f(base + "bq", Partition::kFusion, lp.bq);
    f(base + "wk", Partition::kFusion, lp.wk);
    f(base + "bk", Partition::kFusion, lp.bk);
    f(base + "wv", Partition::kFusion, lp.wv);
    f(base + "bv", Partition::kFusion, lp.bv);
    f(base + "wo", Partition::kFusion, lp.wo);
    f(base + "bo", Partition::kFusion, lp.bo);
    f(base + "ln1_g", Partition::kFusion, lp.ln1_g);
    f(base + "ln1_b", Partition::kFusion, lp.ln1_b);
    f(base + "ln2_g", Partition::kFusion, lp.ln2_g);
    f(base + "ln2_b", Partition::kFusion, lp.ln2_b);
    f(base + "ff_w1", Partition::kFusion, lp.ff_w1);
    f(base + "ff_b1", Partition::kFusion, lp.ff_b1);
    f(base + "ff_w2", Partition::kFusion, lp.ff_w2);
    f(base + "ff_b2", Partition::kFusion, lp.ff_b2);
  }
  f("lnf_g", Partition::kFusion, p.lnf_g);
  f("lnf_b", Partition::kFusion, p.lnf_b);
  f("reg_w1", Partition::kHeads, p.reg_w1);
  f("reg_b1", Partition::kHeads, p.reg_b1);
  f("reg_w2", Partition::kHeads, p.reg_w2);
  f("reg_b2", Partition::kHeads, p.reg_b2);
  f("qt_w1", Partition::kHeads, p.qt_w1);
  f("qt_b1", Partition::kHeads, p.qt_b1);
  f("qt_w2", Partition::kHeads, p.qt_w2);
  f("qt_b2", Partition::kHeads, p.qt_b2);
}

void layer_norm_forward(const Mat& x, const Mat& gain, const Mat& bias, Mat& out, Mat& mean,
                        Mat& rstd) {
  const int rows = x.rows, cols = x.cols;
  if (out.rows != rows || out.cols != cols) out.resize(rows, cols);
  if (mean.rows != rows || mean.cols != 1) mean.resize(rows, 1);
  if (rstd.rows != rows || rstd.cols != 1) rstd.resize(rows, 1);
  for (int i = 0; i < rows; ++i) {
    const double* xr = x.row(i);
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= cols;
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mean(i, 0) = mu;
    rstd(i, 0) = rs;
    double* o = out.row(i);
    for (int j = 0; j < cols; ++j) o[j] = gain(0, j) * (xr[j] - mu) * rs + bias(0, j);
  }
}

// dx for y = g*(x-mu)*rstd + b; also accumulates d_gain/d_bias when given.
void layer_norm_backward(const Mat& dy, const Mat& x, const Mat& mean, const Mat& rstd,
                         const Mat& gain, Mat& dx, Mat* d_gain, Mat* d_bias) {
  const int rows = x.rows, cols = x.cols;
  if (dx.rows != rows || dx.cols != cols) dx.resize(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const double* dyr = dy.row(i);
    const double* xr = x.row(i);
    const double mu = mean(i, 0);
    const double rs = rstd(i, 0);
    double m1 = 0.0;  // mean(dxhat)
    double m2 = 0.0;  // mean(dxhat * xhat)
    for (int j = 0; j < cols; ++j) {
      const double xhat = (xr[j] - mu) * rs;
      const double dxh = dyr[j] * gain(0, j);
      m1 += dxh;
      m2 += dxh * xhat;
      if (d_gain) (*d_gain)(0, j) += dyr[j] * xhat;
      if (d_bias) (*d_bias)(0, j) += dyr[j];
    }
    m1 /= cols;
    m2 /= cols;
    double* dxr = dx.row(i);
    for (int j = 0; j < cols; ++j) {
      const double xhat = (xr[j] - mu) * rs;
      const double dxh = dyr[j] * gain(0, j);
      dxr[j] = rs * (dxh - m1 - xhat * m2);
    }
  }
}

void add_bias(Mat& m, const Mat& bias) {
  for (int i = 0; i < m.rows; ++i) {
    double* r = m.row(i);
    for (int j = 0; j < m.cols; ++j) r[j] += bias(0, j);
  }
}

void add_colsum(const Mat& src, Mat& dst) {
  for (int i = 0; i < src.rows; ++i) {
    const double* r = src.row(i);
    for (int j = 0; j < src.cols; ++j) dst(0, j) += r[j];
  }
}

void copy_head_cols(const Mat& packed, int head, int dh, Mat& out) {
  if (out.rows != packed.rows || out.cols != dh) out.resize(packed.rows, dh);
  const int off = head * dh;
  for (int i = 0; i < packed.rows; ++i) {
    const double* src = packed.row(i) + off;
    double* dst = out.row(i);
    for (int j = 0; j < dh; ++j) dst[j] = src[j];
  }
}

void write_head_cols(Mat& packed, int head, int dh, const Mat& in) {
  const int off = head * dh;
  for (int i = 0; i < packed.rows; ++i) {
    const double* src = in.row(i);
    double* dst = packed.row(i) + off;
    for (int j = 0; j < dh; ++j) dst[j] = src[j];
  }
}

void softmax_rows(Mat& m) {
  for (int i = 0; i < m.rows; ++i) {
    double* r = m.row(i);
    double mx = r[0];
    for (int j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (int j = 0; j < m.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < m.cols; ++j) r[j] *= inv;
  }
}

// dz = a .* (da - sum(da .* a)) rowwise, for a = softmax(z).
void softmax_backward_rows(const Mat& a, const Mat& da, Mat& dz) {
  if (dz.rows != a.rows || dz.cols != a.cols) dz.resize(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    const double* dar = da.row(i);
    double dot = 0.0;
    for (int j = 0; j < a.cols; ++j) dot += ar[j] * dar[j];
    double* dzr = dz.row(i);
    for (int j = 0; j < a.cols; ++j) dzr[j] = ar[j] * (dar[j] - dot);
  }
}

// Reused temporaries for the hot forward/backward path.
struct Scratch {
  Mat qh, kh, vh, z, ctxh;
  Mat d_ctx, d_q, d_k, d_v, d_ctx_h, d_a, d_z, d_qh, d_kh, d_vh;
  Mat d_ln1, d_ln2, d_res1, d_x, d_tmp;
  Mat d_ff_act, d_ff_pre;
  Mat d_y, d_s;
  Mat d_reg_logit, d_reg_h, d_reg_h_pre, d_qt_flat, d_qt_h, d_qt_h_pre;
  Mat x_vis_rows;
};

thread_local Scratch g_scratch;

void embed_tokens(const ModelParams& p, const Scene& scene, const std::vector<int>& tokens,
                  Mat& x0, Mat& feat) {
  const ModelConfig& cfg = p.cfg;
  const int S = cfg.seq_len();
  const int V = cfg.visual_tokens();
  const int d = cfg.d_model;
  if (scene.grid != cfg.grid) throw std::invalid_argument("forward: scene grid != model grid");
  if (static_cast<int>(tokens.size()) > cfg.t_max)
    throw std::invalid_argument("forward: query longer than t_max");
  if (x0.rows != S || x0.cols != d) x0.resize(S, d);

  feat = scene_features(scene);

  // The query token starts from its learned embedding plus a mean-pooled text
  // summary, so token-to-cell matching is expressible from the first layer.
  for (int j = 0; j < d; ++j) x0(0, j) = p.query_emb(0, j) + p.pos_emb(0, j);
  if (!tokens.empty()) {
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (int tok : tokens) {
      const double* er = p.text_emb.row(tok);
      for (int j = 0; j < d; ++j) x0(0, j) += inv * er[j];
    }
  }
  for (int i = 0; i < V; ++i) {
    double* xr = x0.row(1 + i);
    const double* fr = feat.row(i);
    for (int j = 0; j < d; ++j) {
      double acc = p.visual_b(0, j) + p.pos_emb(1 + i, j);
      for (int k = 0; k < cfg.feat_dim; ++k) acc += fr[k] * p.visual_w(k, j);
      xr[j] = acc;
    }
  }
  for (int t = 0; t < cfg.t_max; ++t) {
    const int tok = t < static_cast<int>(tokens.size()) ? tokens[static_cast<size_t>(t)] : vocab::kPad;
    if (tok < 0 || tok >= cfg.vocab) throw std::invalid_argument("forward: token id out of range");
    double* xr = x0.row(1 + V + t);
    const double* er = p.text_emb.row(tok);
    const double* pr = p.pos_emb.row(1 + V + t);
    for (int j = 0; j < d; ++j) xr[j] = er[j] + pr[j];
  }
}

}  // namespace

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::kBackbone: return "backbone";
    case Partition::kFusion: return "fusion";
    case Partition::kHeads: return "heads";
  }
  return "?";
}

void for_each_param(ModelParams& p,
                    const std::function<void(const std::string&, Partition, Mat&)>& f) {
  visit_params(p, f);
}

void for_each_param(const ModelParams& p,
                    const std::function<void(const std::string&, Partition, const Mat&)>& f) {
  visit_params(p, f);
}

size_t param_count(const ModelParams& p) {
  size_t n = 0;
  for_each_param(p, [&](const std::string&, Partition, const Mat& m) { n += m.size(); });
  return n;
}

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  if (cfg.d_model % cfg.n_heads != 0) throw std::invalid_argument("d_model must divide by n_heads");
  ModelParams p;
  p.cfg = cfg;
  const int d = cfg.d_model, dff = cfg.d_ff, S = cfg.seq_len(), B = cfg.bins;

  auto linear = [&](Mat& m, int r, int c, const std::string& name) {
    m.resize(r, c);
    Rng rng(substream(seed, name));
    const double lim = std::sqrt(6.0 / (r + c));
    for (auto& v : m.a) v = rng.uniform(-lim, lim);
  };
  auto embedding = [&](Mat& m, int r, int c, const std::string& name) {
    m.resize(r, c);
    Rng rng(substream(seed, name));
    for (auto& v : m.a) v = 0.02 * rng.normal();
  };
  auto zeros = [](Mat& m, int r, int c) { m.resize(r, c); };
  auto ones = [](Mat& m, int r, int c) {
    m.resize(r, c);
    std::fill(m.a.begin(), m.a.end(), 1.0);
  };

  linear(p.visual_w, cfg.feat_dim, d, "visual_w");
  zeros(p.visual_b, 1, d);
  embedding(p.text_emb, cfg.vocab, d, "text_emb");
  embedding(p.pos_emb, S, d, "pos_emb");
  embedding(p.query_emb, 1, d, "query_emb");

  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& lp = p.layers[static_cast<size_t>(l)];
    const std::string base = "layers." + std::to_string(l) + ".";
    linear(lp.wq, d, d, base + "wq");
    linear(lp.wk, d, d, base + "wk");
    linear(lp.wv, d, d, base + "wv");
    linear(lp.wo, d, d, base + "wo");
    zeros(lp.bq, 1, d);
    zeros(lp.bk, 1, d);
    zeros(lp.bv, 1, d);
    zeros(lp.bo, 1, d);
    ones(lp.ln1_g, 1, d);
    zeros(lp.ln1_b, 1, d);
    ones(lp.ln2_g, 1, d);
    zeros(lp.ln2_b, 1, d);
    linear(lp.ff_w1, d, dff, base + "ff_w1");
    zeros(lp.ff_b1, 1, dff);
    linear(lp.ff_w2, dff, d, base + "ff_w2");
    zeros(lp.ff_b2, 1, d);
  }
  ones(p.lnf_g, 1, d);
  zeros(p.lnf_b, 1, d);

  // residual-branch output projections scaled down by sqrt(2L) so the stream
  // stays near the identity at init
  const double res_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  for (auto& lp : p.layers) {
    for (auto& v : lp.wo.a) v *= res_scale;
    for (auto& v : lp.ff_w2.a) v *= res_scale;
  }


  linear(p.reg_w1, d, d, "reg_w1");
  zeros(p.reg_b1, 1, d);
  linear(p.reg_w2, d, 4, "reg_w2");
  zeros(p.reg_b2, 1, 4);
  linear(p.qt_w1, d, d, "qt_w1");
  zeros(p.qt_b1, 1, d);
  linear(p.qt_w2, d, 4 * B, "qt_w2");
  zeros(p.qt_b2, 1, 4 * B);
  return p;
}

ModelParams reinit_selective(const ModelParams& p, uint64_t seed) {
  ModelParams fresh = init_params(p.cfg, seed);
  std::vector<Mat*> dst;
  std::vector<Partition> parts;
  for_each_param(fresh, [&](const std::string&, Partition pt, Mat& m) {
    dst.push_back(&m);
    parts.push_back(pt);
  });
  std::vector<const Mat*> src;
  for_each_param(p, [&](const std::string&, Partition, const Mat& m) { src.push_back(&m); });
  for (size_t i = 0; i < dst.size(); ++i) {
    if (parts[i] == Partition::kFusion) *dst[i] = *src[i];
  }
  return fresh;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for_each_param(z, [](const std::string&, Partition, Mat& m) { m.zero(); });
  return z;
}

void forward(const ModelParams& p, const Scene& scene, const std::vector<int>& tokens,
             ForwardResult& out) {
  const ModelConfig& cfg = p.cfg;
  const int S = cfg.seq_len(), d = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head(), B = cfg.bins;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  embed_tokens(p, scene, tokens, out.x0, out.feat);
  out.layers.resize(static_cast<size_t>(cfg.n_layers));
  out.has_attn_grad = false;

  const Mat* x = &out.x0;
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerCache& c = out.layers[static_cast<size_t>(l)];
    const LayerParams& lp = p.layers[static_cast<size_t>(l)];
    c.x_in = *x;
    layer_norm_forward(c.x_in, lp.ln1_g, lp.ln1_b, c.ln1_out, c.ln1_mean, c.ln1_rstd);

    matmul(c.ln1_out, lp.wq, c.q);
    add_bias(c.q, lp.bq);
    matmul(c.ln1_out, lp.wk, c.k);
    add_bias(c.k, lp.bk);
    matmul(c.ln1_out, lp.wv, c.v);
    add_bias(c.v, lp.bv);

    c.attn.resize(static_cast<size_t>(H));
    c.attn_grad.resize(static_cast<size_t>(H));
    if (c.attn_ctx.rows != S || c.attn_ctx.cols != d) c.attn_ctx.resize(S, d);
    for (int h = 0; h < H; ++h) {
      copy_head_cols(c.q, h, dh, g_scratch.qh);
      copy_head_cols(c.k, h, dh, g_scratch.kh);
      copy_head_cols(c.v, h, dh, g_scratch.vh);
      Mat& A = c.attn[static_cast<size_t>(h)];
      matmul_nt(g_scratch.qh, g_scratch.kh, A);
      for (auto& v : A.a) v *= scale;
      softmax_rows(A);
      matmul(A, g_scratch.vh, g_scratch.ctxh);
      write_head_cols(c.attn_ctx, h, dh, g_scratch.ctxh);
    }
    matmul(c.attn_ctx, lp.wo, c.attn_out);
    add_bias(c.attn_out, lp.bo);

    c.res1 = c.x_in;
    for (size_t i = 0; i < c.res1.a.size(); ++i) c.res1.a[i] += c.attn_out.a[i];

    layer_norm_forward(c.res1, lp.ln2_g, lp.ln2_b, c.ln2_out, c.ln2_mean, c.ln2_rstd);
    matmul(c.ln2_out, lp.ff_w1, c.ff_pre);
    add_bias(c.ff_pre, lp.ff_b1);
    c.ff_act = c.ff_pre;
    for (auto& v : c.ff_act.a) v = v > 0.0 ? v : 0.0;
    matmul(c.ff_act, lp.ff_w2, c.ff_out);
    add_bias(c.ff_out, lp.ff_b2);

    c.res2 = c.res1;
    for (size_t i = 0; i < c.res2.a.size(); ++i) c.res2.a[i] += c.ff_out.a[i];
    x = &c.res2;
  }

  layer_norm_forward(*x, p.lnf_g, p.lnf_b, out.lnf_out, out.lnf_mean, out.lnf_rstd);

  // heads read the query token's state
  if (out.reg_h_pre.rows != 1 || out.reg_h_pre.cols != d) out.reg_h_pre.resize(1, d);
  if (out.qt_h_pre.rows != 1 || out.qt_h_pre.cols != d) out.qt_h_pre.resize(1, d);
  const double* s0 = out.lnf_out.row(0);
  for (int j = 0; j < d; ++j) {
    double acc_r = p.reg_b1(0, j);
    double acc_q = p.qt_b1(0, j);
    for (int k = 0; k < d; ++k) {
      acc_r += s0[k] * p.reg_w1(k, j);
      acc_q += s0[k] * p.qt_w1(k, j);
    }
    out.reg_h_pre(0, j) = acc_r;
    out.qt_h_pre(0, j) = acc_q;
  }
  out.reg_h = out.reg_h_pre;
  for (auto& v : out.reg_h.a) v = v > 0.0 ? v : 0.0;
  out.qt_h = out.qt_h_pre;
  for (auto& v : out.qt_h.a) v = v > 0.0 ? v : 0.0;

  if (out.reg_logit.rows != 1 || out.reg_logit.cols != 4) out.reg_logit.resize(1, 4);
  for (int j = 0; j < 4; ++j) {
    double acc = p.reg_b2(0, j);
    for (int k = 0; k < d; ++k) acc += out.reg_h(0, k) * p.reg_w2(k, j);
    out.reg_logit(0, j) = acc;
  }
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  out.box = Box{sigmoid(out.reg_logit(0, 0)), sigmoid(out.reg_logit(0, 1)),
                sigmoid(out.reg_logit(0, 2)), sigmoid(out.reg_logit(0, 3))};

  if (out.quant_logits.rows != 4 || out.quant_logits.cols != B) out.quant_logits.resize(4, B);
  for (int c = 0; c < 4; ++c) {
    for (int b = 0; b < B; ++b) {
      const int j = c * B + b;
      double acc = p.qt_b2(0, j);
      for (int k = 0; k < d; ++k) acc += out.qt_h(0, k) * p.qt_w2(k, j);
      out.quant_logits(c, b) = acc;
    }
  }
}

LossBreakdown head_loss(const ModelParams& p, const ForwardResult& fw, const Box& target,
                        const LossWeights& w, Mat* d_box, Mat* d_qt_logits) {
  LossBreakdown out;
  const int B = p.cfg.bins;

  out.l1 = l1_loss(fw.box, target);
  double g_giou[4];
  out.giou = giou_loss_grad(fw.box, target, g_giou);

  if (d_box) {
    if (d_box->rows != 1 || d_box->cols != 4) d_box->resize(1, 4);
    const double pc[4] = {fw.box.cx, fw.box.cy, fw.box.w, fw.box.h};
    const double tc[4] = {target.cx, target.cy, target.w, target.h};
    for (int i = 0; i < 4; ++i) {
      const double sgn = pc[i] > tc[i] ? 1.0 : (pc[i] < tc[i] ? -1.0 : 0.0);
      (*d_box)(0, i) = w.l1 * sgn + w.giou * g_giou[i];
    }
  }

  const QuantizedBox qt = quantize(target, B);
  const int bins_target[4] = {qt.bx, qt.by, qt.bw, qt.bh};
  if (d_qt_logits && (d_qt_logits->rows != 4 || d_qt_logits->cols != B)) d_qt_logits->resize(4, B);
  double ce = 0.0;
  for (int c = 0; c < 4; ++c) {
    const double* lr = fw.quant_logits.row(c);
    double mx = lr[0];
    for (int b = 1; b < B; ++b) mx = std::max(mx, lr[b]);
    double sum = 0.0;
    for (int b = 0; b < B; ++b) sum += std::exp(lr[b] - mx);
    const double lse = mx + std::log(sum);
    ce += lse - lr[bins_target[c]];
    if (d_qt_logits) {
      for (int b = 0; b < B; ++b) {
        const double prob = std::exp(lr[b] - lse);
        (*d_qt_logits)(c, b) = (w.ce / 4.0) * (prob - (b == bins_target[c] ? 1.0 : 0.0));
      }
    }
  }
  out.ce = ce / 4.0;
  out.total = w.l1 * out.l1 + w.giou * out.giou + w.ce * out.ce;
  return out;
}

void backward(const ModelParams& p, const Scene& scene, const std::vector<int>& tokens,
              ForwardResult& fw, const Mat& d_box, const Mat& d_qt_logits, ModelParams* grads) {
  (void)scene;  // the forward cache already holds this sample's features
  const ModelConfig& cfg = p.cfg;
  const int S = cfg.seq_len(), d = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head(), B = cfg.bins;
  const int V = cfg.visual_tokens();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Scratch& sc = g_scratch;

  // ---- head backward → gradient at the query token state -------------------
  if (sc.d_s.rows != 1 || sc.d_s.cols != d) sc.d_s.resize(1, d);
  sc.d_s.zero();

  // regression head: box = sigmoid(logit)
  if (sc.d_reg_logit.rows != 1 || sc.d_reg_logit.cols != 4) sc.d_reg_logit.resize(1, 4);
  const double bc[4] = {fw.box.cx, fw.box.cy, fw.box.w, fw.box.h};
  for (int j = 0; j < 4; ++j) sc.d_reg_logit(0, j) = d_box(0, j) * bc[j] * (1.0 - bc[j]);
  if (grads) {
    matmul_tn(fw.reg_h, sc.d_reg_logit, grads->reg_w2, true);
    add_colsum(sc.d_reg_logit, grads->reg_b2);
  }
  matmul_nt(sc.d_reg_logit, p.reg_w2, sc.d_reg_h);
  sc.d_reg_h_pre = sc.d_reg_h;
  for (int j = 0; j < d; ++j)
    if (fw.reg_h_pre(0, j) <= 0.0) sc.d_reg_h_pre(0, j) = 0.0;
  if (grads) {
    Mat s_row(1, d);
    for (int j = 0; j < d; ++j) s_row(0, j) = fw.lnf_out(0, j);
    matmul_tn(s_row, sc.d_reg_h_pre, grads->reg_w1, true);
    add_colsum(sc.d_reg_h_pre, grads->reg_b1);
  }
  matmul_nt(sc.d_reg_h_pre, p.reg_w1, sc.d_tmp);
  for (int j = 0; j < d; ++j) sc.d_s(0, j) += sc.d_tmp(0, j);

  // quantized head
  if (sc.d_qt_flat.rows != 1 || sc.d_qt_flat.cols != 4 * B) sc.d_qt_flat.resize(1, 4 * B);
  for (int c = 0; c < 4; ++c)
    for (int b = 0; b < B; ++b) sc.d_qt_flat(0, c * B + b) = d_qt_logits(c, b);
  if (grads) {
    matmul_tn(fw.qt_h, sc.d_qt_flat, grads->qt_w2, true);
    add_colsum(sc.d_qt_flat, grads->qt_b2);
  }
  matmul_nt(sc.d_qt_flat, p.qt_w2, sc.d_qt_h);
  sc.d_qt_h_pre = sc.d_qt_h;
  for (int j = 0; j < d; ++j)
    if (fw.qt_h_pre(0, j) <= 0.0) sc.d_qt_h_pre(0, j) = 0.0;
  if (grads) {
    Mat s_row(1, d);
    for (int j = 0; j < d; ++j) s_row(0, j) = fw.lnf_out(0, j);
    matmul_tn(s_row, sc.d_qt_h_pre, grads->qt_w1, true);
    add_colsum(sc.d_qt_h_pre, grads->qt_b1);
  }
  matmul_nt(sc.d_qt_h_pre, p.qt_w1, sc.d_tmp);
  for (int j = 0; j < d; ++j) sc.d_s(0, j) += sc.d_tmp(0, j);

  // ---- final LN -------------------------------------------------------------
  if (sc.d_y.rows != S || sc.d_y.cols != d) sc.d_y.resize(S, d);
  sc.d_y.zero();
  for (int j = 0; j < d; ++j) sc.d_y(0, j) = sc.d_s(0, j);
  const Mat& last_out = fw.layers.back().res2;
  layer_norm_backward(sc.d_y, last_out, fw.lnf_mean, fw.lnf_rstd, p.lnf_g, sc.d_x,
                      grads ? &grads->lnf_g : nullptr, grads ? &grads->lnf_b : nullptr);

  // ---- encoder layers, reversed ---------------------------------------------
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    LayerCache& c = fw.layers[static_cast<size_t>(l)];
    const LayerParams& lp = p.layers[static_cast<size_t>(l)];
    LayerParams* lg = grads ? &grads->layers[static_cast<size_t>(l)] : nullptr;

    // res2 = res1 + ff_out; d_x currently holds d res2
    // FFN backward
    if (lg) {
      matmul_tn(c.ff_act, sc.d_x, lg->ff_w2, true);
      add_colsum(sc.d_x, lg->ff_b2);
    }
    matmul_nt(sc.d_x, lp.ff_w2, sc.d_ff_act);
    sc.d_ff_pre = sc.d_ff_act;
    for (size_t i = 0; i < sc.d_ff_pre.a.size(); ++i)
      if (c.ff_pre.a[i] <= 0.0) sc.d_ff_pre.a[i] = 0.0;
    if (lg) {
      matmul_tn(c.ln2_out, sc.d_ff_pre, lg->ff_w1, true);
      add_colsum(sc.d_ff_pre, lg->ff_b1);
    }
    matmul_nt(sc.d_ff_pre, lp.ff_w1, sc.d_ln2);
    layer_norm_backward(sc.d_ln2, c.res1, c.ln2_mean, c.ln2_rstd, lp.ln2_g, sc.d_res1,
                        lg ? &lg->ln2_g : nullptr, lg ? &lg->ln2_b : nullptr);
    for (size_t i = 0; i < sc.d_res1.a.size(); ++i) sc.d_res1.a[i] += sc.d_x.a[i];

    // res1 = x_in + attn_out; d_res1 holds d res1
    // attention backward
    if (lg) {
      matmul_tn(c.attn_ctx, sc.d_res1, lg->wo, true);
      add_colsum(sc.d_res1, lg->bo);
    }
    matmul_nt(sc.d_res1, lp.wo, sc.d_ctx);
    if (sc.d_q.rows != S || sc.d_q.cols != d) sc.d_q.resize(S, d);
    if (sc.d_k.rows != S || sc.d_k.cols != d) sc.d_k.resize(S, d);
    if (sc.d_v.rows != S || sc.d_v.cols != d) sc.d_v.resize(S, d);
    for (int h = 0; h < H; ++h) {
      copy_head_cols(sc.d_ctx, h, dh, sc.d_ctx_h);
      copy_head_cols(c.v, h, dh, sc.vh);
      copy_head_cols(c.q, h, dh, sc.qh);
      copy_head_cols(c.k, h, dh, sc.kh);
      const Mat& A = c.attn[static_cast<size_t>(h)];
      Mat& dA = c.attn_grad[static_cast<size_t>(h)];
      matmul_nt(sc.d_ctx_h, sc.vh, dA);  // the attention trace: d scalar / d A
      matmul_tn(A, sc.d_ctx_h, sc.d_vh);
      softmax_backward_rows(A, dA, sc.d_z);
      for (auto& v : sc.d_z.a) v *= scale;
      matmul(sc.d_z, sc.kh, sc.d_qh);
      matmul_tn(sc.d_z, sc.qh, sc.d_kh);
      write_head_cols(sc.d_q, h, dh, sc.d_qh);
      write_head_cols(sc.d_k, h, dh, sc.d_kh);
      write_head_cols(sc.d_v, h, dh, sc.d_vh);
    }
    fw.has_attn_grad = true;
    if (lg) {
      matmul_tn(c.ln1_out, sc.d_q, lg->wq, true);
      add_colsum(sc.d_q, lg->bq);
      matmul_tn(c.ln1_out, sc.d_k, lg->wk, true);
      add_colsum(sc.d_k, lg->bk);
      matmul_tn(c.ln1_out, sc.d_v, lg->wv, true);
      add_colsum(sc.d_v, lg->bv);
    }
    matmul_nt(sc.d_q, lp.wq, sc.d_ln1);
    matmul_nt(sc.d_k, lp.wk, sc.d_ln1, true);
    matmul_nt(sc.d_v, lp.wv, sc.d_ln1, true);
    layer_norm_backward(sc.d_ln1, c.x_in, c.ln1_mean, c.ln1_rstd, lp.ln1_g, sc.d_x,
                        lg ? &lg->ln1_g : nullptr, lg ? &lg->ln1_b : nullptr);
    for (size_t i = 0; i < sc.d_x.a.size(); ++i) sc.d_x.a[i] += sc.d_res1.a[i];
  }

  // ---- embeddings ------------------------------------------------------------
  if (!grads) return;
  for (int j = 0; j < d; ++j) grads->query_emb(0, j) += sc.d_x(0, j);
  if (!tokens.empty()) {
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (int tok : tokens) {
      double* er = grads->text_emb.row(tok);
      for (int j = 0; j < d; ++j) er[j] += inv * sc.d_x(0, j);
    }
  }
  for (int i = 0; i < S; ++i) {
    const double* dr = sc.d_x.row(i);
    double* pr = grads->pos_emb.row(i);
    for (int j = 0; j < d; ++j) pr[j] += dr[j];
  }
  if (sc.x_vis_rows.rows != V || sc.x_vis_rows.cols != d) sc.x_vis_rows.resize(V, d);
  for (int i = 0; i < V; ++i) {
    const double* dr = sc.d_x.row(1 + i);
    double* vr = sc.x_vis_rows.row(i);
    for (int j = 0; j < d; ++j) vr[j] = dr[j];
  }
  matmul_tn(fw.feat, sc.x_vis_rows, grads->visual_w, true);
  add_colsum(sc.x_vis_rows, grads->visual_b);
  for (int t = 0; t < cfg.t_max; ++t) {
    const int tok = t < static_cast<int>(tokens.size()) ? tokens[static_cast<size_t>(t)] : vocab::kPad;
    const double* dr = sc.d_x.row(1 + V + t);
    double* er = grads->text_emb.row(tok);
    for (int j = 0; j < d; ++j) er[j] += dr[j];
  }
}

double grad_of_argmax_sum(const ModelParams& p, const Scene& scene, const std::vector<int>& tokens,
                          ForwardResult& fw) {
  const int B = p.cfg.bins;
  Mat d_box(1, 4);
  Mat d_qt(4, B);
  double scalar = 0.0;
  for (int c = 0; c < 4; ++c) {
    int arg = 0;
    for (int b = 1; b < B; ++b)
      if (fw.quant_logits(c, b) > fw.quant_logits(c, arg)) arg = b;
    scalar += fw.quant_logits(c, arg);
    d_qt(c, arg) = 1.0;
  }
  backward(p, scene, tokens, fw, d_box, d_qt, nullptr);
  return scalar;
}

OptState make_opt_state(const ModelParams& p) {
  OptState st;
  for_each_param(p, [&](const std::string&, Partition, const Mat& m) {
    TensorMoments tm;
    tm.m.resize(m.rows, m.cols);
    tm.v.resize(m.rows, m.cols);
    tm.t = 0;
    st.slots.push_back(std::move(tm));
  });
  return st;
}

bool adamw_step(ModelParams& p, const ModelParams& grads, OptState& st, const AdamWConfig& cfg) {
  std::vector<const Mat*> g;
  for_each_param(grads, [&](const std::string&, Partition, const Mat& m) { g.push_back(&m); });
  for (const Mat* m : g)
    for (double v : m->a)
      if (!std::isfinite(v)) return false;

  size_t idx = 0;
  for_each_param(p, [&](const std::string&, Partition, Mat& w) {
    TensorMoments& tm = st.slots[idx];
    const Mat& gm = *g[idx];
    ++idx;
    tm.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(tm.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(tm.t));
    for (size_t i = 0; i < w.a.size(); ++i) {
      const double gi = gm.a[i];
      tm.m.a[i] = cfg.beta1 * tm.m.a[i] + (1.0 - cfg.beta1) * gi;
      tm.v.a[i] = cfg.beta2 * tm.v.a[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = tm.m.a[i] / bc1;
      const double vhat = tm.v.a[i] / bc2;
      w.a[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w.a[i]);
    }
  });
  return true;
}

void reset_opt_partition(OptState& st, const ModelParams& p, Partition which) {
  size_t idx = 0;
  for_each_param(p, [&](const std::string&, Partition pt, const Mat&) {
    if (pt == which) {
      st.slots[idx].m.zero();
      st.slots[idx].v.zero();
      st.slots[idx].t = 0;
    }
    ++idx;
  });
}

}  // namespace ssvg
