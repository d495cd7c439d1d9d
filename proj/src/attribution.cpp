#include "ssvg/attribution.hpp"

#include <cmath>
#include <stdexcept>

namespace ssvg {

RelevanceState make_relevance_state(int n_visual) {
  RelevanceState st;
  st.r_vv.resize(n_visual, n_visual);
  for (int i = 0; i < n_visual; ++i) st.r_vv(i, i) = 1.0;
  st.r_rv.resize(1, n_visual);
  return st;
}

void layer_abar(const std::vector<Mat>& attn, const std::vector<Mat>& attn_grad, Mat& abar) {
  if (attn.empty() || attn.size() != attn_grad.size())
    throw std::invalid_argument("layer_abar: head count mismatch");
  const int S = attn[0].rows;
  if (abar.rows != S || abar.cols != S) abar.resize(S, S);
  abar.zero();
  const double inv_h = 1.0 / static_cast<double>(attn.size());
  for (size_t h = 0; h < attn.size(); ++h) {
    const Mat& a = attn[h];
    const Mat& g = attn_grad[h];
    if (a.rows != S || a.cols != S || g.rows != S || g.cols != S)
      throw std::invalid_argument("layer_abar: shape mismatch");
    for (size_t i = 0; i < abar.a.size(); ++i) {
      const double w = g.a[i] * a.a[i];
      if (w > 0.0) abar.a[i] += inv_h * w;
    }
  }
}

void propagate(RelevanceState& state, const Mat& abar_vv, const Mat& abar_qv, bool normalize_rows) {
  const int n = state.r_vv.rows;
  if (abar_vv.rows != n || abar_vv.cols != n || abar_qv.rows != 1 || abar_qv.cols != n)
    throw std::invalid_argument("propagate: shape mismatch");
  Mat add_vv;
  matmul(abar_vv, state.r_vv, add_vv);
  Mat add_rv;
  matmul(abar_qv, state.r_vv, add_rv);  // pre-update R_vv, as the rule is written
  for (size_t i = 0; i < state.r_vv.a.size(); ++i) state.r_vv.a[i] += add_vv.a[i];
  for (int j = 0; j < n; ++j) state.r_rv(0, j) += add_rv(0, j);
  if (normalize_rows) {
    for (int i = 0; i < n; ++i) {
      double* r = state.r_vv.row(i);
      double sum = 0.0;
      for (int j = 0; j < n; ++j) sum += r[j];
      if (sum > 1e-12) {
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) r[j] *= inv;
      }
    }
  }
}

AttributionMap attribution_map(const ModelParams& p, const ForwardResult& fw,
                               const AttributionOptions& opt) {
  if (!fw.has_attn_grad)
    throw std::logic_error("attribution_map: attention gradients missing (run grad_of_argmax_sum)");
  const int G = p.cfg.grid;
  const int V = p.cfg.visual_tokens();

  RelevanceState st = make_relevance_state(V);
  Mat abar, abar_vv(V, V), abar_qv(1, V);
  for (int l = 0; l < p.cfg.n_layers; ++l) {
    const auto& c = fw.layers[static_cast<size_t>(l)];
    layer_abar(c.attn, c.attn_grad, abar);
    // visual tokens sit at sequence rows [1, 1+V); the query is row 0
    for (int i = 0; i < V; ++i)
      for (int j = 0; j < V; ++j) abar_vv(i, j) = abar(1 + i, 1 + j);
    for (int j = 0; j < V; ++j) abar_qv(0, j) = abar(0, 1 + j);
    propagate(st, abar_vv, abar_qv, opt.normalize_rows);
  }

  AttributionMap out;
  out.values.resize(G, G);
  double total = 0.0;
  for (int i = 0; i < V; ++i) {
    const double v = std::max(0.0, st.r_rv(0, i));
    out.values.a[static_cast<size_t>(i)] = v;
    total += v;
  }
  out.degenerate = total <= 1e-12;
  return out;
}

double faithfulness(const AttributionMap& map, const Box& pred) {
  const int g = map.values.rows;
  const CornerBox box = to_corners(pred);
  double total = 0.0;
  double inside = 0.0;
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      const double v = map.values(r, c);
      total += v;
      const double cx1 = static_cast<double>(c) / g, cx2 = static_cast<double>(c + 1) / g;
      const double cy1 = static_cast<double>(r) / g, cy2 = static_cast<double>(r + 1) / g;
      const double ow = std::max(0.0, std::min(cx2, box.x2) - std::max(cx1, box.x1));
      const double oh = std::max(0.0, std::min(cy2, box.y2) - std::max(cy1, box.y1));
      const double cell_area = (cx2 - cx1) * (cy2 - cy1);
      inside += v * (ow * oh) / cell_area;
    }
  }
  if (total <= 1e-12) return 0.0;
  return inside / total;
}

}  // namespace ssvg
