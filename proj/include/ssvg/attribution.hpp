#pragma once

#include "ssvg/geometry.hpp"
#include "ssvg/mat.hpp"
#include "ssvg/model.hpp"

namespace ssvg {

// Relevance propagation over the attention trace: per layer the
// gradient-weighted attention map Abar = mean_h relu(dA .* A) updates
//   R_vv <- R_vv + Abar_vv * R_vv
//   R_rv <- R_rv + Abar_qv * R_vv   (both rules read the pre-update R_vv)
// and the query->visual row, reshaped to the grid, is the attribution map.

struct RelevanceState {
  Mat r_vv;  // S_v x S_v, starts as identity
  Mat r_rv;  // 1 x S_v, starts as zeros
};

RelevanceState make_relevance_state(int n_visual);

// Abar for one layer: mean over heads of relu(grad .* attn). Inputs are the
// full S x S maps; output is S x S.
void layer_abar(const std::vector<Mat>& attn, const std::vector<Mat>& attn_grad, Mat& abar);

// One layer's update. abar_vv is the visual->visual block (S_v x S_v),
// abar_qv the query->visual row (1 x S_v). If normalize_rows is set, rows of
// R_vv are rescaled to unit sum after the update (optional variant).
void propagate(RelevanceState& state, const Mat& abar_vv, const Mat& abar_qv, bool normalize_rows);

struct AttributionMap {
  Mat values;  // G x G, nonnegative
  bool degenerate = false;  // all gradients vanished; values are all zero
};

struct AttributionOptions {
  bool normalize_rows = false;
};

// Runs layer_abar + propagate over every layer of a forward result whose
// attention gradients were produced by grad_of_argmax_sum.
AttributionMap attribution_map(const ModelParams& p, const ForwardResult& fw,
                               const AttributionOptions& opt = {});

// Share of the map's mass inside the predicted box; cells are weighted by
// the fraction of their area the box covers. Returns 0 (degenerate) when the
// total mass is below 1e-12.
double faithfulness(const AttributionMap& map, const Box& pred);

}  // namespace ssvg
