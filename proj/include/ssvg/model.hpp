#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssvg/geometry.hpp"
#include "ssvg/mat.hpp"
#include "ssvg/synthdata.hpp"

namespace ssvg {

// Grounding network: a learnable query token is fused with visual and text
// tokens through pre-LN encoder layers; the query's final state feeds a
// sigmoid regression head and a quantized (per-coordinate classification)
// detection head. All gradients are hand-derived reverse mode so the
// attention-map gradients needed by the attribution pass are exact.

struct ModelConfig {
  int grid = 8;
  int feat_dim = kFeatDim;
  int vocab = vocab::kSize;
  int t_max = 12;
  int d_model = 32;
  int n_heads = 2;
  int n_layers = 2;
  int d_ff = 64;
  int bins = 32;

  int visual_tokens() const { return grid * grid; }
  int seq_len() const { return 1 + grid * grid + t_max; }
  int d_head() const { return d_model / n_heads; }
};

enum class Partition { kBackbone, kFusion, kHeads };

const char* partition_name(Partition p);

struct LayerParams {
  Mat wq, wk, wv, wo;              // d x d
  Mat bq, bk, bv, bo;              // 1 x d
  Mat ln1_g, ln1_b, ln2_g, ln2_b;  // 1 x d
  Mat ff_w1, ff_b1, ff_w2, ff_b2;  // d x dff, 1 x dff, dff x d, 1 x d
};

struct ModelParams {
  ModelConfig cfg;
  // backbone-analog partition
  Mat visual_w, visual_b;  // F x d, 1 x d
  Mat text_emb;            // vocab x d
  Mat pos_emb;             // S x d
  // fusion partition
  Mat query_emb;  // 1 x d
  std::vector<LayerParams> layers;
  Mat lnf_g, lnf_b;  // final layer norm
  // heads partition
  Mat reg_w1, reg_b1, reg_w2, reg_b2;  // d x d, 1 x d, d x 4, 1 x 4
  Mat qt_w1, qt_b1, qt_w2, qt_b2;      // d x d, 1 x d, d x 4B, 1 x 4B
};

// Visits every parameter tensor with (name, partition, tensor). Single source
// of truth for the partition map, iteration order, checkpoints and optimizer
// slot indices.
void for_each_param(ModelParams& p, const std::function<void(const std::string&, Partition, Mat&)>& f);
void for_each_param(const ModelParams& p,
                    const std::function<void(const std::string&, Partition, const Mat&)>& f);

size_t param_count(const ModelParams& p);

ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

// Fresh draws for the backbone-analog and head partitions; fusion tensors are
// copied bit-identically.
ModelParams reinit_selective(const ModelParams& p, uint64_t seed);

ModelParams zeros_like(const ModelParams& p);

struct LayerCache {
  Mat x_in;
  Mat ln1_out, ln1_mean, ln1_rstd;
  Mat q, k, v;                  // S x d, heads packed along columns
  std::vector<Mat> attn;        // per head, S x S row-stochastic
  std::vector<Mat> attn_grad;   // per head, dScalar/dA; filled by backward
  Mat attn_ctx;                 // S x d concat of per-head A*V
  Mat attn_out;                 // S x d after W_o
  Mat res1;
  Mat ln2_out, ln2_mean, ln2_rstd;
  Mat ff_pre, ff_act, ff_out;
  Mat res2;
};

struct ForwardResult {
  Box box;           // sigmoid of the regression head
  Mat quant_logits;  // 4 x B
  // activations cache; attn/attn_grad double as the attention trace
  Mat feat;  // scene features seen by this forward
  Mat x0;
  std::vector<LayerCache> layers;
  Mat lnf_out, lnf_mean, lnf_rstd;
  Mat reg_h_pre, reg_h, reg_logit;  // 1 x d, 1 x d, 1 x 4
  Mat qt_h_pre, qt_h;               // 1 x d
  bool has_attn_grad = false;

  const Mat& attention(int layer, int head) const { return layers[static_cast<size_t>(layer)].attn[static_cast<size_t>(head)]; }
  const Mat& attention_grad(int layer, int head) const {
    return layers[static_cast<size_t>(layer)].attn_grad[static_cast<size_t>(head)];
  }
};

void forward(const ModelParams& p, const Scene& scene, const std::vector<int>& tokens,
             ForwardResult& out);

inline ForwardResult forward(const ModelParams& p, const Scene& scene, const std::vector<int>& tokens) {
  ForwardResult r;
  forward(p, scene, tokens, r);
  return r;
}

struct LossWeights {
  double l1 = 5.0;
  double giou = 2.0;
  double ce = 0.1;
};

struct LossBreakdown {
  double total = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
  double ce = 0.0;
};

// Loss of a forward result against a target box, plus the gradients at the
// two head outputs (d/d box for the regression head, d/d logits for the
// quantized head). Targets are quantized with p.cfg.bins.
LossBreakdown head_loss(const ModelParams& p, const ForwardResult& fw, const Box& target,
                        const LossWeights& w, Mat* d_box, Mat* d_qt_logits);

// Reverse pass from head-output gradients down to the embeddings. Fills the
// attention-gradient trace; accumulates parameter gradients into *grads when
// given (pass nullptr for attribution-only passes).
void backward(const ModelParams& p, const Scene& scene, const std::vector<int>& tokens,
              ForwardResult& fw, const Mat& d_box, const Mat& d_qt_logits, ModelParams* grads);

// Backward pass of sum_c max_b quant_logits[c][b]; only the attention trace
// is written, parameters and their gradients stay untouched. Returns the
// scalar.
double grad_of_argmax_sum(const ModelParams& p, const Scene& scene, const std::vector<int>& tokens,
                          ForwardResult& fw);

// ---- optimizer --------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct TensorMoments {
  Mat m, v;
  int64_t t = 0;
};

struct OptState {
  std::vector<TensorMoments> slots;  // indexed in for_each_param order
};

OptState make_opt_state(const ModelParams& p);

// One decoupled-weight-decay Adam step. Returns false (and leaves params
// untouched) if any gradient entry is non-finite.
bool adamw_step(ModelParams& p, const ModelParams& grads, OptState& st, const AdamWConfig& cfg);

// Zeroes the moments and step counts of every tensor in the given partition.
void reset_opt_partition(OptState& st, const ModelParams& p, Partition which);

}  // namespace ssvg
