#pragma once

#include <string>
#include <vector>

#include "ssvg/geometry.hpp"
#include "ssvg/mat.hpp"

namespace ssvg {

struct ScoreTriple {
  double faith = 0.0;   // I_f in [0,1]
  double robust = 0.0;  // I_r in (-1,1]
  double conf = 0.0;    // I_c in (0,1]
};

struct PseudoLabel {
  int sample_id = 0;
  Box box;             // regression-head output, the pseudo target
  QuantizedBox qbox;   // quantize(box)
  ScoreTriple scores;  // raw metric values
  double i_act = 0.0;  // fused score after pool-wise normalization
  bool selected = false;
  bool degenerate_attribution = false;
};

enum class ConfidenceCombine { kProduct, kSum };

// GIoU agreement between the two heads' decodings of the same query.
double robustness(const Box& reg_box, const Box& quant_box);

// Argmax bin per coordinate row; ties resolve to the lowest bin.
QuantizedBox argmax_bins(const Mat& quant_logits);

// Softmax each coordinate row; combine the max probabilities of the x and y
// rows (product by default, arithmetic mean for the sum variant).
double confidence(const Mat& quant_logits, ConfidenceCombine combine = ConfidenceCombine::kProduct);

// (v - min) / (max - min); an all-equal pool (including singletons) maps to
// 1.0 so a flat metric cannot annihilate the fused product. Throws on empty.
std::vector<double> minmax_normalize(const std::vector<double>& values);

// Pool-wise min-max normalization of each metric, then elementwise product.
std::vector<double> fuse(const std::vector<ScoreTriple>& triples);

// Writes i_act into the pool in place using fuse().
void fuse_pool(std::vector<PseudoLabel>& pool);

// Top round(n_percent/100 * base) by fused score, ties broken by lower id;
// result sorted descending by score. Marks `selected` on the returned copies.
std::vector<PseudoLabel> sample_top(const std::vector<PseudoLabel>& pool, double n_percent,
                                    int base);

// One record per pool entry: id, box, qbox, raw triple, fused score, selected.
void save_pseudo_manifest(const std::string& path, const std::vector<PseudoLabel>& pool);

}  // namespace ssvg
