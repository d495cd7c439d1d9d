#pragma once

#include <cstdint>
#include <string>

#include "ssvg/curation.hpp"
#include "ssvg/model.hpp"

namespace ssvg {

// Everything a run needs, mirrored 1:1 by the key=value config file format.
struct TrainConfig {
  // split
  double label_fraction = 0.10;
  double test_fraction = 0.20;

  ModelConfig model;

  // schedule
  int n1 = 150;           // burn-in epochs
  int n2 = 25;            // epochs per active stage
  int k = 5;              // active stages
  int batch_size = 16;
  int labeled_ratio = 3;  // labeled : pseudo per batch
  double lr = 1e-3;
  double lr_drop_factor = 0.1;
  double lr_drop_at = 0.8;  // fraction of the phase after which lr drops
  double weight_decay = 1e-4;
  double n_percent = -1.0;  // <= 0: use label_fraction * 100
  LossWeights loss;

  // scoring
  ConfidenceCombine confidence_combine = ConfidenceCombine::kProduct;
  bool relevance_normalize = false;

  // run
  uint64_t seed = 42;
  int threads = 1;
  bool augment = true;  // geometric augmentation during training phases
  int augment_shift = 2;

  double effective_n_percent() const { return n_percent > 0.0 ? n_percent : label_fraction * 100.0; }
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config(const std::string& path);

// Full key=value snapshot; parse_config_text(config_to_text(c)) == c.
std::string config_to_text(const TrainConfig& c);

}  // namespace ssvg
