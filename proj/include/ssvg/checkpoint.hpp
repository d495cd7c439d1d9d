#pragma once

#include <optional>
#include <string>

#include "ssvg/model.hpp"

namespace ssvg {

// Versioned binary dump of every parameter tensor (with partition tags and a
// config header) plus, optionally, the optimizer state. Round-trips the
// doubles bit-exactly.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const OptState* opt = nullptr);

struct LoadedCheckpoint {
  ModelParams params;
  std::optional<OptState> opt;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace ssvg
