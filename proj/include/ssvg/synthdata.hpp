#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssvg/geometry.hpp"
#include "ssvg/mat.hpp"
#include "ssvg/rng.hpp"

namespace ssvg {

// ---- fixed vocabulary ------------------------------------------------------
// Token ids are stable across versions; the dataset file header lists them so
// files stay self-describing.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kThe = 1;
inline constexpr int kThing = 2;
inline constexpr int kOf = 3;
inline constexpr int kLeft = 4;
inline constexpr int kRight = 5;
inline constexpr int kAbove = 6;
inline constexpr int kBelow = 7;
inline constexpr int kLargest = 8;
inline constexpr int kSmallest = 9;
inline constexpr int kLeftmost = 10;
inline constexpr int kRightmost = 11;
inline constexpr int kTopmost = 12;
inline constexpr int kBottommost = 13;
inline constexpr int kShapeBase = 14;  // 5 shapes
inline constexpr int kColorBase = 19;  // 8 colors
inline constexpr int kSize = 27;
}  // namespace vocab

inline constexpr int kNumShapes = 5;
inline constexpr int kNumColors = 8;
// per-cell features: one-hot shape + one-hot color + 2 position channels
inline constexpr int kFeatDim = kNumShapes + kNumColors + 2;

const std::vector<std::string>& vocab_words();

// ---- domain types ----------------------------------------------------------

// An object occupies an axis-aligned block of grid cells. Its bounding box is
// the block rectangle inset by 0.1 cell per side, which keeps gold boxes
// strictly inside (0,1)^2 and keeps adjacent objects at IoU 0.
struct SceneObject {
  int shape = 0;
  int color = 0;
  int row = 0;
  int col = 0;
  int hcells = 1;
  int wcells = 1;
};

struct Scene {
  int grid = 8;
  std::vector<SceneObject> objects;
};

struct Query {
  std::vector<int> tokens;
  int target_index = 0;
};

struct Sample {
  int id = 0;
  Scene scene;
  Query query;
  std::optional<Box> gold;
};

// Unlabeled view: the gold box does not exist at the type level, so no
// training path can read it.
struct UnlabeledSample {
  int id = 0;
  Scene scene;
  Query query;
};

Box object_box(const SceneObject& o, int grid);

// (grid*grid) x kFeatDim feature rows, row-major over (row, col) cells.
Mat scene_features(const Scene& s);

// ---- query semantics -------------------------------------------------------

// True iff scene.objects[object_index] satisfies the expression. The grammar
// is the fixed template set the generator emits; used both by the generator's
// uniqueness guarantee and by the exhaustive-match checks in tests.
bool query_matches(const Scene& scene, const std::vector<int>& tokens, int object_index);

// Number of objects satisfying the expression (discriminative queries have
// exactly one).
int count_query_matches(const Scene& scene, const std::vector<int>& tokens);

// ---- generation ------------------------------------------------------------

struct GenSpec {
  int n = 1000;
  int grid = 8;
  uint64_t seed = 0;
  int min_objects = 2;
  int max_objects = 3;
  int max_span = 3;  // max object side length in cells
};

// Deterministic in spec.seed; every sample's query uniquely identifies its
// target. Throws std::runtime_error if a scene cannot be built in 1000 tries.
std::vector<Sample> generate_dataset(const GenSpec& spec);

// ---- splits ----------------------------------------------------------------

struct SplitSpec {
  double label_fraction = 0.10;
  uint64_t seed = 0;
};

// Deterministic partition; labeled count = round(fraction * n), must be >= 1.
std::pair<std::vector<Sample>, std::vector<UnlabeledSample>> split(const std::vector<Sample>& data,
                                                                   const SplitSpec& spec);

// Carves a held-out evaluation set before the label split.
std::pair<std::vector<Sample>, std::vector<Sample>> carve_test(const std::vector<Sample>& data,
                                                               double test_fraction, uint64_t seed);

// ---- augmentation ----------------------------------------------------------

// Horizontal flip (p=0.5, with left/right wording swapped so the expression
// still matches) plus an integer cell translation sampled from the range that
// keeps every object and the target box in bounds. Requires s.gold.
Sample augment(const Sample& s, Rng& rng, int max_shift_cells = 2);

// ---- serialization ---------------------------------------------------------

void save_dataset(const std::string& path, const std::vector<Sample>& data, const GenSpec& spec);

struct LoadedDataset {
  std::vector<Sample> samples;
  int grid = 8;
  uint64_t seed = 0;
};

LoadedDataset load_dataset(const std::string& path);

// FNV-1a over the file bytes; recorded in run manifests.
uint64_t file_hash(const std::string& path);

}  // namespace ssvg
