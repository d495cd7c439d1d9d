#pragma once

#include <functional>
#include <vector>

#include "ssvg/config.hpp"
#include "ssvg/curation.hpp"
#include "ssvg/model.hpp"
#include "ssvg/synthdata.hpp"

namespace ssvg {

// Orchestration of the two-phase pipeline: a supervised Burn-in on the
// labeled split, then K Active Retraining stages, each of which scores the
// unlabeled pool, keeps the top-N% pseudo labels, selectively re-initializes
// the backbone-analog and head partitions, and trains on labeled + pseudo
// batches at a fixed labeled:pseudo ratio.

struct StageReport {
  int stage = 0;  // 0 = burn-in, 1..K = active stages
  int pool_size = 0;
  int selected_count = 0;
  double mean_fused = 0.0;
  int steps = 0;
  std::vector<double> epoch_losses;
  double eval_acc_reg = -1.0;  // Acc@0.5 (%) on the held-out test set, -1 if none
  double eval_acc_quant = -1.0;
};

struct DataSplits {
  std::vector<Sample> test;
  std::vector<Sample> labeled;
  std::vector<UnlabeledSample> unlabeled;
};

DataSplits make_splits(const std::vector<Sample>& data, const TrainConfig& cfg);

// Metric subset used when fusing pool scores; the empty mask is the
// random-sampling control.
struct MetricMask {
  bool faith = true;
  bool robust = true;
  bool conf = true;
  bool any() const { return faith || robust || conf; }
};

std::vector<double> fuse_masked(const std::vector<ScoreTriple>& triples, const MetricMask& mask);

// N1 supervised epochs on the labeled set (no augmentation). Loss per epoch
// appended to *epoch_losses. Throws TrainDivergence on a non-finite loss.
void burn_in(ModelParams& params, OptState& opt, const std::vector<Sample>& labeled,
             const TrainConfig& cfg, std::vector<double>* epoch_losses);

struct TrainDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Scores every unlabeled sample (forward, argmax-sum gradients, attribution,
// three raw metrics). Pure in params; parallel across samples, results in
// input order.
std::vector<PseudoLabel> infer_unlabeled(const ModelParams& params,
                                         const std::vector<UnlabeledSample>& unlabeled,
                                         const TrainConfig& cfg);

struct BatchItem {
  bool pseudo = false;
  int idx = 0;
};

// One epoch's batches at the configured labeled:pseudo ratio. Labeled indices
// are drawn without replacement; pseudo indices are drawn without replacement
// and recycle (reshuffle) if the pool runs dry mid-epoch. An empty pseudo
// pool yields all-labeled batches of batch_size.
std::vector<std::vector<BatchItem>> compose_epoch_batches(int n_labeled, int n_pseudo,
                                                          int batch_size, int labeled_ratio,
                                                          Rng& rng);

struct StageOptions {
  MetricMask mask;                 // metrics used in fusion
  int stage_index = 1;             // 1-based
  std::vector<PseudoLabel>* pool_out = nullptr;  // scored pool, selected flags set
};

// One Active Retraining stage. The previous stage's pseudo labels are
// implicitly discarded (each stage scores and selects afresh).
StageReport active_stage(ModelParams& params, OptState& opt, const std::vector<Sample>& labeled,
                         const std::vector<UnlabeledSample>& unlabeled,
                         const std::vector<Sample>& test, const TrainConfig& cfg,
                         const StageOptions& opts);

struct RunHooks {
  std::function<void(int stage, const ModelParams&, const OptState&)> on_checkpoint;
  std::function<void(int stage, const std::vector<PseudoLabel>&)> on_pool;
};

struct RunResult {
  ModelParams params;
  std::vector<StageReport> reports;
};

// Full pipeline: burn-in then K active stages; deterministic in cfg.seed.
// Pass resume_* to continue after the checkpointed stage (0 = after burn-in).
RunResult run_actress(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                      const RunHooks& hooks = {}, int resume_stage = -1,
                      const ModelParams* resume_params = nullptr,
                      const OptState* resume_opt = nullptr);

// Labeled-only control with the same total optimizer-step budget as
// run_actress on the same splits, no re-initialization. Reports are emitted
// at the same cumulative step counts as the ACTRESS stages.
RunResult run_supervised_baseline(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                                  const RunHooks& hooks = {});

// Step budget run_actress will consume for the given split sizes.
int planned_total_steps(const TrainConfig& cfg, int n_labeled, int n_unlabeled);
int steps_per_mixed_epoch(int n_labeled, int batch_size, int labeled_ratio);

}  // namespace ssvg
