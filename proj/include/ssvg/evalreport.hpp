#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ssvg/curation.hpp"
#include "ssvg/model.hpp"
#include "ssvg/synthdata.hpp"
#include "ssvg/trainer.hpp"

namespace ssvg {

struct EvalResult {
  double acc_reg = 0.0;    // Acc@0.5 (%) of the regression head (primary)
  double acc_quant = 0.0;  // Acc@0.5 (%) of the dequantized argmax head
  int n = 0;
};

// Percentage of test samples whose predicted box has IoU > 0.5 (strict) with
// the gold box. Throws on an empty test set.
EvalResult acc_at_05(const ModelParams& params, const std::vector<Sample>& testset,
                     int threads = 1);

struct QualityCurve {
  std::vector<int> thresholds;  // top-k %, descending
  // ranker name -> Acc@0.5 (%) among the top-k% at each threshold
  std::vector<std::pair<std::string, std::vector<double>>> curves;
};

// Pseudo-label quality per ranker (random / robust / conf / faith / fused) at
// thresholds 50..10%. gold_by_id is the evaluation-only view of the unlabeled
// samples' true boxes; it never feeds training. Pool must be >= 10.
QualityCurve quality_curve(const std::vector<PseudoLabel>& pool,
                           const std::unordered_map<int, Box>& gold_by_id, uint64_t random_seed);

// Accuracy among the top-k% of an arbitrary ranking (used for the oracle
// dominance check and inside quality_curve).
double accuracy_of_top(const std::vector<const PseudoLabel*>& ranked,
                       const std::unordered_map<int, Box>& gold_by_id, int threshold_percent);

double curve_auc(const std::vector<double>& accuracies);

struct AblationRow {
  std::string name;
  MetricMask mask;
  double acc_reg = 0.0;
  double acc_quant = 0.0;
};

// Burn-in once, then one active stage per metric subset (the empty mask being
// the random-sampling control); every variant starts from the same burn-in
// parameters.
std::vector<AblationRow> ablation(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                                  const std::vector<std::pair<std::string, MetricMask>>& variants);

// ---- emission ----------------------------------------------------------------

void write_curves_csv(const std::string& path, const QualityCurve& curve);
QualityCurve read_curves_csv(const std::string& path);
void write_curves_png(const std::string& path, const QualityCurve& curve);

void write_stage_reports_csv(const std::string& path, const std::vector<StageReport>& reports);
std::vector<StageReport> read_stage_reports_csv(const std::string& path);
void write_losses_csv(const std::string& path, const std::vector<StageReport>& reports);
void write_accuracy_png(const std::string& path, const std::vector<StageReport>& reports);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);
void write_ablation_png(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace ssvg
