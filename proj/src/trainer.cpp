#include "ssvg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "ssvg/attribution.hpp"
#include "ssvg/evalreport.hpp"
#include "ssvg/parallel.hpp"

namespace ssvg {

namespace {

void zero_params(ModelParams& g) {
  for_each_param(g, [](const std::string&, Partition, Mat& m) { m.zero(); });
}

void scale_params(ModelParams& g, double f) {
  for_each_param(g, [f](const std::string&, Partition, Mat& m) {
    for (auto& v : m.a) v *= f;
  });
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// epoch index at which the learning rate drops
int drop_epoch(const TrainConfig& cfg, int total_epochs) {
  return static_cast<int>(std::ceil(cfg.lr_drop_at * total_epochs));
}

// Scratch for one optimizer step. Per-sample forward/backward fans out to
// workers (params are read-only there); each worker accumulates the gradients
// of its contiguous item block, and the partials are reduced in worker order.
// For a fixed thread count the result is bit-deterministic.
struct BatchWorkspace {
  std::vector<Sample> staged;
  std::vector<ModelParams> worker_grads;
  std::vector<ForwardResult> fw;
  std::vector<Mat> d_box, d_qt;
  std::vector<double> losses;
  std::vector<uint8_t> bad;

  BatchWorkspace(const ModelParams& p, int threads) {
    const size_t t = static_cast<size_t>(std::max(1, threads));
    worker_grads.resize(t, zeros_like(p));
    fw.resize(t);
    d_box.resize(t);
    d_qt.resize(t);
  }
};

double train_batch(ModelParams& params, OptState& opt, BatchWorkspace& ws,
                   const std::vector<const Sample*>& batch, const TrainConfig& cfg, double lr,
                   bool use_augment, Rng& aug_rng, const char* phase) {
  const size_t n = batch.size();
  ws.staged.clear();
  for (const Sample* sp : batch)
    ws.staged.push_back(use_augment ? augment(*sp, aug_rng, cfg.augment_shift) : *sp);
  ws.losses.assign(n, 0.0);
  ws.bad.assign(n, 0);
  for (auto& g : ws.worker_grads) zero_params(g);

  parallel_for_indexed(static_cast<int>(n), cfg.threads, [&](int i, int w) {
    const Sample& s = ws.staged[static_cast<size_t>(i)];
    ForwardResult& fw = ws.fw[static_cast<size_t>(w)];
    forward(params, s.scene, s.query.tokens, fw);
    const LossBreakdown lb =
        head_loss(params, fw, *s.gold, cfg.loss, &ws.d_box[static_cast<size_t>(w)],
                  &ws.d_qt[static_cast<size_t>(w)]);
    if (!std::isfinite(lb.total)) {
      ws.bad[static_cast<size_t>(i)] = 1;
      return;
    }
    ws.losses[static_cast<size_t>(i)] = lb.total;
    backward(params, s.scene, s.query.tokens, fw, ws.d_box[static_cast<size_t>(w)],
             ws.d_qt[static_cast<size_t>(w)], &ws.worker_grads[static_cast<size_t>(w)]);
  });

  double loss_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (ws.bad[i])
      throw TrainDivergence(std::string("training diverged (non-finite loss) during ") + phase);
    loss_sum += ws.losses[i];
  }
  ModelParams& reduced = ws.worker_grads[0];
  if (ws.worker_grads.size() > 1) {
    std::vector<Mat*> dst;
    for_each_param(reduced, [&](const std::string&, Partition, Mat& m) { dst.push_back(&m); });
    for (size_t w = 1; w < ws.worker_grads.size(); ++w) {
      std::vector<const Mat*> src;
      const ModelParams& gw = ws.worker_grads[w];
      for_each_param(gw, [&](const std::string&, Partition, const Mat& m) { src.push_back(&m); });
      for (size_t t = 0; t < dst.size(); ++t)
        for (size_t j = 0; j < dst[t]->a.size(); ++j) dst[t]->a[j] += src[t]->a[j];
    }
  }
  scale_params(reduced, 1.0 / static_cast<double>(n));
  AdamWConfig ac;
  ac.lr = lr;
  ac.weight_decay = cfg.weight_decay;
  if (!adamw_step(params, reduced, opt, ac))
    std::fprintf(stderr, "[ssvg] %s: non-finite gradients, step skipped\n", phase);
  return loss_sum;
}

// Shared epoch-driven phase: burn-in (no pseudo, no augmentation) and active
// stages (pseudo + augmentation). Returns optimizer steps taken.
int train_phase(ModelParams& params, OptState& opt, const std::vector<Sample>& labeled,
                const std::vector<Sample>& pseudo, const TrainConfig& cfg, int epochs,
                bool use_augment, Rng& order_rng, Rng& aug_rng, std::vector<double>* epoch_losses,
                const char* phase) {
  if (labeled.empty()) throw std::invalid_argument("train: labeled set is empty");
  BatchWorkspace ws(params, cfg.threads);
  int steps = 0;
  const int dropped_at = drop_epoch(cfg, epochs);
  for (int e = 0; e < epochs; ++e) {
    const double lr = cfg.lr * (e >= dropped_at ? cfg.lr_drop_factor : 1.0);
    const auto batches = compose_epoch_batches(static_cast<int>(labeled.size()),
                                               static_cast<int>(pseudo.size()), cfg.batch_size,
                                               cfg.labeled_ratio, order_rng);
    double loss_sum = 0.0;
    int n_items = 0;
    std::vector<const Sample*> batch;
    for (const auto& b : batches) {
      batch.clear();
      for (const BatchItem& it : b)
        batch.push_back(it.pseudo ? &pseudo[static_cast<size_t>(it.idx)]
                                  : &labeled[static_cast<size_t>(it.idx)]);
      loss_sum += train_batch(params, opt, ws, batch, cfg, lr, use_augment, aug_rng, phase);
      n_items += static_cast<int>(batch.size());
      ++steps;
    }
    if (epoch_losses) epoch_losses->push_back(n_items > 0 ? loss_sum / n_items : 0.0);
  }
  return steps;
}

}  // namespace

DataSplits make_splits(const std::vector<Sample>& data, const TrainConfig& cfg) {
  DataSplits out;
  auto [test, pool] = carve_test(data, cfg.test_fraction, cfg.seed);
  out.test = std::move(test);
  auto [labeled, unlabeled] = split(pool, SplitSpec{cfg.label_fraction, cfg.seed});
  out.labeled = std::move(labeled);
  out.unlabeled = std::move(unlabeled);
  return out;
}

std::vector<double> fuse_masked(const std::vector<ScoreTriple>& triples, const MetricMask& mask) {
  std::vector<double> out(triples.size(), 1.0);
  if (triples.empty()) return out;
  auto apply = [&](auto getter) {
    std::vector<double> raw(triples.size());
    for (size_t i = 0; i < triples.size(); ++i) raw[i] = getter(triples[i]);
    const auto norm = minmax_normalize(raw);
    for (size_t i = 0; i < out.size(); ++i) out[i] *= norm[i];
  };
  if (mask.faith) apply([](const ScoreTriple& t) { return t.faith; });
  if (mask.robust) apply([](const ScoreTriple& t) { return t.robust; });
  if (mask.conf) apply([](const ScoreTriple& t) { return t.conf; });
  return out;
}

void burn_in(ModelParams& params, OptState& opt, const std::vector<Sample>& labeled,
             const TrainConfig& cfg, std::vector<double>* epoch_losses) {
  if (cfg.n1 == 0) return;
  Rng order_rng(substream(cfg.seed, "train", 0));
  Rng aug_rng(substream(cfg.seed, "augment", 0));
  train_phase(params, opt, labeled, {}, cfg, cfg.n1, cfg.augment, order_rng, aug_rng, epoch_losses,
              "burn-in");
}

std::vector<PseudoLabel> infer_unlabeled(const ModelParams& params,
                                         const std::vector<UnlabeledSample>& unlabeled,
                                         const TrainConfig& cfg) {
  std::vector<PseudoLabel> pool(unlabeled.size());
  AttributionOptions aopt{cfg.relevance_normalize};
  parallel_for(static_cast<int>(unlabeled.size()), cfg.threads, [&](int i) {
    const UnlabeledSample& u = unlabeled[static_cast<size_t>(i)];
    ForwardResult fw;
    forward(params, u.scene, u.query.tokens, fw);
    PseudoLabel pl;
    pl.sample_id = u.id;
    pl.box = fw.box;
    pl.qbox = argmax_bins(fw.quant_logits);
    pl.scores.robust = robustness(pl.box, dequantize(pl.qbox, params.cfg.bins));
    pl.scores.conf = confidence(fw.quant_logits, cfg.confidence_combine);
    grad_of_argmax_sum(params, u.scene, u.query.tokens, fw);
    const AttributionMap map = attribution_map(params, fw, aopt);
    pl.degenerate_attribution = map.degenerate;
    pl.scores.faith = map.degenerate ? 0.0 : faithfulness(map, pl.box);
    pool[static_cast<size_t>(i)] = pl;
  });
  return pool;
}

std::vector<std::vector<BatchItem>> compose_epoch_batches(int n_labeled, int n_pseudo,
                                                          int batch_size, int labeled_ratio,
                                                          Rng& rng) {
  if (n_labeled <= 0) throw std::invalid_argument("compose_epoch_batches: no labeled samples");
  std::vector<int> lab_order(static_cast<size_t>(n_labeled));
  for (int i = 0; i < n_labeled; ++i) lab_order[static_cast<size_t>(i)] = i;
  rng.shuffle(lab_order);

  std::vector<std::vector<BatchItem>> batches;
  if (n_pseudo <= 0) {
    for (int off = 0; off < n_labeled; off += batch_size) {
      std::vector<BatchItem> b;
      for (int i = off; i < std::min(off + batch_size, n_labeled); ++i)
        b.push_back({false, lab_order[static_cast<size_t>(i)]});
      batches.push_back(std::move(b));
    }
    return batches;
  }

  std::vector<int> ps_order(static_cast<size_t>(n_pseudo));
  for (int i = 0; i < n_pseudo; ++i) ps_order[static_cast<size_t>(i)] = i;
  rng.shuffle(ps_order);
  size_t ps_cursor = 0;

  const int lab_per_batch = ceil_div(batch_size * labeled_ratio, labeled_ratio + 1);
  for (int off = 0; off < n_labeled; off += lab_per_batch) {
    std::vector<BatchItem> b;
    const int chunk = std::min(lab_per_batch, n_labeled - off);
    for (int i = off; i < off + chunk; ++i) b.push_back({false, lab_order[static_cast<size_t>(i)]});
    const int want = static_cast<int>(std::llround(static_cast<double>(chunk) / labeled_ratio));
    for (int i = 0; i < want; ++i) {
      if (ps_cursor == ps_order.size()) {
        rng.shuffle(ps_order);
        ps_cursor = 0;
      }
      b.push_back({true, ps_order[ps_cursor++]});
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

StageReport active_stage(ModelParams& params, OptState& opt, const std::vector<Sample>& labeled,
                         const std::vector<UnlabeledSample>& unlabeled,
                         const std::vector<Sample>& test, const TrainConfig& cfg,
                         const StageOptions& opts) {
  StageReport rep;
  rep.stage = opts.stage_index;

  // 1) score the pool afresh (previous pseudo labels are gone by construction)
  std::vector<PseudoLabel> pool = infer_unlabeled(params, unlabeled, cfg);
  rep.pool_size = static_cast<int>(pool.size());
  {
    std::vector<ScoreTriple> triples(pool.size());
    for (size_t i = 0; i < pool.size(); ++i) triples[i] = pool[i].scores;
    const auto fused = fuse_masked(triples, opts.mask);
    for (size_t i = 0; i < pool.size(); ++i) pool[i].i_act = fused[i];
  }
  double mean_fused = 0.0;
  for (const auto& pl : pool) mean_fused += pl.i_act;
  rep.mean_fused = pool.empty() ? 0.0 : mean_fused / static_cast<double>(pool.size());

  // 2) top-N% selection (or the random control for the empty metric mask)
  const double n_percent = cfg.effective_n_percent();
  std::vector<PseudoLabel> selected;
  if (!pool.empty()) {
    if (opts.mask.any()) {
      selected = sample_top(pool, n_percent, static_cast<int>(unlabeled.size()));
    } else {
      const size_t budget = static_cast<size_t>(
          std::llround(n_percent / 100.0 * static_cast<double>(unlabeled.size())));
      std::vector<size_t> order(pool.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng sel_rng(substream(cfg.seed, "select", static_cast<uint64_t>(opts.stage_index)));
      sel_rng.shuffle(order);
      for (size_t i = 0; i < std::min(budget, order.size()); ++i) {
        PseudoLabel pl = pool[order[i]];
        pl.selected = true;
        selected.push_back(pl);
      }
    }
  }
  rep.selected_count = static_cast<int>(selected.size());
  if (selected.empty())
    std::fprintf(stderr, "[ssvg] stage %d: empty pseudo selection, training on labeled only\n",
                 opts.stage_index);
  if (opts.pool_out) {
    std::unordered_map<int, bool> chosen;
    for (const auto& pl : selected) chosen[pl.sample_id] = true;
    for (auto& pl : pool) pl.selected = chosen.count(pl.sample_id) > 0;
    *opts.pool_out = pool;
  }

  // 3) selective re-init: backbone-analog + heads go back to the run's
  // initial draws (the stand-in for restoring a pretrained backbone), fusion
  // keeps its learned weights
  params = reinit_selective(params, substream(cfg.seed, "init"));
  reset_opt_partition(opt, params, Partition::kBackbone);
  reset_opt_partition(opt, params, Partition::kHeads);

  // 4) mixed training on labeled + selected pseudo, with augmentation
  std::unordered_map<int, const UnlabeledSample*> by_id;
  for (const auto& u : unlabeled) by_id[u.id] = &u;
  std::vector<Sample> pseudo;
  pseudo.reserve(selected.size());
  for (const auto& pl : selected) {
    const UnlabeledSample* u = by_id.at(pl.sample_id);
    pseudo.push_back(Sample{u->id, u->scene, u->query, pl.box});
  }
  Rng order_rng(substream(cfg.seed, "train", static_cast<uint64_t>(opts.stage_index)));
  Rng aug_rng(substream(cfg.seed, "augment", static_cast<uint64_t>(opts.stage_index)));
  rep.steps = train_phase(params, opt, labeled, pseudo, cfg, cfg.n2, cfg.augment, order_rng,
                          aug_rng, &rep.epoch_losses, "active-stage");

  if (!test.empty()) {
    const EvalResult ev = acc_at_05(params, test, cfg.threads);
    rep.eval_acc_reg = ev.acc_reg;
    rep.eval_acc_quant = ev.acc_quant;
  }
  return rep;
}

int steps_per_mixed_epoch(int n_labeled, int batch_size, int labeled_ratio) {
  const int lab_per_batch = ceil_div(batch_size * labeled_ratio, labeled_ratio + 1);
  return ceil_div(n_labeled, lab_per_batch);
}

int planned_total_steps(const TrainConfig& cfg, int n_labeled, int n_unlabeled) {
  const int burn = cfg.n1 * ceil_div(n_labeled, cfg.batch_size);
  const long long sel =
      std::llround(cfg.effective_n_percent() / 100.0 * static_cast<double>(n_unlabeled));
  const int per_epoch = sel > 0 ? steps_per_mixed_epoch(n_labeled, cfg.batch_size, cfg.labeled_ratio)
                                : ceil_div(n_labeled, cfg.batch_size);
  return burn + cfg.k * cfg.n2 * per_epoch;
}

RunResult run_actress(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                      const RunHooks& hooks, int resume_stage, const ModelParams* resume_params,
                      const OptState* resume_opt) {
  if (!dataset.empty() && dataset[0].scene.grid != cfg.model.grid)
    throw std::invalid_argument("run: dataset grid does not match model.grid");
  DataSplits sp = make_splits(dataset, cfg);

  RunResult out;
  OptState opt;
  if (resume_stage >= 0) {
    if (!resume_params || !resume_opt)
      throw std::invalid_argument("run: resume requested without checkpoint state");
    out.params = *resume_params;
    opt = *resume_opt;
  } else {
    out.params = init_params(cfg.model, substream(cfg.seed, "init"));
    opt = make_opt_state(out.params);
  }

  if (resume_stage < 0) {
    StageReport rep0;
    rep0.stage = 0;
    burn_in(out.params, opt, sp.labeled, cfg, &rep0.epoch_losses);
    rep0.steps = cfg.n1 * ceil_div(static_cast<int>(sp.labeled.size()), cfg.batch_size);
    if (!sp.test.empty()) {
      const EvalResult ev = acc_at_05(out.params, sp.test, cfg.threads);
      rep0.eval_acc_reg = ev.acc_reg;
      rep0.eval_acc_quant = ev.acc_quant;
    }
    out.reports.push_back(std::move(rep0));
    if (hooks.on_checkpoint) hooks.on_checkpoint(0, out.params, opt);
  }

  for (int stage = std::max(1, resume_stage + 1); stage <= cfg.k; ++stage) {
    StageOptions so;
    so.stage_index = stage;
    std::vector<PseudoLabel> pool;
    so.pool_out = hooks.on_pool ? &pool : nullptr;
    StageReport rep = active_stage(out.params, opt, sp.labeled, sp.unlabeled, sp.test, cfg, so);
    if (hooks.on_pool) hooks.on_pool(stage, pool);
    out.reports.push_back(std::move(rep));
    if (hooks.on_checkpoint) hooks.on_checkpoint(stage, out.params, opt);
  }
  return out;
}

RunResult run_supervised_baseline(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                                  const RunHooks& hooks) {
  if (!dataset.empty() && dataset[0].scene.grid != cfg.model.grid)
    throw std::invalid_argument("baseline: dataset grid does not match model.grid");
  DataSplits sp = make_splits(dataset, cfg);
  const int n_labeled = static_cast<int>(sp.labeled.size());

  RunResult out;
  out.params = init_params(cfg.model, substream(cfg.seed, "init"));
  OptState opt = make_opt_state(out.params);

  // identical burn-in phase (same streams) as run_actress
  StageReport rep0;
  rep0.stage = 0;
  burn_in(out.params, opt, sp.labeled, cfg, &rep0.epoch_losses);
  rep0.steps = cfg.n1 * ceil_div(n_labeled, cfg.batch_size);
  if (!sp.test.empty()) {
    const EvalResult ev = acc_at_05(out.params, sp.test, cfg.threads);
    rep0.eval_acc_reg = ev.acc_reg;
    rep0.eval_acc_quant = ev.acc_quant;
  }
  const int burn_steps = rep0.steps;
  out.reports.push_back(std::move(rep0));
  if (hooks.on_checkpoint) hooks.on_checkpoint(0, out.params, opt);

  // labeled-only continuation, augmented, consuming the same step budget as
  // the K active stages; reports at the same cumulative step boundaries
  const int total = planned_total_steps(cfg, n_labeled, static_cast<int>(sp.unlabeled.size()));
  const int post_total = total - burn_steps;
  const int steps_per_epoch = ceil_div(n_labeled, cfg.batch_size);
  const int post_epochs = ceil_div(std::max(post_total, 0), std::max(steps_per_epoch, 1));
  const int drop_at_step = static_cast<int>(std::ceil(cfg.lr_drop_at * post_total));

  Rng order_rng(substream(cfg.seed, "train", 1));
  Rng aug_rng(substream(cfg.seed, "augment", 1));
  BatchWorkspace ws(out.params, cfg.threads);

  const int per_stage = cfg.k > 0 ? ceil_div(post_total, cfg.k) : 0;
  int step = 0;
  int next_boundary = std::min(per_stage, post_total);
  int stage_idx = 1;
  StageReport rep;
  rep.stage = stage_idx;
  double ep_loss = 0.0;
  int ep_items = 0;
  std::vector<const Sample*> batch;
  for (int e = 0; e < post_epochs && step < post_total; ++e) {
    const auto batches =
        compose_epoch_batches(n_labeled, 0, cfg.batch_size, cfg.labeled_ratio, order_rng);
    for (const auto& b : batches) {
      if (step >= post_total) break;
      const double lr = cfg.lr * (step >= drop_at_step ? cfg.lr_drop_factor : 1.0);
      batch.clear();
      for (const BatchItem& it : b) batch.push_back(&sp.labeled[static_cast<size_t>(it.idx)]);
      ep_loss += train_batch(out.params, opt, ws, batch, cfg, lr, cfg.augment, aug_rng,
                             "baseline");
      ep_items += static_cast<int>(batch.size());
      ++step;
      if (step == next_boundary || step == post_total) {
        rep.steps = step - (stage_idx - 1) * per_stage;
        if (!sp.test.empty()) {
          const EvalResult ev = acc_at_05(out.params, sp.test, cfg.threads);
          rep.eval_acc_reg = ev.acc_reg;
          rep.eval_acc_quant = ev.acc_quant;
        }
        out.reports.push_back(rep);
        if (hooks.on_checkpoint) hooks.on_checkpoint(stage_idx, out.params, opt);
        ++stage_idx;
        rep = StageReport{};
        rep.stage = stage_idx;
        next_boundary = std::min(stage_idx * per_stage, post_total);
        if (step == post_total) break;
      }
    }
    if (ep_items > 0) {
      rep.epoch_losses.push_back(ep_loss / ep_items);
      ep_loss = 0.0;
      ep_items = 0;
    }
  }
  return out;
}

}  // namespace ssvg
