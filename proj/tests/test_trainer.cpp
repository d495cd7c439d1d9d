#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "ssvg/attribution.hpp"
#include "ssvg/evalreport.hpp"
#include "ssvg/trainer.hpp"

using namespace ssvg;

namespace {

std::vector<Sample> tiny_data(int n, uint64_t seed) {
  GenSpec gs;
  gs.n = n;
  gs.grid = 8;
  gs.seed = seed;
  return generate_dataset(gs);
}

TrainConfig tiny_cfg() {
  TrainConfig c;
  c.label_fraction = 0.25;
  c.test_fraction = 0.2;
  c.n1 = 2;
  c.n2 = 1;
  c.k = 2;
  c.batch_size = 8;
  c.seed = 5;
  return c;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  bool eq = true;
  std::vector<const Mat*> ta, tb;
  for_each_param(a, [&](const std::string&, Partition, const Mat& m) { ta.push_back(&m); });
  for_each_param(b, [&](const std::string&, Partition, const Mat& m) { tb.push_back(&m); });
  for (size_t i = 0; i < ta.size(); ++i) eq = eq && ta[i]->a == tb[i]->a;
  return eq;
}

}  // namespace

TEST_CASE("compose_epoch_batches") {
  SUBCASE("batch 8 splits 6 labeled + 2 pseudo") {
    Rng rng(1);
    const auto batches = compose_epoch_batches(60, 40, 8, 3, rng);
    REQUIRE(!batches.empty());
    int lab = 0, ps = 0;
    for (const BatchItem& it : batches[0]) (it.pseudo ? ps : lab)++;
    CHECK(lab == 6);
    CHECK(ps == 2);
  }

  SUBCASE("empty pseudo pool -> all-labeled batches of batch_size") {
    Rng rng(2);
    const auto batches = compose_epoch_batches(20, 0, 8, 3, rng);
    REQUIRE(batches.size() == 3);
    for (const BatchItem& it : batches[0]) CHECK_FALSE(it.pseudo);
    CHECK(batches[0].size() == 8);
    CHECK(batches[2].size() == 4);
  }

  SUBCASE("epoch draw counts stay within 1 of the 3:1 ratio") {
    Rng rng(3);
    for (int l : {24, 30, 100}) {
      const auto batches = compose_epoch_batches(l, 50, 8, 3, rng);
      int lab = 0, ps = 0;
      for (const auto& b : batches)
        for (const BatchItem& it : b) (it.pseudo ? ps : lab)++;
      CHECK(lab == l);  // every labeled sample drawn exactly once
      CHECK(std::abs(ps - static_cast<double>(lab) / 3.0) <= 1.0);
    }
  }

  SUBCASE("labeled drawn without replacement; pseudo recycles") {
    Rng rng(4);
    const auto batches = compose_epoch_batches(30, 4, 8, 3, rng);
    std::set<int> lab_seen;
    int ps_draws = 0;
    for (const auto& b : batches)
      for (const BatchItem& it : b) {
        if (it.pseudo) {
          ++ps_draws;
          CHECK(it.idx < 4);
        } else {
          CHECK(lab_seen.insert(it.idx).second);  // no repeats
        }
      }
    CHECK(ps_draws == 10);  // 30/3 = 10 > pool of 4: recycled
  }
}

TEST_CASE("burn_in") {
  const auto data = tiny_data(60, 11);
  TrainConfig cfg = tiny_cfg();
  DataSplits sp = make_splits(data, cfg);
  REQUIRE(!sp.labeled.empty());

  SUBCASE("n1 = 0 leaves params unchanged") {
    TrainConfig c0 = cfg;
    c0.n1 = 0;
    ModelParams p = init_params(c0.model, 3);
    const ModelParams before = p;
    OptState opt = make_opt_state(p);
    burn_in(p, opt, sp.labeled, c0, nullptr);
    CHECK(params_equal(before, p));
  }

  SUBCASE("loss recorded per epoch and finite") {
    ModelParams p = init_params(cfg.model, 3);
    OptState opt = make_opt_state(p);
    std::vector<double> losses;
    burn_in(p, opt, sp.labeled, cfg, &losses);
    REQUIRE(losses.size() == static_cast<size_t>(cfg.n1));
    for (double l : losses) CHECK(std::isfinite(l));
  }
}

TEST_CASE("infer_unlabeled") {
  const auto data = tiny_data(60, 13);
  TrainConfig cfg = tiny_cfg();
  DataSplits sp = make_splits(data, cfg);
  ModelParams p = init_params(cfg.model, 7);

  const auto pool = infer_unlabeled(p, sp.unlabeled, cfg);
  CHECK(pool.size() == sp.unlabeled.size());

  SUBCASE("params bit-identical before and after") {
    const ModelParams before = p;
    (void)infer_unlabeled(p, sp.unlabeled, cfg);
    CHECK(params_equal(before, p));
  }

  SUBCASE("per-sample scores match the standalone module calls") {
    for (size_t i = 0; i < std::min<size_t>(5, sp.unlabeled.size()); ++i) {
      const UnlabeledSample& u = sp.unlabeled[i];
      ForwardResult fw;
      forward(p, u.scene, u.query.tokens, fw);
      const QuantizedBox qb = argmax_bins(fw.quant_logits);
      const double want_r = robustness(fw.box, dequantize(qb, p.cfg.bins));
      const double want_c = confidence(fw.quant_logits, cfg.confidence_combine);
      grad_of_argmax_sum(p, u.scene, u.query.tokens, fw);
      const AttributionMap map = attribution_map(p, fw, {cfg.relevance_normalize});
      const double want_f = map.degenerate ? 0.0 : faithfulness(map, fw.box);
      CHECK(pool[i].scores.robust == doctest::Approx(want_r));
      CHECK(pool[i].scores.conf == doctest::Approx(want_c));
      CHECK(pool[i].scores.faith == doctest::Approx(want_f));
      CHECK(pool[i].sample_id == u.id);
    }
  }

  SUBCASE("threaded scoring returns the same pool") {
    TrainConfig c2 = cfg;
    c2.threads = 2;
    const auto pool2 = infer_unlabeled(p, sp.unlabeled, c2);
    REQUIRE(pool2.size() == pool.size());
    for (size_t i = 0; i < pool.size(); ++i) {
      CHECK(pool2[i].sample_id == pool[i].sample_id);
      CHECK(pool2[i].scores.faith == pool[i].scores.faith);
      CHECK(pool2[i].scores.robust == pool[i].scores.robust);
      CHECK(pool2[i].scores.conf == pool[i].scores.conf);
    }
  }
}

TEST_CASE("active_stage contracts") {
  const auto data = tiny_data(80, 17);
  TrainConfig cfg = tiny_cfg();
  DataSplits sp = make_splits(data, cfg);
  ModelParams p = init_params(cfg.model, 9);
  OptState opt = make_opt_state(p);
  burn_in(p, opt, sp.labeled, cfg, nullptr);
  const ModelParams post_burn = p;

  SUBCASE("n2 = 0: params equal the selectively-reinitialized params") {
    TrainConfig c0 = cfg;
    c0.n2 = 0;
    ModelParams q = post_burn;
    OptState o = opt;
    StageOptions so;
    so.stage_index = 1;
    active_stage(q, o, sp.labeled, sp.unlabeled, sp.test, c0, so);
    const ModelParams expect = reinit_selective(post_burn, substream(c0.seed, "init"));
    CHECK(params_equal(q, expect));
  }

  SUBCASE("fusion partition preserved across the stage boundary") {
    ModelParams q = post_burn;
    OptState o = opt;
    StageOptions so;
    so.stage_index = 1;
    std::vector<PseudoLabel> pool;
    so.pool_out = &pool;
    const StageReport rep = active_stage(q, o, sp.labeled, sp.unlabeled, sp.test, cfg, so);
    CHECK(rep.pool_size == static_cast<int>(sp.unlabeled.size()));
    CHECK(rep.selected_count ==
          static_cast<int>(std::llround(cfg.effective_n_percent() / 100.0 *
                                        static_cast<double>(sp.unlabeled.size()))));
    CHECK(pool.size() == sp.unlabeled.size());
    int marked = 0;
    for (const auto& pl : pool) marked += pl.selected ? 1 : 0;
    CHECK(marked == rep.selected_count);
  }

  SUBCASE("random control selects the same count") {
    ModelParams q = post_burn;
    OptState o = opt;
    StageOptions so;
    so.stage_index = 1;
    so.mask = MetricMask{false, false, false};
    const StageReport rep = active_stage(q, o, sp.labeled, sp.unlabeled, sp.test, cfg, so);
    CHECK(rep.selected_count ==
          static_cast<int>(std::llround(cfg.effective_n_percent() / 100.0 *
                                        static_cast<double>(sp.unlabeled.size()))));
  }
}

TEST_CASE("run_actress") {
  const auto data = tiny_data(80, 19);
  TrainConfig cfg = tiny_cfg();

  SUBCASE("k = 0 equals pure burn-in") {
    TrainConfig c0 = cfg;
    c0.k = 0;
    const RunResult run = run_actress(data, c0);
    DataSplits sp = make_splits(data, c0);
    ModelParams p = init_params(c0.model, substream(c0.seed, "init"));
    OptState opt = make_opt_state(p);
    burn_in(p, opt, sp.labeled, c0, nullptr);
    CHECK(params_equal(run.params, p));
    CHECK(run.reports.size() == 1);
  }

  SUBCASE("deterministic across repeats; K refreshes and re-inits visible") {
    const RunResult a = run_actress(data, cfg);
    const RunResult b = run_actress(data, cfg);
    CHECK(params_equal(a.params, b.params));
    REQUIRE(a.reports.size() == static_cast<size_t>(cfg.k) + 1);
    for (size_t i = 0; i < a.reports.size(); ++i) {
      CHECK(a.reports[i].stage == static_cast<int>(i));
      CHECK(a.reports[i].eval_acc_reg == b.reports[i].eval_acc_reg);
      CHECK(a.reports[i].mean_fused == b.reports[i].mean_fused);
      if (i > 0) CHECK(a.reports[i].pool_size > 0);
    }
  }

  SUBCASE("checkpoint round trip: resume reproduces subsequent reports") {
    std::vector<ModelParams> ckpt_params;
    std::vector<OptState> ckpt_opts;
    RunHooks hooks;
    hooks.on_checkpoint = [&](int, const ModelParams& p, const OptState& o) {
      ckpt_params.push_back(p);
      ckpt_opts.push_back(o);
    };
    const RunResult full = run_actress(data, cfg, hooks);
    REQUIRE(ckpt_params.size() == static_cast<size_t>(cfg.k) + 1);

    // resume after stage 1 and compare stage-2 onward
    const RunResult resumed =
        run_actress(data, cfg, {}, 1, &ckpt_params[1], &ckpt_opts[1]);
    REQUIRE(resumed.reports.size() == static_cast<size_t>(cfg.k) - 1);
    for (size_t i = 0; i < resumed.reports.size(); ++i) {
      const StageReport& want = full.reports[2 + i];
      const StageReport& got = resumed.reports[i];
      CHECK(got.stage == want.stage);
      CHECK(got.eval_acc_reg == want.eval_acc_reg);
      CHECK(got.mean_fused == want.mean_fused);
      CHECK(got.selected_count == want.selected_count);
    }
    CHECK(params_equal(resumed.params, full.params));
  }

  SUBCASE("data hygiene: unlabeled gold is stripped at split time") {
    DataSplits sp = make_splits(data, cfg);
    CHECK(sp.labeled.size() + sp.unlabeled.size() + sp.test.size() == data.size());
    // UnlabeledSample has no gold member at all; nothing to check beyond type,
    // but the split must not shrink the pool
    CHECK(!sp.unlabeled.empty());
  }
}

TEST_CASE("run_supervised_baseline consumes the same step budget") {
  const auto data = tiny_data(80, 23);
  TrainConfig cfg = tiny_cfg();
  const RunResult act = run_actress(data, cfg);
  const RunResult base = run_supervised_baseline(data, cfg);

  int act_steps = 0, base_steps = 0;
  for (const auto& r : act.reports) act_steps += r.steps;
  for (const auto& r : base.reports) base_steps += r.steps;
  CHECK(act_steps == base_steps);
  DataSplits sp = make_splits(data, cfg);
  CHECK(act_steps == planned_total_steps(cfg, static_cast<int>(sp.labeled.size()),
                                         static_cast<int>(sp.unlabeled.size())));
  // same report schema: stage indices line up
  REQUIRE(base.reports.size() == act.reports.size());
  for (size_t i = 0; i < base.reports.size(); ++i) CHECK(base.reports[i].stage == act.reports[i].stage);
}

TEST_CASE("a non-finite loss aborts with a divergence error") {
  const auto data = tiny_data(60, 29);
  TrainConfig cfg = tiny_cfg();
  DataSplits sp = make_splits(data, cfg);
  REQUIRE(!sp.labeled.empty());
  sp.labeled[0].gold->cx = std::nan("");
  ModelParams p = init_params(cfg.model, 3);
  OptState opt = make_opt_state(p);
  CHECK_THROWS_AS(burn_in(p, opt, sp.labeled, cfg, nullptr), TrainDivergence);
}
