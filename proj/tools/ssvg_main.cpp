// ssvg: synthetic visual-grounding benchmark with pseudo-label curation and
// selective retraining. Subcommands: gen-data, burn-in, run, baseline, analyze.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "ssvg/attribution.hpp"
#include "ssvg/checkpoint.hpp"
#include "ssvg/config.hpp"
#include "ssvg/evalreport.hpp"
#include "ssvg/pngplot.hpp"
#include "ssvg/synthdata.hpp"
#include "ssvg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hash_hex(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct RunPaths {
  fs::path root;
  fs::path manifest() const { return root / "manifest.json"; }
  fs::path config() const { return root / "config.cfg"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path checkpoint(int stage) const {
    return checkpoints() / ("stage" + std::to_string(stage) + ".ckpt");
  }
  fs::path reports() const { return root / "reports"; }
  fs::path stages_csv() const { return reports() / "stages.csv"; }
  fs::path losses_csv() const { return reports() / "losses.csv"; }
  fs::path pseudo_csv(int stage) const {
    return reports() / ("pseudo_stage" + std::to_string(stage) + ".csv");
  }
};

RunPaths make_run_dir(const std::string& out_dir) {
  // env override for the output directory only
  const char* env = std::getenv("SSVG_OUT_DIR");
  RunPaths p;
  p.root = env && *env ? fs::path(env) : fs::path(out_dir);
  fs::create_directories(p.checkpoints());
  fs::create_directories(p.reports());
  return p;
}

void write_manifest(const RunPaths& paths, const std::string& command, const ssvg::TrainConfig& cfg,
                    const std::string& data_path, uint64_t data_hash, int stages_completed) {
  json m;
  m["version"] = "ssvg-run v1";
  m["command"] = command;
  m["config"] = ssvg::config_to_text(cfg);
  m["data_path"] = fs::absolute(data_path).string();
  m["data_hash"] = hash_hex(data_hash);
  m["seed"] = cfg.seed;
  m["stages_completed"] = stages_completed;
  json ckpts = json::array();
  for (int s = 0; s <= stages_completed; ++s)
    ckpts.push_back(fs::relative(paths.checkpoint(s), paths.root).string());
  m["checkpoints"] = ckpts;
  m["reports"] = {{"stages", "reports/stages.csv"}, {"losses", "reports/losses.csv"}};
  std::ofstream f(paths.manifest());
  f << m.dump(2) << "\n";
}

json read_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path.string());
  json m;
  f >> m;
  return m;
}

struct CommonRunArgs {
  std::string config_path;
  std::string manifest_path;
  std::string data_path;
  std::string out_dir;
  int64_t seed = -1;
  int threads = 0;
  bool resume = false;
};

// Resolves config + dataset from either --config/--data or --manifest.
struct ResolvedRun {
  ssvg::TrainConfig cfg;
  std::string data_path;
  std::vector<ssvg::Sample> data;
  uint64_t data_hash = 0;
};

ResolvedRun resolve_run(const CommonRunArgs& a) {
  ResolvedRun r;
  if (!a.manifest_path.empty()) {
    const json m = read_manifest(a.manifest_path);
    r.cfg = ssvg::parse_config_text(m.at("config").get<std::string>());
    r.data_path = m.at("data_path").get<std::string>();
  } else {
    if (a.config_path.empty()) throw std::runtime_error("--config (or --manifest) is required");
    r.cfg = ssvg::load_config(a.config_path);
    r.data_path = a.data_path;
  }
  if (r.data_path.empty()) throw std::runtime_error("--data is required");
  if (a.seed >= 0) r.cfg.seed = static_cast<uint64_t>(a.seed);
  if (a.threads > 0) r.cfg.threads = a.threads;
  const ssvg::LoadedDataset ds = ssvg::load_dataset(r.data_path);
  r.data = ds.samples;
  r.data_hash = ssvg::file_hash(r.data_path);
  if (r.cfg.model.grid != ds.grid) {
    std::printf("note: adopting dataset grid %d (config had %d)\n", ds.grid, r.cfg.model.grid);
    r.cfg.model.grid = ds.grid;
  }
  return r;
}

ssvg::RunHooks make_hooks(const RunPaths& paths, const std::string& command,
                          const ResolvedRun& rr) {
  ssvg::RunHooks hooks;
  hooks.on_checkpoint = [paths, command, rr](int stage, const ssvg::ModelParams& p,
                                             const ssvg::OptState& opt) {
    ssvg::save_checkpoint(paths.checkpoint(stage).string(), p, &opt);
    write_manifest(paths, command, rr.cfg, rr.data_path, rr.data_hash, stage);
  };
  hooks.on_pool = [paths](int stage, const std::vector<ssvg::PseudoLabel>& pool) {
    ssvg::save_pseudo_manifest(paths.pseudo_csv(stage).string(), pool);
  };
  return hooks;
}

void print_reports(const std::vector<ssvg::StageReport>& reports) {
  for (const auto& r : reports) {
    std::printf("stage %d: steps=%d pool=%d selected=%d acc_reg=%.2f acc_quant=%.2f\n", r.stage,
                r.steps, r.pool_size, r.selected_count, r.eval_acc_reg, r.eval_acc_quant);
  }
}

void finish_run(const RunPaths& paths, const std::string& command, const ResolvedRun& rr,
                const std::vector<ssvg::StageReport>& reports, int stages_completed) {
  ssvg::write_stage_reports_csv(paths.stages_csv().string(), reports);
  ssvg::write_losses_csv(paths.losses_csv().string(), reports);
  std::ofstream cf(paths.config());
  cf << ssvg::config_to_text(rr.cfg);
  write_manifest(paths, command, rr.cfg, rr.data_path, rr.data_hash, stages_completed);
  print_reports(reports);
}

int cmd_gen_data(int n, int grid, uint64_t seed, const std::string& out) {
  ssvg::GenSpec spec;
  spec.n = n;
  spec.grid = grid;
  spec.seed = seed;
  const auto data = ssvg::generate_dataset(spec);
  ssvg::save_dataset(out, data, spec);
  std::printf("wrote %zu samples to %s (hash %s)\n", data.size(), out.c_str(),
              hash_hex(ssvg::file_hash(out)).c_str());
  return 0;
}

int cmd_run(const CommonRunArgs& args, bool burn_in_only) {
  ResolvedRun rr = resolve_run(args);
  if (burn_in_only) rr.cfg.k = 0;
  const RunPaths paths = make_run_dir(args.out_dir);
  std::printf("%s", ssvg::config_to_text(rr.cfg).c_str());

  int resume_stage = -1;
  ssvg::ModelParams resume_params;
  ssvg::OptState resume_opt;
  std::vector<ssvg::StageReport> old_reports;
  if (args.resume && fs::exists(paths.manifest())) {
    const json m = read_manifest(paths.manifest());
    resume_stage = m.at("stages_completed").get<int>();
    auto ck = ssvg::load_checkpoint(paths.checkpoint(resume_stage).string());
    if (!ck.opt) throw std::runtime_error("resume: checkpoint lacks optimizer state");
    resume_params = std::move(ck.params);
    resume_opt = std::move(*ck.opt);
    if (fs::exists(paths.stages_csv()))
      old_reports = ssvg::read_stage_reports_csv(paths.stages_csv().string());
    std::printf("resuming after stage %d\n", resume_stage);
  }

  const auto hooks = make_hooks(paths, burn_in_only ? "burn-in" : "run", rr);
  const ssvg::RunResult res =
      resume_stage >= 0
          ? ssvg::run_actress(rr.data, rr.cfg, hooks, resume_stage, &resume_params, &resume_opt)
          : ssvg::run_actress(rr.data, rr.cfg, hooks);

  std::vector<ssvg::StageReport> reports;
  for (const auto& r : old_reports)
    if (r.stage <= resume_stage) reports.push_back(r);
  for (const auto& r : res.reports) reports.push_back(r);
  finish_run(paths, burn_in_only ? "burn-in" : "run", rr, reports, rr.cfg.k);
  return 0;
}

int cmd_baseline(const CommonRunArgs& args) {
  ResolvedRun rr = resolve_run(args);
  const RunPaths paths = make_run_dir(args.out_dir);
  std::printf("%s", ssvg::config_to_text(rr.cfg).c_str());
  const auto hooks = make_hooks(paths, "baseline", rr);
  const ssvg::RunResult res = ssvg::run_supervised_baseline(rr.data, rr.cfg, hooks);
  finish_run(paths, "baseline", rr, res.reports,
             res.reports.empty() ? 0 : res.reports.back().stage);
  return 0;
}

int cmd_analyze(const std::string& run_dir, bool curves, bool do_ablation, const std::string& emit,
                int dump_attribution, int threads) {
  RunPaths paths;
  paths.root = run_dir;
  const json m = read_manifest(paths.manifest());
  ssvg::TrainConfig cfg = ssvg::parse_config_text(m.at("config").get<std::string>());
  if (threads > 0) cfg.threads = threads;
  const ssvg::LoadedDataset ds = ssvg::load_dataset(m.at("data_path").get<std::string>());
  const bool want_csv = emit.find("csv") != std::string::npos;
  const bool want_png = emit.find("png") != std::string::npos;
  const int last_stage = m.at("stages_completed").get<int>();

  if (curves) {
    auto ck = ssvg::load_checkpoint(paths.checkpoint(0).string());  // after burn-in
    ssvg::DataSplits sp = ssvg::make_splits(ds.samples, cfg);
    auto pool = ssvg::infer_unlabeled(ck.params, sp.unlabeled, cfg);
    ssvg::fuse_pool(pool);
    std::unordered_map<int, ssvg::Box> gold;
    for (const auto& s : ds.samples)
      if (s.gold) gold[s.id] = *s.gold;
    const ssvg::QualityCurve qc = ssvg::quality_curve(pool, gold, cfg.seed);
    if (want_csv) ssvg::write_curves_csv((paths.reports() / "curves.csv").string(), qc);
    if (want_png) ssvg::write_curves_png((paths.reports() / "curves.png").string(), qc);
    for (const auto& [name, accs] : qc.curves) {
      std::printf("%-8s", name.c_str());
      for (double a : accs) std::printf(" %6.2f", a);
      std::printf("\n");
    }
  }

  if (do_ablation) {
    const std::vector<std::pair<std::string, ssvg::MetricMask>> variants = {
        {"random", {false, false, false}}, {"robust", {false, true, false}},
        {"conf", {false, false, true}},    {"faith", {true, false, false}},
        {"fused", {true, true, true}},
    };
    const auto rows = ssvg::ablation(ds.samples, cfg, variants);
    if (want_csv) ssvg::write_ablation_csv((paths.reports() / "ablation.csv").string(), rows);
    if (want_png) ssvg::write_ablation_png((paths.reports() / "ablation.png").string(), rows);
    for (const auto& r : rows) std::printf("%-8s acc_reg=%.2f\n", r.name.c_str(), r.acc_reg);
  }

  if (dump_attribution > 0) {
    auto ck = ssvg::load_checkpoint(paths.checkpoint(last_stage).string());
    ssvg::DataSplits sp = ssvg::make_splits(ds.samples, cfg);
    const auto& pool = sp.test.empty() ? ds.samples : sp.test;
    const int n = std::min<int>(dump_attribution, static_cast<int>(pool.size()));
    for (int i = 0; i < n; ++i) {
      const ssvg::Sample& s = pool[static_cast<size_t>(i)];
      ssvg::ForwardResult fw;
      ssvg::forward(ck.params, s.scene, s.query.tokens, fw);
      ssvg::grad_of_argmax_sum(ck.params, s.scene, s.query.tokens, fw);
      const auto map = ssvg::attribution_map(ck.params, fw, {cfg.relevance_normalize});
      const fs::path out = paths.reports() / ("attribution_" + std::to_string(s.id) + ".csv");
      std::ofstream f(out);
      for (int r = 0; r < map.values.rows; ++r) {
        for (int c = 0; c < map.values.cols; ++c)
          f << (c ? "," : "") << map.values(r, c);
        f << "\n";
      }
    }
    std::printf("dumped %d attribution grids\n", n);
  }

  // refresh accuracy plot from existing stage reports
  if (want_png && fs::exists(paths.stages_csv())) {
    const auto reports = ssvg::read_stage_reports_csv(paths.stages_csv().string());
    ssvg::write_accuracy_png((paths.reports() / "accuracy.png").string(), reports);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic visual-grounding pipeline with pseudo-label curation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  int gen_n = 1000, gen_grid = 8;
  uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of samples")->required();
  gen->add_option("--grid", gen_grid, "grid size");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output file")->required();

  auto add_run_args = [](CLI::App* c, CommonRunArgs& a, bool with_resume) {
    c->add_option("--config", a.config_path, "config file (key = value)");
    c->add_option("--manifest", a.manifest_path, "reproduce from a run manifest");
    c->add_option("--data", a.data_path, "dataset file");
    c->add_option("--out-dir", a.out_dir, "run directory")->required();
    c->add_option("--seed", a.seed, "override config seed");
    c->add_option("--threads", a.threads, "override config threads");
    if (with_resume) c->add_flag("--resume", a.resume, "continue from the last checkpoint");
  };

  auto* run = app.add_subcommand("run", "burn-in + K active retraining stages");
  CommonRunArgs run_args;
  add_run_args(run, run_args, true);

  auto* burn = app.add_subcommand("burn-in", "supervised burn-in only");
  CommonRunArgs burn_args;
  add_run_args(burn, burn_args, false);

  auto* base = app.add_subcommand("baseline", "labeled-only control with the same step budget");
  CommonRunArgs base_args;
  add_run_args(base, base_args, false);

  auto* ana = app.add_subcommand("analyze", "quality curves, ablation, attribution dumps");
  std::string ana_dir, ana_emit = "csv";
  bool ana_curves = false, ana_ablation = false;
  int ana_dump = 0, ana_threads = 0;
  ana->add_option("--run-dir", ana_dir, "run directory with a manifest")->required();
  ana->add_flag("--curves", ana_curves, "pseudo-label quality curves (uses the burn-in checkpoint)");
  ana->add_flag("--ablation", ana_ablation, "one-stage run per metric subset");
  ana->add_option("--emit", ana_emit, "csv, png, or csv,png");
  ana->add_option("--dump-attribution", ana_dump, "dump attribution grids for N samples");
  ana->add_option("--threads", ana_threads, "scoring threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_n, gen_grid, gen_seed, gen_out);
    if (run->parsed()) return cmd_run(run_args, false);
    if (burn->parsed()) return cmd_run(burn_args, true);
    if (base->parsed()) return cmd_baseline(base_args);
    if (ana->parsed())
      return cmd_analyze(ana_dir, ana_curves, ana_ablation, ana_emit, ana_dump, ana_threads);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
