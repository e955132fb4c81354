#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "clopa/errors.hpp"
#include "clopa/experiment.hpp"
#include "clopa/gradcheck.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_config) {
  auto* c = cmd->add_option("--config", f.config, "experiment config (JSON)");
  if (needs_config) c->required();
  cmd->add_option("--seed", f.seed, "master seed (overrides the config)");
  cmd->add_option("--threads", f.threads, "worker threads (overrides the config and CLOPA_THREADS)");
  cmd->add_option("--out", f.out, "output directory (overrides the config and CLOPA_OUT)");
}

clopa::ExperimentConfig resolve_config(const CommonFlags& f) {
  auto cfg = clopa::load_experiment_config(f.config);
  clopa::apply_environment(cfg);
  if (f.seed) cfg.master_seed = *f.seed;
  if (f.threads) cfg.threads = *f.threads;
  if (!f.out.empty()) cfg.output = f.out;
  cfg.validate();
  return cfg;
}

void print_warnings(const clopa::ReportResult& r) {
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual low-parameter adaptation simulator"};
  app.require_subcommand(1);

  CommonFlags flags;
  int stop_after = -1;
  auto* gen = app.add_subcommand("generate", "write the synthetic task dataset");
  add_common(gen, flags, true);
  auto* run = app.add_subcommand("run", "run every campaign and evaluate its checkpoints");
  add_common(run, flags, true);
  run->add_option("--stop-after", stop_after, "stop each campaign after this many new episodes");
  auto* report = app.add_subcommand("report", "summaries, trajectories, rankings and plots");
  add_common(report, flags, true);
  auto* rank = app.add_subcommand("rank", "ranking tables only");
  add_common(rank, flags, true);

  clopa::GradcheckOptions gopt;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(grad, flags, false);
  grad->add_option("--cases", gopt.cases, "random cases per operation");

  CLI11_PARSE(app, argc, argv);

  try {
    if (grad->parsed()) {
      if (flags.seed) gopt.seed = *flags.seed;
      bool ok = true;
      for (const auto& r : clopa::run_gradcheck(gopt)) {
        std::printf("%-28s cases=%d failures=%d worst=%.3e time=%.2fs\n", r.op.c_str(), r.cases, r.failures, r.worst,
                    r.seconds);
        ok = ok && r.passed();
      }
      return ok ? 0 : 1;
    }
    const auto cfg = resolve_config(flags);
    if (gen->parsed()) {
      const auto dir = clopa::cmd_generate(cfg);
      std::printf("dataset written to %s\n", dir.string().c_str());
    } else if (run->parsed()) {
      clopa::RunOptions ro;
      ro.stop_after = stop_after;
      ro.log = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
      clopa::cmd_run(cfg, ro);
    } else if (report->parsed()) {
      print_warnings(clopa::cmd_report(cfg));
    } else if (rank->parsed()) {
      print_warnings(clopa::cmd_rank(cfg));
    }
  } catch (const clopa::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const clopa::MissingArtifact& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return kExitMissing;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
