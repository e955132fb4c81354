#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clopa/model.hpp"
#include "clopa/stream.hpp"
#include "clopa/synthdata.hpp"
#include "clopa/trainer.hpp"

// Batch orchestration of one task: dataset generation, campaigns for every
// (algorithm, training run), holdout rollouts of every checkpoint, and the
// report built from the resulting CSVs.

namespace clopa {

struct AlgorithmSpec {
  std::string name;
  ParamGroupMode mode = ParamGroupMode::InstanceNormOnly;
};

/// Base model trained from scratch on a separate task, with no validation.
struct PretrainSpec {
  TaskSpec task;
  std::uint64_t dataset_seed = 0;
  std::uint64_t seed = 0;
  int updates = 500;
  ParamGroupMode mode = ParamGroupMode::All;
  TrainConfig trainer;
};

struct ExperimentConfig {
  TaskSpec task;
  std::uint64_t dataset_seed = 0;
  std::filesystem::path dataset_dir;  // empty: <output>/dataset
  ModelConfig model;
  std::optional<PretrainSpec> pretrain;
  std::filesystem::path base_checkpoint;  // takes precedence over pretrain
  std::vector<AlgorithmSpec> algorithms;
  TrainConfig trainer;
  SchedulerConfig scheduler;
  int training_runs = 3;
  int inference_runs = 3;
  int eval_steps = 100;
  std::optional<double> threshold;  // overrides the task's expert threshold
  std::uint64_t master_seed = 0;
  std::filesystem::path output = "out";
  int threads = 1;

  std::filesystem::path resolved_dataset_dir() const;
  double expert_threshold() const { return threshold.value_or(task.expert_threshold); }
  /// Throws ConfigError naming the first offending key.
  void validate() const;
};

/// Relative paths inside the config resolve against base_dir.
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir,
                                         const std::string& context = "config");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// CLOPA_OUT replaces the output directory and CLOPA_THREADS the thread count.
void apply_environment(ExperimentConfig& cfg);

/// Seeds of one experiment; all derive from the master seed.
std::uint64_t order_seed(std::uint64_t master, int training_run);
std::uint64_t campaign_seed(std::uint64_t master, int training_run);
std::uint64_t inference_seed(std::uint64_t master, int inference_run);

/// Inference run i rolls out the checkpoints of training run i mod T.
inline int paired_training_run(int inference_run, int training_runs) { return inference_run % training_runs; }

/// Runs fn(0..n-1) on up to `threads` workers. Each index runs exactly once;
/// the first exception by index is rethrown after all workers finish.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// Writes the dataset; rerunning with the same seed writes identical bytes.
std::filesystem::path cmd_generate(const ExperimentConfig& cfg);

struct RunOptions {
  /// Stops every campaign after this many newly trained episodes.
  int stop_after = -1;
  std::function<void(const std::string&)> log;
};

/// Campaigns, rollouts and CSVs under cfg.output. Completed campaign
/// episodes and evaluation fragments found on disk are reused.
void cmd_run(const ExperimentConfig& cfg, const RunOptions& options = {});

struct ReportResult {
  std::vector<std::string> warnings;
  std::vector<std::filesystem::path> files;
};

/// summary.csv, trajectory_summary.csv, trajectories.csv, ranking CSVs,
/// ranks.csv and plots/*.svg, computed from the CSVs written by cmd_run.
ReportResult cmd_report(const ExperimentConfig& cfg);

/// Only the ranking CSVs and ranks.csv.
ReportResult cmd_rank(const ExperimentConfig& cfg);

/// Output file names.
inline constexpr const char* kPerStepCsv = "per_step.csv";
inline constexpr const char* kEpisodeIndexCsv = "episode_index.csv";
inline constexpr const char* kRunInfoJson = "run_info.json";
inline constexpr const char* kBaseCheckpoint = "base.clpa";

}  // namespace clopa
