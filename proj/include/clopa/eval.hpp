#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clopa/interaction.hpp"

// Aggregation of rollout metrics into the episodic summary and into
// expected-performance trajectories over the received dataset size.

namespace clopa {

/// Dice and NSD at the initialisation (index 0) and after each of the S
/// editing steps.
struct MetricSeries {
  std::uint64_t sample_id = 0;
  std::vector<double> dice;
  std::vector<double> nsd;

  int max_steps() const { return static_cast<int>(dice.size()) - 1; }
};

MetricSeries series_from_trace(std::uint64_t sample_id, const RolloutTrace& trace);

/// Scalar metrics of one sample, or of one sample averaged over runs.
struct SampleScalars {
  std::uint64_t sample_id = 0;
  double dice_init = 0.0;
  double dice_final = 0.0;
  double dice_nauc = 0.0;
  double nsd_init = 0.0;
  double nsd_final = 0.0;
  double nsd_nauc = 0.0;
  double nnoi = 0.0;
  bool failed = false;
};

SampleScalars sample_scalars(const MetricSeries& s, double threshold);

/// runs[r][i] is sample i in inference run r; every run must list the same
/// sample ids in the same order. Continuous metrics are averaged over runs;
/// a sample fails when it fails in a strict majority of runs.
std::vector<SampleScalars> run_averaged(const std::vector<std::vector<MetricSeries>>& runs, double threshold);

/// Dataset means of the run-averaged scalars; NoF is the failed percentage.
struct EpisodicSummary {
  double dice_init = 0.0;
  double dice_final = 0.0;
  double dice_nauc = 0.0;
  double nsd_init = 0.0;
  double nsd_final = 0.0;
  double nsd_nauc = 0.0;
  double nnoi = 0.0;
  double nof = 0.0;

  friend bool operator==(const EpisodicSummary&, const EpisodicSummary&) = default;
};

EpisodicSummary summarise(std::span<const SampleScalars> samples);
EpisodicSummary episodic_summary(const std::vector<std::vector<MetricSeries>>& runs, double threshold);

/// Holdout expectation of a checkpoint that became available once the
/// stream had delivered `trigger` samples.
struct EpisodeValue {
  int trigger = 0;
  double value = 0.0;
};

/// Step function on t = 1..length (element t-1): the base value up to and
/// including the first trigger, then each episode's value for every t past
/// its trigger.
std::vector<double> expected_trajectory(double base, std::span<const EpisodeValue> episodes, int length);

/// Pointwise mean of equally long trajectories.
std::vector<double> average_trajectories(const std::vector<std::vector<double>>& runs);

/// Mean of the step function over t = 1..L.
double trajectory_auc(std::span<const double> trajectory);

/// Number of samples (NoS): the first t whose value reaches threshold.
std::optional<int> samples_to_threshold(std::span<const double> trajectory, double threshold);

/// One row of the Table-2-shaped summary.
struct SummaryRow {
  std::string task;
  std::string algorithm;
  EpisodicSummary values;

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

inline constexpr const char* kSummaryHeader =
    "task,algorithm,dice_init,dice_final,dice_nauc,nsd_init,nsd_final,nsd_nauc,nnoi,nof";

/// Shortest decimal text that parses back to exactly v.
std::string format_number(double v);

std::string summary_csv(std::span<const SummaryRow> rows);
/// Throws std::runtime_error with the line number on malformed input.
std::vector<SummaryRow> parse_summary_csv(const std::string& text);

}  // namespace clopa
