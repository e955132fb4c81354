#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "clopa/model.hpp"
#include "clopa/rng.hpp"
#include "clopa/sample.hpp"
#include "clopa/trainer.hpp"

// The annotation campaign: a growing cache of labelled samples that
// periodically triggers a fine-tuning episode on everything cached so far.

namespace clopa {

struct SchedulerConfig {
  double k_d = 0.25;  // minimum cached fraction of the dataset
  double k_m = 0.2;   // validation probability; 1/k_m unassigned samples are required

  int min_unassigned() const;
  int min_cache(int dataset_size) const;
  void validate() const;
};

bool should_trigger(int cache_size, int dataset_size, int unassigned_count, const SchedulerConfig& cfg);

/// Cache sizes at which episodes trigger when samples arrive one at a time.
/// Depends on nothing but the dataset size and the scheduler.
std::vector<int> trigger_points(int dataset_size, const SchedulerConfig& cfg);

enum class Assignment : std::uint8_t { Unassigned, Train, Val };

class AnnotationCache {
 public:
  struct Entry {
    std::uint64_t sample_id = 0;
    Assignment assignment = Assignment::Unassigned;
  };

  void add(std::uint64_t sample_id);
  int size() const { return static_cast<int>(entries_.size()); }
  int unassigned_count() const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::vector<std::uint64_t> ids(Assignment a) const;

 private:
  std::vector<Entry> entries_;
};

/// Labels every unassigned entry Val with probability k_m and Train
/// otherwise, redrawing until the new labels include at least one of each.
/// When redraws run out the last draw is patched: the first new entry
/// becomes Train if none is, the last becomes Val if none is. A single
/// unassigned entry goes to Train. Earlier assignments are never touched.
void assign_split(AnnotationCache& cache, double k_m, Rng& rng);

inline constexpr int kSplitRedraws = 1000;

/// The training stream of one run: ids permuted by order_seed.
std::vector<std::uint64_t> permuted_stream(std::vector<std::uint64_t> ids, std::uint64_t order_seed);

struct EpisodeRecord {
  int episode_id = 0;
  int cache_size_at_trigger = 0;
  std::string checkpoint_file;  // relative to the campaign directory, empty in memory
  ParamStore checkpoint;
  std::vector<std::uint64_t> train_ids;
  std::vector<std::uint64_t> val_ids;
  std::vector<UpdateLog> losses;
  std::vector<double> validation_dice;
  int best_epoch = -1;
  bool no_validation = false;
};

struct CampaignConfig {
  TrainConfig trainer;
  SchedulerConfig scheduler;
  ParamGroupMode mode = ParamGroupMode::InstanceNormOnly;
  std::uint64_t order_seed = 0;  // stream permutation
  std::uint64_t seed = 0;        // splits and episode training
};

struct CampaignOptions {
  /// Where the manifest and checkpoints live; empty keeps everything in memory.
  std::filesystem::path dir;
  /// Free-form identification copied into the manifest.
  std::string label;
  /// Returns after this many newly trained episodes, leaving a resumable
  /// manifest; negative runs to completion.
  int stop_after = -1;
  std::function<void(const EpisodeRecord&)> on_episode;
};

struct CampaignResult {
  std::vector<std::uint64_t> stream;
  std::vector<EpisodeRecord> episodes;
  ParamStore final_checkpoint;
  bool complete = false;
};

/// Streams the permuted training ids into the cache and runs an episode on
/// the full train assignment at every trigger, each episode starting from
/// the previous checkpoint. Frozen campaigns train nothing. With a
/// directory, completed episodes found in its manifest are reused.
/// samples[id] must hold the sample with that id.
CampaignResult run_campaign(std::span<const Sample> samples, const std::vector<std::uint64_t>& train_ids,
                            const ParamStore& base, const CampaignConfig& cfg, const CampaignOptions& options = {});

inline constexpr const char* kManifestFile = "manifest.json";

}  // namespace clopa
