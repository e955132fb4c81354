#include "clopa/stream.hpp"

#include <cmath>

#include "clopa/errors.hpp"
#include "clopa/fs.hpp"
#include "config_json.hpp"

namespace clopa {
namespace {

constexpr std::uint64_t kTagSplit = 0x73706c6974;
constexpr std::uint64_t kTagEpisode = 0x6570697364;
constexpr std::uint64_t kTagOrder = 0x6f72646572;

// ceil that ignores representation error in products such as 0.2 * 35
int ceil_tolerant(double v) { return static_cast<int>(std::ceil(v - 1e-9)); }

using detail::json;

json manifest_header(const CampaignConfig& cfg, const CampaignOptions& opt, const std::vector<std::uint64_t>& stream) {
  return json{{"label", opt.label},
              {"mode", std::string(to_string(cfg.mode))},
              {"order_seed", cfg.order_seed},
              {"seed", cfg.seed},
              {"trainer", detail::to_json(cfg.trainer)},
              {"scheduler", detail::to_json(cfg.scheduler)},
              {"stream", stream}};
}

json episode_json(const EpisodeRecord& r) {
  json losses = json::array();
  for (const auto& l : r.losses) losses.push_back({l.update, l.total, l.dice, l.ce});
  return json{{"episode_id", r.episode_id},
              {"cache_size_at_trigger", r.cache_size_at_trigger},
              {"checkpoint", r.checkpoint_file},
              {"train_ids", r.train_ids},
              {"val_ids", r.val_ids},
              {"best_epoch", r.best_epoch},
              {"no_validation", r.no_validation},
              {"validation_dice", r.validation_dice},
              {"losses", losses}};
}

EpisodeRecord episode_from(const json& j, const std::filesystem::path& dir, const std::string& ctx) {
  EpisodeRecord r;
  r.episode_id = detail::field<int>(j, "episode_id", ctx);
  r.cache_size_at_trigger = detail::field<int>(j, "cache_size_at_trigger", ctx);
  r.checkpoint_file = detail::field<std::string>(j, "checkpoint", ctx);
  r.train_ids = detail::field<std::vector<std::uint64_t>>(j, "train_ids", ctx);
  r.val_ids = detail::field<std::vector<std::uint64_t>>(j, "val_ids", ctx);
  r.best_epoch = detail::field<int>(j, "best_epoch", ctx);
  r.no_validation = detail::field<bool>(j, "no_validation", ctx);
  r.validation_dice = detail::field<std::vector<double>>(j, "validation_dice", ctx);
  for (const auto& row : detail::field<std::vector<std::vector<double>>>(j, "losses", ctx)) {
    if (row.size() != 4) throw ConfigError(ctx + ": key 'losses': expected rows of 4 values");
    r.losses.push_back({static_cast<int>(row[0]), row[1], row[2], row[3]});
  }
  const auto path = dir / r.checkpoint_file;
  if (!std::filesystem::exists(path)) throw MissingArtifact("checkpoint not found: " + path.string());
  r.checkpoint = load_checkpoint(path);
  return r;
}

void write_manifest(const std::filesystem::path& dir, const json& header, const std::vector<EpisodeRecord>& episodes,
                    bool complete) {
  json m = header;
  m["episodes"] = json::array();
  for (const auto& e : episodes) m["episodes"].push_back(episode_json(e));
  m["complete"] = complete;
  write_file_atomic(dir / kManifestFile, m.dump(1) + "\n");
}

std::string checkpoint_name(int episode) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "episode_%03d.clpa", episode);
  return buf;
}

}  // namespace

int SchedulerConfig::min_unassigned() const { return ceil_tolerant(1.0 / k_m); }

int SchedulerConfig::min_cache(int dataset_size) const { return ceil_tolerant(k_d * dataset_size); }

void SchedulerConfig::validate() const {
  if (!(k_d > 0.0 && k_d <= 1.0)) throw ConfigError("scheduler: key 'k_d': must lie in (0, 1]");
  if (!(k_m > 0.0 && k_m <= 1.0)) throw ConfigError("scheduler: key 'k_m': must lie in (0, 1]");
}

bool should_trigger(int cache_size, int dataset_size, int unassigned_count, const SchedulerConfig& cfg) {
  if (cache_size > dataset_size) throw std::invalid_argument("should_trigger: cache larger than dataset");
  return cache_size >= cfg.min_cache(dataset_size) && unassigned_count >= cfg.min_unassigned();
}

std::vector<int> trigger_points(int dataset_size, const SchedulerConfig& cfg) {
  std::vector<int> out;
  int unassigned = 0;
  for (int t = 1; t <= dataset_size; ++t) {
    ++unassigned;
    if (should_trigger(t, dataset_size, unassigned, cfg)) {
      out.push_back(t);
      unassigned = 0;
    }
  }
  return out;
}

void AnnotationCache::add(std::uint64_t sample_id) {
  for (const auto& e : entries_)
    if (e.sample_id == sample_id) throw std::invalid_argument("sample " + std::to_string(sample_id) + " already cached");
  entries_.push_back({sample_id, Assignment::Unassigned});
}

int AnnotationCache::unassigned_count() const {
  int n = 0;
  for (const auto& e : entries_) n += e.assignment == Assignment::Unassigned;
  return n;
}

std::vector<std::uint64_t> AnnotationCache::ids(Assignment a) const {
  std::vector<std::uint64_t> out;
  for (const auto& e : entries_)
    if (e.assignment == a) out.push_back(e.sample_id);
  return out;
}

void assign_split(AnnotationCache& cache, double k_m, Rng& rng) {
  std::vector<AnnotationCache::Entry*> fresh;
  for (auto& e : cache.entries())
    if (e.assignment == Assignment::Unassigned) fresh.push_back(&e);
  if (fresh.empty()) return;
  if (fresh.size() == 1) {
    fresh[0]->assignment = Assignment::Train;
    return;
  }
  std::vector<Assignment> labels(fresh.size());
  for (int attempt = 0; attempt < kSplitRedraws; ++attempt) {
    bool any_train = false, any_val = false;
    for (auto& l : labels) {
      l = uniform01(rng) < k_m ? Assignment::Val : Assignment::Train;
      any_train = any_train || l == Assignment::Train;
      any_val = any_val || l == Assignment::Val;
    }
    if (any_train && any_val) break;
    if (attempt + 1 == kSplitRedraws) {
      if (!any_train) labels.front() = Assignment::Train;
      if (!any_val) labels.back() = Assignment::Val;
    }
  }
  for (std::size_t i = 0; i < fresh.size(); ++i) fresh[i]->assignment = labels[i];
}

std::vector<std::uint64_t> permuted_stream(std::vector<std::uint64_t> ids, std::uint64_t order_seed) {
  Rng rng = make_rng({order_seed, kTagOrder});
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[uniform_index(rng, i)]);
  return ids;
}

CampaignResult run_campaign(std::span<const Sample> samples, const std::vector<std::uint64_t>& train_ids,
                            const ParamStore& base, const CampaignConfig& cfg, const CampaignOptions& options) {
  cfg.scheduler.validate();
  cfg.trainer.validate(base.config());
  for (auto id : train_ids)
    if (id >= samples.size() || samples[id].id != id) throw std::invalid_argument("run_campaign: sample table does not match ids");

  CampaignResult result;
  result.stream = permuted_stream(train_ids, cfg.order_seed);
  const int n = static_cast<int>(result.stream.size());
  const bool persist = !options.dir.empty();
  const json header = manifest_header(cfg, options, result.stream);

  std::vector<EpisodeRecord> stored;
  if (persist) {
    std::filesystem::create_directories(options.dir);
    const auto path = options.dir / kManifestFile;
    if (std::filesystem::exists(path)) {
      const std::string ctx = path.string();
      json m = detail::parse_json(read_file(path), ctx);
      json existing = m;
      existing.erase("episodes");
      existing.erase("complete");
      if (existing != header) throw ConfigError(ctx + ": manifest was written with a different configuration");
      for (const auto& e : m.at("episodes")) stored.push_back(episode_from(e, options.dir, ctx));
    }
  }

  auto refs = [&](const std::vector<std::uint64_t>& ids) {
    SampleRefs out;
    for (auto id : ids) out.push_back(&samples[id]);
    return out;
  };

  AnnotationCache cache;
  ParamStore current = base.clone();
  int episode = 0, trained = 0;
  for (int t = 1; t <= n; ++t) {
    cache.add(result.stream[static_cast<std::size_t>(t - 1)]);
    if (cfg.mode == ParamGroupMode::Frozen || !should_trigger(t, n, cache.unassigned_count(), cfg.scheduler)) continue;

    Rng split_rng = make_rng({cfg.seed, kTagSplit, static_cast<std::uint64_t>(episode)});
    assign_split(cache, cfg.scheduler.k_m, split_rng);
    EpisodeRecord rec;
    if (episode < static_cast<int>(stored.size())) {
      rec = std::move(stored[static_cast<std::size_t>(episode)]);
      if (rec.episode_id != episode || rec.cache_size_at_trigger != t || rec.train_ids != cache.ids(Assignment::Train) ||
          rec.val_ids != cache.ids(Assignment::Val)) {
        throw ConfigError((options.dir / kManifestFile).string() + ": stored episode " + std::to_string(episode) +
                          " does not match the replayed stream");
      }
    } else {
      if (options.stop_after >= 0 && trained >= options.stop_after) {
        if (persist) write_manifest(options.dir, header, result.episodes, false);
        result.final_checkpoint = std::move(current);
        return result;
      }
      rec.episode_id = episode;
      rec.cache_size_at_trigger = t;
      rec.train_ids = cache.ids(Assignment::Train);
      rec.val_ids = cache.ids(Assignment::Val);
      auto res = run_episode(current, refs(rec.train_ids), refs(rec.val_ids), cfg.trainer, cfg.mode,
                             derive_seed({cfg.seed, kTagEpisode, static_cast<std::uint64_t>(episode)}));
      rec.checkpoint = std::move(res.checkpoint);
      rec.losses = std::move(res.losses);
      rec.validation_dice = std::move(res.validation_dice);
      rec.best_epoch = res.best_epoch;
      rec.no_validation = res.no_validation;
      if (persist) {
        rec.checkpoint_file = checkpoint_name(episode);
        save_checkpoint(options.dir / rec.checkpoint_file, rec.checkpoint);
      }
      ++trained;
    }
    current = rec.checkpoint.clone();
    result.episodes.push_back(std::move(rec));
    if (persist && episode >= static_cast<int>(stored.size())) write_manifest(options.dir, header, result.episodes, false);
    if (options.on_episode) options.on_episode(result.episodes.back());
    ++episode;
  }
  if (persist) write_manifest(options.dir, header, result.episodes, true);
  result.final_checkpoint = std::move(current);
  result.complete = true;
  return result;
}

}  // namespace clopa
