#include "clopa/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "clopa/errors.hpp"
#include "clopa/eval.hpp"
#include "clopa/fs.hpp"
#include "clopa/interaction.hpp"
#include "config_json.hpp"
#include "experiment_io.hpp"

namespace clopa {

using detail::json;

namespace {

constexpr std::uint64_t kTagOrder = 0x6f72646572;
constexpr std::uint64_t kTagCampaign = 0x63616d70;
constexpr std::uint64_t kTagInfer = 0x696e666572;
constexpr std::uint64_t kTagInit = 0x696e6974;

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

TaskSpec task_from(const json& j, const std::filesystem::path& base, const std::string& ctx) {
  if (j.is_string()) {
    const auto path = resolve(j.get<std::string>(), base);
    if (!std::filesystem::exists(path)) throw MissingArtifact(ctx + ": task spec not found: " + path.string());
    try {
      return load_task_spec(path);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  detail::require_object(j, ctx);
  try {
    return task_spec_from_json(j.dump());
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
}

ParamGroupMode mode_from(const json& j, const char* key, const std::string& ctx) {
  try {
    return parse_param_group_mode(detail::field<std::string>(j, key, ctx));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ctx + ": key '" + key + "': " + e.what());
  }
}

void log_line(const RunOptions& opt, const std::string& msg) {
  if (opt.log) opt.log(msg);
}

std::string run_dir_name(int r) { return "run_" + std::to_string(r); }

std::filesystem::path campaign_dir(const ExperimentConfig& cfg, const AlgorithmSpec& a, int r) {
  return cfg.output / "campaigns" / a.name / run_dir_name(r);
}

// Byte-level fingerprint tying an evaluation fragment to its checkpoint.
std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

json pretrain_json(const PretrainSpec& p, const ModelConfig& model) {
  return json{{"task", json::parse(task_spec_to_json(p.task))},
              {"dataset_seed", p.dataset_seed},
              {"seed", p.seed},
              {"updates", p.updates},
              {"mode", std::string(to_string(p.mode))},
              {"trainer", detail::to_json(p.trainer)},
              {"model", {{"num_stages", model.num_stages}, {"base_channels", model.base_channels}}}};
}

ParamStore obtain_base(const ExperimentConfig& cfg, const RunOptions& opt) {
  if (!cfg.base_checkpoint.empty()) {
    if (!std::filesystem::exists(cfg.base_checkpoint))
      throw MissingArtifact("base checkpoint not found: " + cfg.base_checkpoint.string());
    return load_checkpoint(cfg.base_checkpoint);
  }
  if (!cfg.pretrain) return build_model(cfg.model, derive_seed({cfg.master_seed, kTagInit}));

  const auto path = cfg.output / kBaseCheckpoint;
  const auto info = cfg.output / "base.json";
  const std::string expected = pretrain_json(*cfg.pretrain, cfg.model).dump(1) + "\n";
  if (std::filesystem::exists(path) && std::filesystem::exists(info) && read_file(info) == expected) {
    return load_checkpoint(path);
  }
  log_line(opt, "pretraining base model (" + std::to_string(cfg.pretrain->updates) + " updates)");
  const auto& p = *cfg.pretrain;
  const Dataset ds = generate_task(p.task, p.dataset_seed);
  SampleRefs all;
  for (const auto& s : ds.samples) all.push_back(&s);
  TrainConfig tc = p.trainer;
  tc.epochs = 1;
  tc.updates_per_epoch = p.updates;
  auto init = build_model(cfg.model, derive_seed({p.seed, kTagInit}));
  auto res = run_episode(init, all, {}, tc, p.mode, p.seed);
  save_checkpoint(path, res.checkpoint);
  write_file_atomic(info, expected);
  return std::move(res.checkpoint);
}

struct CampaignOutcome {
  std::vector<EpisodeRecord> episodes;
  bool complete = false;
};

struct EvalJob {
  int algorithm = -1;  // -1: the shared base model
  int training_run = 0;
  int episode = -1;
  int inference_run = 0;
  const ParamStore* store = nullptr;
  std::filesystem::path fragment;
  std::vector<MetricSeries> result;
};

std::string fragment_key(const ExperimentConfig& cfg, const ParamStore& store, int inference_run) {
  std::ostringstream os;
  os << "# steps=" << cfg.eval_steps << " seed=" << inference_seed(cfg.master_seed, inference_run)
     << " tolerance=" << format_number(cfg.task.nsd_tolerance) << " checkpoint=" << std::hex
     << fnv1a(checkpoint_bytes(store));
  return os.str();
}

std::vector<MetricSeries> evaluate(const ExperimentConfig& cfg, const Dataset& ds, const ParamStore& store,
                                   int inference_run) {
  RolloutOptions ro;
  ro.steps = cfg.eval_steps;
  ro.mode = RecordMode::Metrics;
  ro.nsd_tolerance = ds.spec.nsd_tolerance;
  std::vector<MetricSeries> out;
  for (auto id : ds.holdout) {
    const auto& s = ds.samples[id];
    const auto trace = rollout(store, s.image, s.gt, inference_seed(cfg.master_seed, inference_run), id, ro);
    out.push_back(series_from_trace(id, trace));
  }
  return out;
}

std::string fragment_text(const std::string& key, const std::vector<MetricSeries>& series) {
  std::ostringstream os;
  os << key << "\nsample_id,step,dice,nsd\n";
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.dice.size(); ++k)
      os << s.sample_id << ',' << k << ',' << format_number(s.dice[k]) << ',' << format_number(s.nsd[k]) << '\n';
  return os.str();
}

std::optional<std::vector<MetricSeries>> read_fragment(const std::filesystem::path& path, const std::string& key) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line) || line != key) return std::nullopt;
  if (!std::getline(is, line)) return std::nullopt;
  std::vector<MetricSeries> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != 4) return std::nullopt;
    const auto id = detail::parse_u64(cells[0], path.string());
    if (out.empty() || out.back().sample_id != id) out.push_back({id, {}, {}});
    out.back().dice.push_back(detail::parse_double(cells[2], path.string()));
    out.back().nsd.push_back(detail::parse_double(cells[3], path.string()));
  }
  return out;
}

}  // namespace

std::filesystem::path ExperimentConfig::resolved_dataset_dir() const {
  return dataset_dir.empty() ? output / "dataset" : dataset_dir;
}

void ExperimentConfig::validate() const {
  task.validate();
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: key 'model': ") + e.what());
  }
  try {
    trainer.validate(model);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: key 'trainer': ") + e.what());
  }
  scheduler.validate();
  if (algorithms.empty()) throw ConfigError("config: key 'algorithms': at least one algorithm is required");
  std::set<std::string> names;
  for (const auto& a : algorithms) {
    if (a.name.empty() || a.name.find_first_of(",\n/\\\"") != std::string::npos || a.name == "." || a.name == "..")
      throw ConfigError("config: key 'algorithms': invalid algorithm name '" + a.name + "'");
    if (!names.insert(a.name).second)
      throw ConfigError("config: key 'algorithms': duplicate algorithm name '" + a.name + "'");
  }
  if (task.name.find_first_of(",\n") != std::string::npos)
    throw ConfigError("config: key 'task': task name may not contain commas or newlines");
  if (training_runs < 1) throw ConfigError("config: key 'training_runs': must be >= 1");
  if (inference_runs < 1) throw ConfigError("config: key 'inference_runs': must be >= 1");
  if (eval_steps < 0) throw ConfigError("config: key 'evaluation.steps': must be >= 0");
  if (threads < 1) throw ConfigError("config: key 'threads': must be >= 1");
  if (threshold && !(*threshold >= 0.0 && *threshold <= 1.0))
    throw ConfigError("config: key 'evaluation.threshold': must lie in [0, 1]");
  if (pretrain) {
    pretrain->task.validate();
    if (pretrain->updates < 1) throw ConfigError("config: key 'pretrain.updates': must be >= 1");
  }
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir,
                                         const std::string& ctx) {
  const json j = detail::parse_json(text, ctx);
  detail::check_keys(j,
                     {"task", "dataset", "model", "pretrain", "base_checkpoint", "algorithms", "trainer", "scheduler",
                      "training_runs", "inference_runs", "evaluation", "master_seed", "output", "threads"},
                     ctx);
  ExperimentConfig cfg;
  if (!j.contains("task")) throw ConfigError(ctx + ": missing key 'task'");
  cfg.task = task_from(j.at("task"), base_dir, ctx + ": key 'task'");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    const std::string dctx = ctx + ": dataset";
    detail::check_keys(d, {"dir", "seed"}, dctx);
    if (d.contains("dir")) cfg.dataset_dir = resolve(detail::field<std::string>(d, "dir", dctx), base_dir);
    cfg.dataset_seed = detail::field_or<std::uint64_t>(d, "seed", cfg.dataset_seed, dctx);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    const std::string mctx = ctx + ": model";
    detail::check_keys(m, {"num_stages", "base_channels"}, mctx);
    cfg.model.num_stages = detail::field_or(m, "num_stages", cfg.model.num_stages, mctx);
    cfg.model.base_channels = detail::field_or(m, "base_channels", cfg.model.base_channels, mctx);
  }
  if (j.contains("trainer")) cfg.trainer = detail::train_config_from(j.at("trainer"), cfg.trainer, ctx + ": trainer");
  if (j.contains("scheduler"))
    cfg.scheduler = detail::scheduler_config_from(j.at("scheduler"), cfg.scheduler, ctx + ": scheduler");

  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    const std::string pctx = ctx + ": pretrain";
    detail::check_keys(p, {"task", "dataset_seed", "seed", "updates", "mode", "trainer"}, pctx);
    PretrainSpec ps;
    if (!p.contains("task")) throw ConfigError(pctx + ": missing key 'task'");
    ps.task = task_from(p.at("task"), base_dir, pctx + ": key 'task'");
    ps.dataset_seed = detail::field_or<std::uint64_t>(p, "dataset_seed", ps.dataset_seed, pctx);
    ps.seed = detail::field_or<std::uint64_t>(p, "seed", ps.seed, pctx);
    ps.updates = detail::field_or(p, "updates", ps.updates, pctx);
    if (p.contains("mode")) ps.mode = mode_from(p, "mode", pctx);
    ps.trainer = p.contains("trainer") ? detail::train_config_from(p.at("trainer"), cfg.trainer, pctx + ": trainer")
                                       : cfg.trainer;
    cfg.pretrain = ps;
  }
  if (j.contains("base_checkpoint"))
    cfg.base_checkpoint = resolve(detail::field<std::string>(j, "base_checkpoint", ctx), base_dir);

  if (!j.contains("algorithms")) throw ConfigError(ctx + ": missing key 'algorithms'");
  const auto& algos = j.at("algorithms");
  if (!algos.is_array()) throw ConfigError(ctx + ": key 'algorithms': expected an array");
  for (std::size_t i = 0; i < algos.size(); ++i) {
    const std::string actx = ctx + ": algorithms[" + std::to_string(i) + "]";
    detail::check_keys(algos[i], {"name", "mode"}, actx);
    cfg.algorithms.push_back({detail::field<std::string>(algos[i], "name", actx), mode_from(algos[i], "mode", actx)});
  }

  cfg.training_runs = detail::field_or(j, "training_runs", cfg.training_runs, ctx);
  cfg.inference_runs = detail::field_or(j, "inference_runs", cfg.inference_runs, ctx);
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    const std::string ectx = ctx + ": evaluation";
    detail::check_keys(e, {"steps", "threshold"}, ectx);
    cfg.eval_steps = detail::field_or(e, "steps", cfg.eval_steps, ectx);
    if (e.contains("threshold") && !e.at("threshold").is_null())
      cfg.threshold = detail::field<double>(e, "threshold", ectx);
  }
  cfg.master_seed = detail::field_or<std::uint64_t>(j, "master_seed", cfg.master_seed, ctx);
  cfg.output = resolve(detail::field_or<std::string>(j, "output", cfg.output.string(), ctx), base_dir);
  cfg.threads = detail::field_or(j, "threads", cfg.threads, ctx);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("config not found: " + path.string());
  return parse_experiment_config(read_file(path), path.parent_path(), path.string());
}

void apply_environment(ExperimentConfig& cfg) {
  if (const char* out = std::getenv("CLOPA_OUT"); out && *out) cfg.output = out;
  if (const char* th = std::getenv("CLOPA_THREADS"); th && *th) {
    try {
      cfg.threads = std::stoi(th);
    } catch (const std::exception&) {
      throw ConfigError(std::string("environment: CLOPA_THREADS is not an integer: '") + th + "'");
    }
    if (cfg.threads < 1) throw ConfigError("environment: CLOPA_THREADS must be >= 1");
  }
}

std::uint64_t order_seed(std::uint64_t master, int r) {
  return derive_seed({master, kTagOrder, static_cast<std::uint64_t>(r)});
}
std::uint64_t campaign_seed(std::uint64_t master, int r) {
  return derive_seed({master, kTagCampaign, static_cast<std::uint64_t>(r)});
}
std::uint64_t inference_seed(std::uint64_t master, int i) {
  return derive_seed({master, kTagInfer, static_cast<std::uint64_t>(i)});
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  const int k = std::max(1, std::min(threads, n));
  std::vector<std::thread> pool;
  for (int t = 1; t < k; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::filesystem::path cmd_generate(const ExperimentConfig& cfg) {
  const auto dir = cfg.resolved_dataset_dir();
  save_dataset(dir, generate_task(cfg.task, cfg.dataset_seed));
  return dir;
}

void cmd_run(const ExperimentConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  const auto dsdir = cfg.resolved_dataset_dir();
  const Dataset ds = load_dataset(dsdir);
  if (task_spec_to_json(ds.spec) != task_spec_to_json(cfg.task) || ds.master_seed != cfg.dataset_seed)
    throw ConfigError(dsdir.string() + ": dataset was generated from a different task spec or seed");
  std::filesystem::create_directories(cfg.output);

  const ParamStore base = obtain_base(cfg, opt);
  cfg.trainer.validate(base.config());
  const int T = cfg.training_runs, I = cfg.inference_runs;
  const int A = static_cast<int>(cfg.algorithms.size());
  const int L = static_cast<int>(ds.train.size());

  json info{{"task", cfg.task.name},
            {"threshold", cfg.expert_threshold()},
            {"stream_length", L},
            {"holdout", ds.holdout},
            {"training_runs", T},
            {"inference_runs", I},
            {"eval_steps", cfg.eval_steps},
            {"master_seed", cfg.master_seed},
            {"dataset_seed", cfg.dataset_seed},
            {"trigger_points", trigger_points(L, cfg.scheduler)}};
  info["algorithms"] = json::array();
  for (const auto& a : cfg.algorithms) info["algorithms"].push_back({{"name", a.name}, {"mode", std::string(to_string(a.mode))}});
  std::vector<std::uint64_t> os, cs, is;
  for (int r = 0; r < T; ++r) {
    os.push_back(order_seed(cfg.master_seed, r));
    cs.push_back(campaign_seed(cfg.master_seed, r));
  }
  for (int i = 0; i < I; ++i) is.push_back(inference_seed(cfg.master_seed, i));
  info["seeds"] = {{"order", os}, {"campaign", cs}, {"inference", is}};
  write_file_atomic(cfg.output / kRunInfoJson, info.dump(1) + "\n");

  // campaigns
  std::vector<CampaignOutcome> outcomes(static_cast<std::size_t>(A * T));
  std::mutex log_mu;
  parallel_for(A * T, cfg.threads, [&](int job) {
    const auto& algo = cfg.algorithms[static_cast<std::size_t>(job / T)];
    const int r = job % T;
    CampaignConfig cc{cfg.trainer, cfg.scheduler, algo.mode, order_seed(cfg.master_seed, r),
                      campaign_seed(cfg.master_seed, r)};
    CampaignOptions co;
    co.dir = campaign_dir(cfg, algo, r);
    co.label = cfg.task.name + "/" + algo.name + "/" + run_dir_name(r);
    co.stop_after = opt.stop_after;
    co.on_episode = [&](const EpisodeRecord& e) {
      std::lock_guard lock(log_mu);
      log_line(opt, co.label + ": episode " + std::to_string(e.episode_id) + " at t=" +
                        std::to_string(e.cache_size_at_trigger) + " (train " + std::to_string(e.train_ids.size()) +
                        ", val " + std::to_string(e.val_ids.size()) + ")");
    };
    auto res = run_campaign(ds.samples, ds.train, base, cc, co);
    outcomes[static_cast<std::size_t>(job)] = {std::move(res.episodes), res.complete};
  });

  // evaluation jobs: the shared base once per inference run, then every
  // episode checkpoint of a training run under its paired inference runs
  std::vector<EvalJob> jobs;
  for (int i = 0; i < I; ++i) {
    EvalJob j;
    j.inference_run = i;
    j.store = &base;
    j.fragment = cfg.output / "eval" / "base" / ("infer_" + std::to_string(i) + ".csv");
    jobs.push_back(std::move(j));
  }
  for (int a = 0; a < A; ++a)
    for (int i = 0; i < I; ++i) {
      const int r = paired_training_run(i, T);
      const auto& eps = outcomes[static_cast<std::size_t>(a * T + r)].episodes;
      for (const auto& e : eps) {
        EvalJob j;
        j.algorithm = a;
        j.training_run = r;
        j.episode = e.episode_id;
        j.inference_run = i;
        j.store = &e.checkpoint;
        j.fragment = cfg.output / "eval" / cfg.algorithms[static_cast<std::size_t>(a)].name / run_dir_name(r) /
                     ("episode_" + std::to_string(e.episode_id) + "_infer_" + std::to_string(i) + ".csv");
        jobs.push_back(std::move(j));
      }
    }
  log_line(opt, "evaluating " + std::to_string(jobs.size()) + " checkpoint/inference-run pairs on " +
                    std::to_string(ds.holdout.size()) + " holdout samples");
  parallel_for(static_cast<int>(jobs.size()), cfg.threads, [&](int k) {
    auto& j = jobs[static_cast<std::size_t>(k)];
    const auto key = fragment_key(cfg, *j.store, j.inference_run);
    if (auto cached = read_fragment(j.fragment, key)) {
      j.result = std::move(*cached);
      return;
    }
    j.result = evaluate(cfg, ds, *j.store, j.inference_run);
    write_file_atomic(j.fragment, fragment_text(key, j.result));
  });

  // per-step metrics: base rows (episode -1) under every algorithm, then
  // the episodes of the paired training run
  std::ostringstream ps;
  ps << "algorithm,run_id,episode_id,sample_id,step,dice,nsd\n";
  auto emit = [&](const std::string& algo, int i, int e, const std::vector<MetricSeries>& series) {
    for (const auto& s : series)
      for (std::size_t k = 0; k < s.dice.size(); ++k)
        ps << algo << ',' << i << ',' << e << ',' << s.sample_id << ',' << k << ',' << format_number(s.dice[k]) << ','
           << format_number(s.nsd[k]) << '\n';
  };
  for (int a = 0; a < A; ++a) {
    const auto& name = cfg.algorithms[static_cast<std::size_t>(a)].name;
    for (int i = 0; i < I; ++i) {
      emit(name, i, -1, jobs[static_cast<std::size_t>(i)].result);
      for (const auto& j : jobs)
        if (j.algorithm == a && j.inference_run == i) emit(name, i, j.episode, j.result);
    }
  }
  write_file_atomic(cfg.output / kPerStepCsv, ps.str());

  std::ostringstream ei, el, vl;
  ei << "algorithm,training_run,episode_id,trigger,checkpoint,best_epoch,no_validation,train_count,val_count,"
        "campaign_complete\n";
  el << "algorithm,training_run,episode_id,update,total,dice,ce\n";
  vl << "algorithm,training_run,episode_id,epoch,validation_dice\n";
  for (int a = 0; a < A; ++a)
    for (int r = 0; r < T; ++r) {
      const auto& algo = cfg.algorithms[static_cast<std::size_t>(a)];
      const auto& oc = outcomes[static_cast<std::size_t>(a * T + r)];
      const auto rel = std::filesystem::path("campaigns") / algo.name / run_dir_name(r);
      if (oc.episodes.empty())
        ei << algo.name << ',' << r << ",-1,0,base,-1,0,0,0," << oc.complete << '\n';
      for (const auto& e : oc.episodes) {
        ei << algo.name << ',' << r << ',' << e.episode_id << ',' << e.cache_size_at_trigger << ','
           << (rel / e.checkpoint_file).generic_string() << ',' << e.best_epoch << ',' << e.no_validation << ','
           << e.train_ids.size() << ',' << e.val_ids.size() << ',' << oc.complete << '\n';
        for (const auto& l : e.losses)
          el << algo.name << ',' << r << ',' << e.episode_id << ',' << l.update << ',' << format_number(l.total) << ','
             << format_number(l.dice) << ',' << format_number(l.ce) << '\n';
        for (std::size_t k = 0; k < e.validation_dice.size(); ++k)
          vl << algo.name << ',' << r << ',' << e.episode_id << ',' << k << ',' << format_number(e.validation_dice[k])
             << '\n';
      }
    }
  write_file_atomic(cfg.output / kEpisodeIndexCsv, ei.str());
  write_file_atomic(cfg.output / "episode_log.csv", el.str());
  write_file_atomic(cfg.output / "validation.csv", vl.str());
}

}  // namespace clopa
