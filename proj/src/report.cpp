// Report stage: everything here is recomputed from per_step.csv,
// episode_index.csv and run_info.json.

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "clopa/errors.hpp"
#include "clopa/eval.hpp"
#include "clopa/experiment.hpp"
#include "clopa/fs.hpp"
#include "clopa/stats.hpp"
#include "experiment_io.hpp"
#include "json_fields.hpp"

namespace clopa {
namespace {

using detail::json;
using stats::Direction;

struct MetricDef {
  const char* name;
  Direction direction;
  double EpisodicSummary::*summary;
  double SampleScalars::*scalar;  // null for nof, which is binary per sample
};

const std::array<MetricDef, 8> kMetrics{{
    {"dice_init", Direction::HigherIsBetter, &EpisodicSummary::dice_init, &SampleScalars::dice_init},
    {"dice_final", Direction::HigherIsBetter, &EpisodicSummary::dice_final, &SampleScalars::dice_final},
    {"dice_nauc", Direction::HigherIsBetter, &EpisodicSummary::dice_nauc, &SampleScalars::dice_nauc},
    {"nsd_init", Direction::HigherIsBetter, &EpisodicSummary::nsd_init, &SampleScalars::nsd_init},
    {"nsd_final", Direction::HigherIsBetter, &EpisodicSummary::nsd_final, &SampleScalars::nsd_final},
    {"nsd_nauc", Direction::HigherIsBetter, &EpisodicSummary::nsd_nauc, &SampleScalars::nsd_nauc},
    {"nnoi", Direction::LowerIsBetter, &EpisodicSummary::nnoi, &SampleScalars::nnoi},
    {"nof", Direction::LowerIsBetter, &EpisodicSummary::nof, nullptr},
}};

bool is_dice_metric(const MetricDef& m) { return std::string_view(m.name).starts_with("dice"); }

struct RunInfo {
  std::string task;
  double threshold = 0.0;
  int stream_length = 0;
  int training_runs = 0;
  int inference_runs = 0;
  std::vector<std::string> algorithms;
  std::vector<int> trigger_points;
  std::vector<std::uint64_t> holdout;
};

struct EpisodeEntry {
  int episode_id = -1;
  int trigger = 0;
};

// (algorithm, inference run, episode) -> series in holdout order
using SeriesKey = std::tuple<std::string, int, int>;

struct Inputs {
  RunInfo info;
  std::map<SeriesKey, std::vector<MetricSeries>> series;
  std::map<std::pair<std::string, int>, std::vector<EpisodeEntry>> episodes;  // (algorithm, training run)
  std::map<std::pair<std::string, int>, bool> complete;
};

std::vector<std::string> csv_lines(const std::filesystem::path& path, const std::string& header) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("report input not found: " + path.string());
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line) || line != header)
    throw ConfigError(path.string() + " line 1: expected header '" + header + "'");
  std::vector<std::string> out;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

Inputs load_inputs(const std::filesystem::path& out) {
  Inputs in;
  const auto info_path = out / kRunInfoJson;
  if (!std::filesystem::exists(info_path)) throw MissingArtifact("report input not found: " + info_path.string());
  const std::string ictx = info_path.string();
  const json j = detail::parse_json(read_file(info_path), ictx);
  in.info.task = detail::field<std::string>(j, "task", ictx);
  in.info.threshold = detail::field<double>(j, "threshold", ictx);
  in.info.stream_length = detail::field<int>(j, "stream_length", ictx);
  in.info.training_runs = detail::field<int>(j, "training_runs", ictx);
  in.info.inference_runs = detail::field<int>(j, "inference_runs", ictx);
  in.info.trigger_points = detail::field<std::vector<int>>(j, "trigger_points", ictx);
  in.info.holdout = detail::field<std::vector<std::uint64_t>>(j, "holdout", ictx);
  for (const auto& a : j.at("algorithms")) in.info.algorithms.push_back(detail::field<std::string>(a, "name", ictx));

  const auto ps = out / kPerStepCsv;
  const auto lines = csv_lines(ps, "algorithm,run_id,episode_id,sample_id,step,dice,nsd");
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string ctx = ps.string() + " line " + std::to_string(n + 2);
    const auto c = detail::split_csv(lines[n]);
    if (c.size() != 7) throw ConfigError(ctx + ": expected 7 fields");
    auto& v = in.series[{c[0], detail::parse_int(c[1], ctx), detail::parse_int(c[2], ctx)}];
    const auto id = detail::parse_u64(c[3], ctx);
    if (v.empty() || v.back().sample_id != id) v.push_back({id, {}, {}});
    if (detail::parse_int(c[4], ctx) != static_cast<int>(v.back().dice.size()))
      throw ConfigError(ctx + ": steps out of order");
    v.back().dice.push_back(detail::parse_double(c[5], ctx));
    v.back().nsd.push_back(detail::parse_double(c[6], ctx));
  }

  const auto ei = out / kEpisodeIndexCsv;
  const auto elines = csv_lines(ei, "algorithm,training_run,episode_id,trigger,checkpoint,best_epoch,no_validation,"
                                    "train_count,val_count,campaign_complete");
  for (std::size_t n = 0; n < elines.size(); ++n) {
    const std::string ctx = ei.string() + " line " + std::to_string(n + 2);
    const auto c = detail::split_csv(elines[n]);
    if (c.size() != 10) throw ConfigError(ctx + ": expected 10 fields");
    const std::pair key{c[0], detail::parse_int(c[1], ctx)};
    auto& eps = in.episodes[key];
    const int e = detail::parse_int(c[2], ctx);
    if (e >= 0) eps.push_back({e, detail::parse_int(c[3], ctx)});
    in.complete[key] = c[9] == "1";
  }
  return in;
}

// Holdout series of one checkpoint, or nothing when any sample is missing.
const std::vector<MetricSeries>* find_series(const Inputs& in, const std::string& algo, int infer, int episode) {
  const auto it = in.series.find({algo, infer, episode});
  if (it == in.series.end() || it->second.size() != in.info.holdout.size()) return nullptr;
  return &it->second;
}

struct AlgorithmReport {
  std::string name;
  bool has_summary = false;
  EpisodicSummary summary;
  std::vector<SampleScalars> per_sample;  // run-averaged, holdout order
  bool has_trajectory = false;
  std::array<std::vector<double>, kMetrics.size()> trajectory;
  EpisodicSummary trajectory_auc;
};

AlgorithmReport analyse(const Inputs& in, const std::string& algo, std::vector<std::string>& warnings) {
  const auto& info = in.info;
  AlgorithmReport rep;
  rep.name = algo;
  const int T = info.training_runs, I = info.inference_runs;

  auto episodes_of = [&](int r) {
    const auto it = in.episodes.find({algo, r});
    return it == in.episodes.end() ? std::vector<EpisodeEntry>{} : it->second;
  };
  for (int r = 0; r < T; ++r) {
    const auto it = in.complete.find({algo, r});
    if (it == in.complete.end()) {
      warnings.push_back(algo + ": training run " + std::to_string(r) + " has no campaign record");
    } else if (!it->second) {
      warnings.push_back(algo + ": training run " + std::to_string(r) + " is incomplete; using its available episodes");
    }
  }

  // episodic summary of the final checkpoints under every inference run
  std::vector<std::vector<MetricSeries>> finals;
  for (int i = 0; i < I; ++i) {
    const auto eps = episodes_of(paired_training_run(i, T));
    const int last = eps.empty() ? -1 : eps.back().episode_id;
    if (const auto* s = find_series(in, algo, i, last)) {
      finals.push_back(*s);
    } else {
      warnings.push_back(algo + ": inference run " + std::to_string(i) + " has no metrics for episode " +
                         std::to_string(last) + "; left out of the summary");
    }
  }
  if (!finals.empty()) {
    rep.per_sample = run_averaged(finals, info.threshold);
    rep.summary = summarise(rep.per_sample);
    rep.has_summary = true;
  }

  // expected-performance trajectories, averaged over training runs
  std::array<std::vector<std::vector<double>>, kMetrics.size()> per_run;
  for (int r = 0; r < T; ++r) {
    auto checkpoint_summary = [&](int episode) -> std::optional<EpisodicSummary> {
      std::vector<std::vector<MetricSeries>> runs;
      for (int i = r; i < I; i += T)
        if (const auto* s = find_series(in, algo, i, episode)) runs.push_back(*s);
      if (runs.empty()) return std::nullopt;
      return episodic_summary(runs, info.threshold);
    };
    const auto base = checkpoint_summary(-1);
    if (!base) {
      warnings.push_back(algo + ": training run " + std::to_string(r) + " has no evaluated inference run; left out of the trajectories");
      continue;
    }
    std::vector<std::pair<int, EpisodicSummary>> points;
    for (const auto& e : episodes_of(r)) {
      if (auto s = checkpoint_summary(e.episode_id)) {
        points.emplace_back(e.trigger, *s);
      } else {
        warnings.push_back(algo + ": training run " + std::to_string(r) + " episode " + std::to_string(e.episode_id) +
                           " has no metrics; its trajectory keeps the previous value");
      }
    }
    for (std::size_t m = 0; m < kMetrics.size(); ++m) {
      std::vector<EpisodeValue> ev;
      for (const auto& [t, s] : points) ev.push_back({t, s.*kMetrics[m].summary});
      per_run[m].push_back(expected_trajectory((*base).*kMetrics[m].summary, ev, info.stream_length));
    }
  }
  if (!per_run[0].empty()) {
    rep.has_trajectory = true;
    for (std::size_t m = 0; m < kMetrics.size(); ++m) {
      rep.trajectory[m] = average_trajectories(per_run[m]);
      rep.trajectory_auc.*kMetrics[m].summary = trajectory_auc(rep.trajectory[m]);
    }
  }
  return rep;
}

std::vector<AlgorithmReport> analyse_all(const Inputs& in, std::vector<std::string>& warnings) {
  std::vector<AlgorithmReport> out;
  for (const auto& a : in.info.algorithms) out.push_back(analyse(in, a, warnings));
  return out;
}

std::string winner_name(const stats::RankTable& t, const stats::PairwiseResult& p) {
  return p.winner < 0 ? "none" : t.algorithms[static_cast<std::size_t>(p.winner)];
}

struct RankingOutput {
  std::string summary_pairs;
  std::string trajectory_pairs;
  std::string ranks;
};

// Summary tables compare run-averaged per-sample values (Wilcoxon) and
// failure indicators (McNemar); trajectory tables compare the averaged
// trajectories pointwise along t.
RankingOutput rankings(const Inputs& in, const std::vector<AlgorithmReport>& reps, std::vector<std::string>& warnings) {
  std::ostringstream pairs_sum, pairs_traj, ranks;
  const std::string header = "task,metric,algo_a,algo_b,p_value,winner\n";
  pairs_sum << header;
  pairs_traj << header;
  ranks << "task,table,metric,algorithm,rank,first_ranked\n";
  const auto& task = in.info.task;

  auto emit = [&](std::ostringstream& pairs, const char* table, const char* metric, const stats::RankTable& t) {
    for (const auto& p : t.pairs)
      pairs << task << ',' << metric << ',' << t.algorithms[static_cast<std::size_t>(p.a)] << ','
            << t.algorithms[static_cast<std::size_t>(p.b)] << ',' << format_number(p.p) << ',' << winner_name(t, p)
            << '\n';
    for (std::size_t i = 0; i < t.algorithms.size(); ++i)
      ranks << task << ',' << table << ',' << metric << ',' << t.algorithms[i] << ',' << t.rank[i] << ','
            << (t.first_ranked(i) ? 1 : 0) << '\n';
  };

  std::vector<const AlgorithmReport*> with_summary, with_traj;
  for (const auto& r : reps) {
    if (r.has_summary) with_summary.push_back(&r);
    if (r.has_trajectory) with_traj.push_back(&r);
  }
  if (with_summary.size() < reps.size()) warnings.push_back("summary ranking covers only algorithms with final metrics");

  for (const auto& m : kMetrics) {
    std::vector<std::string> names;
    for (const auto* r : with_summary) names.push_back(r->name);
    if (!names.empty()) {
      if (m.scalar) {
        std::vector<std::vector<double>> vals;
        for (const auto* r : with_summary) {
          vals.emplace_back();
          for (const auto& s : r->per_sample) vals.back().push_back(s.*m.scalar);
        }
        emit(pairs_sum, "summary", m.name, stats::rank_continuous(names, vals, m.direction));
      } else {
        std::vector<std::vector<bool>> failed;
        for (const auto* r : with_summary) {
          failed.emplace_back();
          for (const auto& s : r->per_sample) failed.back().push_back(s.failed);
        }
        emit(pairs_sum, "summary", m.name, stats::rank_binary(names, failed));
      }
    }
    names.clear();
    std::vector<std::vector<double>> traj;
    const auto k = static_cast<std::size_t>(&m - kMetrics.data());
    for (const auto* r : with_traj) {
      names.push_back(r->name);
      traj.push_back(r->trajectory[k]);
    }
    if (!names.empty()) emit(pairs_traj, "trajectory", m.name, stats::rank_continuous(names, traj, m.direction));
  }
  return {pairs_sum.str(), pairs_traj.str(), ranks.str()};
}

// Fixed-precision coordinates keep the SVG text stable across platforms.
std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

const std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                          "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string trajectory_svg(const Inputs& in, const std::vector<AlgorithmReport>& reps, std::size_t m) {
  const auto& def = kMetrics[m];
  const int L = in.info.stream_length;
  constexpr double W = 640, H = 400, left = 60, right = 170, top = 30, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  double ymax = 1.0;
  if (m == kMetrics.size() - 1) ymax = 100.0;  // nof is a percentage
  auto x_of = [&](double t) { return left + (L > 1 ? (t - 1.0) / (L - 1.0) : 0.5) * pw; };
  auto y_of = [&](double v) { return top + (1.0 - std::clamp(v / ymax, 0.0, 1.0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << coord(W) << "\" height=\"" << coord(H)
     << "\" viewBox=\"0 0 " << coord(W) << ' ' << coord(H) << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << coord(W) << "\" height=\"" << coord(H) << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << coord(left) << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << in.info.task << ": "
     << def.name << " vs. received samples</text>\n";
  os << "<rect x=\"" << coord(left) << "\" y=\"" << coord(top) << "\" width=\"" << coord(pw) << "\" height=\"" << coord(ph)
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    os << "<text x=\"" << coord(left - 6) << "\" y=\"" << coord(y_of(v) + 4)
       << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << coord(v) << "</text>\n";
  }
  os << "<text x=\"" << coord(left) << "\" y=\"" << coord(top + ph + 16)
     << "\" font-family=\"sans-serif\" font-size=\"10\">1</text>\n";
  os << "<text x=\"" << coord(left + pw) << "\" y=\"" << coord(top + ph + 16)
     << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << L << "</text>\n";
  os << "<text x=\"" << coord(left + pw / 2) << "\" y=\"" << coord(H - 12)
     << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">samples received (t)</text>\n";

  for (int t : in.info.trigger_points)
    os << "<line class=\"episode\" x1=\"" << coord(x_of(t)) << "\" y1=\"" << coord(top) << "\" x2=\"" << coord(x_of(t))
       << "\" y2=\"" << coord(top + ph) << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"2,3\"/>\n";
  const bool dice = is_dice_metric(def);
  if (dice)
    os << "<line class=\"threshold\" x1=\"" << coord(left) << "\" y1=\"" << coord(y_of(in.info.threshold)) << "\" x2=\""
       << coord(left + pw) << "\" y2=\"" << coord(y_of(in.info.threshold)) << "\" stroke=\"black\" stroke-dasharray=\"6,3\"/>\n";

  for (std::size_t a = 0; a < reps.size(); ++a) {
    const auto& r = reps[a];
    const char* colour = kPalette[a % kPalette.size()];
    const double ly = top + 14.0 * static_cast<double>(a) + 6;
    os << "<line x1=\"" << coord(W - right + 12) << "\" y1=\"" << coord(ly) << "\" x2=\"" << coord(W - right + 32)
       << "\" y2=\"" << coord(ly) << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << coord(W - right + 36) << "\" y=\"" << coord(ly + 4) << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << r.name << "</text>\n";
    if (!r.has_trajectory) continue;
    const auto& tr = r.trajectory[m];
    os << "<polyline class=\"trajectory\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (int t = 1; t <= L; ++t) {
      const double v = tr[static_cast<std::size_t>(t - 1)];
      if (t > 1) os << ' ' << coord(x_of(t)) << ',' << coord(y_of(tr[static_cast<std::size_t>(t - 2)]));
      os << (t > 1 ? " " : "") << coord(x_of(t)) << ',' << coord(y_of(v));
    }
    os << "\"/>\n";
    if (dice)
      if (const auto nos = samples_to_threshold(tr, in.info.threshold))
        os << "<line class=\"nos\" x1=\"" << coord(x_of(*nos)) << "\" y1=\"" << coord(top) << "\" x2=\"" << coord(x_of(*nos))
           << "\" y2=\"" << coord(top + ph) << "\" stroke=\"" << colour << "\" stroke-width=\"1.5\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write(ReportResult& res, const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, text);
  res.files.push_back(path);
}

void write_rankings(ReportResult& res, const ExperimentConfig& cfg, const Inputs& in,
                    const std::vector<AlgorithmReport>& reps) {
  const auto rk = rankings(in, reps, res.warnings);
  write(res, cfg.output / "ranking.csv", rk.summary_pairs);
  write(res, cfg.output / "trajectory_ranking.csv", rk.trajectory_pairs);
  write(res, cfg.output / "ranks.csv", rk.ranks);
}

}  // namespace

ReportResult cmd_report(const ExperimentConfig& cfg) {
  ReportResult res;
  const Inputs in = load_inputs(cfg.output);
  const auto reps = analyse_all(in, res.warnings);

  std::vector<SummaryRow> summary, traj_summary;
  for (const auto& r : reps) {
    if (r.has_summary) summary.push_back({in.info.task, r.name, r.summary});
    if (r.has_trajectory) traj_summary.push_back({in.info.task, r.name, r.trajectory_auc});
  }
  write(res, cfg.output / "summary.csv", summary_csv(summary));
  write(res, cfg.output / "trajectory_summary.csv", summary_csv(traj_summary));

  std::ostringstream tr, nos;
  tr << "algorithm,metric,t,value\n";
  nos << "task,algorithm,metric,threshold,nos\n";
  for (const auto& r : reps) {
    if (!r.has_trajectory) continue;
    for (std::size_t m = 0; m < kMetrics.size(); ++m) {
      for (std::size_t t = 0; t < r.trajectory[m].size(); ++t)
        tr << r.name << ',' << kMetrics[m].name << ',' << t + 1 << ',' << format_number(r.trajectory[m][t]) << '\n';
      if (is_dice_metric(kMetrics[m])) {
        const auto n = samples_to_threshold(r.trajectory[m], in.info.threshold);
        nos << in.info.task << ',' << r.name << ',' << kMetrics[m].name << ',' << format_number(in.info.threshold) << ','
            << (n ? std::to_string(*n) : "") << '\n';
      }
    }
  }
  write(res, cfg.output / "trajectories.csv", tr.str());
  write(res, cfg.output / "nos.csv", nos.str());

  write_rankings(res, cfg, in, reps);

  for (std::size_t m = 0; m < kMetrics.size(); ++m)
    write(res, cfg.output / "plots" / (in.info.task + "_" + kMetrics[m].name + ".svg"), trajectory_svg(in, reps, m));
  return res;
}

ReportResult cmd_rank(const ExperimentConfig& cfg) {
  ReportResult res;
  const Inputs in = load_inputs(cfg.output);
  const auto reps = analyse_all(in, res.warnings);
  write_rankings(res, cfg, in, reps);
  return res;
}

}  // namespace clopa
