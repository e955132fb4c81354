#include "clopa/eval.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>

#include "clopa/metrics.hpp"

namespace clopa {

MetricSeries series_from_trace(std::uint64_t sample_id, const RolloutTrace& trace) {
  MetricSeries s;
  s.sample_id = sample_id;
  for (const auto& st : trace.steps) {
    s.dice.push_back(st.dice);
    s.nsd.push_back(st.nsd);
  }
  return s;
}

SampleScalars sample_scalars(const MetricSeries& s, double threshold) {
  if (s.dice.empty() || s.dice.size() != s.nsd.size()) throw std::invalid_argument("sample_scalars: malformed series");
  SampleScalars r;
  r.sample_id = s.sample_id;
  r.dice_init = s.dice.front();
  r.dice_final = s.dice.back();
  r.dice_nauc = nauc(s.dice);
  r.nsd_init = s.nsd.front();
  r.nsd_final = s.nsd.back();
  r.nsd_nauc = nauc(s.nsd);
  const auto n = noi(s.dice, threshold);
  r.nnoi = normalised_noi(n, s.max_steps());
  r.failed = n.failed;
  return r;
}

std::vector<SampleScalars> run_averaged(const std::vector<std::vector<MetricSeries>>& runs, double threshold) {
  if (runs.empty()) throw std::invalid_argument("run_averaged: no runs");
  const std::size_t n = runs.front().size();
  for (const auto& run : runs) {
    if (run.size() != n) throw std::invalid_argument("run_averaged: runs cover different test sets");
    for (std::size_t i = 0; i < n; ++i)
      if (run[i].sample_id != runs.front()[i].sample_id)
        throw std::invalid_argument("run_averaged: runs cover different test sets");
  }
  const double k = static_cast<double>(runs.size());
  std::vector<SampleScalars> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    SampleScalars acc;
    acc.sample_id = runs.front()[i].sample_id;
    int failures = 0;
    for (const auto& run : runs) {
      const auto s = sample_scalars(run[i], threshold);
      acc.dice_init += s.dice_init;
      acc.dice_final += s.dice_final;
      acc.dice_nauc += s.dice_nauc;
      acc.nsd_init += s.nsd_init;
      acc.nsd_final += s.nsd_final;
      acc.nsd_nauc += s.nsd_nauc;
      acc.nnoi += s.nnoi;
      failures += s.failed;
    }
    acc.dice_init /= k;
    acc.dice_final /= k;
    acc.dice_nauc /= k;
    acc.nsd_init /= k;
    acc.nsd_final /= k;
    acc.nsd_nauc /= k;
    acc.nnoi /= k;
    acc.failed = 2 * failures > static_cast<int>(runs.size());
    out[i] = acc;
  }
  return out;
}

EpisodicSummary summarise(std::span<const SampleScalars> samples) {
  if (samples.empty()) throw std::invalid_argument("summarise: no samples");
  EpisodicSummary s;
  for (const auto& x : samples) {
    s.dice_init += x.dice_init;
    s.dice_final += x.dice_final;
    s.dice_nauc += x.dice_nauc;
    s.nsd_init += x.nsd_init;
    s.nsd_final += x.nsd_final;
    s.nsd_nauc += x.nsd_nauc;
    s.nnoi += x.nnoi;
    s.nof += x.failed;
  }
  const double n = static_cast<double>(samples.size());
  s.dice_init /= n;
  s.dice_final /= n;
  s.dice_nauc /= n;
  s.nsd_init /= n;
  s.nsd_final /= n;
  s.nsd_nauc /= n;
  s.nnoi /= n;
  s.nof = 100.0 * s.nof / n;
  return s;
}

EpisodicSummary episodic_summary(const std::vector<std::vector<MetricSeries>>& runs, double threshold) {
  const auto avg = run_averaged(runs, threshold);
  return summarise(avg);
}

std::vector<double> expected_trajectory(double base, std::span<const EpisodeValue> episodes, int length) {
  if (length < 1) throw std::invalid_argument("expected_trajectory: empty stream");
  for (std::size_t i = 1; i < episodes.size(); ++i)
    if (episodes[i].trigger < episodes[i - 1].trigger)
      throw std::invalid_argument("expected_trajectory: episodes out of order");
  std::vector<double> out(static_cast<std::size_t>(length), base);
  for (const auto& e : episodes) {
    if (e.trigger < 1 || e.trigger > length) throw std::invalid_argument("expected_trajectory: trigger outside stream");
    std::fill(out.begin() + e.trigger, out.end(), e.value);
  }
  return out;
}

std::vector<double> average_trajectories(const std::vector<std::vector<double>>& runs) {
  if (runs.empty()) throw std::invalid_argument("average_trajectories: no runs");
  std::vector<double> out(runs.front().size(), 0.0);
  for (const auto& r : runs) {
    if (r.size() != out.size()) throw std::invalid_argument("average_trajectories: length mismatch");
    for (std::size_t t = 0; t < r.size(); ++t) out[t] += r[t];
  }
  for (auto& v : out) v /= static_cast<double>(runs.size());
  return out;
}

double trajectory_auc(std::span<const double> trajectory) {
  if (trajectory.empty()) throw std::invalid_argument("trajectory_auc: empty trajectory");
  double s = 0.0;
  for (double v : trajectory) s += v;
  return s / static_cast<double>(trajectory.size());
}

std::optional<int> samples_to_threshold(std::span<const double> trajectory, double threshold) {
  for (std::size_t t = 0; t < trajectory.size(); ++t)
    if (trajectory[t] >= threshold) return static_cast<int>(t) + 1;
  return std::nullopt;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc{}) throw std::runtime_error("format_number failed");
  return std::string(buf, res.ptr);
}

std::string summary_csv(std::span<const SummaryRow> rows) {
  std::ostringstream os;
  os << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    if (r.task.find_first_of(",\n") != std::string::npos || r.algorithm.find_first_of(",\n") != std::string::npos)
      throw std::invalid_argument("summary_csv: names may not contain commas or newlines");
    const auto& v = r.values;
    os << r.task << ',' << r.algorithm;
    for (double x : {v.dice_init, v.dice_final, v.dice_nauc, v.nsd_init, v.nsd_final, v.nsd_nauc, v.nnoi, v.nof})
      os << ',' << format_number(x);
    os << '\n';
  }
  return os.str();
}

std::vector<SummaryRow> parse_summary_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kSummaryHeader)
    throw std::runtime_error("summary CSV line 1: expected header '" + std::string(kSummaryHeader) + "'");
  std::vector<SummaryRow> rows;
  for (int lineno = 2; std::getline(is, line); ++lineno) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    const std::string where = "summary CSV line " + std::to_string(lineno);
    if (cells.size() != 10) throw std::runtime_error(where + ": expected 10 fields, got " + std::to_string(cells.size()));
    double vals[8];
    for (int k = 0; k < 8; ++k) {
      const auto& c = cells[static_cast<std::size_t>(k + 2)];
      const auto res = std::from_chars(c.data(), c.data() + c.size(), vals[k]);
      if (res.ec != std::errc{} || res.ptr != c.data() + c.size())
        throw std::runtime_error(where + ": field " + std::to_string(k + 3) + " is not a number: '" + c + "'");
    }
    rows.push_back({cells[0], cells[1], {vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7]}});
  }
  return rows;
}

}  // namespace clopa
