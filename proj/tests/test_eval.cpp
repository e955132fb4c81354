#include <algorithm>
#include <fstream>
#include <sstream>

#include "clopa/eval.hpp"
#include "doctest.h"

using namespace clopa;

namespace {

MetricSeries series(std::uint64_t id, std::vector<double> dice) {
  MetricSeries s{id, dice, dice};
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("run averaging: three identical runs equal one run") {
  const std::vector<MetricSeries> run{series(0, {0.2, 0.6, 0.9}), series(1, {0.1, 0.1, 0.3})};
  const auto once = episodic_summary({run}, 0.8);
  const auto thrice = episodic_summary({run, run, run}, 0.8);
  CHECK(once.dice_final == doctest::Approx(thrice.dice_final).epsilon(1e-15));
  CHECK(once.dice_nauc == doctest::Approx(thrice.dice_nauc).epsilon(1e-15));
  CHECK(once.nnoi == doctest::Approx(thrice.nnoi).epsilon(1e-15));
  CHECK(once.nof == thrice.nof);
  CHECK(once.nof == 50.0);
}

TEST_CASE("run averaging: a sample fails only in a strict majority of runs") {
  const auto pass = series(0, {0.9, 0.9});
  const auto fail = series(0, {0.1, 0.1});
  CHECK_FALSE(run_averaged({{pass}, {pass}, {fail}}, 0.8)[0].failed);
  CHECK(run_averaged({{pass}, {fail}, {fail}}, 0.8)[0].failed);
  CHECK_FALSE(run_averaged({{pass}, {fail}}, 0.8)[0].failed);
}

TEST_CASE("run averaging: continuous metrics are run means") {
  const auto avg = run_averaged({{series(3, {0.0, 1.0})}, {series(3, {0.5, 0.5})}}, 0.9);
  CHECK(avg[0].sample_id == 3);
  CHECK(avg[0].dice_init == 0.25);
  CHECK(avg[0].dice_final == 0.75);
  CHECK(avg[0].dice_nauc == 0.5);
  CHECK(avg[0].nnoi == 100.0);  // one step to cross, or a failure charged the full S
  CHECK_FALSE(avg[0].failed);
}

TEST_CASE("run averaging: mismatched test sets throw") {
  CHECK_THROWS_AS(run_averaged({{series(0, {1.0})}, {series(1, {1.0})}}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(run_averaged({}, 0.5), std::invalid_argument);
}

TEST_CASE("summary: every sample failing gives NoF 100") {
  const std::vector<MetricSeries> run{series(0, {0.1, 0.2}), series(1, {0.0, 0.3})};
  CHECK(episodic_summary({run}, 0.9).nof == 100.0);
}

TEST_CASE("trajectory: zero episodes is flat at the base value") {
  const auto t = expected_trajectory(0.3, {}, 12);
  CHECK(t == std::vector<double>(12, 0.3));
  CHECK(trajectory_auc(t) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("trajectory: one episode at T over length L integrates by hand") {
  const double base = 0.2, m = 0.7;
  const int T = 5, L = 20;
  const std::vector<EpisodeValue> eps{{T, m}};
  const auto t = expected_trajectory(base, eps, L);
  for (int i = 1; i <= L; ++i) CHECK(t[i - 1] == (i <= T ? base : m));
  CHECK(trajectory_auc(t) == doctest::Approx((base * T + m * (L - T)) / L).epsilon(1e-15));
}

TEST_CASE("trajectory: later episodes replace earlier ones past their trigger") {
  const std::vector<EpisodeValue> eps{{5, 0.5}, {10, 0.6}, {15, 0.4}, {20, 0.9}};
  const auto t = expected_trajectory(0.1, eps, 20);
  CHECK(t[4] == 0.1);
  CHECK(t[5] == 0.5);
  CHECK(t[10] == 0.6);
  CHECK(t[15] == 0.4);
  CHECK(t[19] == 0.4);  // the final episode lands after the last sample
}

TEST_CASE("trajectory: AUC lies between the extremes") {
  const std::vector<EpisodeValue> eps{{3, 0.9}, {6, 0.05}};
  const auto t = expected_trajectory(0.4, eps, 9);
  const double auc = trajectory_auc(t);
  CHECK(auc >= *std::min_element(t.begin(), t.end()));
  CHECK(auc <= *std::max_element(t.begin(), t.end()));
}

TEST_CASE("trajectory: averaging identical runs is the identity") {
  const auto t = expected_trajectory(0.2, std::vector<EpisodeValue>{{4, 0.8}}, 10);
  const auto avg = average_trajectories({t, t, t});
  REQUIRE(avg.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(avg[i] == doctest::Approx(t[i]).epsilon(1e-15));
}

TEST_CASE("trajectory: malformed episodes throw") {
  CHECK_THROWS_AS(expected_trajectory(0, std::vector<EpisodeValue>{{0, 1}}, 5), std::invalid_argument);
  CHECK_THROWS_AS(expected_trajectory(0, std::vector<EpisodeValue>{{6, 1}}, 5), std::invalid_argument);
  CHECK_THROWS_AS(expected_trajectory(0, std::vector<EpisodeValue>{{4, 1}, {2, 1}}, 5), std::invalid_argument);
}

TEST_CASE("samples to threshold: first t at or above the threshold") {
  const std::vector<double> t{0.1, 0.1, 0.5, 0.79, 0.8, 0.2, 0.9};
  CHECK(samples_to_threshold(t, 0.8) == 5);
  CHECK(samples_to_threshold(t, 0.1) == 1);
  CHECK_FALSE(samples_to_threshold(t, 0.95).has_value());
}

TEST_CASE("summary CSV: column order is fixed") {
  const std::vector<SummaryRow> rows{{"t", "a", {1, 2, 3, 4, 5, 6, 7, 8}}};
  CHECK(summary_csv(rows) ==
        "task,algorithm,dice_init,dice_final,dice_nauc,nsd_init,nsd_final,nsd_nauc,nnoi,nof\nt,a,1,2,3,4,5,6,7,8\n");
}

TEST_CASE("summary CSV: numbers round-trip exactly") {
  const std::vector<SummaryRow> rows{{"t", "a", {0.1, 1.0 / 3.0, 2e-17, 0.9999999999999999, 0, 1, 12.5, 33.333333333333336}}};
  CHECK(parse_summary_csv(summary_csv(rows)) == rows);
}

TEST_CASE("summary CSV: malformed lines name the line") {
  const std::string bad = std::string(kSummaryHeader) + "\nt,a,1,2,3\n";
  try {
    parse_summary_csv(bad);
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS(parse_summary_csv("wrong header\n"));
  CHECK_THROWS(parse_summary_csv(std::string(kSummaryHeader) + "\nt,a,1,2,3,4,5,6,7,x\n"));
}

TEST_CASE("published final-episode table round-trips through the summary parser") {
  const std::string text = read_file(CLOPA_TEST_DATA_DIR "/final_episode_summary.csv");
  const auto rows = parse_summary_csv(text);
  REQUIRE(rows.size() == 24);
  CHECK(summary_csv(rows) == text);

  const auto& liver = rows[3];
  CHECK(liver.task == "Liver");
  CHECK(liver.algorithm == "nnInteractive");
  CHECK(liver.values == EpisodicSummary{0.373, 0.970, 0.963, 0.384, 0.992, 0.984, 22, 18.2});

  const auto& vessels = rows[19];
  CHECK(vessels.task == "Hepatic Vessels");
  CHECK(vessels.algorithm == "CLoPA-I.N");
  CHECK(vessels.values.dice_final == 0.698);
  CHECK(rows[18].values.dice_final == 0.165);
}

}  // TEST_SUITE
