#include <cstdlib>
#include <map>
#include <sstream>

#include "clopa/errors.hpp"
#include "clopa/eval.hpp"
#include "clopa/experiment.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support/fixtures.hpp"

using namespace clopa;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_config(const fs::path& out) {
  return json{{"task", json::parse(task_spec_to_json(fixture::tiny_spec(20)))},
              {"dataset", {{"seed", 3}}},
              {"model", {{"num_stages", 2}, {"base_channels", 2}}},
              {"algorithms", {{{"name", "Frozen"}, {"mode", "frozen"}}, {{"name", "IN"}, {"mode", "instance_norm"}}}},
              {"trainer", {{"epochs", 2}, {"updates_per_epoch", 2}, {"interaction_steps", 2}, {"patch_extent", 8}}},
              {"evaluation", {{"steps", 3}, {"threshold", 0.3}}},
              {"master_seed", 9},
              {"output", out.string()}};
}

ExperimentConfig parse(const json& j) { return parse_experiment_config(j.dump(), {}); }

// Every regular file under dir, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = fixture::slurp(e.path());
  return out;
}

void full_pipeline(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  cmd_generate(cfg);
  cmd_run(cfg, opt);
  cmd_report(cfg);
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CLOPA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config: defaults, unknown keys and duplicate algorithm names") {
  const auto cfg = parse(tiny_config("out"));
  CHECK(cfg.training_runs == 3);
  CHECK(cfg.inference_runs == 3);
  CHECK(cfg.expert_threshold() == 0.3);
  CHECK(cfg.algorithms.size() == 2);
  CHECK(cfg.algorithms[0].mode == ParamGroupMode::Frozen);

  auto j = tiny_config("out");
  j["trainer"]["learning_rate"] = 0.1;
  try {
    parse(j);
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
  j = tiny_config("out");
  j["algorithms"][1]["name"] = "Frozen";
  CHECK_THROWS_AS(parse(j), ConfigError);
  j = tiny_config("out");
  j["algorithms"][0]["mode"] = "some";
  CHECK_THROWS_AS(parse(j), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[1, 2", {}), ConfigError);
}

TEST_CASE("run before generate is a missing artifact") {
  const auto dir = fixture::scratch_dir("exp_missing");
  CHECK_THROWS_AS(cmd_run(parse(tiny_config(dir))), MissingArtifact);
}

TEST_CASE("end to end: manifests, Frozen, pairing and byte-identical reruns") {
  const auto a = fixture::scratch_dir("exp_a"), b = fixture::scratch_dir("exp_b");
  const auto cfg_a = parse(tiny_config(a)), cfg_b = parse(tiny_config(b));
  full_pipeline(cfg_a);
  full_pipeline(cfg_b);

  int manifests = 0;
  for (const auto& e : fs::recursive_directory_iterator(a / "campaigns")) manifests += e.path().filename() == "manifest.json";
  CHECK(manifests == 6);

  const auto ta = tree(a), tb = tree(b);
  REQUIRE(ta.size() == tb.size());
  for (const auto& [name, bytes] : ta) {
    INFO(name);
    REQUIRE(tb.count(name) == 1);
    CHECK(tb.at(name) == bytes);
  }
  CHECK(ta.count("plots/tiny_dice_final.svg") == 1);

  // Frozen trains nothing; the learner triggers at 5 and 10 of 10
  const auto idx = csv_rows(ta.at(kEpisodeIndexCsv));
  int frozen = 0, learner = 0;
  for (std::size_t i = 1; i < idx.size(); ++i) {
    if (idx[i][0] == "Frozen") {
      CHECK(idx[i][2] == "-1");
      ++frozen;
    } else {
      CHECK((idx[i][3] == "5" || idx[i][3] == "10"));
      ++learner;
    }
  }
  CHECK(frozen == 3);
  CHECK(learner == 6);

  // Frozen is rolled out under all three inference runs, on the base only
  std::map<std::string, int> frozen_runs;
  for (const auto& row : csv_rows(ta.at(kPerStepCsv)))
    if (row[0] == "Frozen") {
      CHECK(row[2] == "-1");
      frozen_runs[row[1]]++;
    }
  CHECK(frozen_runs.size() == 3);

  const auto info = json::parse(ta.at(kRunInfoJson));
  CHECK(info["master_seed"] == 9);
  CHECK(info["seeds"]["inference"][1] == inference_seed(9, 1));
  CHECK(info["trigger_points"] == json::array({5, 10}));
  CHECK(paired_training_run(4, 3) == 1);

  CHECK(ta.at("summary.csv").substr(0, ta.at("summary.csv").find('\n')) == kSummaryHeader);
}

TEST_CASE("NoS markers are the first crossing of the written trajectory") {
  const auto dir = fixture::scratch_dir("exp_nos");
  auto cfg = parse(tiny_config(dir));
  full_pipeline(cfg);
  std::map<std::string, std::vector<double>> traj;
  for (const auto& row : csv_rows(fixture::slurp(dir / "trajectories.csv")))
    if (row[1] == "dice_final") traj[row[0]].push_back(std::stod(row[3]));
  REQUIRE(traj.size() == 2);
  for (const auto& row : csv_rows(fixture::slurp(dir / "nos.csv"))) {
    if (row[0] == "task" || row[2] != "dice_final") continue;
    const auto& t = traj.at(row[1]);
    std::string expected;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t[i] >= 0.3) {
        expected = std::to_string(i + 1);
        break;
      }
    CHECK(row[4] == expected);
  }
}

TEST_CASE("an interrupted run resumes to the uninterrupted outputs") {
  const auto whole = fixture::scratch_dir("exp_whole"), cut = fixture::scratch_dir("exp_cut");
  full_pipeline(parse(tiny_config(whole)));

  const auto cfg = parse(tiny_config(cut));
  cmd_generate(cfg);
  cmd_run(cfg, {1, {}});
  const auto partial = cmd_report(cfg);
  CHECK_FALSE(partial.warnings.empty());
  cmd_run(cfg);
  cmd_report(cfg);

  const auto tw = tree(whole), tc = tree(cut);
  for (const auto& [name, bytes] : tw) {
    INFO(name);
    REQUIRE(tc.count(name) == 1);
    CHECK(tc.at(name) == bytes);
  }
}

TEST_CASE("single algorithm: every rank is 1") {
  const auto dir = fixture::scratch_dir("exp_single");
  auto j = tiny_config(dir);
  j["algorithms"] = json::array({{{"name", "IN"}, {"mode", "instance_norm"}}});
  j["training_runs"] = 1;
  j["inference_runs"] = 1;
  const auto cfg = parse(j);
  cmd_generate(cfg);
  cmd_run(cfg);
  cmd_rank(cfg);
  const auto rows = csv_rows(fixture::slurp(dir / "ranks.csv"));
  REQUIRE(rows.size() > 1);
  const auto& header = rows[0];
  std::size_t rank_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == "rank") rank_col = c;
  REQUIRE(rank_col < header.size());
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][rank_col] == "1");
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("exit codes: ok, config error, missing artifact") {
  const auto dir = fixture::scratch_dir("cli");
  const auto cfg = dir / "config.json";
  fixture::spit(cfg, tiny_config(dir / "out").dump());
  CHECK(run_cli("generate --config " + cfg.string()) == 0);
  CHECK(fs::exists(dir / "out" / "dataset" / "task.json"));

  CHECK(run_cli("generate --config " + (dir / "absent.json").string()) == 3);
  CHECK(run_cli("report --config " + cfg.string() + " --out " + (dir / "empty").string()) == 3);

  auto bad = tiny_config(dir / "out");
  bad["colour"] = "blue";
  fixture::spit(dir / "bad.json", bad.dump());
  CHECK(run_cli("run --config " + (dir / "bad.json").string()) == 2);
  fixture::spit(dir / "broken.json", "{\"task\": ");
  CHECK(run_cli("run --config " + (dir / "broken.json").string()) == 2);
}

TEST_CASE("--out overrides the config") {
  const auto dir = fixture::scratch_dir("cli_override");
  const auto cfg = dir / "config.json";
  fixture::spit(cfg, tiny_config(dir / "ignored").dump());
  CHECK(run_cli("generate --config " + cfg.string() + " --out " + (dir / "chosen").string()) == 0);
  CHECK(fs::exists(dir / "chosen" / "dataset" / "task.json"));
  CHECK_FALSE(fs::exists(dir / "ignored"));
}

}  // TEST_SUITE
