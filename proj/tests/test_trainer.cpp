#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "specmorl/trainer.hpp"

using namespace specmorl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::vector<std::string>> rows_of(const std::string& text, const std::string& kind) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, '\t')) cols.push_back(c);
    if (!cols.empty() && cols[0] == kind) out.push_back(cols);
  }
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("specmorl_test_trainer_" + name);
  fs::remove_all(dir);
  return dir;
}

// Small enough to finish in seconds, long enough to train, evaluate,
// checkpoint and cross several resume points.
RunConfig short_run() {
  RunConfig c;
  c.spec_count = 400;
  c.total_steps = 3000;
  c.eval_every = 1000;
  c.eval_episodes = 2;
  c.eval_panel = 10;
  c.learning_starts = 200;
  c.curriculum_every = 100;
  c.checkpoint_every = 1000;
  c.checkpoint_at = {1500};
  c.resume_every = 700;
  c.batch_size = 8;
  c.augment_goals = 2;
  c.target_sync_every = 20;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("curriculum threshold interpolates from base to max in equal increments") {
  const Curriculum c(25, 5000, 20, 65);
  CHECK(c.threshold(0) == 25.0);
  CHECK(c.threshold(4999) == 25.0);
  CHECK(c.threshold(5000) == 27.0);
  CHECK(c.threshold(50000) == 45.0);
  CHECK(c.threshold(100000) == 65.0);
  CHECK(c.threshold(10000000) == 65.0);
  std::set<double> distinct;
  double prev = 0.0;
  for (std::int64_t s = 0; s <= 200000; s += 250) {
    const double t = c.threshold(s);
    CHECK(t >= prev);
    prev = t;
    distinct.insert(t);
  }
  CHECK(distinct.size() == 21u);
  CHECK_THROWS_AS(Curriculum(0, 5000, 20, 65), ConfigError);
  // Max below base: threshold stays at base.
  CHECK(Curriculum(25, 10, 20, 9).threshold(1000) == 25.0);
}

TEST_CASE("active subsets start at short specs, nest, and end at the full train set") {
  const SpecSet set = build_specset(3, 2000, 0.8, 4);
  const Curriculum c(25, 5000, 20, set.max_train_length());
  const auto first = active_subset(set, c, 0);
  REQUIRE_FALSE(first.empty());
  for (const auto& s : first) CHECK(render(s).size() <= 25u);
  std::set<std::string> prev;
  for (std::int64_t step = 0; step <= 110000; step += 5000) {
    std::set<std::string> now;
    for (const auto& s : active_subset(set, c, step)) now.insert(render(s));
    for (const auto& s : prev) CHECK(now.count(s) == 1u);
    prev = now;
  }
  CHECK(prev.size() == set.train.size());

  const SpecSet long_only = make_specset({parse("o1 & ( o2 | o3 ) & o1 >= 0.5 | o2 <= 0.3 & -o3")}, {parse("o1")});
  CHECK_THROWS_AS(ActiveSet(long_only, Curriculum(25, 10, 20, 60), true), EmptyCurriculum);
  CHECK(ActiveSet(long_only, Curriculum(25, 10, 20, 60), false).at(0).size() == 1u);
}

TEST_CASE("spec sets are distinct, split 80:20 and disjoint") {
  const SpecSet set = build_specset(3, 5000, 0.8, 11);
  CHECK(set.train.size() == 4000u);
  CHECK(set.test.size() == 1000u);
  std::set<std::string> all(set.train_text.begin(), set.train_text.end());
  CHECK(all.size() == 4000u);
  for (const auto& t : set.test_text) CHECK(all.count(t) == 0u);
  all.insert(set.test_text.begin(), set.test_text.end());
  CHECK(all.size() == 5000u);
  const SpecSet again = build_specset(3, 5000, 0.8, 11);
  CHECK(again.train_text == set.train_text);
  CHECK(again.test_text == set.test_text);
  CHECK_THROWS_AS(make_specset({parse("o1")}, {parse("o1")}), ConfigError);
  // Only 2 * (1 + 1 + 11 + 11) = 48 single-leaf specs exist for n = 2.
  CHECK_THROWS_AS(build_specset(2, 60, 0.8, 1, 1), GenerationStall);
  CHECK_THROWS_AS(build_specset(2, 10, 1.0, 1), ConfigError);
}

TEST_CASE("spec files round trip one canonical string per line") {
  const fs::path dir = fresh_dir("specfile");
  fs::create_directories(dir);
  const SpecSet set = build_specset(4, 50, 0.8, 2);
  write_spec_file((dir / "s.txt").string(), set.train_text);
  const auto back = read_spec_file((dir / "s.txt").string(), 4);
  REQUIRE(back.size() == set.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == set.train[i]);
  {
    std::ofstream out(dir / "bad.txt");
    out << "o1\no9 &\n";
  }
  CHECK_THROWS_AS(read_spec_file((dir / "bad.txt").string(), 4), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("objective subsets are ordered by size then lexicographically") {
  const auto s = objective_subsets(3);
  const std::vector<std::vector<int>> expected = {{1}, {2}, {3}, {1, 2}, {1, 3}, {2, 3}, {1, 2, 3}};
  CHECK(s == expected);
  CHECK(objective_subsets(6).size() == 63u);
}

TEST_CASE("config round trips and rejects unknown keys and bad values") {
  RunConfig c = short_run();
  c.fixed_spec = "o1 & o2";
  const RunConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"lerning_rate", 0.1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"objectives", "two"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"objectives", 7}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"world_size", "tiny"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"linear", true}}), ConfigError);
  CHECK_NOTHROW(config_from_json(nlohmann::json{{"linear", true}, {"eval_goals", "subsets"}}));
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"fixed_spec", "o3"}, {"objectives", 2}}), IndexError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ConfigError);
  CHECK(RunConfig{}.resolved_total_steps() == 200000);
  RunConfig m;
  m.world_size = "medium";
  CHECK(m.resolved_total_steps() == 500000);
}

TEST_CASE("eval panel baselines are fixed and oracle tables score one") {
  const GridWorld w = GridWorld::build(WorldSize::Small, 2, 1);
  std::vector<Goal> goals = {make_spec_goal(parse("o1")), make_spec_goal(parse("o1 >= 0.0")),
                             make_spec_goal(parse("-o2 | o1"))};
  const EvalPanel panel(w, goals, {"a", "b", "c"}, 5, 0.95, 3);
  CHECK_FALSE(panel.entries()[0].degenerate);
  CHECK(panel.entries()[1].degenerate);
  std::vector<std::vector<Action>> tables;
  for (const auto& e : panel.entries()) tables.push_back(e.oracle_policy);
  const auto rows = panel.evaluate_tables(tables);
  CHECK(rows[0].score == 1.0);
  CHECK(rows[2].score == 1.0);
  CHECK(rows[1].degenerate);
  const EvalSummary s = summarize(rows);
  CHECK(s.valid == 2);
  CHECK(s.mean == 1.0);
  const auto again = panel.evaluate_tables(tables);
  CHECK(again[0].agent == rows[0].agent);
}

TEST_CASE("training runs are deterministic, logged, and checkpointed on schedule") {
  const fs::path a = fresh_dir("det_a");
  const fs::path b = fresh_dir("det_b");
  const RunConfig cfg = short_run();
  const TrainingResult ra = run_training(cfg, a.string());
  run_training(cfg, b.string());
  const std::string diag = slurp(a / "diagnostics.tsv");
  CHECK(diag == slurp(b / "diagnostics.tsv"));
  CHECK(diag.rfind("# specmorl diagnostics v1\n", 0) == 0);
  CHECK(ra.steps == 3000);

  for (const char* f : {"config.json", "train_specs.txt", "test_specs.txt", "ckpt_1000.bin", "ckpt_1500.bin",
                        "ckpt_2000.bin", "ckpt_3000.bin", "final.bin", "resume.bin"})
    CHECK_MESSAGE(fs::exists(a / f), f);
  CHECK_FALSE(fs::exists(a / ".lock"));

  const auto evals = rows_of(diag, "eval");
  REQUIRE(evals.size() == 4u);
  for (const auto& e : evals) CHECK(e.size() == 4u + 10u);
  CHECK(evals.back()[1] == "3000");

  // Episodes and augmentation rows only ever name train-set specs.
  std::set<std::string> test_set;
  {
    std::istringstream in(slurp(a / "test_specs.txt"));
    std::string l;
    while (std::getline(in, l)) test_set.insert(l);
  }
  std::vector<std::string> train_lines;
  {
    std::istringstream in(slurp(a / "train_specs.txt"));
    std::string l;
    while (std::getline(in, l)) train_lines.push_back(l);
  }
  auto check_label = [&](const std::string& label) {
    REQUIRE(label.rfind("train:", 0) == 0);
    const auto id = static_cast<std::size_t>(std::stoul(label.substr(6)));
    REQUIRE(id < train_lines.size());
    CHECK(test_set.count(train_lines[id]) == 0u);
  };
  const auto episodes = rows_of(diag, "episode");
  CHECK(episodes.size() == 60u);
  for (const auto& e : episodes) check_label(e[3]);
  const auto trains = rows_of(diag, "train");
  CHECK_FALSE(trains.empty());
  for (const auto& t : trains) {
    std::istringstream in(t[6]);
    std::string label;
    int n = 0;
    while (std::getline(in, label, ';')) {
      check_label(label);
      ++n;
    }
    CHECK(n == 2);
  }
  // Curriculum increments every 100 steps up to 20: 21 thresholds.
  const auto curriculum = rows_of(diag, "curriculum");
  CHECK(curriculum.size() == 21u);

  const LoadedAgent agent = load_agent((a / "final.bin").string());
  CHECK(agent.step == 3000);
  CHECK(agent.config_text == slurp(a / "config.json").substr(0, agent.config_text.size()));
  CHECK(agent.sha256.size() == 64u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("a resumed run reproduces the uninterrupted diagnostics") {
  const fs::path dir = fresh_dir("resume");
  const RunConfig cfg = short_run();
  run_training(cfg, dir.string());
  const std::string full = slurp(dir / "diagnostics.tsv");
  const std::string final_bytes = slurp(dir / "final.bin");
  CHECK_THROWS_AS(resume_training(dir.string()), ConfigError);
  fs::remove(dir / "final.bin");
  const TrainingResult r = resume_training(dir.string());
  CHECK(r.steps == 3000);
  CHECK(slurp(dir / "diagnostics.tsv") == full);
  CHECK(slurp(dir / "final.bin") == final_bytes);
  fs::remove_all(dir);
}

TEST_CASE("run directories refuse reuse and concurrent writers") {
  const fs::path dir = fresh_dir("refuse");
  RunConfig cfg = short_run();
  cfg.total_steps = 300;
  run_training(cfg, dir.string());
  CHECK_THROWS_AS(run_training(cfg, dir.string()), ConfigError);

  const fs::path locked = fresh_dir("locked");
  fs::create_directories(locked);
  { std::ofstream(locked / ".lock") << "1\n"; }
  CHECK_THROWS_AS(run_training(cfg, locked.string()), ConfigError);
  CHECK_FALSE(fs::exists(locked / "diagnostics.tsv"));
  CHECK_THROWS_AS(resume_training(fresh_dir("nothing").string()), CheckpointError);
  fs::remove_all(dir);
  fs::remove_all(locked);
}

TEST_CASE("target score stops the run early") {
  const fs::path dir = fresh_dir("target");
  RunConfig cfg = short_run();
  cfg.objectives = 4;
  cfg.fixed_spec = "o3";
  cfg.target_score = 0.0;
  cfg.eval_every = 500;
  cfg.total_steps = 2000;
  const TrainingResult full = run_training(cfg, dir.string());
  CHECK_FALSE(full.reached_target_at.has_value());
  double best = -1e9;
  for (const auto& e : full.evals) best = std::max(best, e.summary.mean);
  fs::remove_all(dir);

  cfg.target_score = std::max(best, 1e-9) - 1e-12;
  const TrainingResult stopped = run_training(cfg, dir.string());
  if (best > 0.0) {
    REQUIRE(stopped.reached_target_at.has_value());
    CHECK(stopped.steps == *stopped.reached_target_at);
    CHECK(rows_of(slurp(dir / "diagnostics.tsv"), "stop").size() == 1u);
  }
  fs::remove_all(dir);
}

TEST_CASE("linear runs condition on weights and evaluate on objective subsets") {
  const fs::path dir = fresh_dir("linear");
  RunConfig cfg = short_run();
  cfg.linear = true;
  cfg.eval_goals = "subsets";
  cfg.objectives = 3;
  cfg.total_steps = 1000;
  run_training(cfg, dir.string());
  const std::string diag = slurp(dir / "diagnostics.tsv");
  const auto evals = rows_of(diag, "eval");
  REQUIRE_FALSE(evals.empty());
  CHECK(evals.front().size() == 4u + 7u);
  for (const auto& e : rows_of(diag, "episode")) CHECK(e[3].rfind("w:", 0) == 0);
  CHECK(rows_of(diag, "curriculum").empty());
  fs::remove_all(dir);
}
