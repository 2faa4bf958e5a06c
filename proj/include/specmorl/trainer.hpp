#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "specmorl/agent.hpp"
#include "specmorl/gridworld.hpp"
#include "specmorl/oracle.hpp"
#include "specmorl/speclang.hpp"

namespace specmorl {

// Every key has a default; unknown keys are a ConfigError.
struct RunConfig {
  // world
  std::string world_size = "small";
  int objectives = 2;
  std::uint64_t world_seed = 1;

  // spec set: loaded from files when paths are given, generated otherwise
  std::string train_specs;
  std::string test_specs;
  int spec_count = 12500;
  double spec_split = 0.8;
  std::uint64_t spec_seed = 7;
  int max_atoms = 4;
  // Non-empty: train and evaluate on this single spec only.
  std::string fixed_spec;

  // goal conditioning
  bool curriculum = true;
  bool linear = false;
  int curriculum_base = 25;
  std::int64_t curriculum_every = 5000;
  int curriculum_increments = 20;

  // budgets and schedule; total_steps 0 picks 200k for small worlds, 500k otherwise
  std::int64_t total_steps = 0;
  std::int64_t eval_every = 5000;
  int eval_episodes = 10;
  int eval_panel = 100;
  // "test": first eval_panel test specs; "subsets": one goal per nonempty
  // objective subset (conjunction spec, or uniform weights for linear agents)
  std::string eval_goals = "test";
  std::uint64_t eval_seed = 12345;
  // Stop at the first eval whose mean reaches this score; 0 disables.
  double target_score = 0.0;
  std::int64_t checkpoint_every = 50000;
  std::vector<std::int64_t> checkpoint_at = {100000};
  std::int64_t resume_every = 10000;

  // agent
  std::uint64_t seed = 1;
  double gamma = 0.95;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int augment_goals = 8;
  int train_every = 5;
  int target_sync_every = 500;
  std::int64_t replay_capacity = 100000;
  std::int64_t learning_starts = 1000;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_fraction = 0.3;
  // Non-empty: warm start Q and the target from this checkpoint.
  std::string init_checkpoint;
  double warm_eps_start = 0.05;

  std::int64_t resolved_total_steps() const;
  AgentConfig agent_config(const GridWorld& world) const;
};

nlohmann::json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
// Raises ConfigError on out-of-range values.
void validate(const RunConfig& config);
GridWorld build_world(const RunConfig& config);

class Curriculum {
 public:
  Curriculum(int base_length, std::int64_t increment_every, int total_increments, int max_length);

  int increment(std::int64_t step) const;
  double threshold(std::int64_t step) const;
  int base_length() const { return base_; }
  int max_length() const { return max_; }
  int total_increments() const { return increments_; }

 private:
  int base_;
  std::int64_t every_;
  int increments_;
  int max_;
};

struct SpecSet {
  std::vector<SpecAst> train;
  std::vector<SpecAst> test;
  std::vector<std::string> train_text;
  std::vector<std::string> test_text;

  int max_train_length() const;
};

// Distinct canonical strings, shuffled, split by `split` into train and test.
SpecSet build_specset(int n_objectives, int count, double split, std::uint64_t seed, int max_atoms = 4);
SpecSet make_specset(std::vector<SpecAst> train, std::vector<SpecAst> test);
std::vector<SpecAst> read_spec_file(const std::string& path, int n_objectives);
void write_spec_file(const std::string& path, const std::vector<std::string>& lines);

// Train specs eligible at a step, in train-set order of increasing length.
class ActiveSet {
 public:
  ActiveSet(const SpecSet& specs, const Curriculum& curriculum, bool enabled);
  // Train indices eligible at `step`; EmptyCurriculum when none qualify.
  std::span<const int> at(std::int64_t step) const;
  const Curriculum& curriculum() const { return curriculum_; }

 private:
  Curriculum curriculum_;
  bool enabled_;
  std::vector<int> by_length_;
  std::vector<int> lengths_;
};

std::vector<SpecAst> active_subset(const SpecSet& specs, const Curriculum& curriculum, std::int64_t step);

// Every nonempty subset of objectives, ordered by size then lexicographically.
std::vector<std::vector<int>> objective_subsets(int n_objectives);

struct EvalRow {
  std::string label;
  double agent = 0.0;
  double agent_stderr = 0.0;
  double oracle = 0.0;
  double random = 0.0;
  bool degenerate = false;
  double score = 0.0;
};

struct EvalSummary {
  double mean = 0.0;
  int valid = 0;
};
EvalSummary summarize(const std::vector<EvalRow>& rows);

// Fixed goals with cached oracle and random baselines. All three policies of
// a row replay the same environment draws.
class EvalPanel {
 public:
  struct Entry {
    Goal goal;
    std::string label;
    std::vector<double> reward;
    std::vector<Action> oracle_policy;
    ReturnStats oracle;
    ReturnStats random;
    bool degenerate = false;
    std::uint64_t seed = 0;
  };

  EvalPanel(const GridWorld& world, std::vector<Goal> goals, std::vector<std::string> labels, int episodes,
            double gamma, std::uint64_t seed);

  std::vector<EvalRow> evaluate(const QNetwork& net) const;
  // Rows for explicit per-goal policy tables.
  std::vector<EvalRow> evaluate_tables(const std::vector<std::vector<Action>>& tables) const;
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  EvalRow row_for(std::size_t i, const std::vector<Action>& table) const;

  GridWorld world_;
  int episodes_;
  double gamma_;
  std::vector<Entry> entries_;
};

struct EvalPoint {
  std::int64_t step = 0;
  EvalSummary summary;
  std::vector<EvalRow> rows;
};

struct TrainingResult {
  std::int64_t steps = 0;
  std::vector<EvalPoint> evals;
  std::optional<std::int64_t> reached_target_at;
  std::string final_checkpoint;
};

// Run directory layout: config.json, train_specs.txt, test_specs.txt,
// diagnostics.tsv, ckpt_<step>.bin, final.bin, resume.bin and a .lock file
// held for the duration of the run.
TrainingResult run_training(const RunConfig& config, const std::string& run_dir);
// Continues an interrupted run from its last resume point; the diagnostics
// stream ends up identical to that of an uninterrupted run.
TrainingResult resume_training(const std::string& run_dir);

// Reconstruct the network stored under "q." in a training checkpoint along
// with the config embedded in it.
struct LoadedAgent {
  RunConfig config;
  std::string config_text;
  std::string sha256;
  QNetwork net = QNetwork(NetworkShape{});
  std::int64_t step = 0;
};
LoadedAgent load_agent(const std::string& checkpoint_path);

}  // namespace specmorl
