#include "specmorl/trainer.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "specmorl/checkpoint.hpp"

namespace specmorl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

template <typename C, typename F>
void visit_fields(C& c, F&& f) {
  f("world_size", c.world_size);
  f("objectives", c.objectives);
  f("world_seed", c.world_seed);
  f("train_specs", c.train_specs);
  f("test_specs", c.test_specs);
  f("spec_count", c.spec_count);
  f("spec_split", c.spec_split);
  f("spec_seed", c.spec_seed);
  f("max_atoms", c.max_atoms);
  f("fixed_spec", c.fixed_spec);
  f("curriculum", c.curriculum);
  f("linear", c.linear);
  f("curriculum_base", c.curriculum_base);
  f("curriculum_every", c.curriculum_every);
  f("curriculum_increments", c.curriculum_increments);
  f("total_steps", c.total_steps);
  f("eval_every", c.eval_every);
  f("eval_episodes", c.eval_episodes);
  f("eval_panel", c.eval_panel);
  f("eval_goals", c.eval_goals);
  f("eval_seed", c.eval_seed);
  f("target_score", c.target_score);
  f("checkpoint_every", c.checkpoint_every);
  f("checkpoint_at", c.checkpoint_at);
  f("resume_every", c.resume_every);
  f("seed", c.seed);
  f("gamma", c.gamma);
  f("lr", c.lr);
  f("adam_beta1", c.adam_beta1);
  f("adam_beta2", c.adam_beta2);
  f("adam_eps", c.adam_eps);
  f("batch_size", c.batch_size);
  f("augment_goals", c.augment_goals);
  f("train_every", c.train_every);
  f("target_sync_every", c.target_sync_every);
  f("replay_capacity", c.replay_capacity);
  f("learning_starts", c.learning_starts);
  f("eps_start", c.eps_start);
  f("eps_end", c.eps_end);
  f("eps_fraction", c.eps_fraction);
  f("init_checkpoint", c.init_checkpoint);
  f("warm_eps_start", c.warm_eps_start);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::int64_t RunConfig::resolved_total_steps() const {
  if (total_steps > 0) return total_steps;
  return parse_world_size(world_size) == WorldSize::Small ? 200000 : 500000;
}

AgentConfig RunConfig::agent_config(const GridWorld& world) const {
  AgentConfig a;
  a.shape.state_width = world.num_cells();
  a.grid_width = world.width();
  a.gamma = gamma;
  a.replay_capacity = static_cast<std::size_t>(replay_capacity);
  a.batch_size = batch_size;
  a.augment_goals = augment_goals;
  a.target_sync_every = target_sync_every;
  a.adam = AdamConfig{lr, adam_beta1, adam_beta2, adam_eps};
  return a;
}

json config_to_json(const RunConfig& config) {
  json j = json::object();
  visit_fields(config, [&](const char* key, const auto& value) { j[key] = value; });
  return j;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  std::set<std::string> known;
  visit_fields(c, [&](const char* key, auto& value) {
    known.insert(key);
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
      it->get_to(value);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key ") + key + ": " + e.what());
    }
  });
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key " + key);
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  parse_world_size(c.world_size);
  require(c.objectives >= 2 && c.objectives <= kMaxObjectives, "objectives must be in 2..6");
  require(c.spec_count > 1, "spec_count must be at least 2");
  require(c.spec_split > 0.0 && c.spec_split < 1.0, "spec_split must be in (0,1)");
  require(c.max_atoms >= 1, "max_atoms must be positive");
  require(c.curriculum_base > 0 && c.curriculum_every > 0 && c.curriculum_increments > 0,
          "curriculum parameters must be positive");
  require(c.total_steps >= 0, "total_steps must be nonnegative");
  require(c.eval_every > 0 && c.eval_episodes > 0 && c.eval_panel > 0, "eval parameters must be positive");
  require(c.eval_goals == "test" || c.eval_goals == "subsets", "eval_goals must be test or subsets");
  require(!(c.linear && c.eval_goals == "test" && c.fixed_spec.empty()),
          "linear agents evaluate on eval_goals=subsets");
  require(!(c.linear && !c.fixed_spec.empty()), "fixed_spec conditions a logical agent, not a linear one");
  require(c.checkpoint_every >= 0 && c.resume_every > 0, "checkpoint cadences must be nonnegative");
  require(c.gamma > 0.0 && c.gamma < 1.0, "gamma must be in (0,1)");
  require(c.lr > 0.0, "lr must be positive");
  require(c.batch_size > 0 && c.augment_goals > 0 && c.train_every > 0 && c.target_sync_every > 0,
          "agent cadences must be positive");
  require(c.replay_capacity >= c.batch_size, "replay_capacity must hold one batch");
  require(c.learning_starts >= 0, "learning_starts must be nonnegative");
  for (double e : {c.eps_start, c.eps_end, c.warm_eps_start}) require(e >= 0.0 && e <= 1.0, "epsilon outside [0,1]");
  require(c.eps_fraction > 0.0 && c.eps_fraction <= 1.0, "eps_fraction must be in (0,1]");
  if (!c.fixed_spec.empty()) parse(c.fixed_spec, c.objectives);
}

GridWorld build_world(const RunConfig& config) {
  return GridWorld::build(parse_world_size(config.world_size), config.objectives, config.world_seed);
}

// ---------------------------------------------------------------- curriculum

Curriculum::Curriculum(int base_length, std::int64_t increment_every, int total_increments, int max_length)
    : base_(base_length), every_(increment_every), increments_(total_increments), max_(max_length) {
  if (base_length <= 0 || increment_every <= 0 || total_increments <= 0)
    throw ConfigError("curriculum parameters must be positive");
}

int Curriculum::increment(std::int64_t step) const {
  if (step < 0) throw ConfigError("negative step");
  return static_cast<int>(std::min<std::int64_t>(step / every_, increments_));
}

double Curriculum::threshold(std::int64_t step) const {
  const double span = std::max(0, max_ - base_);
  return base_ + increment(step) * span / increments_;
}

// ---------------------------------------------------------------- spec sets

int SpecSet::max_train_length() const {
  std::size_t longest = 0;
  for (const auto& s : train_text) longest = std::max(longest, s.size());
  return static_cast<int>(longest);
}

SpecSet make_specset(std::vector<SpecAst> train, std::vector<SpecAst> test) {
  SpecSet set;
  set.train = std::move(train);
  set.test = std::move(test);
  std::unordered_set<std::string> seen;
  for (const auto& s : set.train) {
    set.train_text.push_back(render(s));
    seen.insert(set.train_text.back());
  }
  for (const auto& s : set.test) {
    set.test_text.push_back(render(s));
    if (seen.count(set.test_text.back())) throw ConfigError("spec " + set.test_text.back() + " is in both train and test");
  }
  return set;
}

SpecSet build_specset(int n_objectives, int count, double split, std::uint64_t seed, int max_atoms) {
  if (count <= 0) throw ConfigError("count must be positive");
  if (!(split > 0.0 && split < 1.0)) throw ConfigError("split must be in (0,1)");
  Rng rng(seed);
  std::vector<SpecAst> specs;
  std::unordered_set<std::string> seen;
  const std::int64_t budget = 100LL * count;
  std::int64_t attempts = 0;
  while (static_cast<int>(specs.size()) < count) {
    if (++attempts > budget)
      throw GenerationStall("only " + std::to_string(specs.size()) + " distinct specs of " + std::to_string(count) +
                            " after " + std::to_string(budget) + " draws");
    SpecAst s = generate(rng, n_objectives, max_atoms);
    if (seen.insert(render(s)).second) specs.push_back(std::move(s));
  }
  std::shuffle(specs.begin(), specs.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(split * count));
  if (n_train == 0 || n_train >= specs.size()) throw ConfigError("split leaves an empty train or test set");
  std::vector<SpecAst> train(specs.begin(), specs.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<SpecAst> test(specs.begin() + static_cast<std::ptrdiff_t>(n_train), specs.end());
  return make_specset(std::move(train), std::move(test));
}

std::vector<SpecAst> read_spec_file(const std::string& path, int n_objectives) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file " + path);
  std::vector<SpecAst> specs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      specs.push_back(parse(line, n_objectives));
    } catch (const Error& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return specs;
}

void write_spec_file(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  for (const auto& l : lines) out << l << '\n';
}

ActiveSet::ActiveSet(const SpecSet& specs, const Curriculum& curriculum, bool enabled)
    : curriculum_(curriculum), enabled_(enabled) {
  if (specs.train.empty()) throw EmptyCurriculum("train set is empty");
  by_length_.resize(specs.train.size());
  std::iota(by_length_.begin(), by_length_.end(), 0);
  std::stable_sort(by_length_.begin(), by_length_.end(), [&](int a, int b) {
    return specs.train_text[static_cast<std::size_t>(a)].size() < specs.train_text[static_cast<std::size_t>(b)].size();
  });
  for (int i : by_length_) lengths_.push_back(static_cast<int>(specs.train_text[static_cast<std::size_t>(i)].size()));
  if (enabled_ && lengths_.front() > curriculum_.base_length())
    throw EmptyCurriculum("no train spec fits the base length " + std::to_string(curriculum_.base_length()));
}

std::span<const int> ActiveSet::at(std::int64_t step) const {
  if (!enabled_) return by_length_;
  const double limit = curriculum_.threshold(step);
  const auto end = std::upper_bound(lengths_.begin(), lengths_.end(), limit,
                                    [](double lim, int len) { return lim < static_cast<double>(len); });
  const auto count = static_cast<std::size_t>(end - lengths_.begin());
  return std::span<const int>(by_length_.data(), count);
}

std::vector<SpecAst> active_subset(const SpecSet& specs, const Curriculum& curriculum, std::int64_t step) {
  const ActiveSet active(specs, curriculum, true);
  std::vector<SpecAst> out;
  for (int i : active.at(step)) out.push_back(specs.train[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<std::vector<int>> objective_subsets(int n_objectives) {
  std::vector<std::vector<int>> out;
  for (int mask = 1; mask < (1 << n_objectives); ++mask) {
    std::vector<int> s;
    for (int k = 0; k < n_objectives; ++k)
      if (mask & (1 << k)) s.push_back(k + 1);
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  return out;
}

// ---------------------------------------------------------------- evaluation

EvalSummary summarize(const std::vector<EvalRow>& rows) {
  EvalSummary s;
  double total = 0.0;
  for (const auto& r : rows) {
    if (r.degenerate) continue;
    total += r.score;
    ++s.valid;
  }
  s.mean = s.valid ? total / s.valid : 0.0;
  return s;
}

EvalPanel::EvalPanel(const GridWorld& world, std::vector<Goal> goals, std::vector<std::string> labels, int episodes,
                     double gamma, std::uint64_t seed)
    : world_(world), episodes_(episodes), gamma_(gamma) {
  if (goals.size() != labels.size()) throw ShapeError("one label per panel goal");
  if (episodes <= 0) throw ConfigError("episodes must be positive");
  for (std::size_t i = 0; i < goals.size(); ++i) {
    Entry e;
    e.goal = std::move(goals[i]);
    e.label = std::move(labels[i]);
    e.seed = mix_seed(seed, i);
    e.reward = goal_reward_table(world, e.goal);
    const ScalarMDP mdp = ScalarMDP::from_table(world, e.reward, gamma);
    e.oracle_policy = solve(mdp).policy;
    Rng env(e.seed);
    e.oracle = policy_return(world, Policy::table(e.oracle_policy), e.reward, gamma, episodes, env);
    Rng env2(e.seed);
    e.random = policy_return(world, Policy::uniform_random(mix_seed(e.seed, 99)), e.reward, gamma, episodes, env2);
    e.degenerate = e.oracle.mean - e.random.mean < kDegenerateGap;
    entries_.push_back(std::move(e));
  }
}

EvalRow EvalPanel::row_for(std::size_t i, const std::vector<Action>& table) const {
  const Entry& e = entries_[i];
  Rng env(e.seed);
  const ReturnStats agent = policy_return(world_, Policy::table(table), e.reward, gamma_, episodes_, env);
  EvalRow row{e.label, agent.mean, agent.stderr_, e.oracle.mean, e.random.mean, e.degenerate, 0.0};
  if (!e.degenerate) row.score = normalized_score(agent.mean, e.oracle.mean, e.random.mean);
  return row;
}

std::vector<EvalRow> EvalPanel::evaluate(const QNetwork& net) const {
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < entries_.size(); ++i) rows.push_back(row_for(i, greedy_table(net, world_, entries_[i].goal).actions));
  return rows;
}

std::vector<EvalRow> EvalPanel::evaluate_tables(const std::vector<std::vector<Action>>& tables) const {
  if (tables.size() != entries_.size()) throw ShapeError("one policy table per panel goal");
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < entries_.size(); ++i) rows.push_back(row_for(i, tables[i]));
  return rows;
}

// ---------------------------------------------------------------- training loop

namespace {

constexpr int kTransitionWidth = 9 + kMaxObjectives;

void pack(const Transition& tr, double* out) {
  out[0] = tr.s.x;
  out[1] = tr.s.y;
  out[2] = tr.s.t;
  out[3] = static_cast<double>(tr.a);
  out[4] = tr.next.x;
  out[5] = tr.next.y;
  out[6] = tr.next.t;
  out[7] = tr.terminal ? 1.0 : 0.0;
  out[8] = tr.r.size;
  for (int k = 0; k < kMaxObjectives; ++k) out[9 + k] = tr.r.values[static_cast<std::size_t>(k)];
}

Transition unpack(const double* in) {
  Transition tr;
  tr.s = {static_cast<int>(in[0]), static_cast<int>(in[1]), static_cast<int>(in[2])};
  tr.a = static_cast<Action>(static_cast<int>(in[3]));
  tr.next = {static_cast<int>(in[4]), static_cast<int>(in[5]), static_cast<int>(in[6])};
  tr.terminal = in[7] != 0.0;
  tr.r.size = static_cast<int>(in[8]);
  for (int k = 0; k < kMaxObjectives; ++k) tr.r.values[static_cast<std::size_t>(k)] = in[9 + k];
  return tr;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw CheckpointError("corrupt random state");
}

class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw ConfigError("run directory " + dir.string() + " is locked by another writer (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd, pid.data(), pid.size()) < 0) {
      ::close(fd);
      throw ConfigError("cannot write lock file " + path_.string());
    }
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

class Diagnostics {
 public:
  Diagnostics(const fs::path& path, std::optional<std::int64_t> truncate_to) {
    if (truncate_to) {
      fs::resize_file(path, static_cast<std::uintmax_t>(*truncate_to));
      file_ = std::fopen(path.c_str(), "ab");
    } else {
      file_ = std::fopen(path.c_str(), "wb");
    }
    if (!file_) throw ConfigError("cannot open diagnostics " + path.string());
    if (!truncate_to) line("# specmorl diagnostics v1");
  }
  ~Diagnostics() {
    if (file_) std::fclose(file_);
  }
  Diagnostics(const Diagnostics&) = delete;
  Diagnostics& operator=(const Diagnostics&) = delete;

  void line(const std::string& text) {
    std::fputs(text.c_str(), file_);
    std::fputc('\n', file_);
  }
  std::int64_t sync() {
    std::fflush(file_);
    return static_cast<std::int64_t>(std::ftell(file_));
  }

 private:
  std::FILE* file_ = nullptr;
};

struct Run {
  RunConfig config;
  std::string config_text;
  fs::path dir;
  GridWorld world;
  SpecSet specs;
  std::optional<ActiveSet> active;
  std::optional<EvalPanel> panel;
  AgentState agent;
  Rng rng;
  std::int64_t step = 0;
  std::int64_t episode = 0;
  std::int64_t next_resume = 0;
  bool stopped = false;
  int last_increment = -1;
  TrainingResult result;
};

SpecSet resolve_specs(const RunConfig& c) {
  if (!c.fixed_spec.empty()) {
    std::vector<SpecAst> one = {parse(c.fixed_spec, c.objectives)};
    return make_specset(one, {});
  }
  if (!c.train_specs.empty() || !c.test_specs.empty()) {
    if (c.train_specs.empty() || c.test_specs.empty()) throw ConfigError("train_specs and test_specs go together");
    return make_specset(read_spec_file(c.train_specs, c.objectives), read_spec_file(c.test_specs, c.objectives));
  }
  return build_specset(c.objectives, c.spec_count, c.spec_split, c.spec_seed, c.max_atoms);
}

EvalPanel make_panel(const RunConfig& c, const GridWorld& world, const SpecSet& specs) {
  std::vector<Goal> goals;
  std::vector<std::string> labels;
  if (!c.fixed_spec.empty()) {
    goals.emplace_back(make_spec_goal(specs.train.front(), 0));
    labels.push_back("train:0");
  } else if (c.eval_goals == "subsets") {
    for (const auto& subset : objective_subsets(c.objectives)) {
      std::string label;
      if (c.linear) {
        LinearGoal g;
        g.weights.assign(static_cast<std::size_t>(c.objectives), 0.0);
        for (int k : subset) g.weights[static_cast<std::size_t>(k - 1)] = 1.0 / static_cast<double>(subset.size());
        goals.emplace_back(std::move(g));
      } else {
        SpecAst spec = SpecAst::atom(subset.front());
        for (std::size_t i = 1; i < subset.size(); ++i) spec = SpecAst::conj(spec, SpecAst::atom(subset[i]));
        goals.emplace_back(make_spec_goal(spec));
      }
      for (std::size_t i = 0; i < subset.size(); ++i) label += (i ? "+o" : "o") + std::to_string(subset[i]);
      labels.push_back("subset:" + label);
    }
  } else {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(c.eval_panel), specs.test.size());
    if (n == 0) throw ConfigError("test set is empty");
    for (std::size_t i = 0; i < n; ++i) {
      goals.emplace_back(make_spec_goal(specs.test[i], static_cast<int>(i)));
      labels.push_back("test:" + std::to_string(i));
    }
  }
  return EvalPanel(world, std::move(goals), std::move(labels), c.eval_episodes, c.gamma, c.eval_seed);
}

std::string label_of(const Goal& goal, bool train_set) {
  if (std::holds_alternative<LinearGoal>(goal)) return goal_label(goal);
  return (train_set ? "train:" : "") + goal_label(goal);
}

Goal sample_goal(Run& run, Rng& rng) {
  if (run.config.linear) return sample_dirichlet(rng, run.config.objectives);
  const auto ids = run.active->at(run.step);
  const int id = ids[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ids.size()) - 1))];
  return make_spec_goal(run.specs.train[static_cast<std::size_t>(id)], id);
}

double current_threshold(const Run& run) {
  if (!run.config.curriculum || run.config.linear || !run.config.fixed_spec.empty())
    return static_cast<double>(run.specs.max_train_length());
  return run.active->curriculum().threshold(run.step);
}

void log_curriculum(Run& run, Diagnostics& diag) {
  if (run.config.linear) return;
  const int inc = run.active->curriculum().increment(run.step);
  if (inc == run.last_increment) return;
  run.last_increment = inc;
  diag.line("curriculum\t" + std::to_string(run.step) + "\t" + std::to_string(inc) + "\t" + fmt(current_threshold(run)) +
            "\t" + std::to_string(run.active->at(run.step).size()));
}

void run_eval(Run& run, Diagnostics& diag) {
  EvalPoint point;
  point.step = run.step;
  point.rows = run.panel->evaluate(run.agent.q);
  point.summary = summarize(point.rows);
  std::string line = "eval\t" + std::to_string(run.step) + "\t" + fmt(point.summary.mean) + "\t" +
                     std::to_string(point.summary.valid);
  for (const auto& r : point.rows) line += "\t" + (r.degenerate ? std::string("degenerate") : fmt(r.score));
  diag.line(line);
  if (run.config.target_score > 0.0 && point.summary.valid > 0 && point.summary.mean >= run.config.target_score &&
      !run.result.reached_target_at) {
    run.result.reached_target_at = run.step;
    run.stopped = true;
    diag.line("stop\t" + std::to_string(run.step) + "\ttarget_score");
  }
  run.result.evals.push_back(std::move(point));
}

Checkpoint agent_checkpoint(const Run& run) {
  Checkpoint ck;
  ck.text["format"] = "specmorl-agent";
  ck.text["config"] = run.config_text;
  ck.counters["step"] = run.step;
  ck.counters["episode"] = run.episode;
  ck.counters["train_steps"] = run.agent.train_steps;
  put_network(ck, "q.", run.agent.q);
  put_network(ck, "target.", run.agent.target);
  put_adam(ck, "adam.", run.agent.adam);
  return ck;
}

void save_agent(Run& run, Diagnostics& diag, const std::string& name) {
  save_checkpoint(agent_checkpoint(run), (run.dir / name).string());
  diag.line("checkpoint\t" + std::to_string(run.step) + "\t" + name);
  run.result.final_checkpoint = (run.dir / name).string();
}

void save_resume(Run& run, Diagnostics& diag) {
  Checkpoint ck = agent_checkpoint(run);
  ck.text["format"] = "specmorl-resume";
  ck.text["rng"] = rng_state(run.rng);
  ck.counters["diagnostics_bytes"] = diag.sync();
  ck.counters["last_increment"] = run.last_increment;
  ck.counters["stopped"] = run.stopped ? 1 : 0;
  NamedTensor buf;
  buf.name = "replay";
  const auto n = run.agent.buffer.size();
  buf.shape = {static_cast<std::int64_t>(n), kTransitionWidth};
  buf.data.resize(n * kTransitionWidth);
  for (std::size_t i = 0; i < n; ++i) pack(run.agent.buffer.at(i), buf.data.data() + i * kTransitionWidth);
  ck.tensors.push_back(std::move(buf));
  std::vector<double> evals;
  for (const auto& e : run.result.evals) {
    evals.push_back(static_cast<double>(e.step));
    evals.push_back(e.summary.mean);
    evals.push_back(e.summary.valid);
  }
  ck.tensors.push_back({"eval_history", {static_cast<std::int64_t>(run.result.evals.size()), 3}, evals});
  save_checkpoint(ck, (run.dir / "resume.bin").string());
}

bool on_schedule(const RunConfig& c, std::int64_t step) {
  if (c.checkpoint_every > 0 && step % c.checkpoint_every == 0) return true;
  return std::find(c.checkpoint_at.begin(), c.checkpoint_at.end(), step) != c.checkpoint_at.end();
}

void loop(Run& run, Diagnostics& diag) {
  const RunConfig& c = run.config;
  const std::int64_t total = c.resolved_total_steps();
  const bool warm = !c.init_checkpoint.empty();
  const double eps0 = warm ? c.warm_eps_start : c.eps_start;
  const auto ready = static_cast<std::size_t>(std::max<std::int64_t>(c.batch_size, c.learning_starts));
  GoalSampler sampler = [&run](Rng& rng) { return sample_goal(run, rng); };

  while (run.step < total && !run.stopped) {
    const Goal goal = sample_goal(run, run.rng);
    diag.line("episode\t" + std::to_string(run.step) + "\t" + std::to_string(run.episode) + "\t" + label_of(goal, true));
    Vector goal_vec;
    std::int64_t encoded_at = -1;
    MOState s = run.world.reset(run.rng);
    while (true) {
      if (encoded_at != run.agent.train_steps) {
        goal_vec = goal_vector(run.agent.q, goal);
        encoded_at = run.agent.train_steps;
      }
      const double eps = epsilon_at(run.step, total, eps0, c.eps_end, c.eps_fraction);
      const auto features = run.world.state_features(s.cell());
      const Action a = act_with_goal(run.agent.q, features,
                                     std::span<const double>(goal_vec.data(), static_cast<std::size_t>(goal_vec.size())),
                                     eps, run.rng);
      const Transition tr = run.world.step(s, a, run.rng);
      run.agent.buffer.push(tr);
      ++run.step;
      log_curriculum(run, diag);

      if (run.step % c.train_every == 0 && run.agent.buffer.size() >= ready) {
        const TrainDiagnostics td = train_step(run.agent, sampler, run.rng);
        std::string line = "train\t" + std::to_string(run.step) + "\t" + std::to_string(run.agent.train_steps) + "\t" +
                           fmt(td.loss) + "\t" + fmt(eps) + "\t" + fmt(current_threshold(run)) + "\t";
        for (std::size_t g = 0; g < td.goals.size(); ++g) line += (g ? ";" : "") + label_of(td.goals[g], true);
        diag.line(line);
      }
      if (run.step % c.eval_every == 0) run_eval(run, diag);
      if (on_schedule(c, run.step)) save_agent(run, diag, "ckpt_" + std::to_string(run.step) + ".bin");
      if (tr.terminal || run.step >= total || run.stopped) break;
      s = tr.next;
    }
    ++run.episode;
    if (run.step >= run.next_resume && run.step < total && !run.stopped) {
      save_resume(run, diag);
      run.next_resume = (run.step / c.resume_every + 1) * c.resume_every;
    }
  }
  if (run.result.evals.empty() || run.result.evals.back().step != run.step) run_eval(run, diag);
  save_agent(run, diag, "final.bin");
  diag.sync();
  run.result.steps = run.step;
}

AgentState initial_agent(const RunConfig& c, const GridWorld& world) {
  const AgentConfig ac = c.agent_config(world);
  if (c.init_checkpoint.empty()) return AgentState::create(ac, mix_seed(c.seed, 1));
  return warm_start(load_checkpoint(c.init_checkpoint), ac);
}

Run make_run(const RunConfig& config, std::string config_text, const fs::path& dir, SpecSet specs) {
  GridWorld world = build_world(config);
  AgentState agent = initial_agent(config, world);
  Run run{config, std::move(config_text), dir, std::move(world), std::move(specs), std::nullopt, std::nullopt,
          std::move(agent), Rng(mix_seed(config.seed, 2)), 0, 0, 0, false, -1, TrainingResult{}};
  if (!config.linear) {
    const Curriculum cur(config.curriculum_base, config.curriculum_every, config.curriculum_increments,
                         run.specs.max_train_length());
    run.active.emplace(run.specs, cur, config.curriculum && config.fixed_spec.empty());
  }
  run.panel.emplace(make_panel(config, run.world, run.specs));
  run.next_resume = config.resume_every;
  return run;
}

}  // namespace

TrainingResult run_training(const RunConfig& config, const std::string& run_dir) {
  validate(config);
  const fs::path dir(run_dir);
  fs::create_directories(dir);
  RunLock lock(dir);
  if (fs::exists(dir / "diagnostics.tsv") || fs::exists(dir / "final.bin"))
    throw ConfigError("run directory " + run_dir + " already holds a run; resume it or choose another directory");
  const std::string config_text = config_to_json(config).dump(2);
  {
    std::ofstream out(dir / "config.json", std::ios::trunc);
    out << config_text << '\n';
  }
  SpecSet specs = resolve_specs(config);
  write_spec_file((dir / "train_specs.txt").string(), specs.train_text);
  write_spec_file((dir / "test_specs.txt").string(), specs.test_text);
  Run run = make_run(config, config_text, dir, std::move(specs));
  Diagnostics diag(dir / "diagnostics.tsv", std::nullopt);
  log_curriculum(run, diag);
  run_eval(run, diag);
  loop(run, diag);
  return std::move(run.result);
}

TrainingResult resume_training(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "resume.bin")) throw CheckpointError("run directory " + run_dir + " has no resume point");
  RunLock lock(dir);
  if (fs::exists(dir / "final.bin")) throw ConfigError("run in " + run_dir + " already finished");
  const Checkpoint ck = load_checkpoint((dir / "resume.bin").string());
  if (ck.text_entry("format") != "specmorl-resume") throw CheckpointError("resume.bin is not a resume point");
  const std::string& config_text = ck.text_entry("config");
  RunConfig config = config_from_json(json::parse(config_text));
  SpecSet specs = make_specset(read_spec_file((dir / "train_specs.txt").string(), config.objectives),
                               read_spec_file((dir / "test_specs.txt").string(), config.objectives));
  Run run = make_run(config, config_text, dir, std::move(specs));
  get_network(ck, "q.", run.agent.q);
  get_network(ck, "target.", run.agent.target);
  get_adam(ck, "adam.", run.agent.adam);
  run.agent.train_steps = ck.counter("train_steps");
  const NamedTensor& replay = ck.tensor("replay");
  for (std::int64_t i = 0; i < (replay.shape.empty() ? 0 : replay.shape[0]); ++i)
    run.agent.buffer.push(unpack(replay.data.data() + static_cast<std::size_t>(i) * kTransitionWidth));
  restore_rng(run.rng, ck.text_entry("rng"));
  run.step = ck.counter("step");
  run.episode = ck.counter("episode");
  run.last_increment = static_cast<int>(ck.counter("last_increment"));
  run.stopped = ck.counter("stopped") != 0;
  run.next_resume = (run.step / config.resume_every + 1) * config.resume_every;
  const NamedTensor& evals = ck.tensor("eval_history");
  for (std::size_t i = 0; i + 2 < evals.data.size(); i += 3) {
    EvalPoint p;
    p.step = static_cast<std::int64_t>(evals.data[i]);
    p.summary = {evals.data[i + 1], static_cast<int>(evals.data[i + 2])};
    if (config.target_score > 0.0 && p.summary.valid > 0 && p.summary.mean >= config.target_score &&
        !run.result.reached_target_at)
      run.result.reached_target_at = p.step;
    run.result.evals.push_back(std::move(p));
  }
  Diagnostics diag(dir / "diagnostics.tsv", ck.counter("diagnostics_bytes"));
  loop(run, diag);
  return std::move(run.result);
}

LoadedAgent load_agent(const std::string& checkpoint_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  LoadedAgent out;
  out.config_text = ck.text_entry("config");
  out.config = config_from_json(json::parse(out.config_text));
  out.sha256 = file_sha256(checkpoint_path);
  const GridWorld world = build_world(out.config);
  out.net = QNetwork(out.config.agent_config(world).shape);
  get_network(ck, "q.", out.net);
  out.step = ck.counter("step");
  return out;
}

}  // namespace specmorl
