// specmorl command-line entry points.
//
// Exit codes: 0 success, 1 usage, 2 data or configuration error, 3 numeric
// failure (non-finite loss or Q-values).

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "specmorl/agent.hpp"
#include "specmorl/analysis.hpp"
#include "specmorl/checkpoint.hpp"
#include "specmorl/oracle.hpp"
#include "specmorl/trainer.hpp"

namespace fs = std::filesystem;
using namespace specmorl;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string run_root() {
  const char* env = std::getenv("SPECMORL_RUN_ROOT");
  return env && *env ? env : "runs";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string provenance(const LoadedAgent& agent) {
  return "# checkpoint_sha256\t" + agent.sha256 + "\n# config\t" + json::parse(agent.config_text).dump() + "\n";
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

void require_finite(std::span<const double> values, const std::string& what) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
}

// ---------------------------------------------------------------- specgen

struct SpecgenArgs {
  int objectives = 3;
  int count = 50000;
  double split = 0.8;
  std::uint64_t seed = 7;
  int max_atoms = 4;
  std::string out;
};

int cmd_specgen(const SpecgenArgs& a) {
  const SpecSet set = build_specset(a.objectives, a.count, a.split, a.seed, a.max_atoms);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_spec_file((dir / "train_specs.txt").string(), set.train_text);
  write_spec_file((dir / "test_specs.txt").string(), set.test_text);
  json manifest = {{"objectives", a.objectives}, {"count", a.count},       {"split", a.split},
                   {"seed", a.seed},             {"max_atoms", a.max_atoms}, {"train", set.train.size()},
                   {"test", set.test.size()}};
  open_out(dir / "manifest.json") << manifest.dump(2) << '\n';
  std::cout << "wrote " << set.train.size() << " train and " << set.test.size() << " test specs to " << dir.string()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string run_dir;
  bool no_curriculum = false;
  bool linear = false;
  bool resume = false;
  std::vector<std::string> overrides;
};

json override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

void print_result(const TrainingResult& r) {
  std::cout << "steps\t" << r.steps << '\n';
  if (!r.evals.empty())
    std::cout << "final_mean_score\t" << fmt(r.evals.back().summary.mean) << "\tvalid\t" << r.evals.back().summary.valid
              << '\n';
  if (r.reached_target_at) std::cout << "reached_target_at\t" << *r.reached_target_at << '\n';
  std::cout << "checkpoint\t" << r.final_checkpoint << '\n';
}

int cmd_train(const TrainArgs& a) {
  json j = json::object();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ConfigError("cannot open config " + a.config);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + a.config + ": " + e.what());
    }
  }
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + o);
    j[o.substr(0, eq)] = override_value(o.substr(eq + 1));
  }
  if (a.no_curriculum) j["curriculum"] = false;
  if (a.linear) {
    j["linear"] = true;
    if (!j.contains("eval_goals")) j["eval_goals"] = "subsets";
  }
  const RunConfig config = config_from_json(j);
  const std::string dir = a.run_dir.empty() ? (fs::path(run_root()) / ("seed" + std::to_string(config.seed))).string()
                                            : a.run_dir;
  if (a.resume) {
    if (fs::exists(fs::path(dir) / "final.bin")) {
      std::cout << "run in " << dir << " is already complete\n";
      return 0;
    }
    if (!fs::exists(fs::path(dir) / "resume.bin")) {
      std::cout << "no resume point in " << dir << "; starting fresh\n";
      print_result(run_training(config, dir));
      return 0;
    }
    print_result(resume_training(dir));
    return 0;
  }
  print_result(run_training(config, dir));
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string specs;
  int episodes = 10;
  std::uint64_t seed = 12345;
  std::string policy = "agent";
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const LoadedAgent agent = load_agent(a.checkpoint);
  const GridWorld world = build_world(agent.config);
  std::string spec_path = a.specs;
  if (spec_path.empty()) spec_path = (fs::path(a.checkpoint).parent_path() / "test_specs.txt").string();
  std::vector<SpecAst> specs;
  try {
    specs = read_spec_file(spec_path, world.n_objectives());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " (checkpoint world has " + std::to_string(world.n_objectives()) +
                      " objectives)");
  }
  std::vector<Goal> goals;
  std::vector<std::string> labels;
  for (const auto& s : specs) {
    goals.emplace_back(make_spec_goal(s));
    labels.push_back(render(s));
  }
  const EvalPanel panel(world, goals, labels, a.episodes, agent.config.gamma, a.seed);
  std::vector<EvalRow> rows;
  if (a.policy == "agent") {
    rows = panel.evaluate(agent.net);
  } else {
    std::vector<std::vector<Action>> tables;
    for (const auto& e : panel.entries()) tables.push_back(e.oracle_policy);
    rows = panel.evaluate_tables(tables);
  }
  std::ostringstream os;
  os << provenance(agent) << "# policy\t" << a.policy << "\n";
  os << "spec\tagent_return\tagent_stderr\toracle_return\trandom_return\tnormalized_score\n";
  for (const auto& r : rows) {
    require_finite(std::span<const double>(&r.agent, 1), "agent return");
    os << r.label << '\t' << fmt(r.agent) << '\t' << fmt(r.agent_stderr) << '\t' << fmt(r.oracle) << '\t'
       << fmt(r.random) << '\t' << (r.degenerate ? std::string("degenerate") : fmt(r.score)) << '\n';
  }
  const EvalSummary s = summarize(rows);
  os << "# mean_normalized_score\t" << fmt(s.mean) << "\tvalid\t" << s.valid << "\tdegenerate\t"
     << rows.size() - static_cast<std::size_t>(s.valid) << '\n';
  if (a.out.empty())
    std::cout << os.str();
  else
    open_out(a.out) << os.str();
  return 0;
}

// ---------------------------------------------------------------- artifacts

struct ArtifactArgs {
  std::string checkpoint;
  std::string mode;
  std::string spec = "o1";
  std::string from = "-o3";
  std::string to = "o3";
  int steps = 7;
  std::string specs;
  int buckets = 8;
  int per_bucket = 200;
  std::uint64_t seed = 11;
  std::string out;
};

std::string heatmap_block(const GridWorld& world, std::span<const double> values) {
  require_finite(values, "heatmap");
  return format_grid(values, world.width(), world.height());
}

int cmd_artifacts(const ArtifactArgs& a) {
  const LoadedAgent agent = load_agent(a.checkpoint);
  const GridWorld world = build_world(agent.config);
  const int n = world.n_objectives();
  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() / "artifacts" : fs::path(a.out);
  const std::string header = provenance(agent);

  if (a.mode == "value-heatmap") {
    const SpecAst spec = parse(a.spec, n);
    const GreedyTable table = greedy_table(agent.net, world, Goal(make_spec_goal(spec)));
    const ValueTable oracle = solve(ScalarMDP::from_spec(world, spec, agent.config.gamma));
    auto file = open_out(out / "value_heatmap.txt");
    file << header << "# spec\t" << render(spec) << "\n# predicted max_a Q\n"
         << heatmap_block(world, table.values) << "\n# agent greedy policy\n"
         << format_policy(table.actions, world.width(), world.height()) << "\n# oracle value\n"
         << heatmap_block(world, oracle.v) << "\n# oracle policy\n"
         << format_policy(oracle.policy, world.width(), world.height()) << '\n';
    std::cout << (out / "value_heatmap.txt").string() << '\n';
    return 0;
  }
  if (a.mode == "interpolate") {
    const SpecAst from = parse(a.from, n);
    const SpecAst to = parse(a.to, n);
    const auto blends = interpolate(goal_vector(agent.net, Goal(make_spec_goal(from))),
                                    goal_vector(agent.net, Goal(make_spec_goal(to))), a.steps);
    for (std::size_t i = 0; i < blends.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "interp_%02zu.txt", i);
      const auto values = value_map(agent.net, world,
                                    std::span<const double>(blends[i].data(), static_cast<std::size_t>(blends[i].size())));
      const double t = static_cast<double>(i) / static_cast<double>(blends.size() - 1);
      open_out(out / name) << header << "# from\t" << render(from) << "\n# to\t" << render(to) << "\n# t\t" << fmt(t)
                           << '\n'
                           << heatmap_block(world, values) << '\n';
      std::cout << (out / name).string() << '\n';
    }
    return 0;
  }
  if (a.mode == "encodings") {
    std::vector<SpecAst> specs;
    std::vector<int> labels;
    if (!a.specs.empty()) {
      specs = read_spec_file(a.specs, n);
      labels = fingerprint_labels(specs, n);
    } else {
      SpecBuckets b = equivalence_buckets(n, a.buckets, a.per_bucket, a.seed);
      specs = std::move(b.specs);
      labels = std::move(b.labels);
    }
    auto file = open_out(out / "encodings.tsv");
    file << header << "bucket\tspec";
    for (int k = 0; k < agent.net.shape().goal_width(); ++k) file << "\te" << k;
    file << '\n';
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const Vector e = agent.net.encode(tokenize(specs[i]));
      require_finite(std::span<const double>(e.data(), static_cast<std::size_t>(e.size())), "encoding");
      file << labels[i] << '\t' << render(specs[i]);
      for (Eigen::Index k = 0; k < e.size(); ++k) file << '\t' << fmt(e(k));
      file << '\n';
    }
    std::cout << (out / "encodings.tsv").string() << '\t' << specs.size() << " rows\n";
    return 0;
  }
  throw ConfigError("unknown artifacts mode " + a.mode);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spec-conditioned multi-objective Q-learning: spec sets, training, evaluation and artifacts"};
  app.require_subcommand(1);

  SpecgenArgs sg;
  auto* specgen = app.add_subcommand("specgen", "Generate distinct random specs and split them into train/test files");
  specgen->add_option("--objectives", sg.objectives, "Objective count")->check(CLI::Range(1, kMaxObjectives));
  specgen->add_option("--count", sg.count, "Distinct specs to generate")->check(CLI::PositiveNumber);
  specgen->add_option("--split", sg.split, "Train fraction")->check(CLI::Range(0.0, 1.0));
  specgen->add_option("--seed", sg.seed, "Generator seed");
  specgen->add_option("--max-atoms", sg.max_atoms, "Leaf budget per spec")->check(CLI::PositiveNumber);
  specgen->add_option("--out", sg.out, "Output directory")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train an agent into a run directory");
  train->add_option("--config", tr.config, "JSON run config; missing keys take defaults")->check(CLI::ExistingFile);
  train->add_option("--run-dir", tr.run_dir, "Run directory (default: $SPECMORL_RUN_ROOT/seed<seed>, root 'runs')");
  train->add_flag("--no-curriculum", tr.no_curriculum, "Sample from the full train set from step 0");
  train->add_flag("--linear", tr.linear, "Condition on Dirichlet weight vectors instead of specs");
  train->add_flag("--resume", tr.resume, "Continue an interrupted run from its last resume point");
  train->add_option("--set", tr.overrides, "Config override key=value (value parsed as JSON when possible)");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Greedy rollouts of a checkpoint on a spec list");
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--specs", ev.specs, "Spec file, one per line (default: test_specs.txt beside the checkpoint)");
  eval->add_option("--episodes", ev.episodes, "Rollouts per spec")->check(CLI::PositiveNumber);
  eval->add_option("--seed", ev.seed, "Rollout seed");
  eval->add_option("--policy", ev.policy, "Policy to score")->check(CLI::IsMember({"agent", "oracle"}));
  eval->add_option("--out", ev.out, "Output table (default: stdout)");

  ArtifactArgs ar;
  auto* artifacts = app.add_subcommand("artifacts", "Emit value heatmaps, encoding interpolations or encodings");
  artifacts->add_option("--checkpoint", ar.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  artifacts->add_option("--mode", ar.mode, "Artifact kind")
      ->required()
      ->check(CLI::IsMember({"value-heatmap", "interpolate", "encodings"}));
  artifacts->add_option("--spec", ar.spec, "Spec for value-heatmap");
  artifacts->add_option("--from", ar.from, "Start spec for interpolate");
  artifacts->add_option("--to", ar.to, "End spec for interpolate");
  artifacts->add_option("--steps", ar.steps, "Interpolation steps K")->check(CLI::Range(2, 1000));
  artifacts->add_option("--specs", ar.specs, "Spec file for encodings (default: generated equivalence buckets)");
  artifacts->add_option("--buckets", ar.buckets, "Equivalence buckets")->check(CLI::PositiveNumber);
  artifacts->add_option("--per-bucket", ar.per_bucket, "Specs per bucket")->check(CLI::PositiveNumber);
  artifacts->add_option("--seed", ar.seed, "Bucket generation seed");
  artifacts->add_option("--out", ar.out, "Output directory (default: artifacts/ beside the checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*specgen) return cmd_specgen(sg);
    if (*train) return cmd_train(tr);
    if (*eval) return cmd_eval(ev);
    if (*artifacts) return cmd_artifacts(ar);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
