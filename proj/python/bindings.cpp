#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "specmorl/agent.hpp"
#include "specmorl/oracle.hpp"
#include "specmorl/speclang.hpp"
#include "specmorl/trainer.hpp"

namespace py = pybind11;
using namespace specmorl;

namespace {

SpecAst as_spec(const py::object& obj, int n_objectives) {
  if (py::isinstance<SpecAst>(obj)) return obj.cast<SpecAst>();
  return parse(obj.cast<std::string>(), n_objectives);
}

py::tuple state_tuple(const MOState& s) { return py::make_tuple(s.x, s.y, s.t); }

MOState state_from(const py::tuple& t) {
  if (t.size() != 3) throw ShapeError("state must be an (x, y, t) tuple");
  return {t[0].cast<int>(), t[1].cast<int>(), t[2].cast<int>()};
}

Action action_from(int a) {
  if (a < 0 || a >= kNumActions) throw IndexError("action must be 0..3 (up, down, left, right)");
  return static_cast<Action>(a);
}

std::vector<int> action_ints(const std::vector<Action>& actions) {
  std::vector<int> out(actions.size());
  for (std::size_t i = 0; i < actions.size(); ++i) out[i] = static_cast<int>(actions[i]);
  return out;
}

py::dict value_table_dict(const ValueTable& vt) {
  py::dict d;
  d["values"] = vt.v;
  d["policy"] = action_ints(vt.policy);
  d["iterations"] = vt.iterations;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Logic-specified multi-objective Q-learning: spec language, gridworlds, oracle and agents.";

  auto base = py::register_exception<Error>(m, "SpecmorlError", PyExc_ValueError);
#define SPECMORL_PY_ERROR(Name) py::register_exception<Name>(m, #Name, base.ptr())
  SPECMORL_PY_ERROR(LexError);
  SPECMORL_PY_ERROR(ParseError);
  SPECMORL_PY_ERROR(IndexError);
  SPECMORL_PY_ERROR(ConfigError);
  SPECMORL_PY_ERROR(EpisodeOver);
  SPECMORL_PY_ERROR(DegenerateSpec);
  SPECMORL_PY_ERROR(EmptySequence);
  SPECMORL_PY_ERROR(ShapeError);
  SPECMORL_PY_ERROR(NoTape);
  SPECMORL_PY_ERROR(BufferTooSmall);
  SPECMORL_PY_ERROR(CheckpointError);
  SPECMORL_PY_ERROR(EmptyCurriculum);
  SPECMORL_PY_ERROR(GenerationStall);
  SPECMORL_PY_ERROR(NumericError);
#undef SPECMORL_PY_ERROR

  // spec language
  py::class_<SpecAst>(m, "Spec")
      .def("__str__", [](const SpecAst& s) { return render(s); })
      .def("__repr__", [](const SpecAst& s) { return "Spec('" + render(s) + "')"; })
      .def("__eq__", [](const SpecAst& a, const SpecAst& b) { return a == b; })
      .def("__hash__", [](const SpecAst& s) { return py::hash(py::str(render(s))); })
      .def_property_readonly("leaf_count", &SpecAst::leaf_count)
      .def_property_readonly("max_objective", &SpecAst::max_objective);

  m.def("parse", [](const std::string& text, int n) { return parse(text, n); }, py::arg("text"),
        py::arg("n_objectives") = kMaxObjectives);
  m.def("render", &render, py::arg("spec"));
  m.def("tokenize", [](const py::object& s) { return tokenize(as_spec(s, kMaxObjectives)); }, py::arg("spec"));
  m.def("token_text", [](int id) { return std::string(token_text(static_cast<std::uint8_t>(id))); }, py::arg("id"));
  m.def("evaluate",
        [](const py::object& s, const std::vector<double>& r) {
          return evaluate(std::span<const double>(r), as_spec(s, static_cast<int>(r.size())));
        },
        py::arg("spec"), py::arg("rewards"));
  m.def("generate",
        [](int n, int max_atoms, std::uint64_t seed) {
          Rng rng(seed);
          return generate(rng, n, max_atoms);
        },
        py::arg("n_objectives"), py::arg("max_atoms") = 4, py::arg("seed") = 0);
  m.def("fingerprint",
        [](const py::object& s, int n) { return fingerprint(as_spec(s, n), canonical_probes(n)); }, py::arg("spec"),
        py::arg("n_objectives"));

  // environment
  py::class_<Rng>(m, "Rng").def(py::init<std::uint64_t>(), py::arg("seed"));

  py::class_<GridWorld>(m, "GridWorld")
      .def_static(
          "build",
          [](const std::string& size, int n, std::uint64_t seed) { return GridWorld::build(parse_world_size(size), n, seed); },
          py::arg("size") = "small", py::arg("n_objectives") = 2, py::arg("seed") = 1)
      .def_property_readonly("width", &GridWorld::width)
      .def_property_readonly("height", &GridWorld::height)
      .def_property_readonly("horizon", &GridWorld::horizon)
      .def_property_readonly("n_objectives", &GridWorld::n_objectives)
      .def_property_readonly("slip_prob", &GridWorld::slip_prob)
      .def("with_slip", &GridWorld::with_slip, py::arg("slip_prob"))
      .def("reward_map",
           [](const GridWorld& w, int k) {
             const auto map = w.reward_map(k);
             return std::vector<double>(map.begin(), map.end());
           },
           py::arg("k"))
      .def("road_cells",
           [](const GridWorld& w) {
             std::vector<std::pair<int, int>> out;
             for (Cell c : w.road_cells()) out.emplace_back(c.x, c.y);
             return out;
           })
      .def("hazard_centers",
           [](const GridWorld& w) {
             std::vector<std::pair<int, int>> out;
             for (Cell c : w.hazard_centers()) out.emplace_back(c.x, c.y);
             return out;
           })
      .def("reset", [](const GridWorld& w, Rng& rng) { return state_tuple(w.reset(rng)); }, py::arg("rng"))
      .def("step",
           [](const GridWorld& w, const py::tuple& s, int a, Rng& rng) {
             const Transition t = w.step(state_from(s), action_from(a), rng);
             const auto r = t.r.view();
             return py::make_tuple(state_tuple(t.next), std::vector<double>(r.begin(), r.end()), t.terminal);
           },
           py::arg("state"), py::arg("action"), py::arg("rng"))
      .def("to_json", [](const GridWorld& w) { return w.to_json().dump(); });

  // oracle
  m.def("solve",
        [](const GridWorld& w, const py::object& s, double tol) {
          return value_table_dict(solve(ScalarMDP::from_spec(w, as_spec(s, w.n_objectives())), tol));
        },
        py::arg("world"), py::arg("spec"), py::arg("tol") = 1e-10);
  m.def("solve_weights",
        [](const GridWorld& w, const std::vector<double>& weights, double tol) {
          return value_table_dict(solve(ScalarMDP::from_weights(w, weights), tol));
        },
        py::arg("world"), py::arg("weights"), py::arg("tol") = 1e-10);
  m.def("policy_return",
        [](const GridWorld& w, const std::vector<int>& policy, const py::object& s, int episodes, std::uint64_t seed) {
          std::vector<Action> actions;
          for (int a : policy) actions.push_back(action_from(a));
          Rng rng(seed);
          const ReturnStats st =
              policy_return(w, Policy::table(std::move(actions)), as_spec(s, w.n_objectives()), kDefaultGamma, episodes, rng);
          return py::make_tuple(st.mean, st.stderr_);
        },
        py::arg("world"), py::arg("policy"), py::arg("spec"), py::arg("episodes") = 100, py::arg("seed") = 0);
  m.def("normalized_score", &normalized_score, py::arg("agent_return"), py::arg("oracle_return"),
        py::arg("random_return"));

  // agents
  py::class_<LoadedAgent>(m, "Agent")
      .def_property_readonly("config", [](const LoadedAgent& a) { return a.config_text; })
      .def_property_readonly("sha256", [](const LoadedAgent& a) { return a.sha256; })
      .def_property_readonly("step", [](const LoadedAgent& a) { return a.step; })
      .def("world", [](const LoadedAgent& a) { return build_world(a.config); })
      .def("encode",
           [](const LoadedAgent& a, const py::object& s) {
             const Vector e = a.net.encode(tokenize(as_spec(s, a.config.objectives)));
             return std::vector<double>(e.data(), e.data() + e.size());
           },
           py::arg("spec"))
      .def("q_values",
           [](const LoadedAgent& a, int x, int y, const py::object& s) {
             const GridWorld w = build_world(a.config);
             if (!w.in_bounds({x, y})) throw IndexError("cell outside the grid");
             const auto q = a.net.q_values(w.state_features({x, y}), tokenize(as_spec(s, a.config.objectives)));
             return std::vector<double>(q.begin(), q.end());
           },
           py::arg("x"), py::arg("y"), py::arg("spec"))
      .def("greedy_policy",
           [](const LoadedAgent& a, const py::object& s) {
             const GridWorld w = build_world(a.config);
             return action_ints(greedy_table(a.net, w, Goal(make_spec_goal(as_spec(s, a.config.objectives)))).actions);
           },
           py::arg("spec"));
  m.def("load_agent", &load_agent, py::arg("checkpoint"));

  m.def("train",
        [](const std::string& run_dir, const py::dict& overrides) {
          const py::module_ json = py::module_::import("json");
          const RunConfig config = config_from_json(nlohmann::json::parse(json.attr("dumps")(overrides).cast<std::string>()));
          TrainingResult r;
          {
            py::gil_scoped_release release;
            r = run_training(config, run_dir);
          }
          py::dict d;
          d["steps"] = r.steps;
          d["final_checkpoint"] = r.final_checkpoint;
          std::vector<std::pair<std::int64_t, double>> evals;
          for (const auto& e : r.evals) evals.emplace_back(e.step, e.summary.mean);
          d["evals"] = evals;
          d["reached_target_at"] = r.reached_target_at ? py::cast(*r.reached_target_at) : py::none();
          return d;
        },
        py::arg("run_dir"), py::arg("config") = py::dict(),
        "Train into a new run directory; `config` holds run-config overrides.");
}
