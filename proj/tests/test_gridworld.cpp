#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "specmorl/gridworld.hpp"

using namespace specmorl;

namespace {

GridWorld small(int n = 2, std::uint64_t seed = 1) { return GridWorld::build(WorldSize::Small, n, seed); }

}  // namespace

TEST_CASE("build produces the declared sizes and horizons") {
  const GridWorld s = small();
  CHECK(s.width() == 5);
  CHECK(s.height() == 5);
  CHECK(s.horizon() == 50);
  CHECK(s.slip_prob() == doctest::Approx(0.1));
  const GridWorld m = GridWorld::build(WorldSize::Medium, 4, 3);
  CHECK(m.width() == 12);
  CHECK(m.height() == 12);
  CHECK(m.horizon() == 100);
  CHECK(m.n_objectives() == 4);
  CHECK(m.reward_map(3).size() == 144u);
  const GridWorld l = GridWorld::build(WorldSize::Large, 6, 3);
  CHECK(l.width() == 20);
  CHECK(l.horizon() == 150);
  CHECK(l.hazard_centers().size() == 8u);
  CHECK(m.hazard_centers().size() == 5u);
  CHECK(s.hazard_centers().size() == 3u);
}

TEST_CASE("build rejects objective counts outside the supported range") {
  CHECK_THROWS_AS(GridWorld::build(WorldSize::Small, 1, 1), ConfigError);
  CHECK_THROWS_AS(GridWorld::build(WorldSize::Small, 7, 1), ConfigError);
  CHECK_THROWS_AS(parse_world_size("huge"), ConfigError);
  CHECK_THROWS_AS(small().with_slip(1.5), ConfigError);
  CHECK_THROWS_AS(small().reward_map(2), IndexError);
}

TEST_CASE("reward maps follow the objective formulas") {
  for (WorldSize size : {WorldSize::Small, WorldSize::Medium, WorldSize::Large}) {
    const GridWorld w = GridWorld::build(size, 6, 11);
    const int wm1 = w.width() - 1;
    const int hm1 = w.height() - 1;
    for (int y = 0; y < w.height(); ++y) {
      CHECK(w.reward(2, {0, y}) == 0.0);
      CHECK(w.reward(2, {wm1, y}) == 1.0);
      for (int x = 0; x < w.width(); ++x) CHECK(w.reward(2, {x, y}) == doctest::Approx(x / double(wm1)));
    }
    for (int x = 0; x < w.width(); ++x) {
      CHECK(w.reward(3, {x, 0}) == 1.0);
      CHECK(w.reward(3, {x, hm1}) == 0.0);
    }
    // Center row/column maps peak in the middle and vanish at the border.
    CHECK(w.reward(4, {0, 0}) == 0.0);
    CHECK(w.reward(5, {0, 0}) == 0.0);
    CHECK(w.reward(4, {0, hm1}) == 0.0);
    CHECK(w.reward(5, {wm1, 0}) == 0.0);
    for (Cell h : w.hazard_centers()) {
      CHECK(w.reward(1, h) == 0.0);
      CHECK_FALSE(w.is_road(h));
    }
    for (Cell r : w.road_cells()) CHECK(w.reward(0, r) == 1.0);
    for (int k = 0; k < 6; ++k)
      for (double v : w.reward_map(k)) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
  }
}

TEST_CASE("road map decays with Chebyshev distance to the road") {
  const GridWorld w = GridWorld::build(WorldSize::Large, 2, 5);
  for (int i = 0; i < w.num_cells(); ++i) {
    const Cell c = w.cell_at(i);
    int d = 1 << 20;
    for (Cell r : w.road_cells()) d = std::min(d, std::max(std::abs(c.x - r.x), std::abs(c.y - r.y)));
    CHECK(w.reward(0, c) == doctest::Approx(std::max(0.0, 1.0 - d / 3.0)));
  }
}

TEST_CASE("hazard map is the clipped distance to the nearest center") {
  const GridWorld w = GridWorld::build(WorldSize::Medium, 2, 9);
  bool any_clear = false;
  for (int i = 0; i < w.num_cells(); ++i) {
    const Cell c = w.cell_at(i);
    double best = 1.0;
    for (Cell h : w.hazard_centers())
      best = std::min(best, std::min(1.0, std::max(std::abs(c.x - h.x), std::abs(c.y - h.y)) / w.hazard_radius()));
    CHECK(w.reward(1, c) == doctest::Approx(best));
    any_clear = any_clear || best == 1.0;
  }
  CHECK(any_clear);
}

TEST_CASE("build is deterministic per seed") {
  const GridWorld a = small(4, 17);
  const GridWorld b = small(4, 17);
  CHECK(a.to_json() == b.to_json());
  bool differs = false;
  for (std::uint64_t seed = 18; seed < 40 && !differs; ++seed)
    differs = small(4, seed).hazard_centers() != a.hazard_centers();
  CHECK(differs);
}

TEST_CASE("reset draws uniform cells with t = 0") {
  const GridWorld w = small();
  Rng rng(42);
  std::vector<int> counts(25, 0);
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) {
    const MOState s = w.reset(rng);
    REQUIRE(s.t == 0);
    REQUIRE(w.in_bounds(s.cell()));
    ++counts[static_cast<std::size_t>(w.cell_index(s.cell()))];
  }
  const double expected = kDraws / 25.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // df 24, upper 0.1% point.
  CHECK(chi2 < 51.18);

  Rng r1(7), r2(7);
  CHECK(w.reset(r1) == w.reset(r2));
}

TEST_CASE("step moves deterministically without slip and clamps at walls") {
  const GridWorld w = small().with_slip(0.0);
  Rng rng(1);
  const Transition t = w.step({0, 0, 0}, Action::Right, rng);
  CHECK(t.next == MOState{1, 0, 1});
  CHECK(t.r == w.reward_vector(Cell{1, 0}));
  CHECK_FALSE(t.terminal);
  CHECK(w.step({0, 3, 0}, Action::Left, rng).next == MOState{0, 3, 1});
  CHECK(w.step({2, 0, 0}, Action::Up, rng).next == MOState{2, 0, 1});
  CHECK(w.step({4, 4, 0}, Action::Down, rng).next == MOState{4, 4, 1});
  CHECK(w.step({4, 4, 0}, Action::Right, rng).next == MOState{4, 4, 1});
  CHECK(w.step({2, 2, 5}, Action::Up, rng).next == MOState{2, 1, 6});
}

TEST_CASE("step raises EpisodeOver at the horizon") {
  const GridWorld w = small();
  Rng rng(3);
  CHECK_THROWS_AS(w.step({0, 0, w.horizon()}, Action::Up, rng), EpisodeOver);
  const Transition last = w.step({0, 0, w.horizon() - 1}, Action::Up, rng);
  CHECK(last.terminal);
}

TEST_CASE("intended direction is executed nine times in ten") {
  const GridWorld w = small();
  Rng rng(99);
  constexpr int kSteps = 100000;
  int intended = 0;
  for (int i = 0; i < kSteps; ++i) {
    // Interior cell so every direction is distinguishable.
    const Transition t = w.step({2, 2, 0}, Action::Down, rng);
    if (t.next.cell() == Cell{2, 3}) ++intended;
  }
  CHECK(std::abs(intended / double(kSteps) - 0.9) <= 0.01);
}

TEST_CASE("empirical next-state distribution matches the analytic kernel") {
  const GridWorld w = small();
  Rng rng(5);
  constexpr int kSteps = 100000;
  for (Cell c : {Cell{0, 0}, Cell{2, 2}, Cell{4, 1}}) {
    for (Action a : kAllActions) {
      std::vector<double> expected(25, 0.0), seen(25, 0.0);
      for (const Outcome& o : w.kernel(c, a)) expected[static_cast<std::size_t>(w.cell_index(o.cell))] += o.probability;
      for (int i = 0; i < kSteps; ++i)
        seen[static_cast<std::size_t>(w.cell_index(w.step({c.x, c.y, 0}, a, rng).next.cell()))] += 1.0 / kSteps;
      double tv = 0.0;
      for (std::size_t k = 0; k < 25; ++k) tv += std::abs(expected[k] - seen[k]);
      CHECK(tv / 2.0 <= 0.01);
    }
  }
}

TEST_CASE("kernel probabilities sum to one with slip split evenly") {
  const GridWorld w = small();
  const auto k = w.kernel({1, 1}, Action::Left);
  double total = 0.0;
  for (const Outcome& o : k) total += o.probability;
  CHECK(total == doctest::Approx(1.0));
  CHECK(k[static_cast<std::size_t>(Action::Left)].probability == doctest::Approx(0.9));
  CHECK(k[static_cast<std::size_t>(Action::Up)].probability == doctest::Approx(0.1 / 3.0));
}

TEST_CASE("episodes last exactly the horizon with only the last step terminal") {
  const GridWorld w = GridWorld::build(WorldSize::Medium, 2, 4);
  Rng rng(8);
  for (int ep = 0; ep < 5; ++ep) {
    MOState s = w.reset(rng);
    int steps = 0;
    while (true) {
      const Transition t = w.step(s, kAllActions[static_cast<std::size_t>(uniform_int(rng, 0, 3))], rng);
      ++steps;
      CHECK(t.r == w.reward_vector(t.next));
      CHECK(t.next.t == s.t + 1);
      s = t.next;
      if (t.terminal) break;
    }
    CHECK(steps == w.horizon());
  }
}

TEST_CASE("rollouts are reproducible from the seed") {
  const GridWorld w = small();
  auto run = [&](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> trace;
    MOState s = w.reset(rng);
    for (int i = 0; i < w.horizon(); ++i) {
      s = w.step(s, Action::Up, rng).next;
      trace.push_back(w.cell_index(s.cell()));
    }
    return trace;
  };
  CHECK(run(77) == run(77));
  CHECK(run(77) != run(78));
}

TEST_CASE("state features are an injective one-hot over cells") {
  const GridWorld w = GridWorld::build(WorldSize::Medium, 2, 1);
  std::set<std::vector<double>> seen;
  for (int i = 0; i < w.num_cells(); ++i) {
    const auto f = w.state_features(w.cell_at(i));
    REQUIRE(f.size() == static_cast<std::size_t>(w.num_cells()));
    double sum = 0.0;
    for (double v : f) sum += v;
    CHECK(sum == 1.0);
    CHECK(f[static_cast<std::size_t>(i)] == 1.0);
    seen.insert(f);
  }
  CHECK(seen.size() == static_cast<std::size_t>(w.num_cells()));
  std::vector<double> wrong(3);
  CHECK_THROWS_AS(w.state_features(Cell{0, 0}, wrong), ShapeError);
}

TEST_CASE("world export carries sizes and full reward maps") {
  const GridWorld w = small(4, 2);
  const auto j = w.to_json();
  CHECK(j["width"] == 5);
  CHECK(j["n_objectives"] == 4);
  CHECK(j["horizon"] == 50);
  REQUIRE(j["reward_maps"].size() == 4u);
  for (int k = 0; k < 4; ++k)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) CHECK(j["reward_maps"][k][y][x].get<double>() == w.reward(k, {x, y}));

  const std::string path = "test_gridworld_export.json";
  write_world(w, path);
  std::ifstream in(path);
  CHECK(nlohmann::json::parse(in) == j);
  std::remove(path.c_str());
}
