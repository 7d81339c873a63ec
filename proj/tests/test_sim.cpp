#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mops/sim.hpp"

using namespace mops;
using namespace mops::sim;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Bounding-box side of a state; cluster draws always fit in the cluster
// square, uniform draws over the full table essentially never do.
double bbox_side(const SceneState& s) {
  double min_x = 1e9, max_x = -1e9, min_y = 1e9, max_y = -1e9;
  for (const auto& c : s.centers) {
    min_x = std::min(min_x, c.x);
    max_x = std::max(max_x, c.x);
    min_y = std::min(min_y, c.y);
    max_y = std::max(max_y, c.y);
  }
  return std::max(max_x - min_x, max_y - min_y);
}

SceneState single_object_state(Vec2 c) {
  SceneState s;
  s.centers = {c};
  return s;
}

}  // namespace

TEST_CASE("sample_initial produces valid states and cluster-contained goals") {
  EnvConfig cfg;
  cfg.n_objects = 10;
  RandomStream rng(7);
  for (int i = 0; i < 50; ++i) {
    auto [state, goal] = sample_initial(cfg, rng);
    CHECK(satisfies_invariants(state));
    CHECK(satisfies_invariants(goal.goal_state));
    CHECK(state.n() == 10);
    const double half = 0.5 * goal.region_side;
    for (const auto& c : goal.goal_state.centers) {
      CHECK(std::abs(c.x - goal.region_center.x) <= half + 1e-12);
      CHECK(std::abs(c.y - goal.region_center.y) <= half + 1e-12);
    }
  }
}

TEST_CASE("sample_initial single-object cluster fits the square") {
  EnvConfig cfg;
  cfg.n_objects = 1;
  RandomStream rng(3);
  for (int i = 0; i < 200; ++i) {
    auto [state, goal] = sample_initial(cfg, rng);
    (void)goal;
    CHECK(bbox_side(state) <= cfg.cluster_side);
  }
}

TEST_CASE("sample_initial mixes cluster and uniform roughly 50/50") {
  EnvConfig cfg;
  cfg.n_objects = 10;
  RandomStream rng(11);
  int cluster = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    auto [state, goal] = sample_initial(cfg, rng);
    (void)goal;
    if (bbox_side(state) <= cfg.cluster_side) ++cluster;
  }
  const double frac = static_cast<double>(cluster) / n;
  CHECK(frac >= 0.45);
  CHECK(frac <= 0.55);
}

TEST_CASE("sample_initial rejects unpackable configs") {
  EnvConfig cfg;
  cfg.n_objects = 20;
  cfg.object_radius = 0.04;  // 20*pi*r^2 > 0.0625
  RandomStream rng(1);
  CHECK_THROWS_AS(sample_initial(cfg, rng), std::invalid_argument);
}

TEST_CASE("step pushes a disc in the corridor by d minus the initial gap") {
  SceneState s = single_object_state({0.10, 0.0});
  PushAction a{0.0, 0.0, 0.0, 0.10};
  auto [next, info] = step(s, a);
  // Edge contacts the disc once it is within object_radius of the center,
  // then carries it so the center ends one radius ahead of the final edge.
  const double expected = a.d + s.object_radius - 0.10;
  CHECK(expected > 0);
  CHECK(next.centers[0].x == doctest::Approx(0.10 + expected).epsilon(1e-9));
  CHECK(next.centers[0].y == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(info.max_displacement == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("step leaves untouched scenes unchanged") {
  SceneState s;
  s.centers = {{0.2, 0.2}, {-0.2, -0.1}};
  PushAction a{0.0, -0.25, kPi / 2, 0.05};  // swept corridor misses both discs
  auto [next, info] = step(s, a);
  CHECK(next.centers[0].x == s.centers[0].x);
  CHECK(next.centers[0].y == s.centers[0].y);
  CHECK(next.centers[1].x == s.centers[1].x);
  CHECK(next.centers[1].y == s.centers[1].y);
  CHECK(info.max_displacement == 0.0);
  CHECK(info.wall_contacts == 0);
}

TEST_CASE("step d=0 returns the input state") {
  SceneState s = single_object_state({0.05, 0.0});
  auto [next, info] = step(s, PushAction{0.0, 0.0, 0.0, 0.0});
  CHECK(next.centers[0].x == s.centers[0].x);
  CHECK(info.max_displacement == 0.0);
}

TEST_CASE("step clamps objects against the wall and reports the contact") {
  SceneState s = single_object_state({0.35, 0.0});
  PushAction a{0.30, 0.0, 0.0, 0.15};
  auto [next, info] = step(s, a);
  CHECK(next.centers[0].x == doctest::Approx(s.table.half_w() - s.object_radius));
  CHECK(info.wall_contacts >= 1);
  CHECK(satisfies_invariants(next));
}

TEST_CASE("step conserves object count and invariants over random pairs") {
  EnvConfig cfg;
  cfg.n_objects = 8;
  RandomStream rng(1234);
  SceneState state;
  Goal goal;
  std::tie(state, goal) = sample_initial(cfg, rng);
  for (int i = 0; i < 10000; ++i) {
    if (i % 50 == 0) std::tie(state, goal) = sample_initial(cfg, rng);
    const PushAction a = scripted_action(state, cfg, rng);
    auto [next, info] = step(state, a, cfg.paddle_width);
    REQUIRE(next.n() == state.n());
    REQUIRE(satisfies_invariants(next));
    REQUIRE(info.max_displacement ==
            *std::max_element(info.per_object_displacement.begin(),
                              info.per_object_displacement.end()));
    state = next;
  }
}

TEST_CASE("step is deterministic") {
  EnvConfig cfg;
  cfg.n_objects = 5;
  RandomStream rng(99);
  auto [state, goal] = sample_initial(cfg, rng);
  (void)goal;
  const PushAction a = scripted_action(state, cfg, rng);
  auto [n1, i1] = step(state, a, cfg.paddle_width);
  auto [n2, i2] = step(state, a, cfg.paddle_width);
  for (int i = 0; i < n1.n(); ++i) {
    CHECK(n1.centers[i].x == n2.centers[i].x);
    CHECK(n1.centers[i].y == n2.centers[i].y);
  }
  CHECK(i1.wall_contacts == i2.wall_contacts);
  CHECK(i1.max_displacement == i2.max_displacement);
}

TEST_CASE("states not intersecting the inflated corridor are unchanged") {
  EnvConfig cfg;
  cfg.n_objects = 6;
  RandomStream rng(4321);
  for (int trial = 0; trial < 2000; ++trial) {
    auto [state, goal] = sample_initial(cfg, rng);
    (void)goal;
    const PushAction a = scripted_action(state, cfg, rng);
    // Inflated corridor: capsule around the swept rectangle.
    const Vec2 heading{std::cos(a.theta), std::sin(a.theta)};
    const Vec2 lateral{-heading.y, heading.x};
    bool any_hit = false;
    for (const auto& c : state.centers) {
      const Vec2 rel = c - Vec2{a.x, a.y};
      const double along = rel.dot(heading);
      const double side = std::abs(rel.dot(lateral));
      const double r = state.object_radius;
      if (along >= -r && along <= a.d + r && side <= 0.5 * cfg.paddle_width + r) {
        any_hit = true;
        break;
      }
    }
    if (any_hit) continue;
    auto [next, info] = step(state, a, cfg.paddle_width);
    REQUIRE(info.max_displacement == 0.0);
  }
}

TEST_CASE("scripted_action places the paddle behind the target") {
  SceneState s = single_object_state({0.1, 0.05});
  EnvConfig cfg;
  cfg.n_objects = 1;
  RandomStream rng(5);
  const PushAction a = scripted_action(s, cfg, rng);
  const Vec2 heading{std::cos(a.theta), std::sin(a.theta)};
  CHECK(a.x == doctest::Approx(s.centers[0].x - cfg.paddle_width * heading.x));
  CHECK(a.y == doctest::Approx(s.centers[0].y - cfg.paddle_width * heading.y));
  CHECK(a.d >= cfg.d_min);
  CHECK(a.d <= cfg.d_max);
}

TEST_CASE("scripted_action is deterministic given the seed") {
  EnvConfig cfg;
  cfg.n_objects = 4;
  RandomStream rng(7);
  auto [state, goal] = sample_initial(cfg, rng);
  (void)goal;
  RandomStream r1(42), r2(42);
  const PushAction a1 = scripted_action(state, cfg, r1);
  const PushAction a2 = scripted_action(state, cfg, r2);
  CHECK(a1.x == a2.x);
  CHECK(a1.y == a2.y);
  CHECK(a1.theta == a2.theta);
  CHECK(a1.d == a2.d);
}

TEST_CASE("scripted_action picks objects uniformly") {
  // Central objects so the paddle start is never clamped and the chosen
  // object can be recovered from the action.
  SceneState s;
  const int n = 10;
  for (int i = 0; i < n; ++i) {
    s.centers.push_back({-0.18 + 0.04 * i, (i % 2 == 0) ? 0.06 : -0.06});
  }
  EnvConfig cfg;
  cfg.n_objects = n;
  RandomStream rng(2024);
  std::vector<int> counts(n, 0);
  const int trials = 10000;
  for (int trial = 0; trial < trials; ++trial) {
    const PushAction a = scripted_action(s, cfg, rng);
    const Vec2 heading{std::cos(a.theta), std::sin(a.theta)};
    const Vec2 target{a.x + cfg.paddle_width * heading.x, a.y + cfg.paddle_width * heading.y};
    int best = 0;
    double best_d = 1e9;
    for (int i = 0; i < n; ++i) {
      const double d = (s.centers[i] - target).norm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    REQUIRE(best_d < 1e-9);
    ++counts[best];
  }
  for (int i = 0; i < n; ++i) {
    const double freq = static_cast<double>(counts[i]) / trials;
    CHECK(freq > 0.08);
    CHECK(freq < 0.12);
  }
}

TEST_CASE("goal_region_success checks inclusive containment") {
  Goal g;
  g.region_center = {0.1, 0.0};
  g.region_side = 0.25;

  SceneState all_center;
  all_center.centers = {{0.1, 0.0}, {0.1, 0.0}};
  CHECK(goal_region_success(all_center, g));

  SceneState outlier;
  outlier.centers = {{0.1, 0.0}, {0.3, 0.0}};  // 0.2 > 0.125 half-side
  CHECK_FALSE(goal_region_success(outlier, g));

  SceneState boundary;
  boundary.centers = {{0.1 + 0.125, 0.0}};
  CHECK(goal_region_success(boundary, g));
}

TEST_CASE("EnvConfig round-trips through the key-value file") {
  EnvConfig cfg;
  cfg.n_objects = 7;
  cfg.table_w = 0.9;
  cfg.seed = 321;
  const std::string path = "/tmp/mops_test_env_cfg.txt";
  cfg.save(path);
  const EnvConfig loaded = EnvConfig::load(path);
  CHECK(loaded.n_objects == 7);
  CHECK(loaded.table_w == doctest::Approx(0.9));
  CHECK(loaded.seed == 321);
}

TEST_CASE("Environment resets and steps") {
  EnvConfig cfg;
  cfg.n_objects = 3;
  Environment env(cfg, 5);
  const auto s0 = env.state();
  env.apply(env.scripted());
  CHECK(env.state().n() == 3);
  env.reset();
  CHECK(satisfies_invariants(env.state()));
  (void)s0;
}
