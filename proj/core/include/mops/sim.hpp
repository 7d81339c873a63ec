#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mops/random.hpp"

namespace mops::sim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

// Axis-aligned table rectangle centered at the origin.
struct Table {
  double w = 0.80;
  double h = 0.60;

  double half_w() const { return 0.5 * w; }
  double half_h() const { return 0.5 * h; }
  bool contains(Vec2 p) const {
    return std::abs(p.x) <= half_w() && std::abs(p.y) <= half_h();
  }
};

// Factored scene state: a set of object centers on the table.
struct SceneState {
  std::vector<Vec2> centers;
  double object_radius = 0.025;
  Table table;

  int n() const { return static_cast<int>(centers.size()); }
};

// One push: paddle starts at (x, y) with heading theta and travels distance d.
struct PushAction {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // radians in [-pi, pi]
  double d = 0.0;      // meters in [d_min, d_max]
};

struct Goal {
  SceneState goal_state;
  Vec2 region_center;
  double region_side = 0.25;
};

// Per-step contact bookkeeping, consumed by the reward terms.
struct StepInfo {
  std::vector<double> per_object_displacement;
  int wall_contacts = 0;  // objects that hit a wall during the step
  double max_displacement = 0.0;
};

struct EnvConfig {
  int n_objects = 10;
  double table_w = 0.80;
  double table_h = 0.60;
  double object_radius = 0.025;
  double paddle_width = 0.06;
  double d_min = 0.02;
  double d_max = 0.20;
  double cluster_side = 0.25;
  uint64_t seed = 0;

  Table table() const { return Table{table_w, table_h}; }

  // Parses a key=value file (one pair per line, '#' comments).
  static EnvConfig load(const std::string& path);
  void save(const std::string& path) const;
};

// Throws std::invalid_argument when n objects cannot be packed into the
// cluster square (n * pi * r^2 > side^2) or the config is otherwise unusable.
void validate(const EnvConfig& cfg);

bool satisfies_invariants(const SceneState& s, double overlap_tol = 1e-6);

enum class InitMode { kMixed, kUniform, kCluster };

// Samples an initial state (uniform or cluster placement, 50/50 in kMixed)
// and a cluster-sampled goal. Deterministic given the stream state.
std::pair<SceneState, Goal> sample_initial(const EnvConfig& cfg, RandomStream& rng,
                                           InitMode mode = InitMode::kMixed);

// Quasi-static push: the paddle edge sweeps in 5 mm sub-steps, discs are
// displaced the minimal distance off the edge, pairwise overlaps are resolved
// symmetrically, and centers are clamped so discs stay on the table.
std::pair<SceneState, StepInfo> step(const SceneState& state, const PushAction& action,
                                     double paddle_width = 0.06);

// Random-object / random-direction / random-distance data collection policy.
PushAction scripted_action(const SceneState& state, const EnvConfig& cfg, RandomStream& rng);

// True iff every object center lies inside the goal square (inclusive).
bool goal_region_success(const SceneState& state, const Goal& goal);

// Convenience stateful wrapper pairing a scene with its config.
class Environment {
 public:
  explicit Environment(const EnvConfig& cfg, uint64_t seed, InitMode mode = InitMode::kMixed);

  const SceneState& state() const { return state_; }
  const Goal& goal() const { return goal_; }
  const EnvConfig& config() const { return cfg_; }
  RandomStream& rng() { return rng_; }

  void reset();
  StepInfo apply(const PushAction& a);
  PushAction scripted() { return scripted_action(state_, cfg_, rng_); }

 private:
  EnvConfig cfg_;
  RandomStream rng_;
  InitMode mode_ = InitMode::kMixed;
  SceneState state_;
  Goal goal_;
};

}  // namespace mops::sim
