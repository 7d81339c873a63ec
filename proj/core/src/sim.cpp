#include "mops/sim.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mops::sim {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSubStep = 0.005;
constexpr double kOverlapTol = 1e-6;
constexpr int kMaxSeparationIters = 50;
constexpr int kMaxSampleAttempts = 10000;

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// Closest point on segment [a, b] to p.
Vec2 closest_on_segment(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  if (len2 <= 0.0) return a;
  const double t = clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return a + ab * t;
}

// Clamps a center so the whole disc stays on the table. Returns true when the
// clamp actually moved the center (a wall contact).
bool clamp_to_table(Vec2& c, const Table& t, double r) {
  const double hx = t.half_w() - r;
  const double hy = t.half_h() - r;
  const Vec2 before = c;
  c.x = clamp(c.x, -hx, hx);
  c.y = clamp(c.y, -hy, hy);
  return c.x != before.x || c.y != before.y;
}

// Symmetric pairwise separation until no two discs overlap. Clamping inside
// the loop keeps discs on the table while they are being separated.
void resolve_overlaps(std::vector<Vec2>& c, double r, const Table& table,
                      std::vector<bool>* wall_hit) {
  const double min_dist = 2.0 * r;
  for (int iter = 0; iter < kMaxSeparationIters; ++iter) {
    bool any = false;
    for (size_t i = 0; i < c.size(); ++i) {
      for (size_t j = i + 1; j < c.size(); ++j) {
        Vec2 delta = c[j] - c[i];
        double dist = delta.norm();
        if (dist >= min_dist - kOverlapTol) continue;
        any = true;
        Vec2 dir;
        if (dist > 1e-12) {
          dir = delta * (1.0 / dist);
        } else {
          // Coincident centers: separate along a fixed axis.
          dir = {1.0, 0.0};
          dist = 0.0;
        }
        const double push = 0.5 * (min_dist - dist);
        c[i] = c[i] - dir * push;
        c[j] = c[j] + dir * push;
        if (clamp_to_table(c[i], table, r) && wall_hit) (*wall_hit)[i] = true;
        if (clamp_to_table(c[j], table, r) && wall_hit) (*wall_hit)[j] = true;
      }
    }
    if (!any) break;
  }
}

Vec2 sample_point_in_rect(RandomStream& rng, Vec2 center, double hx, double hy) {
  return {center.x + rng.uniform(-hx, hx), center.y + rng.uniform(-hy, hy)};
}

// Rejection-samples n non-overlapping centers inside the given rectangle.
std::vector<Vec2> sample_centers(RandomStream& rng, int n, Vec2 center, double hx, double hy,
                                 double r) {
  std::vector<Vec2> out;
  out.reserve(n);
  for (int attempt = 0; attempt < kMaxSampleAttempts && static_cast<int>(out.size()) < n;
       ++attempt) {
    const Vec2 p = sample_point_in_rect(rng, center, hx, hy);
    bool ok = true;
    for (const Vec2& q : out) {
      if ((p - q).norm() < 2.0 * r - kOverlapTol) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(p);
  }
  if (static_cast<int>(out.size()) < n) {
    throw std::runtime_error("sample_centers: rejection sampling exhausted attempts");
  }
  return out;
}

}  // namespace

void validate(const EnvConfig& cfg) {
  if (cfg.n_objects < 1 || cfg.n_objects > 20) {
    throw std::invalid_argument("EnvConfig: n_objects must be in [1, 20]");
  }
  const double r = cfg.object_radius;
  if (r <= 0 || cfg.table_w <= 0 || cfg.table_h <= 0) {
    throw std::invalid_argument("EnvConfig: non-positive geometry");
  }
  if (cfg.d_min < 0 || cfg.d_max < cfg.d_min) {
    throw std::invalid_argument("EnvConfig: invalid push distance range");
  }
  if (cfg.n_objects * kPi * r * r > cfg.cluster_side * cfg.cluster_side) {
    throw std::invalid_argument("EnvConfig: objects cannot pack into the cluster square");
  }
  if (cfg.cluster_side > std::min(cfg.table_w, cfg.table_h)) {
    throw std::invalid_argument("EnvConfig: cluster square larger than table");
  }
}

bool satisfies_invariants(const SceneState& s, double overlap_tol) {
  const int n = s.n();
  if (n < 1 || n > 20) return false;
  for (const Vec2& c : s.centers) {
    if (!s.table.contains(c)) return false;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if ((s.centers[i] - s.centers[j]).norm() < 2.0 * s.object_radius - overlap_tol) {
        return false;
      }
    }
  }
  return true;
}

std::pair<SceneState, Goal> sample_initial(const EnvConfig& cfg, RandomStream& rng,
                                           InitMode mode) {
  validate(cfg);
  const Table table = cfg.table();
  const double r = cfg.object_radius;
  // Centers are kept a radius away from the walls so freshly sampled discs
  // never start clamped.
  const double hx = table.half_w() - r;
  const double hy = table.half_h() - r;
  const double cluster_half = 0.5 * cfg.cluster_side;

  auto sample_cluster_square = [&]() -> Vec2 {
    // The cluster square must fit inside the reachable center region.
    const double cx = hx - cluster_half;
    const double cy = hy - cluster_half;
    return {rng.uniform(-cx, cx), rng.uniform(-cy, cy)};
  };

  SceneState state;
  state.object_radius = r;
  state.table = table;
  const bool cluster_mode =
      mode == InitMode::kMixed ? rng.bernoulli(0.5) : mode == InitMode::kCluster;
  if (cluster_mode) {
    const Vec2 sq = sample_cluster_square();
    state.centers = sample_centers(rng, cfg.n_objects, sq, cluster_half, cluster_half, r);
  } else {
    state.centers = sample_centers(rng, cfg.n_objects, {0, 0}, hx, hy, r);
  }

  Goal goal;
  goal.region_side = cfg.cluster_side;
  goal.region_center = sample_cluster_square();
  goal.goal_state.object_radius = r;
  goal.goal_state.table = table;
  goal.goal_state.centers =
      sample_centers(rng, cfg.n_objects, goal.region_center, cluster_half, cluster_half, r);
  return {state, goal};
}

std::pair<SceneState, StepInfo> step(const SceneState& state, const PushAction& action,
                                     double paddle_width) {
  SceneState next = state;
  StepInfo info;
  info.per_object_displacement.assign(state.n(), 0.0);
  if (action.d <= 0.0) return {next, info};

  const double r = state.object_radius;
  const Vec2 heading{std::cos(action.theta), std::sin(action.theta)};
  const Vec2 lateral{-heading.y, heading.x};
  const Vec2 start{action.x, action.y};
  const double half_w = 0.5 * paddle_width;

  std::vector<bool> wall_hit(state.n(), false);
  const int n_sub = static_cast<int>(std::ceil(action.d / kSubStep));
  for (int k = 1; k <= n_sub; ++k) {
    const double travel = std::min(action.d, k * kSubStep);
    const Vec2 mid = start + heading * travel;
    const Vec2 a = mid - lateral * half_w;
    const Vec2 b = mid + lateral * half_w;
    for (int i = 0; i < next.n(); ++i) {
      Vec2& c = next.centers[i];
      const Vec2 q = closest_on_segment(c, a, b);
      const Vec2 delta = c - q;
      const double dist = delta.norm();
      if (dist >= r) continue;
      // Push the disc the minimal distance off the edge. A disc dead on the
      // segment is shoved along the paddle heading. The edge never pulls a
      // disc backward: when it overtakes one (wall-pinned case), the clear
      // direction is reflected onto the forward side.
      Vec2 dir = dist > 1e-12 ? delta * (1.0 / dist) : heading;
      const double forward = dir.dot(heading);
      if (forward < 0.0) dir = dir - heading * (2.0 * forward);
      c = q + dir * r;
      if (clamp_to_table(c, state.table, r)) wall_hit[i] = true;
    }
    resolve_overlaps(next.centers, r, state.table, &wall_hit);
  }

  for (int i = 0; i < next.n(); ++i) {
    const double d = (next.centers[i] - state.centers[i]).norm();
    info.per_object_displacement[i] = d;
    info.max_displacement = std::max(info.max_displacement, d);
    if (wall_hit[i]) ++info.wall_contacts;
  }
  return {next, info};
}

PushAction scripted_action(const SceneState& state, const EnvConfig& cfg, RandomStream& rng) {
  if (state.n() < 1) throw std::invalid_argument("scripted_action: empty state");
  const int idx = static_cast<int>(rng.uniform_int(state.n()));
  const double theta = rng.uniform(-kPi, kPi);
  const double d = rng.uniform(cfg.d_min, cfg.d_max);

  // Start one paddle-length behind the chosen object, clamped onto the table.
  const Vec2 heading{std::cos(theta), std::sin(theta)};
  Vec2 start = state.centers[idx] - heading * cfg.paddle_width;
  const Table t = cfg.table();
  start.x = clamp(start.x, -t.half_w(), t.half_w());
  start.y = clamp(start.y, -t.half_h(), t.half_h());
  return PushAction{start.x, start.y, theta, d};
}

bool goal_region_success(const SceneState& state, const Goal& goal) {
  const double half = 0.5 * goal.region_side;
  for (const Vec2& c : state.centers) {
    if (std::abs(c.x - goal.region_center.x) > half ||
        std::abs(c.y - goal.region_center.y) > half) {
      return false;
    }
  }
  return true;
}

EnvConfig EnvConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("EnvConfig::load: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  EnvConfig cfg;
  auto get_d = [&](const char* key, double& out) {
    if (auto it = kv.find(key); it != kv.end()) out = std::stod(it->second);
  };
  if (auto it = kv.find("n_objects"); it != kv.end()) cfg.n_objects = std::stoi(it->second);
  if (auto it = kv.find("seed"); it != kv.end()) cfg.seed = std::stoull(it->second);
  get_d("table_w", cfg.table_w);
  get_d("table_h", cfg.table_h);
  get_d("object_radius", cfg.object_radius);
  get_d("paddle_width", cfg.paddle_width);
  get_d("d_min", cfg.d_min);
  get_d("d_max", cfg.d_max);
  get_d("cluster_side", cfg.cluster_side);
  validate(cfg);
  return cfg;
}

void EnvConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("EnvConfig::save: cannot open " + path);
  out << "n_objects = " << n_objects << "\n"
      << "table_w = " << table_w << "\n"
      << "table_h = " << table_h << "\n"
      << "object_radius = " << object_radius << "\n"
      << "paddle_width = " << paddle_width << "\n"
      << "d_min = " << d_min << "\n"
      << "d_max = " << d_max << "\n"
      << "cluster_side = " << cluster_side << "\n"
      << "seed = " << seed << "\n";
}

Environment::Environment(const EnvConfig& cfg, uint64_t seed, InitMode mode)
    : cfg_(cfg), rng_(seed), mode_(mode) {
  reset();
}

void Environment::reset() {
  auto [s, g] = sample_initial(cfg_, rng_, mode_);
  state_ = std::move(s);
  goal_ = std::move(g);
}

StepInfo Environment::apply(const PushAction& a) {
  auto [next, info] = step(state_, a, cfg_.paddle_width);
  state_ = std::move(next);
  return info;
}

}  // namespace mops::sim
