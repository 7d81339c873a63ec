#pragma once

#include <array>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mops/nn.hpp"
#include "mops/param_store.hpp"
#include "mops/render.hpp"
#include "mops/sim.hpp"

namespace mops::rl {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;
using diff::Var;

constexpr int kLatentDim = 128;
constexpr int kActionDim = 4;
constexpr int kSacHidden = 256;

struct RLConfig {
  double gamma = 0.99;
  int max_episode_steps = 50;  // T
  double epsilon = 0.005;      // cosine-distance success threshold
  double delta = 0.02;         // movement bonus threshold (m)
  double movement_bonus = 0.1;
  double wall_penalty = 1.0;  // per contacting object
  int her_k = 8;
  double entropy_alpha = 0.1;
  double polyak_rho = 0.995;
  int batch_size = 1024;
  double lr = 1e-3;
  int n_envs = 8;
  int iterations = 2000;
  double explore_anneal_frac = 0.5;  // scripted-action probability 1 -> 0 over this fraction
  int steps_per_env_per_iter = 1;    // collection : optimization interleaving
  int updates_per_iter = 1;
  size_t replay_capacity = 1000000;
  int warmup_transitions = 2048;
  sim::InitMode init_mode = sim::InitMode::kMixed;
  uint64_t seed = 0;

  // Table-scale run (10k iterations); other values match the desk defaults.
  static RLConfig paper_scale();
};

// Replay unit: cached frozen embeddings plus what HER needs to relabel.
struct Transition {
  Tensor phi_s, phi_o;
  Tensor phi_g;        // goal embedding used by reward and critics
  Tensor phi_g_actor;  // goal embedding fed to the actor (may differ)
  std::array<double, 4> action{};  // normalized to [-1,1]^4
  double reward = 0.0;
  Tensor phi_s1, phi_o1;
  bool done = false;
  sim::SceneState achieved_state;  // post-step state
  sim::StepInfo info;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity);
  void push(Transition t);
  const Transition& sample(RandomStream& rng) const;
  const Transition& at(size_t i) const { return data_[i]; }
  size_t size() const { return data_.size(); }
  size_t capacity() const { return capacity_; }

 private:
  std::vector<Transition> data_;
  size_t capacity_;
  size_t write_ = 0;
};

// 1 - a.b/(|a||b|); throws std::domain_error on zero-norm input.
double cos_dist(const Tensor& a, const Tensor& b);

struct RewardResult {
  double value = 0.0;
  bool success = false;
};

// Goal-success base reward plus movement bonus and wall penalties, summed.
// phi_s_next is the post-step embedding on the same side as phi_g.
RewardResult reward(const Tensor& phi_s_next, const Tensor& phi_g, const RLConfig& cfg,
                    const sim::StepInfo& info);

std::array<double, 4> normalize_action(const sim::PushAction& a, const sim::EnvConfig& cfg);
sim::PushAction denormalize_action(const std::array<double, 4>& a, const sim::EnvConfig& cfg);

enum class PolicyMode { kTrain, kEval };

// Squashed-Gaussian SAC actor over (phi_o, phi_g). The nn modules point into
// the owned store, so the struct is pinned in place.
struct Actor {
  ParamStore store;
  nn::Mlp net;

  explicit Actor(uint64_t seed);
  Actor(const Actor&) = delete;
  Actor& operator=(const Actor&) = delete;

  // Pre-squash Gaussian sample; eval mode halves the standard deviation.
  std::array<double, 4> presquash_sample(const Tensor& phi_o, const Tensor& phi_g, PolicyMode mode,
                                         RandomStream& rng) const;
  std::array<double, 4> sample_normalized(const Tensor& phi_o, const Tensor& phi_g,
                                          PolicyMode mode, RandomStream& rng) const;
  sim::PushAction act(const Tensor& phi_o, const Tensor& phi_g, PolicyMode mode, RandomStream& rng,
                      const sim::EnvConfig& env_cfg) const;
};

// Mean/log-std heads on a shared tape (log-std clamped to [-5, 2]).
struct ActorDist {
  Var mean, log_std;
};
ActorDist actor_dist(Tape& t, const Actor& actor, Var actor_input);

struct SampledAction {
  Var action;    // [B,4] in (-1,1)
  Var log_prob;  // [B]
};
// Reparameterized tanh-Gaussian sample with the given standard-normal draws.
SampledAction sample_squashed(Tape& t, const ActorDist& dist, Tensor eps, double std_scale = 1.0);

struct SacNetworks {
  Actor actor;
  ParamStore v_store, v_target_store, q1_store, q2_store;
  nn::Mlp v_net, v_target_net, q1_net, q2_net;

  explicit SacNetworks(uint64_t seed);
  SacNetworks(const SacNetworks&) = delete;
  SacNetworks& operator=(const SacNetworks&) = delete;
};

struct SacLosses {
  double actor_loss = 0.0;
  double q1_loss = 0.0;
  double q2_loss = 0.0;
  double v_loss = 0.0;
};

// One SAC optimization cycle on a uniform batch. asymmetric=true feeds the
// critics phi_s; false feeds them phi_o (ablation). The actor never sees
// phi_s either way.
SacLosses sac_update(SacNetworks& nets, std::span<const Transition* const> batch,
                     const RLConfig& cfg, RandomStream& rng, bool asymmetric = true);

using StateEmbedFn = std::function<Tensor(const sim::SceneState&)>;
using ObsEmbedFn = std::function<Tensor(const render::Observation&)>;
using ObsBatchEmbedFn = std::function<Tensor(std::span<const render::Observation>)>;

// Future-state goal relabeling; virtual goals are embedded with goal_embed
// (and actor_goal_embed when the actor consumes a different goal space).
std::vector<Transition> her_relabel(const std::vector<Transition>& episode, int k,
                                    const StateEmbedFn& goal_embed, const RLConfig& cfg,
                                    RandomStream& rng,
                                    const StateEmbedFn& actor_goal_embed = nullptr);

// Published fallback thresholds (per trained variant).
struct EpsilonTable {
  std::map<std::string, double> values;
  static EpsilonTable published_defaults();
};

// Scripted-policy probe: collects n_pairs moved transitions, then scales the
// reference epsilon by each model's median cosine distance.
std::map<std::string, double> calibrate_epsilon(
    const std::vector<std::pair<std::string, StateEmbedFn>>& models,
    const std::string& reference_model, double reference_eps, const sim::EnvConfig& env_cfg,
    int n_pairs = 4096, uint64_t seed = 0);

struct MaacComponents {
  StateEmbedFn state_embed;    // frozen state-side encoder
  ObsEmbedFn obs_embed;        // frozen image-side encoder
  ObsBatchEmbedFn obs_embed_batch;  // optional batched fast path
  // Episode goal embeddings; critic side doubles as the reward space.
  std::function<Tensor(const sim::Goal&, RandomStream&)> goal_embed_critic;
  std::function<Tensor(const sim::Goal&, RandomStream&)> goal_embed_actor;  // null: same as critic
  // HER relabeling embedders (defaults: state_embed / critic behaviour).
  StateEmbedFn her_goal_embed;
  StateEmbedFn her_actor_goal_embed;  // null: same as her_goal_embed
  bool domain_randomization = true;
  bool asymmetric = true;
};

struct MetricsRow {
  int iteration = 0;
  int episodes = 0;
  double success_rate = 0.0;  // over the last 100 completed episodes
  double mean_return = 0.0;
  double actor_loss = 0.0;
  double q1_loss = 0.0;
  double q2_loss = 0.0;
  double v_loss = 0.0;
  double p_explore = 0.0;
  size_t buffer_size = 0;
};

struct MaacResult {
  std::unique_ptr<SacNetworks> nets;
  std::vector<MetricsRow> log;
  int episodes = 0;
};

// Algorithm main loop: parallel-in-spirit vectorized collection over n_envs
// environments interleaved with SAC updates, scripted-action exploration
// annealed from 1 to 0, HER augmentation, and per-iteration metrics.
MaacResult run_maac(const RLConfig& cfg, const sim::EnvConfig& env_cfg,
                    const MaacComponents& comp);

}  // namespace mops::rl
