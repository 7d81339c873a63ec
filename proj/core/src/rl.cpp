#include "mops/rl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mops::rl {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLogStdMin = -5.0;
constexpr double kLogStdMax = 2.0;
constexpr double kSquashEps = 1e-6;

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  const int B = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor out({B, ca + cb});
  for (int r = 0; r < B; ++r) {
    for (int j = 0; j < ca; ++j) out.at(r, j) = a.at(r, j);
    for (int j = 0; j < cb; ++j) out.at(r, ca + j) = b.at(r, j);
  }
  return out;
}

}  // namespace

RLConfig RLConfig::paper_scale() {
  RLConfig cfg;
  cfg.iterations = 10000;
  return cfg;
}

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[write_] = std::move(t);
    write_ = (write_ + 1) % capacity_;
  }
}

const Transition& ReplayBuffer::sample(RandomStream& rng) const {
  if (data_.empty()) throw std::logic_error("ReplayBuffer::sample: empty buffer");
  return data_[rng.uniform_int(data_.size())];
}

double cos_dist(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw std::invalid_argument("cos_dist: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) throw std::domain_error("cos_dist: zero-norm input");
  const double d = 1.0 - dot / std::sqrt(na * nb);
  return std::min(2.0, std::max(0.0, d));
}

RewardResult reward(const Tensor& phi_s_next, const Tensor& phi_g, const RLConfig& cfg,
                    const sim::StepInfo& info) {
  RewardResult out;
  out.success = cos_dist(phi_s_next, phi_g) < cfg.epsilon;
  out.value = out.success ? 1.0 : -1.0;
  if (info.max_displacement > cfg.delta) out.value += cfg.movement_bonus;
  out.value -= cfg.wall_penalty * info.wall_contacts;
  return out;
}

std::array<double, 4> normalize_action(const sim::PushAction& a, const sim::EnvConfig& cfg) {
  const sim::Table t = cfg.table();
  const double span_d = cfg.d_max - cfg.d_min;
  return {a.x / t.half_w(), a.y / t.half_h(), a.theta / kPi,
          span_d > 0 ? 2.0 * (a.d - cfg.d_min) / span_d - 1.0 : 0.0};
}

sim::PushAction denormalize_action(const std::array<double, 4>& a, const sim::EnvConfig& cfg) {
  const sim::Table t = cfg.table();
  sim::PushAction out;
  out.x = a[0] * t.half_w();
  out.y = a[1] * t.half_h();
  out.theta = a[2] * kPi;
  out.d = cfg.d_min + 0.5 * (a[3] + 1.0) * (cfg.d_max - cfg.d_min);
  return out;
}

Actor::Actor(uint64_t seed) {
  RandomStream rng(seed);
  net = nn::Mlp::create(store, "pi", {2 * kLatentDim, kSacHidden, kSacHidden, 2 * kActionDim},
                        rng);
}

ActorDist actor_dist(Tape& t, const Actor& actor, Var actor_input) {
  Var out = actor.net(t, actor_input);  // [B,8]
  ActorDist d;
  d.mean = t.slice_last(out, 0, kActionDim);
  d.log_std = t.clamp(t.slice_last(out, kActionDim, kActionDim), kLogStdMin, kLogStdMax);
  return d;
}

SampledAction sample_squashed(Tape& t, const ActorDist& dist, Tensor eps, double std_scale) {
  const int B = t.value(dist.mean).dim(0);
  // z = mean + scale * exp(log_std) * eps
  Var std = t.exp_(dist.log_std);
  if (std_scale != 1.0) std = t.scale(std, std_scale);
  Var z = t.add(dist.mean, t.mul(std, t.input(eps)));
  Var action = t.tanh_(z);

  // log pi(z) = sum_d [-0.5 log 2pi - log sigma_d - 0.5 eps_d^2]
  Tensor gauss_const({B});
  for (int b = 0; b < B; ++b) {
    double c = 0.0;
    for (int d = 0; d < kActionDim; ++d) {
      const double e = eps[b * kActionDim + d];
      c += -0.5 * kLog2Pi - 0.5 * e * e;
    }
    gauss_const[b] = c;
  }
  Var log_sigma = dist.log_std;
  if (std_scale != 1.0) log_sigma = t.add_scalar(log_sigma, std::log(std_scale));
  Var gauss = t.sub(t.input(std::move(gauss_const)), t.sum_axis(log_sigma, 1));  // [B]

  // Squash correction: - sum_d log(1 - a_d^2 + eps)
  Var one_minus = t.add_scalar(t.scale(t.mul(action, action), -1.0), 1.0 + kSquashEps);
  Var corr = t.sum_axis(t.log_(one_minus), 1);  // [B]

  SampledAction s;
  s.action = action;
  s.log_prob = t.sub(gauss, corr);
  return s;
}

std::array<double, 4> Actor::presquash_sample(const Tensor& phi_o, const Tensor& phi_g,
                                              PolicyMode mode, RandomStream& rng) const {
  Tape t;
  Tensor in({1, 2 * kLatentDim});
  for (int i = 0; i < kLatentDim; ++i) {
    in[i] = phi_o[i];
    in[kLatentDim + i] = phi_g[i];
  }
  ActorDist d = actor_dist(t, *this, t.input(std::move(in)));
  const Tensor& mean = t.value(d.mean);
  const Tensor& log_std = t.value(d.log_std);
  const double scale = mode == PolicyMode::kEval ? 0.5 : 1.0;
  std::array<double, 4> z;
  for (int i = 0; i < kActionDim; ++i) {
    z[i] = mean[i] + scale * std::exp(log_std[i]) * rng.normal();
  }
  return z;
}

std::array<double, 4> Actor::sample_normalized(const Tensor& phi_o, const Tensor& phi_g,
                                               PolicyMode mode, RandomStream& rng) const {
  std::array<double, 4> z = presquash_sample(phi_o, phi_g, mode, rng);
  for (double& v : z) v = std::tanh(v);
  return z;
}

sim::PushAction Actor::act(const Tensor& phi_o, const Tensor& phi_g, PolicyMode mode,
                           RandomStream& rng, const sim::EnvConfig& env_cfg) const {
  return denormalize_action(sample_normalized(phi_o, phi_g, mode, rng), env_cfg);
}

namespace {
uint64_t nth_seed(uint64_t seed, int n) {
  RandomStream rng(seed);
  uint64_t v = 0;
  for (int i = 0; i <= n; ++i) v = rng.raw();
  return v;
}
}  // namespace

SacNetworks::SacNetworks(uint64_t seed) : actor(nth_seed(seed, 0)) {
  RandomStream vr(nth_seed(seed, 1));
  v_net = nn::Mlp::create(v_store, "v", {2 * kLatentDim, kSacHidden, kSacHidden, 1}, vr);
  RandomStream vt(nth_seed(seed, 2));
  v_target_net =
      nn::Mlp::create(v_target_store, "v", {2 * kLatentDim, kSacHidden, kSacHidden, 1}, vt);
  diff::copy_params(v_target_store, v_store);
  RandomStream q1r(nth_seed(seed, 3));
  q1_net = nn::Mlp::create(q1_store, "q",
                           {2 * kLatentDim + kActionDim, kSacHidden, kSacHidden, 1}, q1r);
  RandomStream q2r(nth_seed(seed, 4));
  q2_net = nn::Mlp::create(q2_store, "q",
                           {2 * kLatentDim + kActionDim, kSacHidden, kSacHidden, 1}, q2r);
}

SacLosses sac_update(SacNetworks& nets, std::span<const Transition* const> batch,
                     const RLConfig& cfg, RandomStream& rng, bool asymmetric) {
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw std::invalid_argument("sac_update: empty batch");

  Tensor critic_s({B, kLatentDim}), critic_s1({B, kLatentDim}), goal({B, kLatentDim});
  Tensor actor_o({B, kLatentDim}), actor_goal({B, kLatentDim});
  Tensor actions({B, kActionDim});
  Tensor rewards({B}), not_done({B});
  for (int b = 0; b < B; ++b) {
    const Transition& tr = *batch[b];
    const Tensor& cs = asymmetric ? tr.phi_s : tr.phi_o;
    const Tensor& cs1 = asymmetric ? tr.phi_s1 : tr.phi_o1;
    for (int i = 0; i < kLatentDim; ++i) {
      critic_s.at(b, i) = cs[i];
      critic_s1.at(b, i) = cs1[i];
      goal.at(b, i) = tr.phi_g[i];
      actor_o.at(b, i) = tr.phi_o[i];
      actor_goal.at(b, i) = tr.phi_g_actor[i];
    }
    for (int i = 0; i < kActionDim; ++i) actions.at(b, i) = tr.action[i];
    rewards[b] = tr.reward;
    not_done[b] = tr.done ? 0.0 : 1.0;
  }

  const diff::AdamConfig adam{cfg.lr};
  SacLosses losses;

  // Q targets from the frozen target value network.
  Tensor q_target({B});
  {
    Tape t;
    Var v1 = nets.v_target_net(t, t.input(concat_rows(critic_s1, goal)));
    const Tensor& v = t.value(v1);
    for (int b = 0; b < B; ++b) {
      q_target[b] = rewards[b] + cfg.gamma * not_done[b] * v[b];
    }
  }

  const Tensor critic_in = concat_rows(critic_s, goal);
  const Tensor q_in = concat_rows(critic_in, actions);
  auto update_q = [&](nn::Mlp& qnet, ParamStore& store) {
    Tape t;
    Var q = t.reshape(qnet(t, t.input(q_in)), {B});
    Var err = t.sub(q, t.input(q_target));
    Var loss = t.scale(t.mean_all(t.mul(err, err)), 0.5);
    t.backward(loss);
    store.adam_step(t.param_grads(store), adam);
    return t.value(loss)[0];
  };
  losses.q1_loss = update_q(nets.q1_net, nets.q1_store);
  losses.q2_loss = update_q(nets.q2_net, nets.q2_store);

  // Actor update through a reparameterized sample; the V target reuses the
  // same sample's min-Q and log-prob values.
  Tensor v_target_values({B});
  {
    Tape t;
    Tensor eps({B, kActionDim});
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();
    ActorDist dist = actor_dist(t, nets.actor, t.input(concat_rows(actor_o, actor_goal)));
    SampledAction sampled = sample_squashed(t, dist, std::move(eps));
    Var q_in_new = t.concat_last(t.input(critic_in), sampled.action);
    Var q_min = t.reshape(
        t.minimum(nets.q1_net(t, q_in_new), nets.q2_net(t, q_in_new)), {B});
    Var actor_loss =
        t.mean_all(t.sub(t.scale(sampled.log_prob, cfg.entropy_alpha), q_min));
    t.backward(actor_loss);
    nets.actor.store.adam_step(t.param_grads(nets.actor.store), adam);
    losses.actor_loss = t.value(actor_loss)[0];

    const Tensor& qv = t.value(q_min);
    const Tensor& lp = t.value(sampled.log_prob);
    for (int b = 0; b < B; ++b) {
      v_target_values[b] = qv[b] - cfg.entropy_alpha * lp[b];
    }
  }

  {
    Tape t;
    Var v = t.reshape(nets.v_net(t, t.input(critic_in)), {B});
    Var err = t.sub(v, t.input(v_target_values));
    Var loss = t.scale(t.mean_all(t.mul(err, err)), 0.5);
    t.backward(loss);
    nets.v_store.adam_step(t.param_grads(nets.v_store), adam);
    losses.v_loss = t.value(loss)[0];
  }

  diff::polyak_update(nets.v_target_store, nets.v_store, cfg.polyak_rho);
  return losses;
}

std::vector<Transition> her_relabel(const std::vector<Transition>& episode, int k,
                                    const StateEmbedFn& goal_embed, const RLConfig& cfg,
                                    RandomStream& rng, const StateEmbedFn& actor_goal_embed) {
  if (episode.empty()) return {};
  const int L = static_cast<int>(episode.size());
  std::vector<Transition> out;
  out.reserve(static_cast<size_t>(L) * k);
  std::vector<Tensor> goal_cache(L);
  std::vector<Tensor> actor_cache(L);
  std::vector<bool> cached(L, false);

  for (int t = 0; t < L; ++t) {
    for (int j = 0; j < k; ++j) {
      // Future strategy: a virtual goal is an achieved state at index > t in
      // the episode's state sequence, i.e. the post-step state of some
      // transition u >= t.
      const int u = t + static_cast<int>(rng.uniform_int(L - t));
      if (!cached[u]) {
        goal_cache[u] = goal_embed(episode[u].achieved_state);
        actor_cache[u] =
            actor_goal_embed ? actor_goal_embed(episode[u].achieved_state) : goal_cache[u];
        cached[u] = true;
      }
      Transition relabeled = episode[t];
      relabeled.phi_g = goal_cache[u];
      relabeled.phi_g_actor = actor_cache[u];
      const RewardResult r = reward(relabeled.phi_s1, relabeled.phi_g, cfg, relabeled.info);
      relabeled.reward = r.value;
      relabeled.done = r.success;
      out.push_back(std::move(relabeled));
    }
  }
  return out;
}

EpsilonTable EpsilonTable::published_defaults() {
  EpsilonTable t;
  t.values = {{"full", 0.005}, {"autoencoder", 0.2},  {"state_only", 0.04},
              {"dyn_only", 0.004}, {"mlp", 0.005}};
  return t;
}

std::map<std::string, double> calibrate_epsilon(
    const std::vector<std::pair<std::string, StateEmbedFn>>& models,
    const std::string& reference_model, double reference_eps, const sim::EnvConfig& env_cfg,
    int n_pairs, uint64_t seed) {
  if (models.empty()) throw std::invalid_argument("calibrate_epsilon: no models");
  if (n_pairs <= 0) throw std::invalid_argument("calibrate_epsilon: empty probe set");

  // Scripted-policy probe transitions, unmoved pairs dropped.
  std::vector<std::pair<sim::SceneState, sim::SceneState>> pairs;
  pairs.reserve(n_pairs);
  sim::Environment env(env_cfg, seed);
  int steps = 0;
  while (static_cast<int>(pairs.size()) < n_pairs) {
    const sim::SceneState before = env.state();
    const sim::StepInfo info = env.apply(env.scripted());
    if (info.max_displacement > 0.0) pairs.emplace_back(before, env.state());
    if (++steps % 50 == 0) env.reset();
  }

  std::map<std::string, double> medians;
  for (const auto& [name, embed] : models) {
    std::vector<double> dists;
    dists.reserve(pairs.size());
    for (const auto& [s0, s1] : pairs) {
      dists.push_back(cos_dist(embed(s0), embed(s1)));
    }
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    medians[name] = dists[dists.size() / 2];
  }
  const auto ref = medians.find(reference_model);
  if (ref == medians.end()) throw std::invalid_argument("calibrate_epsilon: unknown reference");
  if (ref->second <= 0.0) throw std::domain_error("calibrate_epsilon: degenerate reference");

  std::map<std::string, double> out;
  for (const auto& [name, med] : medians) {
    out[name] = reference_eps * (med / ref->second);
  }
  return out;
}

namespace {

struct EnvSlot {
  sim::Environment env;
  RandomStream rng;
  render::RandParams params;
  Tensor phi_g, phi_g_actor;
  Tensor phi_s, phi_o;
  std::vector<Transition> episode;
  double episode_return = 0.0;
  int steps = 0;

  EnvSlot(const sim::EnvConfig& cfg, uint64_t env_seed, uint64_t stream_seed,
          sim::InitMode mode)
      : env(cfg, env_seed, mode), rng(stream_seed) {}
};

}  // namespace

MaacResult run_maac(const RLConfig& cfg, const sim::EnvConfig& env_cfg,
                    const MaacComponents& comp) {
  if (!comp.state_embed || !comp.obs_embed || !comp.goal_embed_critic) {
    throw std::invalid_argument("run_maac: missing embedding components");
  }
  const StateEmbedFn her_embed = comp.her_goal_embed ? comp.her_goal_embed : comp.state_embed;

  RandomStream master(cfg.seed);
  MaacResult result;
  result.nets = std::make_unique<SacNetworks>(master.raw());
  ReplayBuffer buffer(cfg.replay_capacity);
  RandomStream update_rng = master.spawn();

  std::vector<EnvSlot> slots;
  slots.reserve(cfg.n_envs);
  for (int e = 0; e < cfg.n_envs; ++e) {
    const uint64_t env_seed = master.raw();
    slots.emplace_back(env_cfg, env_seed, master.spawn().raw(), cfg.init_mode);
  }

  auto begin_episode = [&](EnvSlot& s, bool first) {
    if (!first) s.env.reset();
    s.params = comp.domain_randomization ? render::sample_domain_randomization(s.rng)
                                         : render::RandParams{};
    s.phi_g = comp.goal_embed_critic(s.env.goal(), s.rng);
    s.phi_g_actor =
        comp.goal_embed_actor ? comp.goal_embed_actor(s.env.goal(), s.rng) : s.phi_g;
    s.phi_s = comp.state_embed(s.env.state());
    s.phi_o = comp.obs_embed(render::render(s.env.state(), nullptr, s.params));
    s.episode.clear();
    s.episode_return = 0.0;
    s.steps = 0;
  };
  for (auto& s : slots) begin_episode(s, true);

  std::deque<double> recent_success, recent_return;
  auto window_mean = [](const std::deque<double>& w) {
    if (w.empty()) return 0.0;
    double s = 0.0;
    for (double v : w) s += v;
    return s / w.size();
  };

  SacLosses last_losses;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double anneal_steps = cfg.explore_anneal_frac * cfg.iterations;
    const double p_explore =
        anneal_steps <= 0 ? 0.0 : std::max(0.0, 1.0 - iter / anneal_steps);

    for (int rep = 0; rep < cfg.steps_per_env_per_iter; ++rep) {
      std::vector<render::Observation> next_obs(slots.size());
      std::vector<Transition> staged(slots.size());
      for (size_t e = 0; e < slots.size(); ++e) {
        EnvSlot& s = slots[e];
        std::array<double, 4> action_norm;
        if (s.rng.bernoulli(p_explore)) {
          action_norm = normalize_action(s.env.scripted(), env_cfg);
        } else {
          action_norm =
              result.nets->actor.sample_normalized(s.phi_o, s.phi_g_actor, PolicyMode::kTrain,
                                                  s.rng);
        }
        const sim::StepInfo info = s.env.apply(denormalize_action(action_norm, env_cfg));
        next_obs[e] = render::render(s.env.state(), nullptr, s.params);

        Transition& tr = staged[e];
        tr.phi_s = s.phi_s;
        tr.phi_o = s.phi_o;
        tr.phi_g = s.phi_g;
        tr.phi_g_actor = s.phi_g_actor;
        tr.action = action_norm;
        tr.info = info;
        tr.achieved_state = s.env.state();
      }

      // Batched image embeddings for all slots at once.
      Tensor phi_o1_batch;
      if (comp.obs_embed_batch) {
        phi_o1_batch = comp.obs_embed_batch(next_obs);
      }
      for (size_t e = 0; e < slots.size(); ++e) {
        EnvSlot& s = slots[e];
        Transition& tr = staged[e];
        tr.phi_s1 = comp.state_embed(s.env.state());
        if (comp.obs_embed_batch) {
          Tensor phi({kLatentDim});
          for (int i = 0; i < kLatentDim; ++i) phi[i] = phi_o1_batch.at(static_cast<int>(e), i);
          tr.phi_o1 = std::move(phi);
        } else {
          tr.phi_o1 = comp.obs_embed(next_obs[e]);
        }

        const RewardResult r =
            reward(comp.asymmetric ? tr.phi_s1 : tr.phi_o1, tr.phi_g, cfg, tr.info);
        tr.reward = r.value;
        tr.done = r.success;
        s.episode_return += r.value;
        s.steps += 1;

        s.phi_s = tr.phi_s1;
        s.phi_o = tr.phi_o1;
        s.episode.push_back(tr);
        buffer.push(std::move(tr));

        if (r.success || s.steps >= cfg.max_episode_steps) {
          for (auto& virt : her_relabel(s.episode, cfg.her_k, her_embed, cfg, s.rng,
                                        comp.her_actor_goal_embed)) {
            buffer.push(std::move(virt));
          }
          recent_success.push_back(r.success ? 1.0 : 0.0);
          recent_return.push_back(s.episode_return);
          while (recent_success.size() > 100) recent_success.pop_front();
          while (recent_return.size() > 100) recent_return.pop_front();
          result.episodes += 1;
          begin_episode(s, false);
        }
      }
    }

    if (buffer.size() >= static_cast<size_t>(std::max(cfg.batch_size, cfg.warmup_transitions))) {
      for (int u = 0; u < cfg.updates_per_iter; ++u) {
        std::vector<const Transition*> batch(cfg.batch_size);
        for (int b = 0; b < cfg.batch_size; ++b) batch[b] = &buffer.sample(update_rng);
        last_losses = sac_update(*result.nets, batch, cfg, update_rng, comp.asymmetric);
      }
    }

    MetricsRow row;
    row.iteration = iter;
    row.episodes = result.episodes;
    row.success_rate = window_mean(recent_success);
    row.mean_return = window_mean(recent_return);
    row.actor_loss = last_losses.actor_loss;
    row.q1_loss = last_losses.q1_loss;
    row.q2_loss = last_losses.q2_loss;
    row.v_loss = last_losses.v_loss;
    row.p_explore = p_explore;
    row.buffer_size = buffer.size();
    result.log.push_back(row);
  }
  return result;
}

}  // namespace mops::rl
