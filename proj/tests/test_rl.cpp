#include <cmath>
#include <algorithm>
#include <stdexcept>
#include <limits>

#include "doctest.h"
#include "mops/grad_check.hpp"
#include "mops/rl.hpp"

using namespace mops;
using namespace mops::diff;
using namespace mops::rl;

namespace {

Tensor latent_of(std::initializer_list<double> head) {
  Tensor t({kLatentDim});
  int i = 0;
  for (double v : head) t[i++] = v;
  return t;
}

// Cheap deterministic stand-in encoders for loop-level tests.
Tensor fake_state_embed(const sim::SceneState& s) {
  Tensor t({kLatentDim});
  t[0] = 1.0;  // keeps the norm away from zero
  for (int i = 0; i < s.n() && i < 20; ++i) {
    t[1 + 2 * i] = s.centers[i].x;
    t[2 + 2 * i] = s.centers[i].y;
  }
  return t;
}

Tensor fake_obs_embed(const render::Observation& o) {
  Tensor t({kLatentDim});
  t[0] = 1.0;
  for (int i = 0; i < 64; ++i) t[1 + i] = o.pixels[i * 97 % o.pixels.size()];
  return t;
}

sim::StepInfo info_with(double max_disp, int walls) {
  sim::StepInfo info;
  info.per_object_displacement = {max_disp};
  info.max_displacement = max_disp;
  info.wall_contacts = walls;
  return info;
}

}  // namespace

TEST_CASE("cos_dist endpoints") {
  const Tensor a = latent_of({1.0, 2.0, -1.0});
  CHECK(cos_dist(a, a) == 0.0);

  Tensor ex({kLatentDim}), ey({kLatentDim});
  ex[0] = 1.0;
  ey[1] = 1.0;
  CHECK(cos_dist(ex, ey) == doctest::Approx(1.0));

  Tensor na = a;
  for (int64_t i = 0; i < na.numel(); ++i) na[i] = -na[i];
  CHECK(cos_dist(a, na) == doctest::Approx(2.0));

  CHECK_THROWS_AS(cos_dist(Tensor({kLatentDim}), a), std::domain_error);
}

TEST_CASE("reward reproduces the three reference cases") {
  RLConfig cfg;
  cfg.epsilon = 0.005;
  const Tensor g = latent_of({0.3, -0.2, 0.5});

  // Goal met, no movement, no walls: +1.
  const RewardResult hit = reward(g, g, cfg, info_with(0.0, 0));
  CHECK(hit.success);
  CHECK(hit.value == 1.0);

  const Tensor far = latent_of({-0.5, 0.9, 0.1});
  // No success, 3 cm movement: -1 + 0.1.
  const RewardResult moved = reward(far, g, cfg, info_with(0.03, 0));
  CHECK_FALSE(moved.success);
  CHECK(moved.value == doctest::Approx(-0.9));

  // No success, one wall contact: -2.
  const RewardResult walled = reward(far, g, cfg, info_with(0.0, 1));
  CHECK(walled.value == doctest::Approx(-2.0));
}

TEST_CASE("reward stays within its bounds") {
  RLConfig cfg;
  RandomStream rng(3);
  for (int i = 0; i < 2000; ++i) {
    Tensor a = Tensor::uniform({kLatentDim}, 1.0, rng);
    Tensor g = Tensor::uniform({kLatentDim}, 1.0, rng);
    const int walls = static_cast<int>(rng.uniform_int(4));
    const RewardResult r = reward(a, g, cfg, info_with(rng.uniform(0.0, 0.1), walls));
    CHECK(r.value <= 1.1);
    CHECK(r.value >= -1.0 - cfg.wall_penalty * walls);
  }
}

TEST_CASE("action normalization round-trips inside the bounds") {
  sim::EnvConfig cfg;
  RandomStream rng(4);
  for (int i = 0; i < 1000; ++i) {
    sim::PushAction a;
    a.x = rng.uniform(-cfg.table_w / 2, cfg.table_w / 2);
    a.y = rng.uniform(-cfg.table_h / 2, cfg.table_h / 2);
    a.theta = rng.uniform(-3.14159265358979, 3.14159265358979);
    a.d = rng.uniform(cfg.d_min, cfg.d_max);
    const auto n = normalize_action(a, cfg);
    for (double v : n) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
    const sim::PushAction back = denormalize_action(n, cfg);
    CHECK(back.x == doctest::Approx(a.x).epsilon(1e-12));
    CHECK(back.theta == doctest::Approx(a.theta).epsilon(1e-12));
    CHECK(back.d == doctest::Approx(a.d).epsilon(1e-12));
  }
}

TEST_CASE("policy actions satisfy the push-action invariants") {
  Actor actor(5);
  sim::EnvConfig cfg;
  RandomStream rng(6);
  const Tensor phi_o = Tensor::uniform({kLatentDim}, 1.0, rng);
  const Tensor phi_g = Tensor::uniform({kLatentDim}, 1.0, rng);
  const sim::Table table = cfg.table();
  for (int i = 0; i < 10000; ++i) {
    const sim::PushAction a = actor.act(phi_o, phi_g, PolicyMode::kTrain, rng, cfg);
    REQUIRE(std::abs(a.x) <= table.half_w());
    REQUIRE(std::abs(a.y) <= table.half_h());
    REQUIRE(std::abs(a.theta) <= 3.14159265358979323846);
    REQUIRE(a.d >= cfg.d_min);
    REQUIRE(a.d <= cfg.d_max);
  }
}

TEST_CASE("policy sampling is deterministic given the seed") {
  Actor actor(7);
  sim::EnvConfig cfg;
  RandomStream init(8);
  const Tensor phi_o = Tensor::uniform({kLatentDim}, 1.0, init);
  const Tensor phi_g = Tensor::uniform({kLatentDim}, 1.0, init);
  RandomStream r1(9), r2(9);
  const sim::PushAction a = actor.act(phi_o, phi_g, PolicyMode::kTrain, r1, cfg);
  const sim::PushAction b = actor.act(phi_o, phi_g, PolicyMode::kTrain, r2, cfg);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(a.theta == b.theta);
  CHECK(a.d == b.d);
}

TEST_CASE("eval mode halves the pre-squash standard deviation") {
  Actor actor(10);
  RandomStream init(11);
  const Tensor phi_o = Tensor::uniform({kLatentDim}, 1.0, init);
  const Tensor phi_g = Tensor::uniform({kLatentDim}, 1.0, init);
  const int n = 10000;
  RandomStream rng(12);

  std::array<std::vector<double>, 4> train_samples, eval_samples;
  for (int i = 0; i < n; ++i) {
    const auto zt = actor.presquash_sample(phi_o, phi_g, PolicyMode::kTrain, rng);
    const auto ze = actor.presquash_sample(phi_o, phi_g, PolicyMode::kEval, rng);
    for (int d = 0; d < 4; ++d) {
      train_samples[d].push_back(zt[d]);
      eval_samples[d].push_back(ze[d]);
    }
  }
  for (int d = 0; d < 4; ++d) {
    auto var = [](const std::vector<double>& xs) {
      double m = 0.0;
      for (double x : xs) m += x;
      m /= xs.size();
      double v = 0.0;
      for (double x : xs) v += (x - m) * (x - m);
      return v / xs.size();
    };
    const double ratio = var(eval_samples[d]) / var(train_samples[d]);
    CHECK(ratio > 0.2);
    CHECK(ratio < 0.3);
  }
}

TEST_CASE("replay buffer evicts FIFO at capacity") {
  ReplayBuffer buf(5);
  for (int i = 0; i < 8; ++i) {
    Transition t;
    t.reward = i;
    buf.push(std::move(t));
  }
  CHECK(buf.size() == 5);
  // 0,1,2 evicted; slots now hold {5,6,7,3,4}.
  std::vector<double> rewards;
  for (size_t i = 0; i < buf.size(); ++i) rewards.push_back(buf.at(i).reward);
  std::sort(rewards.begin(), rewards.end());
  CHECK(rewards == std::vector<double>{3, 4, 5, 6, 7});
}

TEST_CASE("polyak endpoints") {
  SacNetworks nets(13);
  RandomStream rng(14);
  // Desynchronize target and online nets first.
  for (const auto& name : nets.v_store.names()) {
    nets.v_store.get(name).add_scaled(Tensor::uniform(nets.v_store.get(name).shape(), 0.1, rng),
                                      1.0);
  }
  const uint64_t before = nets.v_target_store.content_hash();
  diff::polyak_update(nets.v_target_store, nets.v_store, 1.0);
  CHECK(nets.v_target_store.content_hash() == before);  // rho = 1 freezes the target

  diff::polyak_update(nets.v_target_store, nets.v_store, 0.0);
  CHECK(nets.v_target_store.content_hash() == nets.v_store.content_hash());  // rho = 0 copies
}

namespace {

std::vector<Transition> make_batch(int B, uint64_t seed) {
  RandomStream rng(seed);
  std::vector<Transition> batch(B);
  for (auto& t : batch) {
    t.phi_s = Tensor::uniform({kLatentDim}, 1.0, rng);
    t.phi_o = Tensor::uniform({kLatentDim}, 1.0, rng);
    t.phi_g = Tensor::uniform({kLatentDim}, 1.0, rng);
    t.phi_g_actor = t.phi_g;
    t.phi_s1 = Tensor::uniform({kLatentDim}, 1.0, rng);
    t.phi_o1 = Tensor::uniform({kLatentDim}, 1.0, rng);
    for (auto& a : t.action) a = rng.uniform(-0.9, 0.9);
    t.reward = rng.uniform(-1.0, 1.0);
    t.done = rng.bernoulli(0.1);
  }
  return batch;
}

std::vector<const Transition*> ptrs(const std::vector<Transition>& v) {
  std::vector<const Transition*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

}  // namespace

TEST_CASE("sac_update runs and critics ignore the observation embeddings") {
  RLConfig cfg;
  cfg.batch_size = 16;
  auto batch_a = make_batch(16, 100);
  auto batch_b = batch_a;
  RandomStream scramble(101);
  for (auto& t : batch_b) t.phi_o = Tensor::uniform({kLatentDim}, 1.0, scramble);

  SacNetworks n1(55);
  SacNetworks n2(55);
  RandomStream r1(7), r2(7);
  const SacLosses l1 = sac_update(n1, ptrs(batch_a), cfg, r1, true);
  const SacLosses l2 = sac_update(n2, ptrs(batch_b), cfg, r2, true);
  // Q losses are computed before the actor update touches anything, from
  // (phi_s, phi_g, a) only.
  CHECK(l1.q1_loss == l2.q1_loss);
  CHECK(l1.q2_loss == l2.q2_loss);
  // The actor consumes phi_o, so its loss moves.
  CHECK(l1.actor_loss != l2.actor_loss);
}

TEST_CASE("actor ignores the state embeddings") {
  Actor actor(77);
  RandomStream init(17);
  const Tensor phi_o = Tensor::uniform({kLatentDim}, 1.0, init);
  const Tensor phi_g = Tensor::uniform({kLatentDim}, 1.0, init);
  RandomStream ra(3), rb(3);
  // The interface admits no phi_s at all; sampling depends only on (phi_o,
  // phi_g, rng).
  const auto a = actor.sample_normalized(phi_o, phi_g, PolicyMode::kTrain, ra);
  const auto b = actor.sample_normalized(phi_o, phi_g, PolicyMode::kTrain, rb);
  CHECK(a == b);
}

TEST_CASE("sac gradient paths match finite differences") {
  RLConfig cfg;
  SacNetworks nets(21);
  auto batch = make_batch(4, 200);
  const int B = 4;
  Tensor critic_in({B, 2 * kLatentDim}), actor_in({B, 2 * kLatentDim}), actions({B, 4});
  Tensor targets({B});
  RandomStream rng(22);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < kLatentDim; ++i) {
      critic_in.at(b, i) = batch[b].phi_s[i];
      critic_in.at(b, kLatentDim + i) = batch[b].phi_g[i];
      actor_in.at(b, i) = batch[b].phi_o[i];
      actor_in.at(b, kLatentDim + i) = batch[b].phi_g_actor[i];
    }
    for (int i = 0; i < 4; ++i) actions.at(b, i) = batch[b].action[i];
    targets[b] = rng.uniform(-1.0, 1.0);
  }
  Tensor eps({B, 4});
  for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();

  SUBCASE("q head") {
    auto f = [&](Tape& t) {
      Var q = t.reshape(nets.q1_net(t, t.concat_last(t.input(critic_in), t.input(actions))), {B});
      Var err = t.sub(q, t.input(targets));
      return t.scale(t.mean_all(t.mul(err, err)), 0.5);
    };
    CHECK(grad_check(nets.q1_store, f, 1e-5, 8).max_rel_err < 1e-4);
  }
  SUBCASE("v head") {
    auto f = [&](Tape& t) {
      Var v = t.reshape(nets.v_net(t, t.input(critic_in)), {B});
      Var err = t.sub(v, t.input(targets));
      return t.scale(t.mean_all(t.mul(err, err)), 0.5);
    };
    CHECK(grad_check(nets.v_store, f, 1e-5, 8).max_rel_err < 1e-4);
  }
  SUBCASE("actor through sample, squash, and min-q") {
    auto f = [&](Tape& t) {
      ActorDist dist = actor_dist(t, nets.actor, t.input(actor_in));
      SampledAction s = sample_squashed(t, dist, eps);
      Var q_in = t.concat_last(t.input(critic_in), s.action);
      Var q_min = t.reshape(t.minimum(nets.q1_net(t, q_in), nets.q2_net(t, q_in)), {B});
      return t.mean_all(t.sub(t.scale(s.log_prob, cfg.entropy_alpha), q_min));
    };
    CHECK(grad_check(nets.actor.store, f, 1e-5, 8).max_rel_err < 1e-4);
  }
}

TEST_CASE("her relabeling: future goals, counting, and reward identity") {
  RLConfig cfg;
  cfg.epsilon = 1e-4;
  RandomStream rng(31);

  // Build a synthetic episode with distinguishable achieved states.
  const int L = 12;
  std::vector<Transition> episode(L);
  std::vector<Tensor> achieved_phi(L);
  for (int t = 0; t < L; ++t) {
    sim::SceneState s;
    s.centers = {{-0.3 + 0.05 * t, 0.1}};
    episode[t].achieved_state = s;
    achieved_phi[t] = fake_state_embed(s);
    episode[t].phi_s1 = achieved_phi[t];
    episode[t].phi_g = Tensor::uniform({kLatentDim}, 1.0, rng);
    episode[t].phi_g_actor = episode[t].phi_g;
    episode[t].phi_s = t > 0 ? achieved_phi[t - 1] : fake_state_embed(s);
    episode[t].info = info_with(0.0, 0);
  }

  const auto relabeled = her_relabel(episode, cfg.her_k, fake_state_embed, cfg, rng);
  CHECK(relabeled.size() == static_cast<size_t>(L * cfg.her_k));

  int own_goal_hits = 0;
  for (size_t i = 0; i < relabeled.size(); ++i) {
    const int t = static_cast<int>(i) / cfg.her_k;
    // Identify which achieved state became the goal.
    int src = -1;
    for (int u = 0; u < L; ++u) {
      if (cos_dist(relabeled[i].phi_g, achieved_phi[u]) < 1e-12) {
        src = u;
        break;
      }
    }
    REQUIRE(src >= t);  // future-state strategy
    // Oracle identity: stored reward equals direct recomputation.
    const RewardResult direct =
        reward(relabeled[i].phi_s1, relabeled[i].phi_g, cfg, relabeled[i].info);
    REQUIRE(relabeled[i].reward == direct.value);
    REQUIRE(relabeled[i].done == direct.success);
    if (src == t) {
      // Own achieved state: zero cosine distance, success, +1 base reward.
      REQUIRE(relabeled[i].done);
      REQUIRE(relabeled[i].reward == 1.0);
      ++own_goal_hits;
    }
  }
  CHECK(own_goal_hits > 0);
}

TEST_CASE("epsilon calibration: fixpoint, scale invariance, fallback table") {
  sim::EnvConfig env_cfg;
  env_cfg.n_objects = 3;

  StateEmbedFn base = fake_state_embed;
  StateEmbedFn scaled = [](const sim::SceneState& s) {
    Tensor t = fake_state_embed(s);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] *= 3.0;
    return t;
  };
  StateEmbedFn folded = [](const sim::SceneState& s) {
    Tensor t = fake_state_embed(s);
    // A different map with smaller distances.
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = 1.0 + 0.1 * t[i];
    return t;
  };

  const auto eps = calibrate_epsilon({{"ref", base}, {"scaled", scaled}, {"folded", folded}},
                                     "ref", 0.005, env_cfg, 256, 77);
  CHECK(eps.at("ref") == doctest::Approx(0.005).epsilon(1e-12));        // fixpoint
  CHECK(eps.at("scaled") == doctest::Approx(0.005).epsilon(1e-9));      // cos scale invariance
  CHECK(eps.at("folded") < 0.005);                                      // relative rescale

  const EpsilonTable table = EpsilonTable::published_defaults();
  CHECK(table.values.at("full") == 0.005);
  CHECK(table.values.at("autoencoder") == 0.2);
  CHECK(table.values.at("state_only") == 0.04);
  CHECK(table.values.at("dyn_only") == 0.004);
  CHECK(table.values.at("mlp") == 0.005);
}

TEST_CASE("run_maac smoke: buffer growth, episode accounting, frozen inputs") {
  RLConfig cfg;
  cfg.iterations = 30;
  cfg.n_envs = 2;
  cfg.max_episode_steps = 10;
  cfg.batch_size = 32;
  cfg.warmup_transitions = 64;
  cfg.updates_per_iter = 1;
  cfg.her_k = 4;
  cfg.epsilon = 1e-9;  // success practically unreachable with the fake embeds
  cfg.seed = 5;

  sim::EnvConfig env_cfg;
  env_cfg.n_objects = 2;

  MaacComponents comp;
  comp.state_embed = fake_state_embed;
  comp.obs_embed = fake_obs_embed;
  comp.goal_embed_critic = [](const sim::Goal& g, RandomStream&) {
    return fake_state_embed(g.goal_state);
  };

  const MaacResult res = run_maac(cfg, env_cfg, comp);
  CHECK(res.log.size() == 30);
  size_t prev = 0;
  for (const auto& row : res.log) {
    CHECK(row.buffer_size >= prev);  // monotone growth
    prev = row.buffer_size;
  }
  // Episodes all timeout at T=10; each finished episode contributes T*(1+k).
  CHECK(res.episodes == 2 * 3);  // 30 iters / 10 steps * 2 envs
  CHECK(res.log.back().buffer_size ==
        static_cast<size_t>(res.episodes) * 10 * (1 + cfg.her_k));
  CHECK(res.log.front().p_explore == 1.0);
}

TEST_CASE("run_maac with no annealing keeps scripted exploration at p=1") {
  RLConfig cfg;
  cfg.iterations = 8;
  cfg.n_envs = 1;
  cfg.max_episode_steps = 5;
  cfg.warmup_transitions = 1 << 20;  // no updates
  cfg.explore_anneal_frac = std::numeric_limits<double>::infinity();
  cfg.epsilon = 1e-9;
  cfg.her_k = 1;
  sim::EnvConfig env_cfg;
  env_cfg.n_objects = 1;

  MaacComponents comp;
  comp.state_embed = fake_state_embed;
  comp.obs_embed = fake_obs_embed;
  comp.goal_embed_critic = [](const sim::Goal& g, RandomStream&) {
    return fake_state_embed(g.goal_state);
  };
  const MaacResult res = run_maac(cfg, env_cfg, comp);
  for (const auto& row : res.log) CHECK(row.p_explore == 1.0);
}
