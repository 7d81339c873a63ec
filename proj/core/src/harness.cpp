#include "mops/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "mops/grad_check.hpp"

namespace mops::harness {

namespace {

constexpr const char* kVariantNames[] = {"full",  "state_only", "dyn_only", "autoencoder",
                                         "mlp",   "no_attention_cnn", "image_goal"};

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

nlohmann::json env_to_json(const sim::EnvConfig& e) {
  return {{"n_objects", e.n_objects},     {"table_w", e.table_w},
          {"table_h", e.table_h},         {"object_radius", e.object_radius},
          {"paddle_width", e.paddle_width}, {"d_min", e.d_min},
          {"d_max", e.d_max},             {"cluster_side", e.cluster_side},
          {"seed", e.seed}};
}

}  // namespace

Variant variant_from_string(const std::string& s) {
  for (int i = 0; i < 7; ++i) {
    if (s == kVariantNames[i]) return static_cast<Variant>(i);
  }
  throw std::invalid_argument("unknown variant: " + s);
}

std::string to_string(Variant v) { return kVariantNames[static_cast<int>(v)]; }

// ---------------------------------------------------------------------------
// Model

namespace {

std::string arch_name(Model::Arch a) {
  switch (a) {
    case Model::Arch::kGnn: return "gnn";
    case Model::Arch::kCnn: return "cnn";
    case Model::Arch::kCnnNoAttention: return "cnn_no_attention";
    case Model::Arch::kMlp: return "mlp";
  }
  return "?";
}

std::string objective_name(Model::Objective o) {
  switch (o) {
    case Model::Objective::kFull: return "full";
    case Model::Objective::kStateOnly: return "state_only";
    case Model::Objective::kDynOnly: return "dyn_only";
    case Model::Objective::kReconstruction: return "reconstruction";
  }
  return "?";
}

Model::Arch arch_from_name(const std::string& s) {
  if (s == "gnn") return Model::Arch::kGnn;
  if (s == "cnn") return Model::Arch::kCnn;
  if (s == "cnn_no_attention") return Model::Arch::kCnnNoAttention;
  if (s == "mlp") return Model::Arch::kMlp;
  throw std::invalid_argument("unknown arch tag: " + s);
}

Model::Objective objective_from_name(const std::string& s) {
  if (s == "full") return Model::Objective::kFull;
  if (s == "state_only") return Model::Objective::kStateOnly;
  if (s == "dyn_only") return Model::Objective::kDynOnly;
  if (s == "reconstruction") return Model::Objective::kReconstruction;
  throw std::invalid_argument("unknown objective tag: " + s);
}

}  // namespace

std::unique_ptr<Model> Model::create(Arch arch, Objective objective, uint64_t seed, int mlp_max_n) {
  auto m = std::make_unique<Model>();
  m->arch = arch;
  m->objective = objective;
  m->store = std::make_unique<ParamStore>();
  RandomStream rng(seed);
  switch (arch) {
    case Arch::kGnn: m->gnn = enc::GnnEncoder::create(*m->store, rng); break;
    case Arch::kCnn: m->cnn = enc::CnnEncoder::create(*m->store, rng, true); break;
    case Arch::kCnnNoAttention: m->cnn = enc::CnnEncoder::create(*m->store, rng, false); break;
    case Arch::kMlp: m->mlp = enc::MlpEncoder::create(*m->store, rng, mlp_max_n); break;
  }
  if (objective == Objective::kReconstruction) {
    m->decoder = heads::ConvDecoder::create(*m->store, "dec", rng);
  } else {
    m->mdn = heads::MdnHead::create(*m->store, "mdn", rng);
    // A broad initial spread keeps early mixtures from collapsing.
    m->store->get("mdn.logvar.b").fill(-3.0);
    m->dyn = heads::DynHeads::create(*m->store, "dyn", rng);
  }
  return m;
}

std::string Model::tag() const { return arch_name(arch) + "+" + objective_name(objective); }

void Model::save(const std::string& path) const { store->save(path, tag()); }

std::unique_ptr<Model> Model::load(const std::string& path, int mlp_max_n) {
  std::string tag;
  ParamStore loaded = ParamStore::load(path, &tag);
  const auto plus = tag.find('+');
  if (plus == std::string::npos) throw std::runtime_error("Model::load: bad tag in " + path);
  auto m = create(arch_from_name(tag.substr(0, plus)), objective_from_name(tag.substr(plus + 1)),
                  /*seed=*/0, mlp_max_n);
  diff::copy_params(*m->store, loaded);
  return m;
}

Tensor Model::embed_state(const sim::SceneState& s) const {
  if (gnn) return gnn->encode(s);
  if (mlp) return mlp->encode(s);
  throw std::logic_error("Model::embed_state: not a state-side model");
}

Tensor Model::embed_obs(const render::Observation& o) const {
  if (!cnn) throw std::logic_error("Model::embed_obs: not an image-side model");
  return cnn->encode(o);
}

Tensor Model::embed_obs_batch(std::span<const render::Observation> o) const {
  if (!cnn) throw std::logic_error("Model::embed_obs_batch: not an image-side model");
  return cnn->encode_batch(o);
}

// ---------------------------------------------------------------------------
// Collection

void collect_dataset(const CollectConfig& cfg, const std::string& out_dir) {
  sim::validate(cfg.env);
  nlohmann::json meta;
  meta["env"] = env_to_json(cfg.env);
  meta["n_transitions"] = cfg.n_transitions;
  meta["episode_len"] = cfg.episode_len;
  meta["store_canonical"] = cfg.store_canonical;
  meta["seed"] = cfg.seed;
  meta["init"] = cfg.init == sim::InitMode::kMixed
                     ? "mixed"
                     : (cfg.init == sim::InitMode::kUniform ? "uniform" : "cluster");
  meta["quantization"] = "u8";
  data::DatasetWriter writer(out_dir, meta);

  sim::Environment env(cfg.env, cfg.seed, cfg.init);
  RandomStream param_seeds(cfg.seed ^ 0x6d6f70735f647200ull);

  int written = 0;
  while (written < cfg.n_transitions) {
    const uint64_t ep_seed = param_seeds.raw();
    RandomStream ep_rng(ep_seed);
    const render::RandParams params = render::sample_domain_randomization(ep_rng);

    uint64_t obs_prev = writer.add_observation(render::render(env.state(), nullptr, params));
    int64_t canon_prev =
        cfg.store_canonical
            ? static_cast<int64_t>(writer.add_observation(render::render_canonical(env.state())))
            : -1;

    for (int step = 0; step < cfg.episode_len && written < cfg.n_transitions; ++step) {
      data::DatasetRecord rec;
      rec.state_t = env.state().centers;
      const sim::PushAction a = env.scripted();
      env.apply(a);
      rec.state_t1 = env.state().centers;
      rec.action = {a.x, a.y, a.theta, a.d};
      rec.rand_seed = ep_seed;
      rec.obs_t = obs_prev;
      rec.obs_t1 = writer.add_observation(render::render(env.state(), nullptr, params));
      rec.canon_t = canon_prev;
      rec.canon_t1 = cfg.store_canonical ? static_cast<int64_t>(writer.add_observation(
                                               render::render_canonical(env.state())))
                                         : -1;
      writer.add_record(rec);
      obs_prev = rec.obs_t1;
      canon_prev = rec.canon_t1;
      ++written;
    }
    env.reset();
  }
  writer.finalize();
}

// ---------------------------------------------------------------------------
// Supervised training

namespace {

struct BatchData {
  Tensor coords_t, coords_t1;    // [B,n,2] normalized
  Tensor centers_t, centers_t1;  // [B,n,2] meters
  Tensor obs_t, obs_t1;          // [B,3,84,84]
  Tensor canon_t, canon_t1;      // [B,3,84,84]
  Tensor actions;                // [B,4] normalized
};

BatchData make_batch(const data::Dataset& ds, const std::vector<size_t>& idx,
                     const sim::EnvConfig& env_cfg, bool need_images, bool need_canonical,
                     bool augment, RandomStream* aug_rng) {
  const int B = static_cast<int>(idx.size());
  const int n = static_cast<int>(ds.record(idx[0]).state_t.size());
  const sim::Table table = env_cfg.table();

  BatchData b;
  b.coords_t = Tensor({B, n, 2});
  b.coords_t1 = Tensor({B, n, 2});
  b.centers_t = Tensor({B, n, 2});
  b.centers_t1 = Tensor({B, n, 2});
  b.actions = Tensor({B, 4});
  std::vector<render::Observation> obs_t, obs_t1, canon_t, canon_t1;

  for (int i = 0; i < B; ++i) {
    const data::DatasetRecord& rec = ds.record(idx[i]);
    if (static_cast<int>(rec.state_t.size()) != n) {
      throw std::invalid_argument("make_batch: ragged object counts");
    }
    for (int j = 0; j < n; ++j) {
      b.centers_t.at(i, j, 0) = rec.state_t[j].x;
      b.centers_t.at(i, j, 1) = rec.state_t[j].y;
      b.centers_t1.at(i, j, 0) = rec.state_t1[j].x;
      b.centers_t1.at(i, j, 1) = rec.state_t1[j].y;
      b.coords_t.at(i, j, 0) = rec.state_t[j].x / table.half_w();
      b.coords_t.at(i, j, 1) = rec.state_t[j].y / table.half_h();
      b.coords_t1.at(i, j, 0) = rec.state_t1[j].x / table.half_w();
      b.coords_t1.at(i, j, 1) = rec.state_t1[j].y / table.half_h();
    }
    sim::PushAction a{rec.action[0], rec.action[1], rec.action[2], rec.action[3]};
    const auto norm = rl::normalize_action(a, env_cfg);
    for (int j = 0; j < 4; ++j) b.actions.at(i, j) = norm[j];

    if (need_images) {
      render::Observation o0 = ds.load_observation(rec.obs_t);
      render::Observation o1 = ds.load_observation(rec.obs_t1);
      if (augment && aug_rng) {
        render::augment(o0, *aug_rng);
        render::augment(o1, *aug_rng);
      }
      obs_t.push_back(std::move(o0));
      obs_t1.push_back(std::move(o1));
    }
    if (need_canonical) {
      if (rec.canon_t < 0 || rec.canon_t1 < 0) {
        throw std::runtime_error("make_batch: dataset lacks canonical renders");
      }
      canon_t.push_back(ds.load_observation(static_cast<uint64_t>(rec.canon_t)));
      canon_t1.push_back(ds.load_observation(static_cast<uint64_t>(rec.canon_t1)));
    }
  }
  if (need_images) {
    b.obs_t = enc::obs_tensor_batch(obs_t);
    b.obs_t1 = enc::obs_tensor_batch(obs_t1);
  }
  if (need_canonical) {
    b.canon_t = enc::obs_tensor_batch(canon_t);
    b.canon_t1 = enc::obs_tensor_batch(canon_t1);
  }
  return b;
}

Var encode_batch(Tape& t, const Model& m, const BatchData& b, bool t1) {
  if (m.gnn) return (*m.gnn)(t, t.input(t1 ? b.coords_t1 : b.coords_t));
  if (m.mlp) return (*m.mlp)(t, t.input(t1 ? b.coords_t1 : b.coords_t));
  return (*m.cnn)(t, t.input(t1 ? b.obs_t1 : b.obs_t));
}

Var build_loss(Tape& t, const Model& m, const BatchData& b, const TrainConfig& cfg, bool training,
               RandomStream* noise_rng) {
  Var phi_t = encode_batch(t, m, b, false);
  Var phi_t1 = encode_batch(t, m, b, true);
  if (training && cfg.phi_noise > 0.0 && noise_rng) {
    const auto& shape = t.value(phi_t).shape();
    phi_t = t.add(phi_t, t.input(Tensor::normal(shape, 0.0, cfg.phi_noise, *noise_rng)));
    phi_t1 = t.add(phi_t1, t.input(Tensor::normal(shape, 0.0, cfg.phi_noise, *noise_rng)));
  }
  switch (m.objective) {
    case Model::Objective::kFull:
      return heads::loss_full(t, *m.mdn, *m.dyn, phi_t, phi_t1, t.input(b.actions), b.centers_t,
                              b.centers_t1);
    case Model::Objective::kStateOnly: {
      Var ls_t = heads::loss_state(t, *m.mdn, phi_t, b.centers_t);
      Var ls_t1 = heads::loss_state(t, *m.mdn, phi_t1, b.centers_t1);
      return t.scale(t.add(ls_t, ls_t1), 0.5);
    }
    case Model::Objective::kDynOnly:
      return heads::loss_dyn(t, *m.dyn, phi_t, t.input(b.actions), phi_t1);
    case Model::Objective::kReconstruction: {
      Var r_t = heads::autoencoder_loss(t, *m.decoder, phi_t, b.canon_t);
      Var r_t1 = heads::autoencoder_loss(t, *m.decoder, phi_t1, b.canon_t1);
      return t.scale(t.add(r_t, r_t1), 0.5);
    }
  }
  throw std::logic_error("build_loss: unreachable");
}

// Held-out score: MDN NLL at the t endpoint (reconstruction loss for AE).
double holdout_metric(const Model& m, const data::Dataset& ds, const std::vector<size_t>& idx,
                      const sim::EnvConfig& env_cfg, int batch_size) {
  double total = 0.0;
  size_t count = 0;
  for (size_t start = 0; start < idx.size(); start += batch_size) {
    const size_t end = std::min(idx.size(), start + batch_size);
    std::vector<size_t> chunk(idx.begin() + start, idx.begin() + end);
    const bool img = m.consumes_images();
    const bool canon = m.objective == Model::Objective::kReconstruction;
    const BatchData b = make_batch(ds, chunk, env_cfg, img, canon, false, nullptr);
    Tape t;
    Var phi = encode_batch(t, m, b, false);
    Var metric;
    if (canon) {
      metric = heads::autoencoder_loss(t, *m.decoder, phi, b.canon_t);
    } else {
      metric = heads::loss_state(t, *m.mdn, phi, b.centers_t);
    }
    total += t.value(metric)[0] * static_cast<double>(chunk.size());
    count += chunk.size();
  }
  return total / static_cast<double>(count);
}

}  // namespace

std::vector<NllPoint> train_single_model(Model& model, const data::Dataset& dataset,
                                         const TrainConfig& cfg) {
  if (dataset.size() < 16) throw std::invalid_argument("train_single_model: dataset too small");
  const sim::EnvConfig env_cfg = dataset.env_config();
  const int holdout = std::min<int>(cfg.holdout_count, static_cast<int>(dataset.size()) / 5);
  const size_t train_n = dataset.size() - holdout;

  std::vector<size_t> eval_idx;
  for (int i = 0; i < std::min(cfg.eval_subset, holdout); ++i) eval_idx.push_back(train_n + i);

  RandomStream batch_rng(cfg.seed);
  RandomStream aug_rng(cfg.seed ^ 0xa0a0a0a0ull);
  RandomStream noise_rng(cfg.seed ^ 0x5151515151ull);
  const diff::AdamConfig adam{cfg.lr};
  const bool img = model.consumes_images();
  const bool canon = model.objective == Model::Objective::kReconstruction;

  std::vector<NllPoint> curve;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<size_t> idx(cfg.batch_size);
    for (auto& i : idx) i = batch_rng.uniform_int(train_n);
    const BatchData b = make_batch(dataset, idx, env_cfg, img, canon, cfg.augment_images, &aug_rng);
    Tape t;
    Var loss = build_loss(t, model, b, cfg, true, &noise_rng);
    t.backward(loss);
    model.store->adam_step(t.param_grads(*model.store), adam);
    const double train_loss = t.value(loss)[0];
    if (!std::isfinite(train_loss)) {
      throw std::runtime_error("train_single_model: non-finite loss at iteration " +
                               std::to_string(iter));
    }
    if (iter % cfg.eval_interval == 0 || iter + 1 == cfg.iterations) {
      NllPoint p;
      p.iteration = iter;
      p.train_loss = train_loss;
      p.holdout_metric = eval_idx.empty()
                             ? std::numeric_limits<double>::quiet_NaN()
                             : holdout_metric(model, dataset, eval_idx, env_cfg, cfg.batch_size);
      curve.push_back(p);
    }
  }
  return curve;
}

namespace {

struct VariantPlan {
  Model::Arch state_arch;
  Model::Objective state_obj;
  Model::Arch obs_arch;
  Model::Objective obs_obj;
};

VariantPlan plan_for(Variant v) {
  using A = Model::Arch;
  using O = Model::Objective;
  switch (v) {
    case Variant::kFull:
    case Variant::kImageGoal: return {A::kGnn, O::kFull, A::kCnn, O::kFull};
    case Variant::kStateOnly: return {A::kGnn, O::kStateOnly, A::kCnn, O::kStateOnly};
    case Variant::kDynOnly: return {A::kGnn, O::kDynOnly, A::kCnn, O::kDynOnly};
    case Variant::kAutoencoder: return {A::kGnn, O::kReconstruction, A::kCnn, O::kReconstruction};
    case Variant::kMlp: return {A::kMlp, O::kFull, A::kCnn, O::kFull};
    case Variant::kNoAttentionCnn: return {A::kGnn, O::kFull, A::kCnnNoAttention, O::kFull};
  }
  throw std::logic_error("plan_for: unreachable");
}

}  // namespace

TrainResult train_encoders(const std::string& dataset_dir, const TrainConfig& cfg,
                           const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const data::Dataset dataset = data::Dataset::open(dataset_dir);
  const VariantPlan plan = plan_for(cfg.variant);

  TrainResult result;
  auto state_model = Model::create(plan.state_arch, plan.state_obj, cfg.seed, cfg.mlp_max_n);
  result.state_curve = train_single_model(*state_model, dataset, cfg);
  result.state_model_path = out_dir + "/state_model.ckpt";
  state_model->save(result.state_model_path);
  write_nll_csv(out_dir + "/nll_curve_state.csv", result.state_curve);

  TrainConfig obs_cfg = cfg;
  obs_cfg.seed = cfg.seed + 1;
  auto obs_model = Model::create(plan.obs_arch, plan.obs_obj, obs_cfg.seed, cfg.mlp_max_n);
  result.obs_curve = train_single_model(*obs_model, dataset, obs_cfg);
  result.obs_model_path = out_dir + "/obs_model.ckpt";
  obs_model->save(result.obs_model_path);
  write_nll_csv(out_dir + "/nll_curve_obs.csv", result.obs_curve);
  return result;
}

EncoderPack load_encoders(const std::string& run_dir, int mlp_max_n) {
  EncoderPack pack;
  pack.state_model = Model::load(run_dir + "/state_model.ckpt", mlp_max_n);
  pack.obs_model = Model::load(run_dir + "/obs_model.ckpt", mlp_max_n);
  return pack;
}

rl::MaacComponents EncoderPack::components(Variant variant, bool domain_randomization,
                                           bool asymmetric, uint64_t goal_render_salt) const {
  const Model* sm = state_model.get();
  const Model* om = obs_model.get();
  if (!sm || !om) throw std::logic_error("EncoderPack::components: models not loaded");

  rl::MaacComponents c;
  c.domain_randomization = domain_randomization;
  c.asymmetric = asymmetric;
  c.state_embed = [sm](const sim::SceneState& s) { return sm->embed_state(s); };
  c.obs_embed = [om](const render::Observation& o) { return om->embed_obs(o); };
  c.obs_embed_batch = [om](std::span<const render::Observation> o) {
    return om->embed_obs_batch(o);
  };

  auto image_goal_embed = [om, domain_randomization](const sim::Goal& g, RandomStream& rng) {
    const render::RandParams p = domain_randomization ? render::sample_domain_randomization(rng)
                                                      : render::RandParams{};
    return om->embed_obs(render::render(g.goal_state, nullptr, p));
  };
  auto image_state_embed = [om](const sim::SceneState& s) {
    return om->embed_obs(render::render(s, nullptr, render::RandParams{}));
  };
  (void)goal_render_salt;

  if (asymmetric) {
    c.goal_embed_critic = [sm](const sim::Goal& g, RandomStream&) {
      return sm->embed_state(g.goal_state);
    };
    c.her_goal_embed = c.state_embed;
  } else {
    // Symmetric ablation: rewards and critics live in the image embedding
    // space.
    c.goal_embed_critic = image_goal_embed;
    c.her_goal_embed = image_state_embed;
  }
  if (variant == Variant::kImageGoal && asymmetric) {
    c.goal_embed_actor = image_goal_embed;
    c.her_actor_goal_embed = image_state_embed;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(const PolicyFn& policy, const rl::MaacComponents& comp,
                    const sim::EnvConfig& env_cfg, const EvalConfig& cfg) {
  EvalResult res;
  res.n_trials = cfg.n_trials;
  if (cfg.n_trials == 0) {
    res.success_rate = std::numeric_limits<double>::quiet_NaN();
    return res;
  }

  RandomStream master(cfg.seed);
  int successes = 0;
  for (int trial = 0; trial < cfg.n_trials; ++trial) {
    sim::Environment env(env_cfg, master.raw(), cfg.init);
    RandomStream trial_rng = master.spawn();
    const render::RandParams params = cfg.domain_randomization
                                          ? render::sample_domain_randomization(trial_rng)
                                          : render::RandParams{};
    const Tensor phi_g = comp.goal_embed_actor
                             ? comp.goal_embed_actor(env.goal(), trial_rng)
                             : comp.goal_embed_critic(env.goal(), trial_rng);

    bool success = false;
    int steps = 0;
    while (steps < cfg.max_steps) {
      if (sim::goal_region_success(env.state(), env.goal())) {
        success = true;
        break;
      }
      const Tensor phi_o = comp.obs_embed(render::render(env.state(), nullptr, params));
      const PolicyContext ctx{env.state(), env.goal(), phi_o, phi_g, trial_rng, env_cfg};
      env.apply(policy(ctx));
      ++steps;
    }
    if (!success) success = sim::goal_region_success(env.state(), env.goal());
    res.trials.push_back({trial, steps, success});
    if (success) ++successes;
  }
  res.success_rate = static_cast<double>(successes) / cfg.n_trials;
  return res;
}

PolicyFn actor_policy(const rl::Actor& actor, rl::PolicyMode mode) {
  const rl::Actor* a = &actor;
  return [a, mode](const PolicyContext& ctx) {
    return a->act(ctx.phi_o, ctx.phi_g, mode, ctx.rng, ctx.env);
  };
}

PolicyFn scripted_policy() {
  return [](const PolicyContext& ctx) { return sim::scripted_action(ctx.state, ctx.env, ctx.rng); };
}

PolicyFn oracle_policy() {
  return [](const PolicyContext& ctx) {
    const sim::Goal& goal = ctx.goal;
    const double half = 0.5 * goal.region_side;
    // Push the object farthest from the region center that is still outside.
    int target = -1;
    double best = -1.0;
    for (int i = 0; i < ctx.state.n(); ++i) {
      const sim::Vec2 c = ctx.state.centers[i];
      const bool outside = std::abs(c.x - goal.region_center.x) > half ||
                           std::abs(c.y - goal.region_center.y) > half;
      const double dist = (c - goal.region_center).norm();
      if (outside && dist > best) {
        best = dist;
        target = i;
      }
    }
    if (target < 0) target = 0;
    const sim::Vec2 obj = ctx.state.centers[target];
    const sim::Vec2 to_goal = goal.region_center - obj;
    const double dist = to_goal.norm();
    const double theta = std::atan2(to_goal.y, to_goal.x);

    sim::PushAction a;
    const sim::Table table = ctx.env.table();
    const sim::Vec2 heading{std::cos(theta), std::sin(theta)};
    a.x = std::clamp(obj.x - ctx.env.paddle_width * heading.x, -table.half_w(), table.half_w());
    a.y = std::clamp(obj.y - ctx.env.paddle_width * heading.y, -table.half_h(), table.half_h());
    a.theta = theta;
    const double gap = ctx.env.paddle_width - ctx.env.object_radius;
    a.d = std::clamp(gap + dist, ctx.env.d_min, ctx.env.d_max);
    return a;
  };
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<AblationCell> run_ablation_grid(const EncoderPack& pack, const rl::RLConfig& rl_cfg,
                                            const sim::EnvConfig& env_cfg,
                                            const EvalConfig& eval_cfg,
                                            const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<AblationCell> cells;
  for (const bool aac : {true, false}) {
    for (const bool domrand : {true, false}) {
      rl::MaacComponents comp = pack.components(Variant::kFull, domrand, aac);
      rl::RLConfig cell_cfg = rl_cfg;
      if (!aac) {
        // The image-side embedding space needs its own threshold.
        const auto eps = rl::calibrate_epsilon(
            {{"state", comp.her_goal_embed}, {"reference", [&](const sim::SceneState& s) {
                return pack.state_model->embed_state(s);
              }}},
            "reference", rl_cfg.epsilon, env_cfg, 1024, rl_cfg.seed ^ 0xabcdull);
        cell_cfg.epsilon = eps.at("state");
      }
      const rl::MaacResult run = rl::run_maac(cell_cfg, env_cfg, comp);
      EvalConfig ec = eval_cfg;
      ec.domain_randomization = domrand;
      const EvalResult ev =
          evaluate(actor_policy(run.nets->actor, rl::PolicyMode::kEval), comp, env_cfg, ec);

      AblationCell cell;
      cell.aac = aac;
      cell.domrand = domrand;
      cell.success_rate = ev.success_rate;
      cell.episodes = run.episodes;
      cells.push_back(cell);

      const std::string name = std::string(aac ? "aac" : "sym") + (domrand ? "_dr" : "_nodr");
      write_metrics_csv(out_dir + "/metrics_" + name + ".csv", run.log);
    }
  }
  std::ofstream out(out_dir + "/ablation.csv", std::ios::binary);
  out << "aac,domrand,success_rate,episodes\n";
  for (const auto& c : cells) {
    out << (c.aac ? 1 : 0) << "," << (c.domrand ? 1 : 0) << "," << format_double(c.success_rate)
        << "," << c.episodes << "\n";
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Gradient suite

std::vector<GradSuiteEntry> run_gradient_suite(uint64_t seed) {
  std::vector<GradSuiteEntry> entries;
  auto record = [&entries](const std::string& name, const diff::GradCheckReport& report) {
    GradSuiteEntry e;
    e.component = name;
    e.max_rel_err = report.max_rel_err;
    for (const auto& p : report.params) e.params_checked += p.checked_elems;
    entries.push_back(e);
  };

  {
    RandomStream rng(seed + 1);
    ParamStore s;
    enc::MhdpaBlock block = enc::MhdpaBlock::create(s, "blk", rng);
    const Tensor nodes = Tensor::uniform({2, 5, enc::kModelDim}, 0.8, rng);
    record("mhdpa_block", diff::grad_check(s, [&](Tape& t) {
      Var out = block(t, t.input(nodes));
      return t.mean_all(t.mul(out, out));
    }, 1e-5, 4, seed));
  }
  {
    RandomStream rng(seed + 2);
    ParamStore s;
    enc::GatedAggregate agg = enc::GatedAggregate::create(s, "agg", rng);
    const Tensor nodes = Tensor::uniform({2, 6, enc::kModelDim}, 0.8, rng);
    record("gated_aggregate", diff::grad_check(s, [&](Tape& t) {
      Var out = agg(t, t.input(nodes));
      return t.mean_all(t.mul(out, out));
    }, 1e-5, 8, seed));
  }
  {
    RandomStream rng(seed + 3);
    ParamStore s;
    enc::CnnEncoder cnn = enc::CnnEncoder::create(s, rng);
    const Tensor img = Tensor::uniform({1, 3, render::kImageSize, render::kImageSize}, 0.5, rng);
    record("cnn_stack", diff::grad_check(s, [&](Tape& t) {
      Var out = cnn(t, t.input(img));
      return t.mean_all(t.mul(out, out));
    }, 1e-5, 2, seed));
  }
  {
    RandomStream rng(seed + 4);
    ParamStore s;
    heads::MdnHead mdn = heads::MdnHead::create(s, "mdn", rng);
    const Tensor phi = Tensor::uniform({2, enc::kLatentDim}, 1.0, rng);
    Tensor centers({2, 4, 2});
    for (int64_t i = 0; i < centers.numel(); ++i) centers[i] = rng.uniform(-0.3, 0.3);
    record("mdn_head", diff::grad_check(s, [&](Tape& t) {
      return heads::loss_state(t, mdn, t.input(phi), centers);
    }, 1e-5, 8, seed));
  }
  {
    RandomStream rng(seed + 5);
    ParamStore s;
    heads::DynHeads dyn = heads::DynHeads::create(s, "dyn", rng);
    const Tensor phi_t = Tensor::uniform({2, enc::kLatentDim}, 1.0, rng);
    const Tensor phi_t1 = Tensor::uniform({2, enc::kLatentDim}, 1.0, rng);
    const Tensor act = Tensor::uniform({2, 4}, 0.9, rng);
    record("dynamics_heads", diff::grad_check(s, [&](Tape& t) {
      return heads::loss_dyn(t, dyn, t.input(phi_t), t.input(act), t.input(phi_t1));
    }, 1e-5, 8, seed));
  }
  {
    RandomStream rng(seed + 6);
    rl::SacNetworks nets(seed + 6);
    const int B = 3;
    const Tensor critic_in = Tensor::uniform({B, 2 * rl::kLatentDim}, 1.0, rng);
    const Tensor actor_in = Tensor::uniform({B, 2 * rl::kLatentDim}, 1.0, rng);
    const Tensor actions = Tensor::uniform({B, 4}, 0.9, rng);
    const Tensor targets = Tensor::uniform({B}, 1.0, rng);
    Tensor eps({B, 4});
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();

    record("sac_q_head", diff::grad_check(nets.q1_store, [&](Tape& t) {
      Var q = t.reshape(nets.q1_net(t, t.concat_last(t.input(critic_in), t.input(actions))), {B});
      Var err = t.sub(q, t.input(targets));
      return t.scale(t.mean_all(t.mul(err, err)), 0.5);
    }, 1e-5, 6, seed));
    record("sac_v_head", diff::grad_check(nets.v_store, [&](Tape& t) {
      Var v = t.reshape(nets.v_net(t, t.input(critic_in)), {B});
      Var err = t.sub(v, t.input(targets));
      return t.scale(t.mean_all(t.mul(err, err)), 0.5);
    }, 1e-5, 6, seed));
    record("sac_actor_path", diff::grad_check(nets.actor.store, [&](Tape& t) {
      rl::ActorDist dist = rl::actor_dist(t, nets.actor, t.input(actor_in));
      rl::SampledAction sampled = rl::sample_squashed(t, dist, eps);
      Var q_in = t.concat_last(t.input(critic_in), sampled.action);
      Var q_min = t.reshape(t.minimum(nets.q1_net(t, q_in), nets.q2_net(t, q_in)), {B});
      return t.mean_all(t.sub(t.scale(sampled.log_prob, 0.1), q_min));
    }, 1e-5, 6, seed));
  }
  {
    RandomStream rng(seed + 7);
    ParamStore s;
    heads::ConvDecoder dec = heads::ConvDecoder::create(s, "dec", rng);
    const Tensor phi = Tensor::uniform({1, enc::kLatentDim}, 1.0, rng);
    Tensor target({1, 3, render::kImageSize, render::kImageSize});
    for (int64_t i = 0; i < target.numel(); ++i) target[i] = (i % 5 == 0) ? 1.0 : 0.0;
    record("autoencoder_decoder", diff::grad_check(s, [&](Tape& t) {
      return heads::autoencoder_loss(t, dec, t.input(phi), target);
    }, 1e-5, 2, seed));
  }
  return entries;
}

// ---------------------------------------------------------------------------
// Artifacts

std::string default_out_dir() {
  const char* env = std::getenv("MOPS_OUT_DIR");
  return env && *env ? env : "runs";
}

void write_manifest(const std::string& run_dir, const std::string& command,
                    const nlohmann::json& config) {
  std::filesystem::create_directories(run_dir);
  nlohmann::json manifest;
  manifest["command"] = command;
  manifest["config"] = config;
  manifest["config_hash"] = fnv1a(config.dump());
  manifest["mops_version"] = "0.1.0";
  manifest["checkpoint_format"] = 1;
  manifest["dataset_format"] = 1;
  std::ofstream out(run_dir + "/manifest.json", std::ios::binary);
  out << manifest.dump(2) << "\n";
}

void write_metrics_csv(const std::string& path, const std::vector<rl::MetricsRow>& log) {
  std::ofstream out(path, std::ios::binary);
  out << "iteration,episodes,success_rate,mean_return,actor_loss,q1_loss,q2_loss,v_loss,"
         "p_explore,buffer_size\n";
  for (const auto& r : log) {
    out << r.iteration << "," << r.episodes << "," << format_double(r.success_rate) << ","
        << format_double(r.mean_return) << "," << format_double(r.actor_loss) << ","
        << format_double(r.q1_loss) << "," << format_double(r.q2_loss) << ","
        << format_double(r.v_loss) << "," << format_double(r.p_explore) << "," << r.buffer_size
        << "\n";
  }
}

void write_nll_csv(const std::string& path, const std::vector<NllPoint>& curve) {
  std::ofstream out(path, std::ios::binary);
  out << "iteration,train_loss,holdout_nll\n";
  for (const auto& p : curve) {
    out << p.iteration << "," << format_double(p.train_loss) << ","
        << format_double(p.holdout_metric) << "\n";
  }
}

void write_eval_csv(const std::string& path, const EvalResult& result) {
  std::ofstream out(path, std::ios::binary);
  out << "trial,steps,success\n";
  for (const auto& t : result.trials) {
    out << t.trial << "," << t.steps << "," << (t.success ? 1 : 0) << "\n";
  }
}

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::vector<double>& ys) {
  const int W = 640, H = 320, pad = 40;
  std::ofstream out(path, std::ios::binary);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << pad << "\" y=\"20\" font-family=\"monospace\">" << title << "</text>\n";
  if (ys.size() >= 2) {
    double lo = ys[0], hi = ys[0];
    for (double y : ys) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < ys.size(); ++i) {
      const double x = pad + (W - 2.0 * pad) * i / (ys.size() - 1);
      const double y = H - pad - (H - 2.0 * pad) * (ys[i] - lo) / (hi - lo);
      out << x << "," << y << " ";
    }
    out << "\"/>\n";
    out << "<text x=\"" << pad << "\" y=\"" << H - 8 << "\" font-family=\"monospace\" font-size=\"10\">min "
        << format_double(lo) << " max " << format_double(hi) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace mops::harness
