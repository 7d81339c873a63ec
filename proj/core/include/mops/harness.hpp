#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mops/dataset.hpp"
#include "mops/encoders.hpp"
#include "mops/heads.hpp"
#include "mops/rl.hpp"

namespace mops::harness {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;
using diff::Var;

// ---------------------------------------------------------------------------
// Variants and run configuration

enum class Variant {
  kFull,
  kStateOnly,
  kDynOnly,
  kAutoencoder,
  kMlp,
  kNoAttentionCnn,
  kImageGoal,
};

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

enum class Scale { kDesk, kPaper };

struct CollectConfig {
  sim::EnvConfig env;
  int n_transitions = 50000;
  int episode_len = 50;
  bool store_canonical = true;
  sim::InitMode init = sim::InitMode::kMixed;
  uint64_t seed = 0;
};

struct TrainConfig {
  Variant variant = Variant::kFull;
  double lr = 3e-4;
  int batch_size = 16;
  int iterations = 5000;
  int eval_interval = 250;
  int holdout_count = 2000;   // records held out of training
  int eval_subset = 256;      // held-out records scored per eval
  double phi_noise = 0.1;     // embedding noise before the heads
  bool augment_images = true; // contrast + pixel noise on CNN inputs
  int mlp_max_n = 20;
  uint64_t seed = 0;

  static TrainConfig desk() { return {}; }
  static TrainConfig paper() {
    TrainConfig cfg;
    cfg.batch_size = 512;
    cfg.iterations = 75000;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Supervised models (one encoder family + its heads on a pinned store)

struct Model {
  enum class Arch { kGnn, kCnn, kCnnNoAttention, kMlp };
  enum class Objective { kFull, kStateOnly, kDynOnly, kReconstruction };

  Arch arch;
  Objective objective = Objective::kFull;
  std::unique_ptr<ParamStore> store;
  std::optional<enc::GnnEncoder> gnn;
  std::optional<enc::CnnEncoder> cnn;
  std::optional<enc::MlpEncoder> mlp;
  std::optional<heads::MdnHead> mdn;
  std::optional<heads::DynHeads> dyn;
  std::optional<heads::ConvDecoder> decoder;

  static std::unique_ptr<Model> create(Arch arch, Objective objective, uint64_t seed,
                                       int mlp_max_n = 20);

  bool consumes_images() const { return arch == Arch::kCnn || arch == Arch::kCnnNoAttention; }
  std::string tag() const;

  void save(const std::string& path) const;
  static std::unique_ptr<Model> load(const std::string& path, int mlp_max_n = 20);

  // Latent for a raw state/observation (inference path, no augmentation).
  Tensor embed_state(const sim::SceneState& s) const;
  Tensor embed_obs(const render::Observation& o) const;
  Tensor embed_obs_batch(std::span<const render::Observation> o) const;
};

// ---------------------------------------------------------------------------
// Pipeline stages

// Scripted-policy collection with domain-randomized and canonical renders.
void collect_dataset(const CollectConfig& cfg, const std::string& out_dir);

struct NllPoint {
  int iteration = 0;
  double train_loss = 0.0;
  double holdout_metric = 0.0;  // held-out MDN NLL (reconstruction loss for AE)
};

struct TrainResult {
  std::string state_model_path;
  std::string obs_model_path;
  std::vector<NllPoint> state_curve;
  std::vector<NllPoint> obs_curve;
};

// Trains the variant's state-side and image-side models on a dataset and
// writes checkpoints + NLL curve CSVs under out_dir.
TrainResult train_encoders(const std::string& dataset_dir, const TrainConfig& cfg,
                           const std::string& out_dir);

// Trains one model (used by the ordering acceptance check).
std::vector<NllPoint> train_single_model(Model& model, const data::Dataset& dataset,
                                         const TrainConfig& cfg);

// Wiring of frozen encoders into the RL components per variant.
struct EncoderPack {
  std::unique_ptr<Model> state_model;
  std::unique_ptr<Model> obs_model;

  rl::MaacComponents components(Variant variant, bool domain_randomization = true,
                                bool asymmetric = true, uint64_t goal_render_salt = 0) const;
};

EncoderPack load_encoders(const std::string& run_dir, int mlp_max_n = 20);

// ---------------------------------------------------------------------------
// Evaluation

struct PolicyContext {
  const sim::SceneState& state;
  const sim::Goal& goal;
  const Tensor& phi_o;
  const Tensor& phi_g;
  RandomStream& rng;
  const sim::EnvConfig& env;
};
using PolicyFn = std::function<sim::PushAction(const PolicyContext&)>;

struct EvalConfig {
  int n_trials = 100;
  sim::InitMode init = sim::InitMode::kCluster;
  int max_steps = 50;  // the real-robot protocol caps at 15 pushes
  bool domain_randomization = true;
  uint64_t seed = 0;
};

struct TrialRow {
  int trial = 0;
  int steps = 0;
  bool success = false;
};

struct EvalResult {
  int n_trials = 0;
  double success_rate = 0.0;  // undefined (NaN) when n_trials == 0
  std::vector<TrialRow> trials;
};

// Ground-truth evaluation: success is goal_region_success on the raw state,
// never the embedding threshold.
EvalResult evaluate(const PolicyFn& policy, const rl::MaacComponents& comp,
                    const sim::EnvConfig& env_cfg, const EvalConfig& cfg);

// Stock policies.
PolicyFn actor_policy(const rl::Actor& actor, rl::PolicyMode mode);
PolicyFn scripted_policy();
// Pushes stray objects straight toward the goal region center.
PolicyFn oracle_policy();

// ---------------------------------------------------------------------------
// Ablations

struct AblationCell {
  bool aac = true;
  bool domrand = true;
  double success_rate = 0.0;
  int episodes = 0;
};

// {AAC, no-AAC} x {DomRand, no-DomRand} under shared seeds.
std::vector<AblationCell> run_ablation_grid(const EncoderPack& pack, const rl::RLConfig& rl_cfg,
                                            const sim::EnvConfig& env_cfg,
                                            const EvalConfig& eval_cfg,
                                            const std::string& out_dir);

// ---------------------------------------------------------------------------
// Gradient suite

struct GradSuiteEntry {
  std::string component;
  double max_rel_err = 0.0;
  int params_checked = 0;
};

// Central finite-difference checks over every differentiable component:
// MHDPA, gated aggregation, CNN stack, MDN head, dynamics heads, SAC heads,
// and the autoencoder decoder.
std::vector<GradSuiteEntry> run_gradient_suite(uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Run artifacts

std::string default_out_dir();  // $MOPS_OUT_DIR or ./runs
void write_manifest(const std::string& run_dir, const std::string& command,
                    const nlohmann::json& config);
void write_metrics_csv(const std::string& path, const std::vector<rl::MetricsRow>& log);
void write_nll_csv(const std::string& path, const std::vector<NllPoint>& curve);
void write_eval_csv(const std::string& path, const EvalResult& result);
// Minimal polyline chart for quick inspection.
void write_svg_chart(const std::string& path, const std::string& title,
                     const std::vector<double>& ys);

}  // namespace mops::harness
