// mops: tabletop multi-object pushing, grounded set encoders, and
// asymmetric actor-critic training.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mops/harness.hpp"
#include "mops/image_io.hpp"

using namespace mops;

namespace {

struct CommonArgs {
  uint64_t seed = 0;
  std::string out_dir;
  std::string scale = "desk";
  int n_objects = 0;  // 0: keep per-command default
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--seed", args.seed, "Master seed");
  cmd->add_option("--out-dir", args.out_dir, "Run directory (default $MOPS_OUT_DIR or ./runs)");
  cmd->add_option("--scale", args.scale, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--n-objects", args.n_objects, "Object count override");
}

std::string resolve_out_dir(const CommonArgs& args, const std::string& leaf) {
  if (!args.out_dir.empty()) return args.out_dir;
  return harness::default_out_dir() + "/" + leaf;
}

sim::InitMode init_mode_from(const std::string& s) {
  if (s == "uniform") return sim::InitMode::kUniform;
  if (s == "cluster") return sim::InitMode::kCluster;
  return sim::InitMode::kMixed;
}

double default_epsilon(const std::string& variant) {
  const auto table = rl::EpsilonTable::published_defaults().values;
  const auto it = table.find(variant);
  return it != table.end() ? it->second : table.at("full");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-object pushing: simulator, grounded set encoders, MAAC training"};
  app.require_subcommand(1);

  // collect ------------------------------------------------------------
  CommonArgs collect_args;
  int collect_n = 50000;
  int episode_len = 50;
  bool no_canonical = false;
  std::string env_config_path;
  auto* collect = app.add_subcommand("collect", "Scripted-policy dataset collection");
  add_common(collect, collect_args);
  collect->add_option("--n", collect_n, "Transition count");
  collect->add_option("--episode-len", episode_len, "Steps per scripted episode");
  collect->add_flag("--no-canonical", no_canonical, "Skip canonical renders");
  collect->add_option("--env-config", env_config_path, "Key-value environment config file");
  std::string collect_init = "mixed";
  collect->add_option("--init-dist", collect_init, "uniform|cluster|mixed")
      ->check(CLI::IsMember({"uniform", "cluster", "mixed"}));

  // train-encoders ------------------------------------------------------
  CommonArgs tenc_args;
  std::string tenc_dataset, tenc_variant = "full";
  int tenc_iterations = 0, tenc_batch = 0;
  auto* tenc = app.add_subcommand("train-encoders", "Supervised representation training");
  add_common(tenc, tenc_args);
  tenc->add_option("--dataset", tenc_dataset, "Dataset directory")->required();
  tenc->add_option("--variant", tenc_variant,
                   "full|state_only|dyn_only|autoencoder|mlp|no_attention_cnn|image_goal");
  tenc->add_option("--iterations", tenc_iterations, "Override iteration count");
  tenc->add_option("--batch", tenc_batch, "Override batch size");

  // train-rl -------------------------------------------------------------
  CommonArgs trl_args;
  std::string trl_encoders, trl_variant = "full";
  int trl_iterations = 0, trl_steps_per_iter = 0, trl_updates = 0;
  double trl_epsilon = -1.0;
  bool trl_no_domrand = false, trl_no_aac = false, trl_calibrate = false, trl_svg = false;
  auto* trl = app.add_subcommand("train-rl", "Goal-conditioned MAAC training");
  add_common(trl, trl_args);
  trl->add_option("--encoders", trl_encoders, "Encoder run directory")->required();
  trl->add_option("--variant", trl_variant, "Model variant tag");
  trl->add_option("--iterations", trl_iterations, "Override iteration count");
  trl->add_option("--steps-per-iter", trl_steps_per_iter, "Env steps per env per iteration");
  trl->add_option("--updates-per-iter", trl_updates, "SAC updates per iteration");
  trl->add_option("--epsilon", trl_epsilon, "Success threshold (default: published table)");
  trl->add_flag("--calibrate-eps", trl_calibrate, "Calibrate epsilon against the state encoder");
  trl->add_flag("--no-domrand", trl_no_domrand, "Disable domain randomization");
  trl->add_flag("--no-aac", trl_no_aac, "Symmetric critics (image embeddings)");
  trl->add_flag("--svg", trl_svg, "Emit SVG charts");
  std::string trl_init = "mixed";
  trl->add_option("--init-dist", trl_init, "uniform|cluster|mixed")
      ->check(CLI::IsMember({"uniform", "cluster", "mixed"}));

  // eval -----------------------------------------------------------------
  CommonArgs eval_args;
  std::string eval_encoders, eval_policy = "scripted", eval_init = "cluster";
  int eval_trials = 100, eval_max_steps = 50;
  bool eval_no_domrand = false, eval_svg = false;
  auto* eval_cmd = app.add_subcommand("eval", "Ground-truth goal-area evaluation");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--encoders", eval_encoders, "Encoder run directory")->required();
  eval_cmd->add_option("--policy", eval_policy, "RL run directory, or scripted|untrained|oracle");
  eval_cmd->add_option("--init-dist", eval_init, "uniform|cluster|mixed")
      ->check(CLI::IsMember({"uniform", "cluster", "mixed"}));
  eval_cmd->add_option("--trials", eval_trials, "Trial count");
  eval_cmd->add_option("--max-steps", eval_max_steps, "Push cap (50 desk, 15 robot protocol)");
  eval_cmd->add_flag("--no-domrand", eval_no_domrand, "Disable domain randomization");
  eval_cmd->add_flag("--svg", eval_svg, "Emit SVG charts");

  // ablate -----------------------------------------------------------------
  CommonArgs abl_args;
  std::string abl_encoders;
  int abl_iterations = 0, abl_trials = 100;
  auto* abl = app.add_subcommand("ablate", "AAC x DomRand ablation grid");
  add_common(abl, abl_args);
  abl->add_option("--encoders", abl_encoders, "Encoder run directory")->required();
  abl->add_option("--iterations", abl_iterations, "RL iterations per cell");
  abl->add_option("--trials", abl_trials, "Eval trials per cell");

  // calibrate-eps ------------------------------------------------------------
  CommonArgs cal_args;
  std::vector<std::string> cal_encoders;
  std::vector<std::string> cal_names;
  std::string cal_reference = "full";
  double cal_reference_eps = 0.005;
  int cal_pairs = 4096;
  bool cal_published = false;
  auto* cal = app.add_subcommand("calibrate-eps", "Per-model success-threshold calibration");
  add_common(cal, cal_args);
  cal->add_option("--encoders", cal_encoders, "Encoder run directories (state side used)");
  cal->add_option("--names", cal_names, "Model names matching --encoders");
  cal->add_option("--reference", cal_reference, "Reference model name");
  cal->add_option("--reference-eps", cal_reference_eps, "Reference epsilon");
  cal->add_option("--n-pairs", cal_pairs, "Probe transition pairs");
  cal->add_flag("--published", cal_published, "Print the published fallback table and exit");

  // grad-check -----------------------------------------------------------------
  CommonArgs gc_args;
  double gc_tol = 1e-4;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  add_common(gc, gc_args);
  gc->add_option("--tol", gc_tol, "Max relative error tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*collect) {
      harness::CollectConfig cfg;
      if (!env_config_path.empty()) cfg.env = sim::EnvConfig::load(env_config_path);
      if (collect_args.n_objects > 0) cfg.env.n_objects = collect_args.n_objects;
      cfg.n_transitions = collect_args.scale == "paper" ? 1000000 : collect_n;
      if (collect->count("--n")) cfg.n_transitions = collect_n;
      cfg.episode_len = episode_len;
      cfg.store_canonical = !no_canonical;
      cfg.seed = collect_args.seed;
      cfg.env.seed = collect_args.seed;
      cfg.init = init_mode_from(collect_init);
      const std::string dir = resolve_out_dir(collect_args, "dataset");
      harness::collect_dataset(cfg, dir);
      nlohmann::json j{{"n_transitions", cfg.n_transitions},
                       {"episode_len", cfg.episode_len},
                       {"store_canonical", cfg.store_canonical},
                       {"n_objects", cfg.env.n_objects},
                       {"seed", cfg.seed},
                       {"init_dist", collect_init},
                       {"scale", collect_args.scale}};
      harness::write_manifest(dir, "collect", j);
      std::cout << "collected " << cfg.n_transitions << " transitions -> " << dir << "\n";
    } else if (*tenc) {
      harness::TrainConfig cfg = tenc_args.scale == "paper" ? harness::TrainConfig::paper()
                                                            : harness::TrainConfig::desk();
      cfg.variant = harness::variant_from_string(tenc_variant);
      cfg.seed = tenc_args.seed;
      if (tenc_iterations > 0) cfg.iterations = tenc_iterations;
      if (tenc_batch > 0) cfg.batch_size = tenc_batch;
      const std::string dir = resolve_out_dir(tenc_args, "encoders_" + tenc_variant);
      const harness::TrainResult res = harness::train_encoders(tenc_dataset, cfg, dir);
      nlohmann::json j{{"variant", tenc_variant}, {"iterations", cfg.iterations},
                       {"batch_size", cfg.batch_size}, {"lr", cfg.lr},
                       {"seed", cfg.seed},           {"scale", tenc_args.scale},
                       {"dataset", tenc_dataset}};
      harness::write_manifest(dir, "train-encoders", j);
      std::cout << "state model: " << res.state_model_path << "\n"
                << "obs model:   " << res.obs_model_path << "\n";
      if (!res.state_curve.empty()) {
        std::cout << "final holdout metric (state side): "
                  << res.state_curve.back().holdout_metric << "\n";
      }
      if (!res.obs_curve.empty()) {
        std::cout << "final holdout metric (obs side):   " << res.obs_curve.back().holdout_metric
                  << "\n";
      }
    } else if (*trl) {
      const harness::Variant variant = harness::variant_from_string(trl_variant);
      harness::EncoderPack pack = harness::load_encoders(trl_encoders);
      rl::RLConfig cfg = trl_args.scale == "paper" ? rl::RLConfig::paper_scale() : rl::RLConfig{};
      cfg.seed = trl_args.seed;
      if (trl_iterations > 0) cfg.iterations = trl_iterations;
      if (trl_steps_per_iter > 0) cfg.steps_per_env_per_iter = trl_steps_per_iter;
      if (trl_updates > 0) cfg.updates_per_iter = trl_updates;
      cfg.epsilon = trl_epsilon > 0 ? trl_epsilon : default_epsilon(trl_variant);
      cfg.init_mode = init_mode_from(trl_init);

      sim::EnvConfig env_cfg;
      env_cfg.n_objects = trl_args.n_objects > 0 ? trl_args.n_objects : 3;
      const rl::MaacComponents comp =
          pack.components(variant, !trl_no_domrand, !trl_no_aac, cfg.seed);
      if (trl_calibrate) {
        const auto eps = rl::calibrate_epsilon(
            {{"model", comp.her_goal_embed ? comp.her_goal_embed : comp.state_embed},
             {"reference",
              [&pack](const sim::SceneState& s) { return pack.state_model->embed_state(s); }}},
            "reference", cfg.epsilon, env_cfg, 4096, cfg.seed ^ 0xca1ull);
        cfg.epsilon = eps.at("model");
        std::cout << "calibrated epsilon: " << cfg.epsilon << "\n";
      }

      const std::string dir = resolve_out_dir(trl_args, "rl_" + trl_variant);
      std::filesystem::create_directories(dir);
      const rl::MaacResult res = rl::run_maac(cfg, env_cfg, comp);
      harness::write_metrics_csv(dir + "/metrics.csv", res.log);
      res.nets->actor.store.save(dir + "/actor.ckpt", "actor");
      res.nets->v_store.save(dir + "/v.ckpt", "v");
      res.nets->v_target_store.save(dir + "/v_target.ckpt", "v_target");
      res.nets->q1_store.save(dir + "/q1.ckpt", "q1");
      res.nets->q2_store.save(dir + "/q2.ckpt", "q2");
      if (trl_svg) {
        std::vector<double> success;
        for (const auto& row : res.log) success.push_back(row.success_rate);
        harness::write_svg_chart(dir + "/success_rate.svg", "train success rate", success);
      }
      nlohmann::json j{{"variant", trl_variant},   {"iterations", cfg.iterations},
                       {"epsilon", cfg.epsilon},   {"n_objects", env_cfg.n_objects},
                       {"init_dist", trl_init},
                       {"domrand", !trl_no_domrand}, {"aac", !trl_no_aac},
                       {"seed", cfg.seed},         {"scale", trl_args.scale},
                       {"encoders", trl_encoders}};
      harness::write_manifest(dir, "train-rl", j);
      std::cout << "episodes: " << res.episodes
                << " train success (last-100): " << res.log.back().success_rate << " -> " << dir
                << "\n";
    } else if (*eval_cmd) {
      harness::EncoderPack pack = harness::load_encoders(eval_encoders);
      const rl::MaacComponents comp =
          pack.components(harness::Variant::kFull, !eval_no_domrand, true, eval_args.seed);
      harness::EvalConfig cfg;
      cfg.n_trials = eval_trials;
      cfg.init = init_mode_from(eval_init);
      cfg.max_steps = eval_max_steps;
      cfg.domain_randomization = !eval_no_domrand;
      cfg.seed = eval_args.seed;
      sim::EnvConfig env_cfg;
      env_cfg.n_objects = eval_args.n_objects > 0 ? eval_args.n_objects : 3;

      harness::PolicyFn policy;
      std::unique_ptr<rl::Actor> actor;
      if (eval_policy == "scripted") {
        policy = harness::scripted_policy();
      } else if (eval_policy == "oracle") {
        policy = harness::oracle_policy();
      } else if (eval_policy == "untrained") {
        actor = std::make_unique<rl::Actor>(eval_args.seed);
        policy = harness::actor_policy(*actor, rl::PolicyMode::kEval);
      } else {
        actor = std::make_unique<rl::Actor>(0);
        diff::copy_params(actor->store, diff::ParamStore::load(eval_policy + "/actor.ckpt"));
        policy = harness::actor_policy(*actor, rl::PolicyMode::kEval);
      }

      const harness::EvalResult res = harness::evaluate(policy, comp, env_cfg, cfg);
      const std::string dir = resolve_out_dir(eval_args, "eval");
      std::filesystem::create_directories(dir);
      harness::write_eval_csv(dir + "/trials.csv", res);
      if (eval_svg) {
        std::vector<double> steps;
        for (const auto& tr : res.trials) steps.push_back(tr.steps);
        harness::write_svg_chart(dir + "/steps.svg", "steps per trial", steps);
      }
      nlohmann::json j{{"policy", eval_policy},     {"trials", cfg.n_trials},
                       {"init_dist", eval_init},    {"max_steps", cfg.max_steps},
                       {"n_objects", env_cfg.n_objects}, {"domrand", !eval_no_domrand},
                       {"seed", cfg.seed},          {"encoders", eval_encoders}};
      harness::write_manifest(dir, "eval", j);
      if (res.n_trials == 0) {
        std::cout << "success rate: undefined (0 trials) -> " << dir << "\n";
      } else {
        std::cout << "success rate: " << res.success_rate << " (" << res.n_trials
                  << " trials) -> " << dir << "\n";
      }
    } else if (*abl) {
      harness::EncoderPack pack = harness::load_encoders(abl_encoders);
      rl::RLConfig cfg;
      cfg.seed = abl_args.seed;
      if (abl_iterations > 0) cfg.iterations = abl_iterations;
      sim::EnvConfig env_cfg;
      env_cfg.n_objects = abl_args.n_objects > 0 ? abl_args.n_objects : 3;
      harness::EvalConfig eval_cfg;
      eval_cfg.n_trials = abl_trials;
      eval_cfg.seed = abl_args.seed;
      const std::string dir = resolve_out_dir(abl_args, "ablation");
      const auto cells = harness::run_ablation_grid(pack, cfg, env_cfg, eval_cfg, dir);
      nlohmann::json j{{"iterations", cfg.iterations}, {"trials", abl_trials},
                       {"n_objects", env_cfg.n_objects}, {"seed", cfg.seed},
                       {"encoders", abl_encoders}};
      harness::write_manifest(dir, "ablate", j);
      for (const auto& c : cells) {
        std::cout << (c.aac ? "aac" : "sym") << (c.domrand ? "+dr" : "-dr") << ": "
                  << c.success_rate << "\n";
      }
    } else if (*cal) {
      if (cal_published || cal_encoders.empty()) {
        std::cout << "published epsilon table:\n";
        for (const auto& [name, eps] : rl::EpsilonTable::published_defaults().values) {
          std::cout << "  " << name << ": " << eps << "\n";
        }
        return 0;
      }
      if (cal_names.size() != cal_encoders.size()) {
        throw std::invalid_argument("--names must match --encoders");
      }
      std::vector<harness::EncoderPack> packs;
      std::vector<std::pair<std::string, rl::StateEmbedFn>> models;
      for (size_t i = 0; i < cal_encoders.size(); ++i) {
        packs.push_back(harness::load_encoders(cal_encoders[i]));
      }
      for (size_t i = 0; i < packs.size(); ++i) {
        const harness::Model* m = packs[i].state_model.get();
        models.emplace_back(cal_names[i],
                            [m](const sim::SceneState& s) { return m->embed_state(s); });
      }
      sim::EnvConfig env_cfg;
      if (cal_args.n_objects > 0) env_cfg.n_objects = cal_args.n_objects;
      const auto eps = rl::calibrate_epsilon(models, cal_reference, cal_reference_eps, env_cfg,
                                             cal_pairs, cal_args.seed);
      const std::string dir = resolve_out_dir(cal_args, "calibration");
      std::filesystem::create_directories(dir);
      nlohmann::json out;
      for (const auto& [name, e] : eps) {
        out[name] = e;
        std::cout << name << ": " << e << "\n";
      }
      std::ofstream f(dir + "/epsilon.json", std::ios::binary);
      f << out.dump(2) << "\n";
      harness::write_manifest(dir, "calibrate-eps",
                              nlohmann::json{{"reference", cal_reference},
                                             {"reference_eps", cal_reference_eps},
                                             {"n_pairs", cal_pairs},
                                             {"seed", cal_args.seed}});
    } else if (*gc) {
      const auto entries = harness::run_gradient_suite(gc_args.seed);
      bool ok = true;
      for (const auto& e : entries) {
        const bool pass = e.max_rel_err < gc_tol;
        ok = ok && pass;
        std::printf("%-22s max_rel_err=%.3e (%d elems) %s\n", e.component.c_str(), e.max_rel_err,
                    e.params_checked, pass ? "ok" : "FAIL");
      }
      if (!gc_args.out_dir.empty()) {
        harness::write_manifest(gc_args.out_dir, "grad-check", nlohmann::json{{"tol", gc_tol}});
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
