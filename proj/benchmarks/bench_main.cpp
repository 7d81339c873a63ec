#include <benchmark/benchmark.h>

#include "mops/nn.hpp"
#include "mops/sim.hpp"
#include "mops/tape.hpp"
#include "mops/encoders.hpp"
#include "mops/heads.hpp"
#include "mops/param_store.hpp"

using namespace mops;
using namespace mops::diff;

static void BM_SimStep(benchmark::State& state) {
  sim::EnvConfig cfg;
  cfg.n_objects = static_cast<int>(state.range(0));
  RandomStream rng(1);
  auto [scene, goal] = sim::sample_initial(cfg, rng);
  (void)goal;
  for (auto _ : state) {
    const sim::PushAction a = sim::scripted_action(scene, cfg, rng);
    auto [next, info] = sim::step(scene, a, cfg.paddle_width);
    benchmark::DoNotOptimize(info.max_displacement);
    scene = next;
  }
}
BENCHMARK(BM_SimStep)->Arg(3)->Arg(10)->Arg(20);

static void BM_MatmulTape(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  RandomStream rng(2);
  ParamStore s;
  nn::Linear lin = nn::Linear::create(s, "l", n, n, rng);
  const Tensor x = Tensor::uniform({n, n}, 1.0, rng);
  for (auto _ : state) {
    Tape t;
    Var y = t.mean_all(lin(t, t.input(x)));
    t.backward(y);
    benchmark::DoNotOptimize(t.value(y)[0]);
  }
}
BENCHMARK(BM_MatmulTape)->Arg(128)->Arg(512);

static void BM_CnnTrainIter(benchmark::State& state) {
  const int B = static_cast<int>(state.range(0));
  RandomStream rng(3);
  ParamStore s;
  enc::CnnEncoder cnn = enc::CnnEncoder::create(s, rng);
  heads::MdnHead mdn = heads::MdnHead::create(s, "mdn", rng);
  heads::DynHeads dyn = heads::DynHeads::create(s, "dyn", rng);
  const Tensor img_t = Tensor::uniform({B, 3, 84, 84}, 0.5, rng);
  const Tensor img_t1 = Tensor::uniform({B, 3, 84, 84}, 0.5, rng);
  const Tensor act = Tensor::uniform({B, 4}, 0.9, rng);
  Tensor centers({B, 5, 2});
  for (int64_t i = 0; i < centers.numel(); ++i) centers[i] = rng.uniform(-0.3, 0.3);
  AdamConfig adam{3e-4};
  for (auto _ : state) {
    Tape t;
    Var phi_t = cnn(t, t.input(img_t));
    Var phi_t1 = cnn(t, t.input(img_t1));
    Var loss = heads::loss_full(t, mdn, dyn, phi_t, phi_t1, t.input(act), centers, centers);
    t.backward(loss);
    s.adam_step(t.param_grads(s), adam);
    benchmark::DoNotOptimize(t.value(loss)[0]);
  }
}
BENCHMARK(BM_CnnTrainIter)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_CnnForwardOnly(benchmark::State& state) {
  const int B = static_cast<int>(state.range(0));
  RandomStream rng(3);
  ParamStore s;
  enc::CnnEncoder cnn = enc::CnnEncoder::create(s, rng);
  const Tensor img = Tensor::uniform({B, 3, 84, 84}, 0.5, rng);
  for (auto _ : state) {
    Tape t;
    Var phi = cnn(t, t.input(img));
    benchmark::DoNotOptimize(t.value(phi)[0]);
  }
}
BENCHMARK(BM_CnnForwardOnly)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
