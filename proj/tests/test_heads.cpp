#include <cmath>

#include "doctest.h"
#include "mops/grad_check.hpp"
#include "mops/heads.hpp"

using namespace mops;
using namespace mops::diff;
using namespace mops::heads;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Tensor random_phi(RandomStream& rng, int b = 1) {
  return Tensor::uniform({b, enc::kLatentDim}, 1.0, rng);
}

}  // namespace

TEST_CASE("mdn_params: alpha simplex and clamped variances") {
  RandomStream rng(1);
  ParamStore s;
  MdnHead head = MdnHead::create(s, "mdn", rng);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor phi = Tensor::uniform({enc::kLatentDim}, 2.0, rng);
    const MdnParams m = mdn_params(head, s, phi);
    double sum = 0.0;
    for (int k = 0; k < head.k; ++k) {
      sum += m.alpha[k];
      CHECK(m.var.at(k, 0) >= 1e-6);
      CHECK(m.var.at(k, 0) <= 1.0);
      CHECK(m.var.at(k, 1) >= 1e-6);
      CHECK(m.var.at(k, 1) <= 1.0);
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("mdn_params: zero head and zero phi give uniform weights") {
  RandomStream rng(2);
  ParamStore s;
  MdnHead head = MdnHead::create(s, "mdn", rng);
  for (const auto& name : s.names()) s.get(name).fill(0.0);
  const MdnParams m = mdn_params(head, s, Tensor({enc::kLatentDim}));
  for (int k = 0; k < head.k; ++k) {
    CHECK(m.alpha[k] == doctest::Approx(1.0 / head.k).epsilon(1e-12));
  }
}

TEST_CASE("mdn_log_prob of a unit Gaussian at its mean") {
  MdnParams m;
  m.alpha = Tensor::from({1}, {1.0});
  m.mu = Tensor::from({1, 2}, {0.3, -0.2});
  m.var = Tensor::from({1, 2}, {1.0, 1.0});
  CHECK(mdn_log_prob(m, 0.3, -0.2) == doctest::Approx(-kLog2Pi).epsilon(1e-12));
  // Far point has vanishing density.
  CHECK(mdn_log_prob(m, 0.3 + 100.0, -0.2) < -100.0);
}

TEST_CASE("mdn density integrates to one on a +-6 sigma grid") {
  RandomStream rng(3);
  ParamStore s;
  MdnHead head = MdnHead::create(s, "mdn", rng);
  const MdnParams m = mdn_params(head, s, Tensor::uniform({enc::kLatentDim}, 1.0, rng));

  double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9, max_sigma = 0.0, min_sigma = 1e9;
  for (int k = 0; k < head.k; ++k) {
    const double sx = std::sqrt(m.var.at(k, 0));
    const double sy = std::sqrt(m.var.at(k, 1));
    lo_x = std::min(lo_x, m.mu.at(k, 0) - 6.0 * sx);
    hi_x = std::max(hi_x, m.mu.at(k, 0) + 6.0 * sx);
    lo_y = std::min(lo_y, m.mu.at(k, 1) - 6.0 * sy);
    hi_y = std::max(hi_y, m.mu.at(k, 1) + 6.0 * sy);
    max_sigma = std::max({max_sigma, sx, sy});
    min_sigma = std::min({min_sigma, sx, sy});
  }
  const double h = min_sigma / 4.0;
  const int nx = static_cast<int>((hi_x - lo_x) / h) + 1;
  const int ny = static_cast<int>((hi_y - lo_y) / h) + 1;
  double integral = 0.0;
  for (int ix = 0; ix < nx; ++ix) {
    for (int iy = 0; iy < ny; ++iy) {
      const double x = lo_x + (ix + 0.5) * h;
      const double y = lo_y + (iy + 0.5) * h;
      integral += std::exp(mdn_log_prob(m, x, y)) * h * h;
    }
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("state loss equals log(2 pi) for a centered unit mixture") {
  // K=1 mixture pinned at the object with unit variances, fed straight to the
  // fused objective.
  Tape t;
  Var alpha_logits = t.input(Tensor({1, 1}));
  Var mu = t.input(Tensor::from({1, 1, 2}, {0.25, -0.1}));
  Var logvar = t.input(Tensor({1, 1, 2}));
  Tensor centers = Tensor::from({1, 1, 2}, {0.25, -0.1});
  Var loss = t.mdn_nll(alpha_logits, mu, logvar, centers);
  CHECK(t.value(loss)[0] == doctest::Approx(kLog2Pi).epsilon(1e-12));
}

TEST_CASE("duplicating the center list leaves the state loss unchanged") {
  RandomStream rng(4);
  ParamStore s;
  MdnHead head = MdnHead::create(s, "mdn", rng);
  const Tensor phi = random_phi(rng);
  Tensor centers({1, 3, 2});
  for (int i = 0; i < 6; ++i) centers[i] = rng.uniform(-0.3, 0.3);
  Tensor doubled({1, 6, 2});
  for (int i = 0; i < 6; ++i) {
    doubled[i] = centers[i];
    doubled[6 + i] = centers[i];
  }
  Tape t1, t2;
  const double a = t1.value(loss_state(t1, head, t1.input(phi), centers))[0];
  const double b = t2.value(loss_state(t2, head, t2.input(phi), doubled))[0];
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("state loss is invariant under center permutations") {
  RandomStream rng(5);
  ParamStore s;
  MdnHead head = MdnHead::create(s, "mdn", rng);
  const Tensor phi = random_phi(rng);
  Tensor centers({1, 4, 2});
  for (int i = 0; i < 8; ++i) centers[i] = rng.uniform(-0.3, 0.3);
  Tensor reversed({1, 4, 2});
  for (int i = 0; i < 4; ++i) {
    reversed.at(0, i, 0) = centers.at(0, 3 - i, 0);
    reversed.at(0, i, 1) = centers.at(0, 3 - i, 1);
  }
  Tape t1, t2;
  const double a = t1.value(loss_state(t1, head, t1.input(phi), centers))[0];
  const double b = t2.value(loss_state(t2, head, t2.input(phi), reversed))[0];
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("state loss matches a naive direct-summation oracle") {
  RandomStream rng(6);
  ParamStore s;
  MdnHead head = MdnHead::create(s, "mdn", rng);
  const int B = 3, n = 5;
  const Tensor phi = random_phi(rng, B);
  Tensor centers({B, n, 2});
  for (int64_t i = 0; i < centers.numel(); ++i) centers[i] = rng.uniform(-0.35, 0.35);

  Tape t;
  const double impl = t.value(loss_state(t, head, t.input(phi), centers))[0];

  // Naive oracle: densities summed directly, no log-sum-exp path.
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    Tensor phi_b({enc::kLatentDim});
    for (int i = 0; i < enc::kLatentDim; ++i) phi_b[i] = phi.at(b, i);
    const MdnParams m = mdn_params(head, s, phi_b);
    for (int i = 0; i < n; ++i) {
      double p = 0.0;
      for (int k = 0; k < head.k; ++k) {
        const double dx = centers.at(b, i, 0) - m.mu.at(k, 0);
        const double dy = centers.at(b, i, 1) - m.mu.at(k, 1);
        const double vx = m.var.at(k, 0), vy = m.var.at(k, 1);
        p += m.alpha[k] * std::exp(-0.5 * (dx * dx / vx + dy * dy / vy)) /
             (2.0 * 3.14159265358979323846 * std::sqrt(vx * vy));
      }
      total += std::log(p);
    }
  }
  const double oracle = -total / (B * n);
  CHECK(impl == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("mdn head gradients match finite differences") {
  RandomStream rng(7);
  ParamStore s;
  MdnHead head = MdnHead::create(s, "mdn", rng);
  const Tensor phi = random_phi(rng, 2);
  Tensor centers({2, 3, 2});
  for (int64_t i = 0; i < centers.numel(); ++i) centers[i] = rng.uniform(-0.3, 0.3);
  auto f = [&](Tape& t) { return loss_state(t, head, t.input(phi), centers); };
  CHECK(grad_check(s, f, 1e-5, 12).max_rel_err < 1e-4);
}

TEST_CASE("dynamics loss zero/unit cases") {
  RandomStream rng(8);
  ParamStore s;
  DynHeads heads = DynHeads::create(s, "dyn", rng);
  for (const auto& name : s.names()) s.get(name).fill(0.0);

  const int B = 2;
  Tensor zero_phi({B, enc::kLatentDim});
  Tensor zero_act({B, 4});
  {
    Tape t;
    Var loss = loss_dyn(t, heads, t.input(zero_phi), t.input(zero_act), t.input(zero_phi));
    CHECK(t.value(loss)[0] == 0.0);
  }
  // Forward head off by a unit vector, inverse exact: loss = 0.5.
  s.get("dyn.fwd.l2.b")[0] = 1.0;
  {
    Tape t;
    Var loss = loss_dyn(t, heads, t.input(zero_phi), t.input(zero_act), t.input(zero_phi));
    CHECK(t.value(loss)[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("dynamics loss matches direct recomputation") {
  RandomStream rng(9);
  ParamStore s;
  DynHeads heads = DynHeads::create(s, "dyn", rng);
  const int B = 4;
  const Tensor phi_t = random_phi(rng, B);
  const Tensor phi_t1 = random_phi(rng, B);
  const Tensor act = Tensor::uniform({B, 4}, 1.0, rng);

  Tape t;
  const double impl =
      t.value(loss_dyn(t, heads, t.input(phi_t), t.input(act), t.input(phi_t1)))[0];

  Tape t2;
  Var fwd = heads.fwd(t2, t2.concat_last(t2.input(phi_t), t2.input(act)));
  Var inv = heads.inv(t2, t2.concat_last(t2.input(phi_t), t2.input(phi_t1)));
  const Tensor& fv = t2.value(fwd);
  const Tensor& iv = t2.value(inv);
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    double sf = 0.0, si = 0.0;
    for (int i = 0; i < enc::kLatentDim; ++i) {
      const double d = fv.at(b, i) - phi_t1.at(b, i);
      sf += d * d;
    }
    for (int i = 0; i < 4; ++i) {
      const double d = iv.at(b, i) - act.at(b, i);
      si += d * d;
    }
    total += 0.5 * sf + 0.5 * si;
  }
  CHECK(impl == doctest::Approx(total / B).epsilon(1e-10));
}

TEST_CASE("dynamics heads gradients match finite differences") {
  RandomStream rng(10);
  ParamStore s;
  DynHeads heads = DynHeads::create(s, "dyn", rng);
  const Tensor phi_t = random_phi(rng, 2);
  const Tensor phi_t1 = random_phi(rng, 2);
  const Tensor act = Tensor::uniform({2, 4}, 1.0, rng);
  auto f = [&](Tape& t) {
    return loss_dyn(t, heads, t.input(phi_t), t.input(act), t.input(phi_t1));
  };
  CHECK(grad_check(s, f, 1e-5, 8).max_rel_err < 1e-4);
}

TEST_CASE("full loss is the sum of its parts") {
  RandomStream rng(11);
  ParamStore s;
  MdnHead mdn = MdnHead::create(s, "mdn", rng);
  DynHeads dyn = DynHeads::create(s, "dyn", rng);
  const int B = 3, n = 4;
  const Tensor phi_t = random_phi(rng, B);
  const Tensor phi_t1 = random_phi(rng, B);
  const Tensor act = Tensor::uniform({B, 4}, 1.0, rng);
  Tensor c_t({B, n, 2}), c_t1({B, n, 2});
  for (int64_t i = 0; i < c_t.numel(); ++i) {
    c_t[i] = rng.uniform(-0.3, 0.3);
    c_t1[i] = rng.uniform(-0.3, 0.3);
  }

  Tape t;
  const double full = t.value(
      loss_full(t, mdn, dyn, t.input(phi_t), t.input(phi_t1), t.input(act), c_t, c_t1))[0];

  Tape t2;
  const double ls_t = t2.value(loss_state(t2, mdn, t2.input(phi_t), c_t))[0];
  const double ls_t1 = t2.value(loss_state(t2, mdn, t2.input(phi_t1), c_t1))[0];
  const double ld =
      t2.value(loss_dyn(t2, dyn, t2.input(phi_t), t2.input(act), t2.input(phi_t1)))[0];
  CHECK(full == doctest::Approx(0.5 * (ls_t + ls_t1) + ld).epsilon(1e-10));
}

TEST_CASE("autoencoder loss limits") {
  // All-zero logits cost log 2 per pixel regardless of target.
  Tape t;
  Tensor target({1, 3, 8, 8});
  for (int64_t i = 0; i < target.numel(); ++i) target[i] = (i % 3) * 0.5;
  Var zero_logits = t.input(Tensor({1, 3, 8, 8}));
  CHECK(t.value(t.bce_with_logits(zero_logits, target))[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Saturated correct logits drive the loss to zero.
  Var big = t.input(Tensor::full({1, 3, 8, 8}, 40.0));
  CHECK(t.value(t.bce_with_logits(big, Tensor::full({1, 3, 8, 8}, 1.0)))[0] <
        1e-12);
}

TEST_CASE("autoencoder loss matches a per-pixel oracle") {
  RandomStream rng(12);
  Tape t;
  const Tensor logits = Tensor::uniform({2, 3, 4, 4}, 2.0, rng);
  Tensor target({2, 3, 4, 4});
  for (int64_t i = 0; i < target.numel(); ++i) target[i] = rng.uniform();
  const double impl = t.value(t.bce_with_logits(t.input(logits), target))[0];

  double total = 0.0;
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits[i]));
    total += -(target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p));
  }
  CHECK(impl == doctest::Approx(total / logits.numel()).epsilon(1e-8));
}

TEST_CASE("decoder reconstructs shapes and gradients check out") {
  RandomStream rng(13);
  ParamStore s;
  ConvDecoder dec = ConvDecoder::create(s, "dec", rng);
  const Tensor phi = random_phi(rng, 1);
  {
    Tape t;
    Var logits = dec(t, t.input(phi));
    CHECK(t.value(logits).shape() == std::vector<int>{1, 3, 84, 84});
  }
  Tensor target({1, 3, 84, 84});
  for (int64_t i = 0; i < target.numel(); ++i) target[i] = (i % 7 == 0) ? 1.0 : 0.0;
  auto f = [&](Tape& t) { return autoencoder_loss(t, dec, t.input(phi), target); };
  CHECK(grad_check(s, f, 1e-5, 2).max_rel_err < 1e-4);
}
