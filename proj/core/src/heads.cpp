#include "mops/heads.hpp"

#include <cmath>
#include <stdexcept>

namespace mops::heads {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

MdnHead MdnHead::create(ParamStore& s, const std::string& name, RandomStream& rng, int latent_dim,
                        int k) {
  MdnHead h;
  h.k = k;
  h.alpha = nn::Linear::create(s, name + ".alpha", latent_dim, k, rng);
  h.mu = nn::Linear::create(s, name + ".mu", latent_dim, 2 * k, rng);
  h.logvar = nn::Linear::create(s, name + ".logvar", latent_dim, 2 * k, rng);
  return h;
}

MdnHead::Outputs MdnHead::operator()(Tape& t, Var phi) const {
  const int B = t.value(phi).dim(0);
  Outputs out;
  out.alpha_logits = alpha(t, phi);
  out.mu = t.reshape(mu(t, phi), {B, k, 2});
  out.logvar = t.clamp(t.reshape(logvar(t, phi), {B, k, 2}), kLogVarMin, kLogVarMax);
  return out;
}

MdnParams mdn_params(const MdnHead& head, const ParamStore& s, const Tensor& phi) {
  if (phi.ndim() != 1) throw std::invalid_argument("mdn_params: phi must be [latent]");
  const int K = head.k;
  const int D = phi.dim(0);
  MdnParams m;
  m.alpha = Tensor({K});
  m.mu = Tensor({K, 2});
  m.var = Tensor({K, 2});

  const Tensor& wa = s.get(head.alpha.w);
  const Tensor& ba = s.get(head.alpha.b);
  double mx = -1e300;
  for (int k = 0; k < K; ++k) {
    double v = ba[k];
    for (int i = 0; i < D; ++i) v += phi[i] * wa.at(i, k);
    m.alpha[k] = v;
    mx = std::max(mx, v);
  }
  double z = 0.0;
  for (int k = 0; k < K; ++k) {
    m.alpha[k] = std::exp(m.alpha[k] - mx);
    z += m.alpha[k];
  }
  for (int k = 0; k < K; ++k) m.alpha[k] /= z;

  const Tensor& wm = s.get(head.mu.w);
  const Tensor& bm = s.get(head.mu.b);
  const Tensor& wv = s.get(head.logvar.w);
  const Tensor& bv = s.get(head.logvar.b);
  for (int k = 0; k < K; ++k) {
    for (int d = 0; d < 2; ++d) {
      double mv = bm[2 * k + d], lv = bv[2 * k + d];
      for (int i = 0; i < D; ++i) {
        mv += phi[i] * wm.at(i, 2 * k + d);
        lv += phi[i] * wv.at(i, 2 * k + d);
      }
      m.mu.at(k, d) = mv;
      m.var.at(k, d) = std::exp(std::min(std::max(lv, kLogVarMin), kLogVarMax));
    }
  }
  return m;
}

double mdn_log_prob(const MdnParams& m, double px, double py) {
  const int K = m.alpha.dim(0);
  double mx = -1e300;
  std::vector<double> terms(K);
  for (int k = 0; k < K; ++k) {
    const double dx = px - m.mu.at(k, 0);
    const double dy = py - m.mu.at(k, 1);
    const double vx = m.var.at(k, 0);
    const double vy = m.var.at(k, 1);
    const double logn =
        -kLog2Pi - 0.5 * (std::log(vx) + std::log(vy) + dx * dx / vx + dy * dy / vy);
    terms[k] = std::log(m.alpha[k]) + logn;
    mx = std::max(mx, terms[k]);
  }
  double z = 0.0;
  for (int k = 0; k < K; ++k) z += std::exp(terms[k] - mx);
  return mx + std::log(z);
}

Var loss_state(Tape& t, const MdnHead& head, Var phi, Tensor centers) {
  const MdnHead::Outputs out = head(t, phi);
  return t.mdn_nll(out.alpha_logits, out.mu, out.logvar, std::move(centers));
}

DynHeads DynHeads::create(ParamStore& s, const std::string& name, RandomStream& rng,
                          int latent_dim, int action_dim, int hidden) {
  DynHeads h;
  h.fwd = nn::Mlp::create(s, name + ".fwd", {latent_dim + action_dim, hidden, hidden, latent_dim},
                          rng);
  h.inv = nn::Mlp::create(s, name + ".inv", {2 * latent_dim, hidden, hidden, action_dim}, rng);
  return h;
}

namespace {

// Batch mean of 0.5 |pred - target|^2 per row.
Var half_sq_error(Tape& t, Var pred, Var target) {
  Var diff = t.sub(pred, target);
  Var row = t.sum_axis(t.mul(diff, diff), 1);  // [B]
  return t.scale(t.mean_all(row), 0.5);
}

}  // namespace

Var loss_dyn(Tape& t, const DynHeads& heads, Var phi_t, Var action_norm, Var phi_t1) {
  Var fwd_pred = heads.fwd(t, t.concat_last(phi_t, action_norm));
  Var inv_pred = heads.inv(t, t.concat_last(phi_t, phi_t1));
  return t.add(half_sq_error(t, fwd_pred, phi_t1), half_sq_error(t, inv_pred, action_norm));
}

Var loss_full(Tape& t, const MdnHead& mdn, const DynHeads& dyn, Var phi_t, Var phi_t1,
              Var action_norm, Tensor centers_t, Tensor centers_t1) {
  Var ls_t = loss_state(t, mdn, phi_t, std::move(centers_t));
  Var ls_t1 = loss_state(t, mdn, phi_t1, std::move(centers_t1));
  Var state_term = t.scale(t.add(ls_t, ls_t1), 0.5);
  return t.add(state_term, loss_dyn(t, dyn, phi_t, action_norm, phi_t1));
}

ConvDecoder ConvDecoder::create(ParamStore& s, const std::string& name, RandomStream& rng,
                                int latent_dim) {
  ConvDecoder d;
  d.fc = nn::Linear::create(s, name + ".fc", latent_dim, 128 * 6 * 6, rng);
  // 6 -> 11 -> 21 -> 42 -> 84
  d.up1 = nn::ConvTranspose2d::create(s, name + ".up1", 128, 64, 3, 2, 1, 0, rng);
  d.up2 = nn::ConvTranspose2d::create(s, name + ".up2", 64, 32, 3, 2, 1, 0, rng);
  d.up3 = nn::ConvTranspose2d::create(s, name + ".up3", 32, 16, 3, 2, 1, 1, rng);
  d.up4 = nn::ConvTranspose2d::create(s, name + ".up4", 16, 3, 3, 2, 1, 1, rng);
  return d;
}

Var ConvDecoder::operator()(Tape& t, Var phi) const {
  const int B = t.value(phi).dim(0);
  Var h = t.reshape(t.tanh_(fc(t, phi)), {B, 128, 6, 6});
  h = t.tanh_(up1(t, h));
  h = t.tanh_(up2(t, h));
  h = t.tanh_(up3(t, h));
  return up4(t, h);  // logits
}

Var autoencoder_loss(Tape& t, const ConvDecoder& dec, Var phi, Tensor canonical_target) {
  return t.bce_with_logits(dec(t, phi), std::move(canonical_target));
}

}  // namespace mops::heads
