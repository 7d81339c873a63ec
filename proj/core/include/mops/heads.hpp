#pragma once

#include <string>

#include "mops/encoders.hpp"
#include "mops/nn.hpp"

namespace mops::heads {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;
using diff::Var;

constexpr int kMdnK = 25;
constexpr double kLogVarMin = -13.815510557964274;  // log 1e-6
constexpr double kLogVarMax = 0.0;
constexpr int kDynHidden = 96;

// Mixture density over 2-D table points, parameterized by linear maps of φ.
struct MdnHead {
  nn::Linear alpha, mu, logvar;
  int k = kMdnK;

  static MdnHead create(ParamStore& s, const std::string& name, RandomStream& rng,
                        int latent_dim = enc::kLatentDim, int k = kMdnK);

  struct Outputs {
    Var alpha_logits;  // [B,K]
    Var mu;            // [B,K,2]
    Var logvar;        // [B,K,2], clamped to [log 1e-6, 0]
  };
  Outputs operator()(Tape& t, Var phi) const;  // phi [B,latent]
};

// Inference-side mixture parameters for a single φ.
struct MdnParams {
  Tensor alpha;  // [K], sums to 1
  Tensor mu;     // [K,2]
  Tensor var;    // [K,2] diagonal variances
};

MdnParams mdn_params(const MdnHead& head, const ParamStore& s, const Tensor& phi);
double mdn_log_prob(const MdnParams& m, double px, double py);

// Mean negative log likelihood of ground-truth centers (meters), both graphs
// and values.
Var loss_state(Tape& t, const MdnHead& head, Var phi, Tensor centers);

// Forward (φ,a)→φ' and inverse (φ,φ')→a dynamics heads, two hidden layers.
struct DynHeads {
  nn::Mlp fwd, inv;

  static DynHeads create(ParamStore& s, const std::string& name, RandomStream& rng,
                         int latent_dim = enc::kLatentDim, int action_dim = 4,
                         int hidden = kDynHidden);
};

// 0.5|f_fwd(φ_t,a)-φ_{t+1}|² + 0.5|f_inv(φ_t,φ_{t+1})-a|², batch mean.
// Actions are expected in normalized [-1,1]^4 form.
Var loss_dyn(Tape& t, const DynHeads& heads, Var phi_t, Var action_norm, Var phi_t1);

// Full objective: state NLL at both transition endpoints (averaged) plus the
// dynamics term.
Var loss_full(Tape& t, const MdnHead& mdn, const DynHeads& dyn, Var phi_t, Var phi_t1,
              Var action_norm, Tensor centers_t, Tensor centers_t1);

// Upconvolutional decoder producing 84x84x3 Bernoulli logits from φ.
struct ConvDecoder {
  nn::Linear fc;
  nn::ConvTranspose2d up1, up2, up3, up4;

  static ConvDecoder create(ParamStore& s, const std::string& name, RandomStream& rng,
                            int latent_dim = enc::kLatentDim);
  Var operator()(Tape& t, Var phi) const;  // [B,latent] -> [B,3,84,84] logits
};

// Mean Bernoulli NLL of the decoder logits against a canonical render.
Var autoencoder_loss(Tape& t, const ConvDecoder& dec, Var phi, Tensor canonical_target);

}  // namespace mops::heads
