#pragma once

#include <span>
#include <string>
#include <vector>

#include "mops/nn.hpp"
#include "mops/render.hpp"
#include "mops/sim.hpp"

namespace mops::enc {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;
using diff::Var;

constexpr int kLatentDim = 128;
constexpr int kModelDim = 128;
constexpr int kNumHeads = 8;
constexpr int kConvFilters = 64;

// Object coordinates normalized by the table half-extents, [n,2].
Tensor state_coords(const sim::SceneState& state);
// Batch of same-cardinality states, [B,n,2].
Tensor state_coords_batch(std::span<const sim::SceneState> states);

// CHW image tensor, [3,84,84].
Tensor obs_tensor(const render::Observation& obs);
Tensor obs_tensor_batch(std::span<const render::Observation> observations);

// One transformer-style encoder block: 8-head self-attention over the node
// set, residual + layer norm, and a per-node feed-forward sublayer.
struct MhdpaBlock {
  nn::Linear wq, wk, wv, wo, ff1, ff2;
  nn::LayerNorm ln1, ln2;
  int d_model = kModelDim;
  int heads = kNumHeads;

  static MhdpaBlock create(ParamStore& s, const std::string& name, RandomStream& rng,
                           int d_model = kModelDim, int heads = kNumHeads);
  Var operator()(Tape& t, Var nodes) const;  // [B,n,d] -> [B,n,d]
};

// u = sum_i tanh(W1 v'_i) ⊙ σ(W2 v'_i); φ = W3 u. Order-invariant by
// construction; the linear maps carry no bias so empty activations stay zero.
struct GatedAggregate {
  nn::Linear w1, w2, w3;

  static GatedAggregate create(ParamStore& s, const std::string& name, RandomStream& rng,
                               int d_model = kModelDim, int out_dim = kLatentDim);
  Var operator()(Tape& t, Var nodes) const;  // [B,n,d] -> [B,out]
};

// State-set encoder: per-object embed -> MHDPA -> gated aggregation.
struct GnnEncoder {
  nn::Linear embed;
  MhdpaBlock block;
  GatedAggregate agg;
  ParamStore* store = nullptr;

  static GnnEncoder create(ParamStore& s, RandomStream& rng);
  Var operator()(Tape& t, Var coords) const;  // [B,n,2] -> [B,128]
  Tensor encode(const sim::SceneState& state) const;
};

// Image encoder: 4 stride-2 tanh conv layers -> coordinate-tagged slices as a
// node set -> MHDPA -> gated aggregation. use_attention=false drops the MHDPA
// block (ablation).
struct CnnEncoder {
  nn::Conv2d c1, c2, c3, c4;
  nn::Linear embed;
  MhdpaBlock block;
  GatedAggregate agg;
  bool use_attention = true;
  ParamStore* store = nullptr;

  static CnnEncoder create(ParamStore& s, RandomStream& rng, bool use_attention = true);
  Var operator()(Tape& t, Var images) const;  // [B,3,84,84] -> [B,128]
  Tensor encode(const render::Observation& obs) const;
  Tensor encode_batch(std::span<const render::Observation> observations) const;
};

// Zero-padded fixed-length baseline; order-sensitive on purpose.
struct MlpEncoder {
  nn::Mlp net;
  int max_n = 20;
  ParamStore* store = nullptr;

  static MlpEncoder create(ParamStore& s, RandomStream& rng, int max_n = 20);
  Var operator()(Tape& t, Var coords) const;  // [B,n,2], n <= max_n -> [B,128]
  Tensor encode(const sim::SceneState& state) const;
};

}  // namespace mops::enc
