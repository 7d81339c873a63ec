#include "mops/encoders.hpp"

#include <stdexcept>

namespace mops::enc {

Tensor state_coords(const sim::SceneState& state) {
  Tensor t({state.n(), 2});
  for (int i = 0; i < state.n(); ++i) {
    t.at(i, 0) = state.centers[i].x / state.table.half_w();
    t.at(i, 1) = state.centers[i].y / state.table.half_h();
  }
  return t;
}

Tensor state_coords_batch(std::span<const sim::SceneState> states) {
  const int B = static_cast<int>(states.size());
  const int n = states[0].n();
  Tensor t({B, n, 2});
  for (int b = 0; b < B; ++b) {
    if (states[b].n() != n) throw std::invalid_argument("state_coords_batch: ragged batch");
    for (int i = 0; i < n; ++i) {
      t.at(b, i, 0) = states[b].centers[i].x / states[b].table.half_w();
      t.at(b, i, 1) = states[b].centers[i].y / states[b].table.half_h();
    }
  }
  return t;
}

Tensor obs_tensor(const render::Observation& obs) {
  constexpr int S = render::kImageSize;
  Tensor t({3, S, S});
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      for (int c = 0; c < 3; ++c) t[(c * S + y) * S + x] = obs.at(y, x, c);
    }
  }
  return t;
}

Tensor obs_tensor_batch(std::span<const render::Observation> observations) {
  constexpr int S = render::kImageSize;
  const int B = static_cast<int>(observations.size());
  Tensor t({B, 3, S, S});
  for (int b = 0; b < B; ++b) {
    double* dst = t.data() + static_cast<int64_t>(b) * 3 * S * S;
    const auto& obs = observations[b];
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        for (int c = 0; c < 3; ++c) dst[(c * S + y) * S + x] = obs.at(y, x, c);
      }
    }
  }
  return t;
}

MhdpaBlock MhdpaBlock::create(ParamStore& s, const std::string& name, RandomStream& rng,
                              int d_model, int heads) {
  MhdpaBlock m;
  m.d_model = d_model;
  m.heads = heads;
  m.wq = nn::Linear::create(s, name + ".wq", d_model, d_model, rng);
  m.wk = nn::Linear::create(s, name + ".wk", d_model, d_model, rng);
  m.wv = nn::Linear::create(s, name + ".wv", d_model, d_model, rng);
  m.wo = nn::Linear::create(s, name + ".wo", d_model, d_model, rng);
  m.ff1 = nn::Linear::create(s, name + ".ff1", d_model, d_model, rng);
  m.ff2 = nn::Linear::create(s, name + ".ff2", d_model, d_model, rng);
  m.ln1 = nn::LayerNorm::create(s, name + ".ln1", d_model);
  m.ln2 = nn::LayerNorm::create(s, name + ".ln2", d_model);
  return m;
}

Var MhdpaBlock::operator()(Tape& t, Var nodes) const {
  const auto& shape = t.value(nodes).shape();
  if (shape.size() != 3 || shape[2] != d_model) {
    throw std::invalid_argument("MhdpaBlock: expects [B,n,d_model]");
  }
  const int B = shape[0], n = shape[1];
  const int dk = d_model / heads;

  Var x2 = t.reshape(nodes, {B * n, d_model});
  auto split = [&](Var h) {
    Var r = t.reshape(h, {B, n, heads, dk});
    return t.reshape(t.permute(r, {0, 2, 1, 3}), {B * heads, n, dk});
  };
  Var q = split(wq(t, x2));
  Var k = split(wk(t, x2));
  Var v = split(wv(t, x2));
  Var attn = diff::scaled_dot_attention(t, q, k, v);  // [B*heads, n, dk]
  Var merged = t.reshape(t.permute(t.reshape(attn, {B, heads, n, dk}), {0, 2, 1, 3}),
                         {B * n, d_model});
  Var h1 = ln1(t, t.add(x2, wo(t, merged)));
  Var ff = ff2(t, t.tanh_(ff1(t, h1)));
  Var h2 = ln2(t, t.add(h1, ff));
  return t.reshape(h2, {B, n, d_model});
}

GatedAggregate GatedAggregate::create(ParamStore& s, const std::string& name, RandomStream& rng,
                                      int d_model, int out_dim) {
  GatedAggregate g;
  g.w1 = nn::Linear::create(s, name + ".w1", d_model, out_dim, rng, /*bias=*/false);
  g.w2 = nn::Linear::create(s, name + ".w2", d_model, out_dim, rng, /*bias=*/false);
  g.w3 = nn::Linear::create(s, name + ".w3", out_dim, out_dim, rng, /*bias=*/false);
  return g;
}

Var GatedAggregate::operator()(Tape& t, Var nodes) const {
  const auto& shape = t.value(nodes).shape();
  if (shape.size() != 3) throw std::invalid_argument("GatedAggregate: expects [B,n,d]");
  Var gated = t.mul(t.tanh_(w1(t, nodes)), t.sigmoid_(w2(t, nodes)));  // [B,n,out]
  Var u = t.sum_axis(gated, 1);                                        // [B,out]
  return w3(t, u);
}

GnnEncoder GnnEncoder::create(ParamStore& s, RandomStream& rng) {
  GnnEncoder e;
  e.store = &s;
  e.embed = nn::Linear::create(s, "gnn.embed", 2, kModelDim, rng);
  e.block = MhdpaBlock::create(s, "gnn.block", rng);
  e.agg = GatedAggregate::create(s, "gnn.agg", rng);
  return e;
}

Var GnnEncoder::operator()(Tape& t, Var coords) const {
  const auto& shape = t.value(coords).shape();
  if (shape.size() != 3 || shape[2] != 2) {
    throw std::invalid_argument("GnnEncoder: expects [B,n,2]");
  }
  Var nodes = embed(t, coords);  // [B,n,128]
  nodes = block(t, nodes);
  return agg(t, nodes);
}

Tensor GnnEncoder::encode(const sim::SceneState& state) const {
  Tape t;
  Var phi = (*this)(t, t.reshape(t.input(state_coords(state)), {1, state.n(), 2}));
  Tensor out({kLatentDim});
  const Tensor& v = t.value(phi);
  for (int i = 0; i < kLatentDim; ++i) out[i] = v[i];
  return out;
}

CnnEncoder CnnEncoder::create(ParamStore& s, RandomStream& rng, bool use_attention) {
  CnnEncoder e;
  e.store = &s;
  e.use_attention = use_attention;
  e.c1 = nn::Conv2d::create(s, "cnn.c1", 3, kConvFilters, 3, 2, 1, rng);
  e.c2 = nn::Conv2d::create(s, "cnn.c2", kConvFilters, kConvFilters, 3, 2, 1, rng);
  e.c3 = nn::Conv2d::create(s, "cnn.c3", kConvFilters, kConvFilters, 3, 2, 1, rng);
  e.c4 = nn::Conv2d::create(s, "cnn.c4", kConvFilters, kConvFilters, 3, 2, 1, rng);
  e.embed = nn::Linear::create(s, "cnn.embed", kConvFilters + 2, kModelDim, rng);
  if (use_attention) e.block = MhdpaBlock::create(s, "cnn.block", rng);
  e.agg = GatedAggregate::create(s, "cnn.agg", rng);
  return e;
}

Var CnnEncoder::operator()(Tape& t, Var images) const {
  const auto& shape = t.value(images).shape();
  if (shape.size() != 4 || shape[1] != 3 || shape[2] != render::kImageSize ||
      shape[3] != render::kImageSize) {
    throw std::invalid_argument("CnnEncoder: expects [B,3,84,84]");
  }
  const int B = shape[0];
  Var h = t.tanh_(c1(t, images));
  h = t.tanh_(c2(t, h));
  h = t.tanh_(c3(t, h));
  h = t.tanh_(c4(t, h));  // [B,64,6,6]
  const int grid = t.value(h).dim(2);
  const int n = grid * grid;

  Var slices = t.transpose_last2(t.reshape(h, {B, kConvFilters, n}));  // [B,n,64]
  // Two normalized coordinate channels keep position information through the
  // order-invariant aggregation.
  Tensor coords({B, n, 2});
  for (int b = 0; b < B; ++b) {
    for (int gy = 0; gy < grid; ++gy) {
      for (int gx = 0; gx < grid; ++gx) {
        coords.at(b, gy * grid + gx, 0) = grid == 1 ? 0.0 : 2.0 * gx / (grid - 1) - 1.0;
        coords.at(b, gy * grid + gx, 1) = grid == 1 ? 0.0 : 2.0 * gy / (grid - 1) - 1.0;
      }
    }
  }
  Var nodes = embed(t, t.concat_last(slices, t.input(std::move(coords))));  // [B,n,128]
  if (use_attention) nodes = block(t, nodes);
  return agg(t, nodes);
}

Tensor CnnEncoder::encode(const render::Observation& obs) const {
  const Tensor batch = encode_batch(std::span<const render::Observation>(&obs, 1));
  Tensor out({kLatentDim});
  for (int i = 0; i < kLatentDim; ++i) out[i] = batch[i];
  return out;
}

Tensor CnnEncoder::encode_batch(std::span<const render::Observation> observations) const {
  Tape t;
  Var phi = (*this)(t, t.input(obs_tensor_batch(observations)));
  return t.value(phi);
}

MlpEncoder MlpEncoder::create(ParamStore& s, RandomStream& rng, int max_n) {
  MlpEncoder e;
  e.store = &s;
  e.max_n = max_n;
  e.net = nn::Mlp::create(s, "mlp", {2 * max_n, 256, 256, 256, kLatentDim}, rng);
  return e;
}

Var MlpEncoder::operator()(Tape& t, Var coords) const {
  const auto& shape = t.value(coords).shape();
  if (shape.size() != 3 || shape[2] != 2) {
    throw std::invalid_argument("MlpEncoder: expects [B,n,2]");
  }
  const int B = shape[0], n = shape[1];
  if (n > max_n) throw std::invalid_argument("MlpEncoder: too many objects");
  Var flat = t.reshape(coords, {B, 2 * n});
  if (n < max_n) {
    Var pad = t.input(Tensor({B, 2 * (max_n - n)}));
    flat = t.concat_last(flat, pad);
  }
  return net(t, flat);
}

Tensor MlpEncoder::encode(const sim::SceneState& state) const {
  Tape t;
  Var phi = (*this)(t, t.reshape(t.input(state_coords(state)), {1, state.n(), 2}));
  Tensor out({kLatentDim});
  const Tensor& v = t.value(phi);
  for (int i = 0; i < kLatentDim; ++i) out[i] = v[i];
  return out;
}

}  // namespace mops::enc
