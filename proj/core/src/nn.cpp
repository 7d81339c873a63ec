#include "mops/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace mops::nn {

namespace {

// Glorot-uniform.
double fan_limit(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

}  // namespace

Linear Linear::create(ParamStore& s, const std::string& name, int in, int out, RandomStream& rng,
                      bool bias) {
  Linear l;
  l.store = &s;
  l.w = name + ".w";
  l.b = name + ".b";
  l.in = in;
  l.out = out;
  l.bias = bias;
  s.create(l.w, Tensor::uniform({in, out}, fan_limit(in, out), rng));
  if (bias) s.create(l.b, Tensor({out}));
  return l;
}

Var Linear::operator()(Tape& t, Var x) const {
  const auto& shape = t.value(x).shape();
  if (shape.back() != in) throw std::invalid_argument("Linear: input dim mismatch");
  Var x2 = x;
  std::vector<int> orig;
  if (shape.size() != 2) {
    orig = shape;
    x2 = t.reshape(x, {static_cast<int>(t.value(x).numel() / in), in});
  }
  Var y = t.matmul(x2, t.param(*store, w));
  if (bias) y = t.add_row(y, t.param(*store, b));
  if (!orig.empty()) {
    orig.back() = out;
    y = t.reshape(y, orig);
  }
  return y;
}

LayerNorm LayerNorm::create(ParamStore& s, const std::string& name, int dim) {
  LayerNorm ln;
  ln.store = &s;
  ln.gain = name + ".gain";
  ln.bias = name + ".bias";
  ln.dim = dim;
  s.create(ln.gain, Tensor::full({dim}, 1.0));
  s.create(ln.bias, Tensor({dim}));
  return ln;
}

Var LayerNorm::operator()(Tape& t, Var x) const {
  return t.layer_norm(x, t.param(*store, gain), t.param(*store, bias));
}

Mlp Mlp::create(ParamStore& s, const std::string& name, const std::vector<int>& dims,
                RandomStream& rng) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least in/out dims");
  Mlp m;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    m.layers.push_back(
        Linear::create(s, name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng));
  }
  return m;
}

Var Mlp::operator()(Tape& t, Var x) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](t, x);
    if (i + 1 < layers.size()) x = t.tanh_(x);
  }
  return x;
}

Conv2d Conv2d::create(ParamStore& s, const std::string& name, int in_ch, int out_ch, int kernel,
                      int stride, int pad, RandomStream& rng) {
  Conv2d c;
  c.store = &s;
  c.w = name + ".w";
  c.b = name + ".b";
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  const int fan_in = in_ch * kernel * kernel;
  const int fan_out = out_ch * kernel * kernel;
  s.create(c.w, Tensor::uniform({out_ch, in_ch, kernel, kernel}, fan_limit(fan_in, fan_out), rng));
  s.create(c.b, Tensor({out_ch}));
  return c;
}

Var Conv2d::operator()(Tape& t, Var x) const {
  return t.conv2d(x, t.param(*store, w), t.param(*store, b), stride, pad);
}

ConvTranspose2d ConvTranspose2d::create(ParamStore& s, const std::string& name, int in_ch,
                                        int out_ch, int kernel, int stride, int pad, int out_pad,
                                        RandomStream& rng) {
  ConvTranspose2d c;
  c.store = &s;
  c.w = name + ".w";
  c.b = name + ".b";
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  c.out_pad = out_pad;
  const int fan_in = in_ch * kernel * kernel;
  const int fan_out = out_ch * kernel * kernel;
  s.create(c.w, Tensor::uniform({in_ch, out_ch, kernel, kernel}, fan_limit(fan_in, fan_out), rng));
  s.create(c.b, Tensor({out_ch}));
  return c;
}

Var ConvTranspose2d::operator()(Tape& t, Var x) const {
  return t.conv2d_transpose(x, t.param(*store, w), t.param(*store, b), stride, pad, out_pad);
}

}  // namespace mops::nn
