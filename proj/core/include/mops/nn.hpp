#pragma once

#include <string>
#include <vector>

#include "mops/param_store.hpp"
#include "mops/random.hpp"
#include "mops/tape.hpp"

namespace mops::nn {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;
using diff::Var;

// Modules own names into a ParamStore; graphs are rebuilt per tape.

struct Linear {
  ParamStore* store = nullptr;
  std::string w, b;
  int in = 0, out = 0;
  bool bias = true;

  static Linear create(ParamStore& s, const std::string& name, int in, int out, RandomStream& rng,
                       bool bias = true);
  Var operator()(Tape& t, Var x) const;  // [..., in] -> [..., out]
};

struct LayerNorm {
  ParamStore* store = nullptr;
  std::string gain, bias;
  int dim = 0;

  static LayerNorm create(ParamStore& s, const std::string& name, int dim);
  Var operator()(Tape& t, Var x) const;
};

// Fully connected stack; tanh on hidden layers, linear output.
struct Mlp {
  std::vector<Linear> layers;

  static Mlp create(ParamStore& s, const std::string& name, const std::vector<int>& dims,
                    RandomStream& rng);
  Var operator()(Tape& t, Var x) const;
};

struct Conv2d {
  ParamStore* store = nullptr;
  std::string w, b;
  int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;

  static Conv2d create(ParamStore& s, const std::string& name, int in_ch, int out_ch, int kernel,
                       int stride, int pad, RandomStream& rng);
  Var operator()(Tape& t, Var x) const;  // [B,C,H,W] -> [B,K,oh,ow]
};

struct ConvTranspose2d {
  ParamStore* store = nullptr;
  std::string w, b;
  int in_ch = 0, out_ch = 0, kernel = 3, stride = 2, pad = 1, out_pad = 0;

  static ConvTranspose2d create(ParamStore& s, const std::string& name, int in_ch, int out_ch,
                                int kernel, int stride, int pad, int out_pad, RandomStream& rng);
  Var operator()(Tape& t, Var x) const;
};

}  // namespace mops::nn
