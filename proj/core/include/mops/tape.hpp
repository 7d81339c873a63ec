#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mops/tensor.hpp"

namespace mops::diff {

class ParamStore;

// Handle into a Tape's node arena.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Records a forward computation and replays it in reverse for gradients.
// Build a fresh tape per training step; leaves bound via param() report their
// gradients through param_grads().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var input(Tensor v) { return leaf(std::move(v), false); }
  Var leaf(Tensor v, bool requires_grad);
  Var param(ParamStore& store, const std::string& name);

  const Tensor& value(Var v) const { return nodes_[v.id].val; }
  const Tensor& grad(Var v) const;

  // Elementwise.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var minimum(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var tanh_(Var a);
  Var sigmoid_(Var a);
  Var exp_(Var a);
  Var log_(Var a);
  Var clamp(Var a, double lo, double hi);

  // Shape.
  Var reshape(Var a, std::vector<int> shape);
  Var transpose(Var a);                       // 2-D
  Var transpose_last2(Var a);                 // 3-D [B,m,n] -> [B,n,m]
  Var permute(Var a, std::vector<int> perm);  // rank-preserving axis permutation
  Var concat_last(Var a, Var b);
  Var slice_last(Var a, int start, int len);

  // Linear algebra.
  Var matmul(Var a, Var b);   // [m,k]x[k,n]
  Var bmm(Var a, Var b);      // [B,m,k]x[B,k,n]
  Var add_row(Var a, Var b);  // [..., n] + [n]

  // Reductions over the last axis unless stated otherwise.
  Var sum_axis(Var a, int axis);
  Var sum_all(Var a);
  Var mean_all(Var a);
  Var softmax_last(Var a);
  Var logsumexp_last(Var a);  // drops the last axis (scalar result -> shape [1])
  Var layer_norm(Var x, Var gain, Var bias);

  // Convolutions, NCHW layout. conv2d weight [K,C,kh,kw]; transpose weight
  // [C,K,kh,kw].
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  Var conv2d_transpose(Var x, Var w, Var b, int stride, int pad, int out_pad);

  // Fused objectives (mean-reduced scalars).
  // Mixture NLL of 2-D points: alpha_logits [B,K], mu [B,K,2], logvar [B,K,2],
  // targets [B,n,2]. Returns -(1/(B n)) sum log p.
  Var mdn_nll(Var alpha_logits, Var mu, Var logvar, Tensor targets);
  // Mean Bernoulli NLL of logits against targets in [0,1], any matching shape.
  Var bce_with_logits(Var logits, Tensor targets);

  void backward(Var loss);

  // Gradients of every parameter bound from `store`, keyed by name.
  std::map<std::string, const Tensor*> param_grads(const ParamStore& store) const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> back;
  };

  Var make(Tensor val, bool rg, std::function<void(Tape&, int)> back);
  bool wants(Var v) const { return nodes_[v.id].requires_grad; }
  Tensor& grad_buf(int id);
  void check_same_shape(Var a, Var b, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<std::tuple<const ParamStore*, std::string, int>> param_bindings_;
  std::map<std::pair<const void*, std::string>, int> param_lookup_;
};

// Composed convenience graphs used across the networks.

// softmax(q kᵀ / sqrt(dk)) v for q,k,v of shape [B,n,dk].
Var scaled_dot_attention(Tape& t, Var q, Var k, Var v);

// Sum over dims of the diagonal-Gaussian log density, x/mu/logvar [B,d] -> [B,1].
Var diag_gaussian_log_density(Tape& t, Var x, Var mu, Var logvar);

}  // namespace mops::diff
