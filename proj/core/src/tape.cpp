#include "mops/tape.hpp"

#include <cblas.h>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mops/param_store.hpp"

// OpenBLAS's own thread pool spins against our OpenMP regions; keep BLAS
// single-threaded and parallelize GEMMs by column blocks instead.
extern "C" void openblas_set_num_threads(int) __attribute__((weak));

namespace mops::diff {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct BlasInit {
  BlasInit() {
    if (openblas_set_num_threads) openblas_set_num_threads(1);
  }
};
const BlasInit blas_init;

void gemm_block(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Column-split wrapper: the split only partitions disjoint output columns, so
// results are bitwise identical to the single call.
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
#ifdef _OPENMP
  const int threads = omp_get_max_threads();
  const double flops = 2.0 * m * static_cast<double>(n) * k;
  if (threads > 1 && flops > 4e6 && n >= 2 * threads) {
    const int blocks = threads;
#pragma omp parallel for schedule(static)
    for (int blk = 0; blk < blocks; ++blk) {
      const int n0 = static_cast<int>(static_cast<int64_t>(n) * blk / blocks);
      const int n1 = static_cast<int>(static_cast<int64_t>(n) * (blk + 1) / blocks);
      if (n1 <= n0) continue;
      // op(B)'s columns n0..n1: for NoTrans B that is a column offset; for
      // Trans B it is a row offset.
      const double* b_blk = tb ? b + static_cast<int64_t>(n0) * ldb : b + n0;
      gemm_block(ta, tb, m, n1 - n0, k, alpha, a, lda, b_blk, ldb, beta, c + n0, ldc);
    }
    return;
  }
#endif
  gemm_block(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Collapses a shape into (rows, cols) with cols = last dimension.
std::pair<int64_t, int> rows_cols(const Tensor& t) {
  const int cols = t.shape().back();
  return {t.numel() / cols, cols};
}

}  // namespace

Var Tape::make(Tensor val, bool rg, std::function<void(Tape&, int)> back) {
  nodes_.push_back(Node{std::move(val), Tensor{}, rg, std::move(back)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor v, bool requires_grad) { return make(std::move(v), requires_grad, nullptr); }

Var Tape::param(ParamStore& store, const std::string& name) {
  const auto key = std::make_pair(static_cast<const void*>(&store), name);
  if (auto it = param_lookup_.find(key); it != param_lookup_.end()) {
    return Var{it->second};
  }
  Var v = leaf(store.get(name), true);
  param_lookup_[key] = v.id;
  param_bindings_.emplace_back(&store, name, v.id);
  return v;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.numel() == 0) {
    throw std::logic_error("Tape::grad: no gradient recorded for this node");
  }
  return n.grad;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.numel() == 0) n.grad = Tensor(n.val.shape());
  return n.grad;
}

void Tape::check_same_shape(Var a, Var b, const char* op) const {
  if (!nodes_[a.id].val.same_shape(nodes_[b.id].val)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                nodes_[a.id].val.shape_str() + " vs " +
                                nodes_[b.id].val.shape_str());
  }
}

void Tape::backward(Var loss) {
  if (nodes_[loss.id].val.numel() != 1) {
    throw std::invalid_argument("Tape::backward: loss must be scalar");
  }
  grad_buf(loss.id).fill(1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.back || !n.requires_grad || n.grad.numel() == 0) continue;
    n.back(*this, id);
  }
}

std::map<std::string, const Tensor*> Tape::param_grads(const ParamStore& store) const {
  std::map<std::string, const Tensor*> out;
  for (const auto& [s, name, id] : param_bindings_) {
    if (s != &store) continue;
    const Node& n = nodes_[id];
    if (n.grad.numel() > 0) out[name] = &n.grad;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops

Var Tape::add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tensor out = nodes_[a.id].val;
  out.add_scaled(nodes_[b.id].val, 1.0);
  const bool rg = wants(a) || wants(b);
  return make(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.wants(a)) t.grad_buf(a.id).add_scaled(g, 1.0);
    if (t.wants(b)) t.grad_buf(b.id).add_scaled(g, 1.0);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tensor out = nodes_[a.id].val;
  out.add_scaled(nodes_[b.id].val, -1.0);
  const bool rg = wants(a) || wants(b);
  return make(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.wants(a)) t.grad_buf(a.id).add_scaled(g, 1.0);
    if (t.wants(b)) t.grad_buf(b.id).add_scaled(g, -1.0);
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  const Tensor& av = nodes_[a.id].val;
  const Tensor& bv = nodes_[b.id].val;
  Tensor out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  const bool rg = wants(a) || wants(b);
  return make(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& av = t.nodes_[a.id].val;
    const Tensor& bv = t.nodes_[b.id].val;
    if (t.wants(a)) {
      Tensor& ga = t.grad_buf(a.id);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.wants(b)) {
      Tensor& gb = t.grad_buf(b.id);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var Tape::minimum(Var a, Var b) {
  check_same_shape(a, b, "minimum");
  const Tensor& av = nodes_[a.id].val;
  const Tensor& bv = nodes_[b.id].val;
  Tensor out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(av[i], bv[i]);
  const bool rg = wants(a) || wants(b);
  return make(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& av = t.nodes_[a.id].val;
    const Tensor& bv = t.nodes_[b.id].val;
    if (t.wants(a)) {
      Tensor& ga = t.grad_buf(a.id);
      for (int64_t i = 0; i < g.numel(); ++i) {
        if (av[i] <= bv[i]) ga[i] += g[i];
      }
    }
    if (t.wants(b)) {
      Tensor& gb = t.grad_buf(b.id);
      for (int64_t i = 0; i < g.numel(); ++i) {
        if (av[i] > bv[i]) gb[i] += g[i];
      }
    }
  });
}

Var Tape::scale(Var a, double s) {
  Tensor out = nodes_[a.id].val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make(std::move(out), wants(a), [a, s](Tape& t, int self) {
    if (t.wants(a)) t.grad_buf(a.id).add_scaled(t.nodes_[self].grad, s);
  });
}

Var Tape::add_scalar(Var a, double s) {
  Tensor out = nodes_[a.id].val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return make(std::move(out), wants(a), [a](Tape& t, int self) {
    if (t.wants(a)) t.grad_buf(a.id).add_scaled(t.nodes_[self].grad, 1.0);
  });
}

Var Tape::tanh_(Var a) {
  Tensor out = nodes_[a.id].val;
  const int64_t n = out.numel();
#pragma omp parallel for schedule(static) if (n > 131072)
  for (int64_t i = 0; i < n; ++i) out[i] = std::tanh(out[i]);
  return make(std::move(out), wants(a), [a](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].val;
    Tensor& ga = t.grad_buf(a.id);
    const int64_t n = g.numel();
#pragma omp parallel for schedule(static) if (n > 131072)
    for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var Tape::sigmoid_(Var a) {
  Tensor out = nodes_[a.id].val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return make(std::move(out), wants(a), [a](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].val;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var Tape::exp_(Var a) {
  Tensor out = nodes_[a.id].val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return make(std::move(out), wants(a), [a](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].val;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
  });
}

Var Tape::log_(Var a) {
  const Tensor& av = nodes_[a.id].val;
  Tensor out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(av[i]);
  return make(std::move(out), wants(a), [a](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& x = t.nodes_[a.id].val;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / x[i];
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  const Tensor& av = nodes_[a.id].val;
  Tensor out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(std::max(av[i], lo), hi);
  return make(std::move(out), wants(a), [a, lo, hi](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& x = t.nodes_[a.id].val;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops

Var Tape::reshape(Var a, std::vector<int> shape) {
  const Tensor& av = nodes_[a.id].val;
  if (shape_numel(shape) != av.numel()) {
    throw std::invalid_argument("reshape: numel mismatch");
  }
  std::vector<double> data(av.data(), av.data() + av.numel());
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  return make(std::move(out), wants(a), [a](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

Var Tape::transpose(Var a) {
  const Tensor& av = nodes_[a.id].val;
  if (av.ndim() != 2) throw std::invalid_argument("transpose: expects 2-D");
  const int m = av.dim(0), n = av.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  }
  return make(std::move(out), wants(a), [a, m, n](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& ga = t.grad_buf(a.id);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
    }
  });
}

Var Tape::transpose_last2(Var a) {
  const Tensor& av = nodes_[a.id].val;
  if (av.ndim() != 3) throw std::invalid_argument("transpose_last2: expects 3-D");
  const int B = av.dim(0), m = av.dim(1), n = av.dim(2);
  Tensor out({B, n, m});
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) out.at(b, j, i) = av.at(b, i, j);
    }
  }
  return make(std::move(out), wants(a), [a, B, m, n](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& ga = t.grad_buf(a.id);
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) ga.at(b, i, j) += g.at(b, j, i);
      }
    }
  });
}

namespace {

// idx helpers for permute: row-major strides of a shape.
std::vector<int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<int64_t> s(shape.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    s[i] = acc;
    acc *= shape[i];
  }
  return s;
}

void permute_copy(const Tensor& in, Tensor& out, const std::vector<int>& perm, bool accumulate_back) {
  // out[i_perm] = in[i]; with accumulate_back the roles flip and we add.
  const auto& ishape = in.shape();
  const int nd = static_cast<int>(ishape.size());
  const auto istr = strides_of(ishape);
  std::vector<int> oshape(nd);
  for (int i = 0; i < nd; ++i) oshape[i] = ishape[perm[i]];
  const auto ostr = strides_of(oshape);
  std::vector<int> idx(nd, 0);
  const int64_t n = in.numel();
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t o = 0;
    for (int i = 0; i < nd; ++i) o += static_cast<int64_t>(idx[perm[i]]) * ostr[i];
    if (accumulate_back) {
      const_cast<Tensor&>(in).data()[flat] += out.data()[o];
    } else {
      out.data()[o] = in.data()[flat];
    }
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[i] < ishape[i]) break;
      idx[i] = 0;
    }
  }
}

}  // namespace

Var Tape::permute(Var a, std::vector<int> perm) {
  const Tensor& av = nodes_[a.id].val;
  if (static_cast<int>(perm.size()) != av.ndim()) {
    throw std::invalid_argument("permute: rank mismatch");
  }
  std::vector<int> oshape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) oshape[i] = av.dim(perm[i]);
  Tensor out(oshape);
  permute_copy(av, out, perm, false);
  return make(std::move(out), wants(a), [a, perm](Tape& t, int self) {
    if (!t.wants(a)) return;
    Tensor& ga = t.grad_buf(a.id);
    // ga[flat] += g[perm(flat)]
    permute_copy(ga, const_cast<Tensor&>(t.nodes_[self].grad), perm, true);
  });
}

Var Tape::concat_last(Var a, Var b) {
  const Tensor& av = nodes_[a.id].val;
  const Tensor& bv = nodes_[b.id].val;
  if (av.ndim() != bv.ndim()) throw std::invalid_argument("concat_last: rank mismatch");
  for (int i = 0; i + 1 < av.ndim(); ++i) {
    if (av.dim(i) != bv.dim(i)) throw std::invalid_argument("concat_last: leading dim mismatch");
  }
  const auto [rows, ca] = rows_cols(av);
  const int cb = bv.shape().back();
  std::vector<int> oshape = av.shape();
  oshape.back() = ca + cb;
  Tensor out(oshape);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(av.data() + r * ca, av.data() + (r + 1) * ca, out.data() + r * (ca + cb));
    std::copy(bv.data() + r * cb, bv.data() + (r + 1) * cb, out.data() + r * (ca + cb) + ca);
  }
  const bool rg = wants(a) || wants(b);
  const int ca_c = ca, cb_c = cb;
  const int64_t rows_c = rows;
  return make(std::move(out), rg, [a, b, ca_c, cb_c, rows_c](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.wants(a)) {
      Tensor& ga = t.grad_buf(a.id);
      for (int64_t r = 0; r < rows_c; ++r) {
        for (int j = 0; j < ca_c; ++j) ga[r * ca_c + j] += g[r * (ca_c + cb_c) + j];
      }
    }
    if (t.wants(b)) {
      Tensor& gb = t.grad_buf(b.id);
      for (int64_t r = 0; r < rows_c; ++r) {
        for (int j = 0; j < cb_c; ++j) gb[r * cb_c + j] += g[r * (ca_c + cb_c) + ca_c + j];
      }
    }
  });
}

Var Tape::slice_last(Var a, int start, int len) {
  const Tensor& av = nodes_[a.id].val;
  const auto [rows, cols] = rows_cols(av);
  if (start < 0 || len <= 0 || start + len > cols) {
    throw std::invalid_argument("slice_last: out of range");
  }
  std::vector<int> oshape = av.shape();
  oshape.back() = len;
  Tensor out(oshape);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(av.data() + r * cols + start, av.data() + r * cols + start + len,
              out.data() + r * len);
  }
  const int64_t rows_c = rows;
  const int cols_c = cols;
  return make(std::move(out), wants(a), [a, start, len, rows_c, cols_c](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t r = 0; r < rows_c; ++r) {
      for (int j = 0; j < len; ++j) ga[r * cols_c + start + j] += g[r * len + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = nodes_[a.id].val;
  const Tensor& bv = nodes_[b.id].val;
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0)) {
    throw std::invalid_argument("matmul: bad shapes " + av.shape_str() + " x " + bv.shape_str());
  }
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  gemm(false, false, m, n, k, 1.0, av.data(), k, bv.data(), n, 0.0, out.data(), n);
  const bool rg = wants(a) || wants(b);
  return make(std::move(out), rg, [a, b, m, k, n](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& av = t.nodes_[a.id].val;
    const Tensor& bv = t.nodes_[b.id].val;
    if (t.wants(a)) {
      gemm(false, true, m, k, n, 1.0, g.data(), n, bv.data(), n, 1.0, t.grad_buf(a.id).data(), k);
    }
    if (t.wants(b)) {
      gemm(true, false, k, n, m, 1.0, av.data(), k, g.data(), n, 1.0, t.grad_buf(b.id).data(), n);
    }
  });
}

Var Tape::bmm(Var a, Var b) {
  const Tensor& av = nodes_[a.id].val;
  const Tensor& bv = nodes_[b.id].val;
  if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw std::invalid_argument("bmm: bad shapes " + av.shape_str() + " x " + bv.shape_str());
  }
  const int B = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor out({B, m, n});
  for (int i = 0; i < B; ++i) {
    gemm(false, false, m, n, k, 1.0, av.data() + static_cast<int64_t>(i) * m * k, k,
         bv.data() + static_cast<int64_t>(i) * k * n, n, 0.0,
         out.data() + static_cast<int64_t>(i) * m * n, n);
  }
  const bool rg = wants(a) || wants(b);
  return make(std::move(out), rg, [a, b, B, m, k, n](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& av = t.nodes_[a.id].val;
    const Tensor& bv = t.nodes_[b.id].val;
    for (int i = 0; i < B; ++i) {
      const double* gi = g.data() + static_cast<int64_t>(i) * m * n;
      if (t.wants(a)) {
        gemm(false, true, m, k, n, 1.0, gi, n, bv.data() + static_cast<int64_t>(i) * k * n, n, 1.0,
             t.grad_buf(a.id).data() + static_cast<int64_t>(i) * m * k, k);
      }
      if (t.wants(b)) {
        gemm(true, false, k, n, m, 1.0, av.data() + static_cast<int64_t>(i) * m * k, k, gi, n, 1.0,
             t.grad_buf(b.id).data() + static_cast<int64_t>(i) * k * n, n);
      }
    }
  });
}

Var Tape::add_row(Var a, Var b) {
  const Tensor& av = nodes_[a.id].val;
  const Tensor& bv = nodes_[b.id].val;
  const auto [rows, cols] = rows_cols(av);
  if (bv.ndim() != 1 || bv.dim(0) != cols) {
    throw std::invalid_argument("add_row: bias shape mismatch");
  }
  Tensor out = av;
  for (int64_t r = 0; r < rows; ++r) {
    for (int j = 0; j < cols; ++j) out[r * cols + j] += bv[j];
  }
  const bool rg = wants(a) || wants(b);
  const int64_t rows_c = rows;
  const int cols_c = cols;
  return make(std::move(out), rg, [a, b, rows_c, cols_c](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.wants(a)) t.grad_buf(a.id).add_scaled(g, 1.0);
    if (t.wants(b)) {
      Tensor& gb = t.grad_buf(b.id);
      for (int64_t r = 0; r < rows_c; ++r) {
        for (int j = 0; j < cols_c; ++j) gb[j] += g[r * cols_c + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var Tape::sum_axis(Var a, int axis) {
  const Tensor& av = nodes_[a.id].val;
  if (axis < 0 || axis >= av.ndim()) throw std::invalid_argument("sum_axis: bad axis");
  int64_t pre = 1, post = 1;
  for (int i = 0; i < axis; ++i) pre *= av.dim(i);
  for (int i = axis + 1; i < av.ndim(); ++i) post *= av.dim(i);
  const int len = av.dim(axis);
  std::vector<int> oshape;
  for (int i = 0; i < av.ndim(); ++i) {
    if (i != axis) oshape.push_back(av.dim(i));
  }
  if (oshape.empty()) oshape.push_back(1);
  Tensor out(oshape);
  for (int64_t p = 0; p < pre; ++p) {
    for (int l = 0; l < len; ++l) {
      const double* src = av.data() + (p * len + l) * post;
      double* dst = out.data() + p * post;
      for (int64_t q = 0; q < post; ++q) dst[q] += src[q];
    }
  }
  return make(std::move(out), wants(a), [a, pre, post, len](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t p = 0; p < pre; ++p) {
      for (int l = 0; l < len; ++l) {
        double* dst = ga.data() + (p * len + l) * post;
        const double* src = g.data() + p * post;
        for (int64_t q = 0; q < post; ++q) dst[q] += src[q];
      }
    }
  });
}

Var Tape::sum_all(Var a) {
  const Tensor& av = nodes_[a.id].val;
  double s = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
  return make(Tensor::scalar(s), wants(a), [a](Tape& t, int self) {
    if (!t.wants(a)) return;
    const double g = t.nodes_[self].grad[0];
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

Var Tape::mean_all(Var a) {
  const Tensor& av = nodes_[a.id].val;
  const double inv = 1.0 / static_cast<double>(av.numel());
  double s = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
  return make(Tensor::scalar(s * inv), wants(a), [a, inv](Tape& t, int self) {
    if (!t.wants(a)) return;
    const double g = t.nodes_[self].grad[0] * inv;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

Var Tape::softmax_last(Var a) {
  const Tensor& av = nodes_[a.id].val;
  const auto [rows, cols] = rows_cols(av);
  Tensor out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < cols; ++j) y[j] *= inv;
  }
  const int64_t rows_c = rows;
  const int cols_c = cols;
  return make(std::move(out), wants(a), [a, rows_c, cols_c](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].val;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t r = 0; r < rows_c; ++r) {
      const double* yr = y.data() + r * cols_c;
      const double* gr = g.data() + r * cols_c;
      double dot = 0.0;
      for (int j = 0; j < cols_c; ++j) dot += yr[j] * gr[j];
      double* dst = ga.data() + r * cols_c;
      for (int j = 0; j < cols_c; ++j) dst[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var Tape::logsumexp_last(Var a) {
  const Tensor& av = nodes_[a.id].val;
  const auto [rows, cols] = rows_cols(av);
  std::vector<int> oshape(av.shape().begin(), av.shape().end() - 1);
  if (oshape.empty()) oshape.push_back(1);
  Tensor out(oshape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    out[r] = mx + std::log(z);
  }
  const int64_t rows_c = rows;
  const int cols_c = cols;
  return make(std::move(out), wants(a), [a, rows_c, cols_c](Tape& t, int self) {
    if (!t.wants(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& lse = t.nodes_[self].val;
    const Tensor& x = t.nodes_[a.id].val;
    Tensor& ga = t.grad_buf(a.id);
    for (int64_t r = 0; r < rows_c; ++r) {
      const double* xr = x.data() + r * cols_c;
      double* dst = ga.data() + r * cols_c;
      for (int j = 0; j < cols_c; ++j) dst[j] += g[r] * std::exp(xr[j] - lse[r]);
    }
  });
}

Var Tape::layer_norm(Var xv, Var gain, Var bias) {
  constexpr double kEps = 1e-5;
  const Tensor& x = nodes_[xv.id].val;
  const Tensor& gv = nodes_[gain.id].val;
  const Tensor& bv = nodes_[bias.id].val;
  const auto [rows, cols] = rows_cols(x);
  if (gv.ndim() != 1 || gv.dim(0) != cols || !gv.same_shape(bv)) {
    throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
  }
  Tensor out(x.shape());
  Tensor stats({static_cast<int>(rows), 2});  // mean, inv_std per row
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += xr[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= cols;
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    stats.at(static_cast<int>(r), 0) = mean;
    stats.at(static_cast<int>(r), 1) = inv_std;
    double* yr = out.data() + r * cols;
    for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mean) * inv_std * gv[j] + bv[j];
  }
  const bool rg = wants(xv) || wants(gain) || wants(bias);
  const int64_t rows_c = rows;
  const int cols_c = cols;
  return make(std::move(out), rg, [xv, gain, bias, stats, rows_c, cols_c](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& x = t.nodes_[xv.id].val;
    const Tensor& gv = t.nodes_[gain.id].val;
    for (int64_t r = 0; r < rows_c; ++r) {
      const double mean = stats.at(static_cast<int>(r), 0);
      const double inv_std = stats.at(static_cast<int>(r), 1);
      const double* xr = x.data() + r * cols_c;
      const double* gr = g.data() + r * cols_c;
      if (t.wants(gain)) {
        Tensor& gg = t.grad_buf(gain.id);
        for (int j = 0; j < cols_c; ++j) gg[j] += gr[j] * (xr[j] - mean) * inv_std;
      }
      if (t.wants(bias)) {
        Tensor& gb = t.grad_buf(bias.id);
        for (int j = 0; j < cols_c; ++j) gb[j] += gr[j];
      }
      if (t.wants(xv)) {
        // dx = inv_std * (dxh - mean(dxh) - xh * mean(dxh * xh)), dxh = g * gain
        Tensor& gx = t.grad_buf(xv.id);
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int j = 0; j < cols_c; ++j) {
          const double xh = (xr[j] - mean) * inv_std;
          const double dxh = gr[j] * gv[j];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh;
        }
        const double inv_n = 1.0 / cols_c;
        double* dst = gx.data() + r * cols_c;
        for (int j = 0; j < cols_c; ++j) {
          const double xh = (xr[j] - mean) * inv_std;
          const double dxh = gr[j] * gv[j];
          dst[j] += inv_std * (dxh - inv_n * sum_dxh - xh * inv_n * sum_dxh_xh);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

struct ConvDims {
  int B, C, H, W, K, kh, kw, oh, ow, stride, pad;
};

// col layout: [C*kh*kw, ld] with this image's columns starting at col_off.
void im2col(const double* x, const ConvDims& d, double* col, int64_t ld, int64_t col_off) {
  for (int c = 0; c < d.C; ++c) {
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        double* dst = col + ((c * d.kh + i) * d.kw + j) * ld + col_off;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + i;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad + j;
            dst[oy * d.ow + ox] = (iy >= 0 && iy < d.H && ix >= 0 && ix < d.W)
                                      ? x[(c * d.H + iy) * d.W + ix]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvDims& d, double* x, int64_t ld, int64_t col_off) {
  for (int c = 0; c < d.C; ++c) {
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        const double* src = col + ((c * d.kh + i) * d.kw + j) * ld + col_off;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + i;
          if (iy < 0 || iy >= d.H) continue;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad + j;
            if (ix < 0 || ix >= d.W) continue;
            x[(c * d.H + iy) * d.W + ix] += src[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var Tape::conv2d(Var xv, Var wv, Var bv, int stride, int pad) {
  const Tensor& x = nodes_[xv.id].val;
  const Tensor& w = nodes_[wv.id].val;
  const Tensor& b = nodes_[bv.id].val;
  if (x.ndim() != 4 || w.ndim() != 4 || x.dim(1) != w.dim(1)) {
    throw std::invalid_argument("conv2d: bad shapes");
  }
  ConvDims d;
  d.B = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.K = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.H + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.W + 2 * pad - d.kw) / stride + 1;
  if (b.ndim() != 1 || b.dim(0) != d.K) throw std::invalid_argument("conv2d: bias shape");

  const int ck = d.C * d.kh * d.kw;
  const int S = d.oh * d.ow;
  const int64_t BS = static_cast<int64_t>(d.B) * S;
  Tensor out({d.B, d.K, d.oh, d.ow});
  {
    std::vector<double> col(static_cast<size_t>(ck) * BS);
    std::vector<double> y(static_cast<size_t>(d.K) * BS);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < d.B; ++n) {
      im2col(x.data() + static_cast<int64_t>(n) * d.C * d.H * d.W, d, col.data(), BS,
             static_cast<int64_t>(n) * S);
    }
    gemm(false, false, d.K, static_cast<int>(BS), ck, 1.0, w.data(), ck, col.data(),
         static_cast<int>(BS), 0.0, y.data(), static_cast<int>(BS));
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < d.B; ++n) {
      for (int k = 0; k < d.K; ++k) {
        const double* src = y.data() + static_cast<int64_t>(k) * BS + static_cast<int64_t>(n) * S;
        double* dst = out.data() + (static_cast<int64_t>(n) * d.K + k) * S;
        const double bias = b[k];
        for (int q = 0; q < S; ++q) dst[q] = src[q] + bias;
      }
    }
  }

  const bool rg = wants(xv) || wants(wv) || wants(bv);
  return make(std::move(out), rg, [xv, wv, bv, d, ck, S, BS](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& x = t.nodes_[xv.id].val;
    const Tensor& w = t.nodes_[wv.id].val;
    // dY reshaped to [K, B*S] once, shared by every term.
    std::vector<double> gy(static_cast<size_t>(d.K) * BS);
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < d.B; ++n) {
      for (int k = 0; k < d.K; ++k) {
        const double* src = g.data() + (static_cast<int64_t>(n) * d.K + k) * S;
        double* dst = gy.data() + static_cast<int64_t>(k) * BS + static_cast<int64_t>(n) * S;
        for (int q = 0; q < S; ++q) dst[q] = src[q];
      }
    }
    std::vector<double> col(static_cast<size_t>(ck) * BS);
    if (t.wants(wv)) {
#pragma omp parallel for schedule(static)
      for (int n = 0; n < d.B; ++n) {
        im2col(x.data() + static_cast<int64_t>(n) * d.C * d.H * d.W, d, col.data(), BS,
               static_cast<int64_t>(n) * S);
      }
      gemm(false, true, d.K, ck, static_cast<int>(BS), 1.0, gy.data(), static_cast<int>(BS),
           col.data(), static_cast<int>(BS), 1.0, t.grad_buf(wv.id).data(), ck);
    }
    if (t.wants(bv)) {
      Tensor& gb = t.grad_buf(bv.id);
      for (int k = 0; k < d.K; ++k) {
        const double* row = gy.data() + static_cast<int64_t>(k) * BS;
        double sum = 0.0;
        for (int64_t q = 0; q < BS; ++q) sum += row[q];
        gb[k] += sum;
      }
    }
    if (t.wants(xv)) {
      gemm(true, false, ck, static_cast<int>(BS), d.K, 1.0, w.data(), ck, gy.data(),
           static_cast<int>(BS), 0.0, col.data(), static_cast<int>(BS));
      double* gx = t.grad_buf(xv.id).data();
#pragma omp parallel for schedule(static)
      for (int n = 0; n < d.B; ++n) {
        col2im_add(col.data(), d, gx + static_cast<int64_t>(n) * d.C * d.H * d.W, BS,
                   static_cast<int64_t>(n) * S);
      }
    }
  });
}

Var Tape::conv2d_transpose(Var xv, Var wv, Var bv, int stride, int pad, int out_pad) {
  const Tensor& x = nodes_[xv.id].val;
  const Tensor& w = nodes_[wv.id].val;  // [C, K, kh, kw]
  const Tensor& b = nodes_[bv.id].val;
  if (x.ndim() != 4 || w.ndim() != 4 || x.dim(1) != w.dim(0)) {
    throw std::invalid_argument("conv2d_transpose: bad shapes");
  }
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int K = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int OH = (H - 1) * stride - 2 * pad + kh + out_pad;
  const int OW = (W - 1) * stride - 2 * pad + kw + out_pad;
  if (b.ndim() != 1 || b.dim(0) != K) throw std::invalid_argument("conv2d_transpose: bias shape");

  // The scatter uses conv dims with input/output roles flipped.
  ConvDims d;
  d.B = B;
  d.C = K;
  d.H = OH;
  d.W = OW;
  d.K = C;
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad = pad;
  d.oh = H;
  d.ow = W;

  const int kk = K * kh * kw;
  const int S = H * W;
  const int64_t BS = static_cast<int64_t>(B) * S;
  Tensor out({B, K, OH, OW});
  {
    // x viewed as [C, B*S], cols as [kk, B*S].
    std::vector<double> xt(static_cast<size_t>(C) * BS);
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < B; ++n) {
      for (int c = 0; c < C; ++c) {
        const double* src = x.data() + (static_cast<int64_t>(n) * C + c) * S;
        double* dst = xt.data() + static_cast<int64_t>(c) * BS + static_cast<int64_t>(n) * S;
        for (int q = 0; q < S; ++q) dst[q] = src[q];
      }
    }
    std::vector<double> col(static_cast<size_t>(kk) * BS);
    gemm(true, false, kk, static_cast<int>(BS), C, 1.0, w.data(), kk, xt.data(),
         static_cast<int>(BS), 0.0, col.data(), static_cast<int>(BS));
    double* y = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) y[i] = 0.0;
#pragma omp parallel for schedule(static)
    for (int n = 0; n < B; ++n) {
      col2im_add(col.data(), d, y + static_cast<int64_t>(n) * K * OH * OW, BS,
                 static_cast<int64_t>(n) * S);
    }
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < B; ++n) {
      for (int k = 0; k < K; ++k) {
        double* dst = y + (static_cast<int64_t>(n) * K + k) * OH * OW;
        const double bias = b[k];
        for (int q = 0; q < OH * OW; ++q) dst[q] += bias;
      }
    }
  }

  const bool rg = wants(xv) || wants(wv) || wants(bv);
  return make(std::move(out), rg, [xv, wv, bv, d, B, C, K, OH, OW, kk, S, BS](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& x = t.nodes_[xv.id].val;
    const Tensor& w = t.nodes_[wv.id].val;
    // dcols = im2col(gy) with flipped dims; dX = w * dcols, dW += x * dcols^T.
    std::vector<double> col(static_cast<size_t>(kk) * BS);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < B; ++n) {
      im2col(g.data() + static_cast<int64_t>(n) * K * OH * OW, d, col.data(), BS,
             static_cast<int64_t>(n) * S);
    }
    if (t.wants(xv) || t.wants(wv)) {
      std::vector<double> buf(static_cast<size_t>(C) * BS);
      if (t.wants(xv)) {
        gemm(false, false, C, static_cast<int>(BS), kk, 1.0, w.data(), kk, col.data(),
             static_cast<int>(BS), 0.0, buf.data(), static_cast<int>(BS));
        Tensor& gx = t.grad_buf(xv.id);
#pragma omp parallel for schedule(static) collapse(2)
        for (int n = 0; n < B; ++n) {
          for (int c = 0; c < C; ++c) {
            const double* src = buf.data() + static_cast<int64_t>(c) * BS + static_cast<int64_t>(n) * S;
            double* dst = gx.data() + (static_cast<int64_t>(n) * C + c) * S;
            for (int q = 0; q < S; ++q) dst[q] += src[q];
          }
        }
      }
      if (t.wants(wv)) {
#pragma omp parallel for schedule(static) collapse(2)
        for (int n = 0; n < B; ++n) {
          for (int c = 0; c < C; ++c) {
            const double* src = x.data() + (static_cast<int64_t>(n) * C + c) * S;
            double* dst = buf.data() + static_cast<int64_t>(c) * BS + static_cast<int64_t>(n) * S;
            for (int q = 0; q < S; ++q) dst[q] = src[q];
          }
        }
        gemm(false, true, C, kk, static_cast<int>(BS), 1.0, buf.data(), static_cast<int>(BS),
             col.data(), static_cast<int>(BS), 1.0, t.grad_buf(wv.id).data(), kk);
      }
    }
    if (t.wants(bv)) {
      Tensor& gb = t.grad_buf(bv.id);
      for (int n = 0; n < B; ++n) {
        const double* gy = g.data() + static_cast<int64_t>(n) * K * OH * OW;
        for (int k = 0; k < K; ++k) {
          double sum = 0.0;
          for (int q = 0; q < OH * OW; ++q) sum += gy[k * OH * OW + q];
          gb[k] += sum;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Fused objectives

Var Tape::mdn_nll(Var alpha_logits, Var mu, Var logvar, Tensor targets) {
  const Tensor& A = nodes_[alpha_logits.id].val;
  const Tensor& M = nodes_[mu.id].val;
  const Tensor& LV = nodes_[logvar.id].val;
  if (A.ndim() != 2 || M.ndim() != 3 || M.dim(2) != 2 || !M.same_shape(LV) ||
      M.dim(0) != A.dim(0) || M.dim(1) != A.dim(1) || targets.ndim() != 3 ||
      targets.dim(0) != A.dim(0) || targets.dim(2) != 2) {
    throw std::invalid_argument("mdn_nll: bad shapes");
  }
  const int B = A.dim(0), K = A.dim(1), n = targets.dim(1);

  // log alpha, per-sample
  Tensor log_alpha({B, K});
  for (int b = 0; b < B; ++b) {
    double mx = A.at(b, 0);
    for (int k = 1; k < K; ++k) mx = std::max(mx, A.at(b, k));
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(A.at(b, k) - mx);
    const double lse = mx + std::log(z);
    for (int k = 0; k < K; ++k) log_alpha.at(b, k) = A.at(b, k) - lse;
  }

  // Responsibilities are cached for the backward pass.
  Tensor resp({B, n, K});
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      double mx = -1e300;
      for (int k = 0; k < K; ++k) {
        double q = log_alpha.at(b, k) - kLog2Pi;
        for (int dd = 0; dd < 2; ++dd) {
          const double lv = LV.at(b, k, dd);
          const double diff = targets.at(b, i, dd) - M.at(b, k, dd);
          q -= 0.5 * (lv + diff * diff * std::exp(-lv));
        }
        resp.at(b, i, k) = q;
        mx = std::max(mx, q);
      }
      double z = 0.0;
      for (int k = 0; k < K; ++k) z += std::exp(resp.at(b, i, k) - mx);
      const double lp = mx + std::log(z);
      total += lp;
      for (int k = 0; k < K; ++k) resp.at(b, i, k) = std::exp(resp.at(b, i, k) - lp);
    }
  }
  const double loss = -total / (static_cast<double>(B) * n);

  const bool rg = wants(alpha_logits) || wants(mu) || wants(logvar);
  return make(Tensor::scalar(loss), rg,
              [alpha_logits, mu, logvar, targets = std::move(targets), log_alpha = std::move(log_alpha),
               resp = std::move(resp), B, K, n](Tape& t, int self) {
                const double c = t.nodes_[self].grad[0] / (static_cast<double>(B) * n);
                const Tensor& M = t.nodes_[mu.id].val;
                const Tensor& LV = t.nodes_[logvar.id].val;
                for (int b = 0; b < B; ++b) {
                  // W_k = sum_i resp_ik
                  std::vector<double> W(K, 0.0);
                  for (int i = 0; i < n; ++i) {
                    for (int k = 0; k < K; ++k) W[k] += resp.at(b, i, k);
                  }
                  if (t.wants(alpha_logits)) {
                    Tensor& gA = t.grad_buf(alpha_logits.id);
                    for (int k = 0; k < K; ++k) {
                      const double alpha = std::exp(log_alpha.at(b, k));
                      gA.at(b, k) += c * (n * alpha - W[k]);
                    }
                  }
                  if (t.wants(mu) || t.wants(logvar)) {
                    for (int k = 0; k < K; ++k) {
                      for (int dd = 0; dd < 2; ++dd) {
                        const double lv = LV.at(b, k, dd);
                        const double inv_var = std::exp(-lv);
                        double gm = 0.0, glv = 0.0;
                        for (int i = 0; i < n; ++i) {
                          const double w = resp.at(b, i, k);
                          const double diff = targets.at(b, i, dd) - M.at(b, k, dd);
                          gm += w * diff;
                          glv += w * (1.0 - diff * diff * inv_var);
                        }
                        if (t.wants(mu)) t.grad_buf(mu.id).at(b, k, dd) += -c * inv_var * gm;
                        if (t.wants(logvar)) t.grad_buf(logvar.id).at(b, k, dd) += 0.5 * c * glv;
                      }
                    }
                  }
                }
              });
}

Var Tape::bce_with_logits(Var logits, Tensor targets) {
  const Tensor& L = nodes_[logits.id].val;
  if (!L.same_shape(targets)) throw std::invalid_argument("bce_with_logits: shape mismatch");
  const int64_t N = L.numel();
  double total = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    const double l = L[i];
    const double y = targets[i];
    total += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
  }
  const double loss = total / static_cast<double>(N);
  return make(Tensor::scalar(loss), wants(logits),
              [logits, targets = std::move(targets), N](Tape& t, int self) {
                if (!t.wants(logits)) return;
                const double c = t.nodes_[self].grad[0] / static_cast<double>(N);
                const Tensor& L = t.nodes_[logits.id].val;
                Tensor& g = t.grad_buf(logits.id);
                for (int64_t i = 0; i < N; ++i) {
                  const double s = 1.0 / (1.0 + std::exp(-L[i]));
                  g[i] += c * (s - targets[i]);
                }
              });
}

// ---------------------------------------------------------------------------
// Composed graphs

Var scaled_dot_attention(Tape& t, Var q, Var k, Var v) {
  const int dk = t.value(q).shape().back();
  Var scores = t.bmm(q, t.transpose_last2(k));
  scores = t.scale(scores, 1.0 / std::sqrt(static_cast<double>(dk)));
  return t.bmm(t.softmax_last(scores), v);
}

Var diag_gaussian_log_density(Tape& t, Var x, Var mu, Var logvar) {
  const int d = t.value(x).shape().back();
  Var diff = t.sub(x, mu);
  Var inv_var = t.exp_(t.scale(logvar, -1.0));
  Var quad = t.mul(t.mul(diff, diff), inv_var);
  Var per_dim = t.add(logvar, quad);           // log var + (x-mu)^2 / var
  Var s = t.sum_axis(per_dim, t.value(x).ndim() - 1);
  s = t.add_scalar(t.scale(s, -0.5), -0.5 * kLog2Pi * d);
  // keep a trailing dim of 1 for row-wise composition
  std::vector<int> shape = t.value(x).shape();
  shape.back() = 1;
  return t.reshape(s, shape);
}

}  // namespace mops::diff
