#include "mops/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mops::diff {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4) {
    throw std::invalid_argument("Tensor: rank must be 1..4");
  }
  for (int d : shape_) {
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
  }
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  Tensor t(std::move(shape));
  if (static_cast<int64_t>(values.size()) != t.numel()) {
    throw std::invalid_argument("Tensor::from: value count mismatch");
  }
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, double limit, RandomStream& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data_[i] = rng.uniform(-limit, limit);
  return t;
}

Tensor Tensor::normal(std::vector<int> shape, double mean, double stddev, RandomStream& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data_[i] = rng.normal(mean, stddev);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << "]";
  return os.str();
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

void Tensor::add_scaled(const Tensor& o, double s) {
  const int64_t n = numel();
#pragma omp parallel for schedule(static) if (n > 131072)
  for (int64_t i = 0; i < n; ++i) data_[i] += s * o.data_[i];
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace mops::diff
