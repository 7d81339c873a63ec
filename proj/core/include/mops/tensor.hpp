#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "mops/random.hpp"

namespace mops::diff {

// Dense row-major tensor of doubles, up to 4 dimensions. All training math
// runs in 64-bit so finite-difference checks stay meaningful.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor from(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double v) { return from({1}, {v}); }
  // Uniform in [-limit, limit].
  static Tensor uniform(std::vector<int> shape, double limit, RandomStream& rng);
  static Tensor normal(std::vector<int> shape, double mean, double stddev, RandomStream& rng);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[i]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[i]; }
  double operator[](int64_t i) const { return data_[i]; }

  double& at(int i, int j) { return data_[static_cast<int64_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<int64_t>(i) * shape_[1] + j]; }
  double& at(int i, int j, int k) {
    return data_[(static_cast<int64_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<int64_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v);
  void add_scaled(const Tensor& o, double s);  // this += s * o
  double max_abs() const;
  bool all_finite() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int>& shape);

}  // namespace mops::diff
