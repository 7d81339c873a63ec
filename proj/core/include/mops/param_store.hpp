#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mops/tensor.hpp"

namespace mops::diff {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameter tensors plus their Adam moments. One store per trainable
// network; optimizer updates are serialized through adam_step.
class ParamStore {
 public:
  Tensor& create(const std::string& name, Tensor init);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  std::vector<std::string> names() const;
  int64_t total_params() const;

  // Bias-corrected Adam on every gradient in `grads`; t advances once per call.
  void adam_step(const std::map<std::string, const Tensor*>& grads, const AdamConfig& cfg);
  int64_t step_count() const { return step_; }

  // Versioned binary checkpoint: header + (name, shape, raw little-endian
  // doubles) per parameter. `tag` records model identity.
  void save(const std::string& path, const std::string& tag = "") const;
  static ParamStore load(const std::string& path, std::string* tag = nullptr);

  // FNV-1a over raw parameter bytes; used by freeze checks.
  uint64_t content_hash() const;

 private:
  struct Entry {
    Tensor value;
    Tensor m;
    Tensor v;
  };
  std::map<std::string, Entry> entries_;
  int64_t step_ = 0;
};

// target <- rho * target + (1 - rho) * source, matched by name.
void polyak_update(ParamStore& target, const ParamStore& source, double rho);

// Copies every parameter of source into target (shapes must match).
void copy_params(ParamStore& target, const ParamStore& source);

}  // namespace mops::diff
