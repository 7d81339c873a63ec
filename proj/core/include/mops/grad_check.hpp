#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mops/param_store.hpp"
#include "mops/tape.hpp"

namespace mops::diff {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int checked_elems = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_err = 0.0;
  bool passed(double tol) const { return max_rel_err < tol; }
};

// Builds a scalar loss from the store's current parameters. Must be a pure
// function of the parameter values (fix all other inputs up front).
using LossBuilder = std::function<Var(Tape&)>;

// Central finite differences (step h) against reverse-mode gradients. Large
// tensors are subsampled to max_elems_per_param deterministic positions.
GradCheckReport grad_check(ParamStore& store, const LossBuilder& build, double h = 1e-5,
                           int max_elems_per_param = 16, uint64_t seed = 12345);

std::string format_report(const GradCheckReport& report);

}  // namespace mops::diff
