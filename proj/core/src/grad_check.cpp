#include "mops/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mops/random.hpp"

namespace mops::diff {

GradCheckReport grad_check(ParamStore& store, const LossBuilder& build, double h,
                           int max_elems_per_param, uint64_t seed) {
  GradCheckReport report;

  // Analytic gradients once.
  Tape tape;
  Var loss = build(tape);
  tape.backward(loss);
  const auto grads = tape.param_grads(store);

  RandomStream rng(seed);
  for (const auto& name : store.names()) {
    GradCheckEntry entry;
    entry.name = name;
    Tensor& p = store.get(name);
    const auto it = grads.find(name);

    std::vector<int64_t> elems;
    if (p.numel() <= max_elems_per_param) {
      for (int64_t i = 0; i < p.numel(); ++i) elems.push_back(i);
    } else {
      for (int i = 0; i < max_elems_per_param; ++i) {
        elems.push_back(static_cast<int64_t>(rng.uniform_int(p.numel())));
      }
      std::sort(elems.begin(), elems.end());
      elems.erase(std::unique(elems.begin(), elems.end()), elems.end());
    }

    for (int64_t idx : elems) {
      const double orig = p[idx];
      p[idx] = orig + h;
      Tape tp;
      const double lp = tp.value(build(tp))[0];
      p[idx] = orig - h;
      Tape tm;
      const double lm = tm.value(build(tm))[0];
      p[idx] = orig;

      const double fd = (lp - lm) / (2.0 * h);
      const double an = it != grads.end() ? (*it->second)[idx] : 0.0;
      const double abs_err = std::abs(fd - an);
      const double rel_err = abs_err / std::max({std::abs(fd), std::abs(an), 1e-2});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, rel_err);
      ++entry.checked_elems;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.params.push_back(std::move(entry));
  }
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  for (const auto& e : report.params) {
    os << "  " << e.name << ": max_rel_err=" << e.max_rel_err << " max_abs_err=" << e.max_abs_err
       << " (" << e.checked_elems << " elems)\n";
  }
  os << "  overall max_rel_err=" << report.max_rel_err << "\n";
  return os.str();
}

}  // namespace mops::diff
