#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tlf/tensor.hpp"

namespace tlf {

// Result of checking one parameter of one closure.
struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 1e-4;

  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return true;
  }
  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
  }
};

// Compares reverse-mode gradients against central finite differences.
//
// `loss_fn` must rebuild its computation from the given leaves on every call
// and return a scalar; it is evaluated once on a tape for the analytic
// gradients and then twice per element with step +-h.
inline GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& loss_fn, std::vector<Tensor> leaves,
    double tolerance = 1e-4, double step = 1e-3) {
  GradCheckReport report;
  report.tolerance = tolerance;

  for (auto& leaf : leaves) leaf.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn(leaves);
    tape.backward(loss);
  }

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    GradCheckEntry entry;
    entry.name = leaf.name().empty() ? "leaf" + std::to_string(li) : leaf.name();
    const auto analytic = leaf.grad();
    for (int i = 0; i < leaf.size(); ++i) {
      const double saved = leaf.data()[i];
      leaf.data()[i] = saved + step;
      const double up = loss_fn(leaves).item();
      leaf.data()[i] = saved - step;
      const double down = loss_fn(leaves).item();
      leaf.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[static_cast<std::size_t>(i)];
      const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    entry.pass = entry.max_rel_err < tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tlf
