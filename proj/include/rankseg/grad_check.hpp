#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rankseg/params.hpp"
#include "rankseg/tensor.hpp"

namespace rankseg {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
  }
  bool empty() const { return entries.empty(); }
};

// Compares analytic gradients against central finite differences. The
// fragment must rebuild its graph from the current leaf values on every call
// and return a scalar. 64-bit only; finite differences are meaningless at
// float tolerances.
inline GradCheckReport grad_check(const std::function<Tensor64()>& fragment,
                                  std::vector<ParameterT<double>> leaves, double step = 1e-5) {
  if (step <= 0) throw std::invalid_argument("grad_check: step must be positive");

  GradCheckReport report;

  std::vector<std::vector<double>> analytic;
  {
    Tape64 tape;
    Tape64::Scope scope(tape);
    for (auto& leaf : leaves) leaf.tensor.clear_grad();
    Tensor64 loss = fragment();
    if (loss.numel() != 1) throw std::invalid_argument("grad_check: fragment must produce a scalar");
    if (tape.size() > 0) tape.backward(loss);  // constant fragments record nothing
    for (auto& leaf : leaves) {
      if (leaf.tensor.has_grad()) {
        analytic.push_back(leaf.tensor.grad());
      } else {
        analytic.emplace_back(leaf.tensor.data().size(), 0.0);
      }
      leaf.tensor.clear_grad();
    }
  }

  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& values = leaves[li].tensor.data();
    GradCheckEntry entry{leaves[li].name, 0.0};
    for (size_t i = 0; i < values.size(); ++i) {
      double saved = values[i];
      values[i] = saved + step;
      double fplus = fragment().item();
      values[i] = saved - step;
      double fminus = fragment().item();
      values[i] = saved;
      double numeric = (fplus - fminus) / (2.0 * step);
      double a = analytic[li][i];
      double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace rankseg
