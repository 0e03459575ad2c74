#pragma once
// Central finite-difference oracle for tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "scar/graph.hpp"
#include "scar/tensor.hpp"

namespace scar::testing {

/// Builds a scalar loss from leaves bound to the given inputs.
using LossBuilder = std::function<ag::Var(ag::Tape&, const std::vector<ag::Var>&)>;

struct FdReport {
  double max_rel_error = 0.0;
  std::vector<double> rel_errors;  // one per input
};

/// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor) per input.
inline FdReport check_gradients(const LossBuilder& build, const std::vector<Tensor>& inputs,
                                double step = 1e-5, double floor = 1e-8) {
  std::vector<Tensor> analytic;
  {
    ag::Tape tape;
    std::vector<ag::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    ag::Var loss = build(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(l.grad());
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    ag::Tape tape;
    std::vector<ag::Var> leaves;
    for (const auto& t : xs) leaves.push_back(tape.leaf(t, false));
    return build(tape, leaves).value().item();
  };
  FdReport rep;
  std::vector<Tensor> xs = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + step;
      const double up = eval(xs);
      xs[k][i] = orig - step;
      const double down = eval(xs);
      xs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    rep.rel_errors.push_back(rel);
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
  }
  return rep;
}

}  // namespace scar::testing
