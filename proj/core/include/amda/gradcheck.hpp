#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "amda/tensor.hpp"

namespace amda {

/// Outcome of comparing analytic gradients against central differences.
struct GradCheckReport {
  bool passed = true;
  double max_rel_err = 0.0;     ///< worst relative error over all coordinates
  std::size_t worst_input = 0;  ///< which input tensor held the worst coordinate
  std::size_t worst_index = 0;  ///< flat index of the worst coordinate
  double analytic = 0.0;        ///< analytic derivative at the worst coordinate
  double numeric = 0.0;         ///< central-difference estimate there

  std::string describe() const;
};

/// Checks every coordinate of every grad-enabled input of a scalar-valued
/// function.  The numeric estimate is the central difference
/// (f(x+h) - f(x-h)) / 2h and the error of a coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1).  The function must
/// be deterministic in its inputs.
GradCheckReport finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    const std::vector<Tensor>& inputs, double h = 1e-5, double tol = 1e-4);

} // namespace amda
