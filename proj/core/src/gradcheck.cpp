#include "amda/gradcheck.hpp"

#include <cmath>
#include <sstream>

namespace amda {

std::string GradCheckReport::describe() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << " max_rel_err=" << max_rel_err
     << " at input " << worst_input << " index " << worst_index
     << " (analytic=" << analytic << ", numeric=" << numeric << ")";
  return os.str();
}

GradCheckReport finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    const std::vector<Tensor>& inputs, double h, double tol) {
  // One analytic pass: record the whole forward on a fresh tape, then
  // pull gradients back to every grad-enabled input.
  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = fn(inputs);
    if (out.size() != 1) {
      throw DimensionError("finite_difference_check: function output of shape " +
                           shape_string(out.shape()) + " is not a scalar");
    }
    tape.backward(out);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].requires_grad()) continue;
      analytic[i] = inputs[i].has_grad()
                        ? inputs[i].grad()
                        : std::vector<double>(inputs[i].size(), 0.0);
      inputs[i].node()->grad.clear();
    }
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    std::vector<double>& vals = inputs[i].node()->value;
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double saved = vals[j];
      vals[j] = saved + h;
      const double up = fn(inputs).item();
      vals[j] = saved - h;
      const double down = fn(inputs).item();
      vals[j] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double ad = analytic[i][j];
      const double rel = std::abs(ad - numeric) /
                         std::max({std::abs(ad), std::abs(numeric), 1.0});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = i;
        report.worst_index = j;
        report.analytic = ad;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_err <= tol;
  return report;
}

} // namespace amda
