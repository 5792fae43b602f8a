#include "dmlkit/gradcheck.hpp"

#include <cmath>

namespace dmlkit {

GradCheckReport check_gradients(const std::string& name,
                                std::vector<Tensor> inputs, const LossFn& fn,
                                double step, double tol) {
  GradCheckReport report;
  report.name = name;

  for (Tensor& t : inputs) {
    t.node()->requires_grad = true;
    t.ensure_grad();
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = fn(inputs);
    tape.backward(loss);
  }

  // No tape is active below, so these evaluations record nothing.
  for (Tensor& t : inputs) {
    auto data = t.mutable_data();
    auto analytic = t.grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + step;
      const double lp = fn(inputs).value();
      data[j] = saved - step;
      const double lm = fn(inputs).value();
      data[j] = saved;
      const double fd = (lp - lm) / (2.0 * step);
      const double a = analytic[j];
      const double rel =
          std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.checked;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace dmlkit
