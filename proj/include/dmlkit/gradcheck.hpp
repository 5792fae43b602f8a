#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dmlkit/tensor.hpp"

namespace dmlkit {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;  // number of input elements compared
  bool pass = false;
};

// Builds a scalar loss from the given inputs. Must be pure: same inputs, same
// loss. Any parameters the graph needs have to be part of `inputs` (to be
// checked) or captured as constants.
using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares the tape gradient of fn w.r.t. every element of every input
// against central finite differences (loss(x+h) - loss(x-h)) / 2h.
// Error metric per element: |analytic - fd| / max(1, |analytic|, |fd|).
GradCheckReport check_gradients(const std::string& name,
                                std::vector<Tensor> inputs, const LossFn& fn,
                                double step = 1e-6, double tol = 1e-4);

// Named finite-difference cases covering every differentiable op and the
// composed model graphs. Deterministic in `seed`.
std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed);

// Fault-injection fixture: runs the checker against a multi-similarity loss
// whose input gradient is deliberately sign-flipped. A healthy checker
// returns pass == false here.
GradCheckReport run_ms_sign_flip_fixture(std::uint64_t seed);

}  // namespace dmlkit
