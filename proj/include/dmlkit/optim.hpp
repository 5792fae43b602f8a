#pragma once

#include <cstdint>
#include <vector>

#include "dmlkit/serialize.hpp"
#include "dmlkit/tensor.hpp"

namespace dmlkit {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamGroup {
  std::vector<Tensor> params;
  double lr = 1e-4;
  double weight_decay = 1e-4;
};

// AdamW with bias correction and decoupled weight decay
// (theta -= lr * wd * theta, applied outside the adaptive term).
class AdamW {
 public:
  AdamW(std::vector<ParamGroup> groups, AdamWConfig cfg = {});

  // Validates that every parameter has a finite gradient of the right size
  // before mutating anything, then applies one update.
  void step();
  void zero_grads();
  std::uint64_t steps() const { return t_; }

  // Moment accumulators (and the step counter) for checkpointing; restore
  // must see the same group/param layout that produced the state.
  NamedTensors state() const;
  void load_state(const NamedTensors& state);

 private:
  std::vector<ParamGroup> groups_;
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<std::vector<double>>> m_, v_;  // [group][param][elem]
};

}  // namespace dmlkit
