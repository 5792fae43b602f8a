#pragma once

#include <cstdint>

#include "dmlkit/serialize.hpp"
#include "dmlkit/tensor.hpp"

namespace dmlkit {

struct SoaConfig {
  double zeta = 1.0;   // attention logit scaling factor
  std::size_t d = 0;   // q/k/v projection channels; 0 means max(C/2, 1)
};

struct SoaParams {
  Tensor wq, bq;        // 1x1 conv C -> d
  Tensor wk, bk;        // 1x1 conv C -> d
  Tensor wv, bv;        // 1x1 conv C -> d
  Tensor wphi, bphi;    // 1x1 conv d -> C, zero-initialized weight

  std::size_t channels() const { return wq.dim(2); }
  std::size_t proj_dim() const { return wq.dim(3); }
  NamedTensors named(const std::string& prefix) const;
};

std::size_t soa_proj_dim(std::size_t channels, const SoaConfig& cfg);

// q/k/v weights He-initialized, phi weight all-zero so the block starts as
// the identity mapping; all biases zero.
SoaParams init_soa(std::size_t channels, const SoaConfig& cfg,
                   std::uint64_t seed);

// Row-stochastic attention, one (hw x hw) matrix per sample, returned as
// (batch, hw, hw). Row i is the softmax over key locations of
// zeta * <q_i, k_j>.
Tensor attention_map(const Tensor& f, const SoaParams& p, const SoaConfig& cfg);

// f + phi(a x v), shape-preserving residual re-weighting.
Tensor soa_forward(const Tensor& f, const SoaParams& p, const SoaConfig& cfg);

}  // namespace dmlkit
