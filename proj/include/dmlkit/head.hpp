#pragma once

#include <cstdint>

#include "dmlkit/serialize.hpp"
#include "dmlkit/tensor.hpp"

namespace dmlkit {

struct HeadConfig {
  std::size_t embedding_dim = 512;  // D, must be even (two D/2 branches)
};

struct HeadParams {
  Tensor w_l, b_l;  // C_l x D/2 projection for the local branch
  Tensor w_g, b_g;  // C_g x D/2 projection for the global branch

  NamedTensors named(const std::string& prefix) const;
};

HeadParams init_head(std::size_t local_channels, std::size_t global_channels,
                     const HeadConfig& cfg, std::uint64_t seed);

// Per-channel spatial mean + spatial max, (batch, h, w, c) -> (batch, c).
Tensor gap_gmp_pool(const Tensor& f_soa);

// F = concat(pool(f_l) W_l + b_l, pool(f_g) W_g + b_g); raw embedding —
// normalization is the consumer's duty.
Tensor embed(const Tensor& f_l_soa, const Tensor& f_g_soa, const HeadParams& p);

// Moves each block x block spatial tile into channels:
// out[y, x, (bi*block + bj)*C + c] = in[y*block + bi, x*block + bj, c].
Tensor space_to_depth(const Tensor& f, std::size_t block);

}  // namespace dmlkit
