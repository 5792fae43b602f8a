#pragma once

#include <cstdint>
#include <utility>

#include "dmlkit/serialize.hpp"
#include "dmlkit/tensor.hpp"

namespace dmlkit {

// Four 3x3 conv layers with relu: stem (stride 2), stem (stride 1), local
// stage (stride 2), global stage (stride 2). The local map is the output of
// the third layer, the global map the output of the fourth, preserving the
// shape ordering H_g <= H_l, W_g <= W_l, C_g >= C_l.
struct BackboneConfig {
  std::size_t input_h = 32;
  std::size_t input_w = 32;
  std::size_t stem_channels = 16;
  std::size_t local_channels = 32;
  std::size_t global_channels = 64;
};

struct BackboneParams {
  Tensor w0, b0;  // 3 -> stem, stride 2
  Tensor w1, b1;  // stem -> stem, stride 1
  Tensor w2, b2;  // stem -> local, stride 2
  Tensor w3, b3;  // local -> global, stride 2

  NamedTensors named(const std::string& prefix) const;
};

// He fan-in normal weights (stddev sqrt(2/fan_in)), zero biases.
BackboneParams init_backbone(const BackboneConfig& cfg, std::uint64_t seed);

// Returns (f_l, f_g). For the default config a (B,32,32,3) batch maps to
// f_l (B,8,8,32) and f_g (B,4,4,64).
std::pair<Tensor, Tensor> backbone_forward(const Tensor& x,
                                           const BackboneParams& p,
                                           const BackboneConfig& cfg);

// He-style fan-in init shared by the conv/projection layers elsewhere.
Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace dmlkit
