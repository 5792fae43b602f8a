#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmlkit/backbone.hpp"
#include "dmlkit/config.hpp"
#include "dmlkit/head.hpp"
#include "dmlkit/serialize.hpp"
#include "dmlkit/soa.hpp"
#include "dmlkit/tensor.hpp"

namespace dmlkit {

// Network hyperparameters only (no data/loss/optimizer settings).
struct ModelConfig {
  DescriptorMode descriptors = DescriptorMode::both;
  SoaMode soa = SoaMode::on;
  double zeta = 1.0;
  std::size_t soa_proj_dim = 0;  // 0 = half the attended channels
  std::size_t embedding_dim = 32;
  std::size_t input_size = 32;  // square model input (post-crop)
  std::size_t stem_channels = 16;
  std::size_t local_channels = 32;
  std::size_t global_channels = 64;
};

ModelConfig model_config_from(const RunConfig& run);

// Backbone + optional per-branch attention + pooled projection head,
// assembled according to descriptors/soa:
//   - both|on:          two branches, one attention block each, D/2 + D/2
//   - both|off:         two branches, no attention, D/2 + D/2
//   - local|*,global|*: one branch, optional attention, full-D projection
//   - both|single_head: local map space-to-depth'd onto the global grid,
//                       channel-concatenated, one shared attention block,
//                       single full-D projection
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  // (B, input_size, input_size, 3) -> raw (B, D) embeddings; records on the
  // active tape like any op chain.
  Tensor forward(const Tensor& images) const;

  // (name, attention map (B, hw, hw)) for every active attention block.
  std::vector<std::pair<std::string, Tensor>> attention_maps(
      const Tensor& images) const;

  // Stable name -> tensor order, identical across runs of the same config.
  NamedTensors named_params() const;
  std::vector<Tensor> param_list() const;

  const ModelConfig& config() const { return cfg_; }

 private:
  // The merged feature map fed to the single_head attention block.
  Tensor merged_map(const Tensor& f_l, const Tensor& f_g) const;

  ModelConfig cfg_;
  BackboneConfig backbone_cfg_;
  BackboneParams backbone_;
  SoaConfig soa_cfg_;
  bool use_soa_local_ = false, use_soa_global_ = false,
       use_soa_merged_ = false;
  SoaParams soa_local_, soa_global_, soa_merged_;
  bool dual_head_ = false;
  HeadParams head_;      // dual-branch projections (descriptors = both)
  Tensor w_s_, b_s_;     // single projection (one branch or single_head)
};

}  // namespace dmlkit
