#include "dmlkit/model.hpp"

#include <random>

#include "dmlkit/errors.hpp"

namespace dmlkit {

namespace {

// Output extent of one 3x3 / pad 1 conv layer.
std::size_t conv_out(std::size_t n, std::size_t stride) {
  return (n + 2 - 3) / stride + 1;
}

}  // namespace

ModelConfig model_config_from(const RunConfig& run) {
  ModelConfig cfg;
  cfg.descriptors = run.descriptors;
  cfg.soa = run.soa;
  cfg.zeta = run.zeta;
  cfg.soa_proj_dim = run.soa_proj_dim;
  cfg.embedding_dim = run.embedding_dim;
  cfg.input_size = run.crop_size;
  cfg.stem_channels = run.stem_channels;
  cfg.local_channels = run.local_channels;
  cfg.global_channels = run.global_channels;
  return cfg;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  backbone_cfg_.input_h = cfg.input_size;
  backbone_cfg_.input_w = cfg.input_size;
  backbone_cfg_.stem_channels = cfg.stem_channels;
  backbone_cfg_.local_channels = cfg.local_channels;
  backbone_cfg_.global_channels = cfg.global_channels;
  soa_cfg_.zeta = cfg.zeta;
  soa_cfg_.d = cfg.soa_proj_dim;

  if (cfg.soa == SoaMode::single_head &&
      cfg.descriptors != DescriptorMode::both) {
    throw ConfigError("soa: single_head requires descriptors = both");
  }

  const std::size_t h_l =
      conv_out(conv_out(cfg.input_size, 2), 2);  // stride-1 stem keeps size
  const std::size_t h_g = conv_out(h_l, 2);
  const std::size_t merged_channels =
      4 * cfg.local_channels + cfg.global_channels;

  auto check_proj = [&](std::size_t channels, const char* where) {
    if (cfg.soa_proj_dim > channels) {
      throw ConfigError("soa_proj_dim: " + std::to_string(cfg.soa_proj_dim) +
                        " exceeds " + where + " channel count " +
                        std::to_string(channels));
    }
  };

  backbone_ = init_backbone(backbone_cfg_, seed);
  dual_head_ = cfg.descriptors == DescriptorMode::both &&
               cfg.soa != SoaMode::single_head;

  switch (cfg.soa) {
    case SoaMode::off:
      break;
    case SoaMode::on:
      if (cfg.descriptors != DescriptorMode::global) {
        check_proj(cfg.local_channels, "local");
        use_soa_local_ = true;
        soa_local_ = init_soa(cfg.local_channels, soa_cfg_, seed + 1);
      }
      if (cfg.descriptors != DescriptorMode::local) {
        check_proj(cfg.global_channels, "global");
        use_soa_global_ = true;
        soa_global_ = init_soa(cfg.global_channels, soa_cfg_, seed + 2);
      }
      break;
    case SoaMode::single_head:
      if (h_l != 2 * h_g || h_l % 2 != 0) {
        throw ConfigError(
            "crop_size: incompatible with soa = single_head (local grid " +
            std::to_string(h_l) + " must be exactly twice the global grid " +
            std::to_string(h_g) + ")");
      }
      check_proj(merged_channels, "merged");
      use_soa_merged_ = true;
      soa_merged_ = init_soa(merged_channels, soa_cfg_, seed + 3);
      break;
  }

  std::mt19937_64 head_rng(seed + 4);
  if (dual_head_) {
    HeadConfig head_cfg{cfg.embedding_dim};
    head_ = init_head(cfg.local_channels, cfg.global_channels, head_cfg,
                      seed + 4);
  } else {
    std::size_t in_channels = 0;
    if (cfg.soa == SoaMode::single_head) {
      in_channels = merged_channels;
    } else if (cfg.descriptors == DescriptorMode::local) {
      in_channels = cfg.local_channels;
    } else {
      in_channels = cfg.global_channels;
    }
    w_s_ = he_normal({in_channels, cfg.embedding_dim}, in_channels, head_rng);
    b_s_ = Tensor::zeros({cfg.embedding_dim}, true);
  }
}

Tensor Model::merged_map(const Tensor& f_l, const Tensor& f_g) const {
  return concat({space_to_depth(f_l, 2), f_g}, 3);
}

Tensor Model::forward(const Tensor& images) const {
  auto [f_l, f_g] = backbone_forward(images, backbone_, backbone_cfg_);

  if (cfg_.soa == SoaMode::single_head) {
    Tensor merged = soa_forward(merged_map(f_l, f_g), soa_merged_, soa_cfg_);
    return add_bias(matmul(gap_gmp_pool(merged), w_s_), b_s_);
  }

  if (use_soa_local_) f_l = soa_forward(f_l, soa_local_, soa_cfg_);
  if (use_soa_global_) f_g = soa_forward(f_g, soa_global_, soa_cfg_);

  switch (cfg_.descriptors) {
    case DescriptorMode::local:
      return add_bias(matmul(gap_gmp_pool(f_l), w_s_), b_s_);
    case DescriptorMode::global:
      return add_bias(matmul(gap_gmp_pool(f_g), w_s_), b_s_);
    case DescriptorMode::both:
      return embed(f_l, f_g, head_);
  }
  throw ConfigError("invalid descriptor mode");
}

std::vector<std::pair<std::string, Tensor>> Model::attention_maps(
    const Tensor& images) const {
  auto [f_l, f_g] = backbone_forward(images, backbone_, backbone_cfg_);
  std::vector<std::pair<std::string, Tensor>> maps;
  if (use_soa_merged_) {
    maps.emplace_back("merged",
                      attention_map(merged_map(f_l, f_g), soa_merged_,
                                    soa_cfg_));
  }
  if (use_soa_local_) {
    maps.emplace_back("local", attention_map(f_l, soa_local_, soa_cfg_));
  }
  if (use_soa_global_) {
    maps.emplace_back("global", attention_map(f_g, soa_global_, soa_cfg_));
  }
  return maps;
}

NamedTensors Model::named_params() const {
  NamedTensors out = backbone_.named("backbone");
  auto append = [&out](NamedTensors more) {
    for (auto& kv : more) out.push_back(std::move(kv));
  };
  if (use_soa_local_) append(soa_local_.named("soa_local"));
  if (use_soa_global_) append(soa_global_.named("soa_global"));
  if (use_soa_merged_) append(soa_merged_.named("soa_merged"));
  if (dual_head_) {
    append(head_.named("head"));
  } else {
    out.emplace_back("head.w", w_s_);
    out.emplace_back("head.b", b_s_);
  }
  return out;
}

std::vector<Tensor> Model::param_list() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) {
    (void)name;
    out.push_back(t);
  }
  return out;
}

}  // namespace dmlkit
