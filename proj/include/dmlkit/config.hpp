#pragma once

#include <cstdint>
#include <string>

#include "dmlkit/losses.hpp"

namespace dmlkit {

enum class DescriptorMode { local, global, both };
enum class SoaMode { on, off, single_head };
enum class LossMode { ms, proxy, hybrid };

std::string to_string(DescriptorMode m);
std::string to_string(SoaMode m);
std::string to_string(LossMode m);
std::string to_string(NegativeMarginSign s);

// Full hyperparameter record for one run. Field names double as config-file
// keys (flat `key = value` lines, '#' comments). Defaults reproduce the
// stock synthetic benchmark.
struct RunConfig {
  // data
  std::string data_source = "synthetic";  // "synthetic" | "folder"
  std::string data_dir;                   // class-per-directory PPM tree
  std::size_t num_classes = 8;
  std::size_t samples_per_class = 200;
  std::size_t image_size = 32;  // generated images are square
  double noise_sigma = 0.3;
  std::size_t resize_size = 40;  // augmentation: resize then crop
  std::size_t crop_size = 32;    // model input resolution
  double train_class_fraction = 0.5;
  double validation_fraction = 0.2;

  // model
  DescriptorMode descriptors = DescriptorMode::both;
  SoaMode soa = SoaMode::on;
  double zeta = 1.0;
  std::size_t soa_proj_dim = 0;  // 0 = half the attended channels
  std::size_t embedding_dim = 32;
  std::size_t stem_channels = 16;
  std::size_t local_channels = 32;
  std::size_t global_channels = 64;

  // loss
  LossMode loss = LossMode::hybrid;
  double alpha = 32.0;
  double delta = 0.1;
  double gamma = 2.0;
  double beta = 50.0;
  double sigma = 1.0;
  NegativeMarginSign negative_margin_sign = NegativeMarginSign::plus;
  double lambda = 0.03;

  // optimization
  std::size_t epochs = 20;
  std::size_t batch_size = 60;
  bool balanced_batches = true;
  std::size_t classes_per_batch = 0;  // 0 = every training class
  double lr_model = 1e-4;
  double lr_proxy = 1e-2;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  std::uint64_t seed = 1;

  bool operator==(const RunConfig&) const = default;
};

// Parses flat key=value text. Unknown or duplicate keys, malformed values,
// and out-of-range settings all raise ConfigError naming the offending key.
RunConfig parse_config(const std::string& text);

// parse_config over a file's contents; missing/unreadable file is an IoError.
RunConfig load_config(const std::string& path);

// Emits every key in a fixed order; doubles use %.17g so that
// parse_config(serialize_config(c)) == c exactly.
std::string serialize_config(const RunConfig& cfg);

void validate_config(const RunConfig& cfg);

}  // namespace dmlkit
