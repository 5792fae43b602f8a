#include "dmlkit/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace dmlkit {

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  return Tensor::randn(std::move(shape), rng, stddev, true);
}

NamedTensors BackboneParams::named(const std::string& prefix) const {
  return {
      {prefix + ".w0", w0}, {prefix + ".b0", b0}, {prefix + ".w1", w1},
      {prefix + ".b1", b1}, {prefix + ".w2", w2}, {prefix + ".b2", b2},
      {prefix + ".w3", w3}, {prefix + ".b3", b3},
  };
}

BackboneParams init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  if (cfg.global_channels < cfg.local_channels) {
    throw std::invalid_argument("backbone: global channels must be >= local channels");
  }
  if (cfg.stem_channels == 0 || cfg.local_channels == 0) {
    throw std::invalid_argument("backbone: channel counts must be positive");
  }
  std::mt19937_64 rng(seed);
  BackboneParams p;
  p.w0 = he_normal({3, 3, 3, cfg.stem_channels}, 3 * 3 * 3, rng);
  p.b0 = Tensor::zeros({cfg.stem_channels}, true);
  p.w1 = he_normal({3, 3, cfg.stem_channels, cfg.stem_channels},
                   3 * 3 * cfg.stem_channels, rng);
  p.b1 = Tensor::zeros({cfg.stem_channels}, true);
  p.w2 = he_normal({3, 3, cfg.stem_channels, cfg.local_channels},
                   3 * 3 * cfg.stem_channels, rng);
  p.b2 = Tensor::zeros({cfg.local_channels}, true);
  p.w3 = he_normal({3, 3, cfg.local_channels, cfg.global_channels},
                   3 * 3 * cfg.local_channels, rng);
  p.b3 = Tensor::zeros({cfg.global_channels}, true);
  return p;
}

std::pair<Tensor, Tensor> backbone_forward(const Tensor& x,
                                           const BackboneParams& p,
                                           const BackboneConfig& cfg) {
  if (!x.defined() || x.ndim() != 4 || x.dim(3) != 3) {
    throw std::invalid_argument("backbone: input must be (batch, h, w, 3)");
  }
  if (x.dim(1) != cfg.input_h || x.dim(2) != cfg.input_w) {
    throw std::invalid_argument("backbone: input is " + shape_str(x.shape()) +
                                ", config expects " +
                                std::to_string(cfg.input_h) + "x" +
                                std::to_string(cfg.input_w));
  }
  Tensor h0 = relu(add_bias(conv2d(x, p.w0, 2, 1), p.b0));
  Tensor h1 = relu(add_bias(conv2d(h0, p.w1, 1, 1), p.b1));
  Tensor f_l = relu(add_bias(conv2d(h1, p.w2, 2, 1), p.b2));
  Tensor f_g = relu(add_bias(conv2d(f_l, p.w3, 2, 1), p.b3));
  return {f_l, f_g};
}

}  // namespace dmlkit
