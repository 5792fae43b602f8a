#include "dmlkit/soa.hpp"

#include <cmath>
#include <stdexcept>

#include "dmlkit/backbone.hpp"

namespace dmlkit {

namespace {

void check_input(const Tensor& f, const SoaParams& p, const SoaConfig& cfg) {
  if (!f.defined() || f.ndim() != 4) {
    throw std::invalid_argument("soa: input must be a 4-d feature map");
  }
  if (f.dim(3) != p.channels()) {
    throw std::invalid_argument("soa: input has " + std::to_string(f.dim(3)) +
                                " channels, params expect " +
                                std::to_string(p.channels()));
  }
  if (!std::isfinite(cfg.zeta)) {
    throw std::invalid_argument("soa: zeta must be finite");
  }
}

// Projection of one sample through a 1x1 conv, flattened to (hw, d).
Tensor project_flat(const Tensor& sample, const Tensor& w, const Tensor& b) {
  Tensor m = add_bias(conv2d(sample, w, 1, 0), b);
  return reshape(m, {m.dim(1) * m.dim(2), m.dim(3)});
}

}  // namespace

std::size_t soa_proj_dim(std::size_t channels, const SoaConfig& cfg) {
  std::size_t d = cfg.d == 0 ? std::max<std::size_t>(channels / 2, 1) : cfg.d;
  if (d < 1 || d > channels) {
    throw std::invalid_argument("soa: projection dim " + std::to_string(d) +
                                " outside [1, " + std::to_string(channels) + "]");
  }
  return d;
}

NamedTensors SoaParams::named(const std::string& prefix) const {
  return {
      {prefix + ".wq", wq},     {prefix + ".bq", bq},
      {prefix + ".wk", wk},     {prefix + ".bk", bk},
      {prefix + ".wv", wv},     {prefix + ".bv", bv},
      {prefix + ".wphi", wphi}, {prefix + ".bphi", bphi},
  };
}

SoaParams init_soa(std::size_t channels, const SoaConfig& cfg,
                   std::uint64_t seed) {
  const std::size_t d = soa_proj_dim(channels, cfg);
  std::mt19937_64 rng(seed);
  SoaParams p;
  p.wq = he_normal({1, 1, channels, d}, channels, rng);
  p.bq = Tensor::zeros({d}, true);
  p.wk = he_normal({1, 1, channels, d}, channels, rng);
  p.bk = Tensor::zeros({d}, true);
  p.wv = he_normal({1, 1, channels, d}, channels, rng);
  p.bv = Tensor::zeros({d}, true);
  // Zero phi makes the block start as the identity mapping.
  p.wphi = Tensor::zeros({1, 1, d, channels}, true);
  p.bphi = Tensor::zeros({channels}, true);
  return p;
}

Tensor attention_map(const Tensor& f, const SoaParams& p, const SoaConfig& cfg) {
  check_input(f, p, cfg);
  const std::size_t batch = f.dim(0);
  const std::size_t hw = f.dim(1) * f.dim(2);
  std::vector<Tensor> maps;
  maps.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor sample = slice(f, 0, b, 1);
    Tensor q = project_flat(sample, p.wq, p.bq);
    Tensor k = project_flat(sample, p.wk, p.bk);
    Tensor a = softmax(scale(matmul(q, transpose(k)), cfg.zeta), 1);
    maps.push_back(reshape(a, {1, hw, hw}));
  }
  return batch == 1 ? maps.front() : concat(maps, 0);
}

Tensor soa_forward(const Tensor& f, const SoaParams& p, const SoaConfig& cfg) {
  check_input(f, p, cfg);
  const std::size_t batch = f.dim(0);
  const std::size_t h = f.dim(1), w = f.dim(2);
  const std::size_t d = p.proj_dim();
  std::vector<Tensor> outs;
  outs.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor sample = slice(f, 0, b, 1);
    Tensor q = project_flat(sample, p.wq, p.bq);
    Tensor k = project_flat(sample, p.wk, p.bk);
    Tensor v = project_flat(sample, p.wv, p.bv);
    Tensor a = softmax(scale(matmul(q, transpose(k)), cfg.zeta), 1);
    Tensor mixed = reshape(matmul(a, v), {1, h, w, d});
    Tensor phi = add_bias(conv2d(mixed, p.wphi, 1, 0), p.bphi);
    outs.push_back(add(sample, phi));
  }
  return batch == 1 ? outs.front() : concat(outs, 0);
}

}  // namespace dmlkit
