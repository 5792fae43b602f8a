#include "dmlkit/optim.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dmlkit {

AdamW::AdamW(std::vector<ParamGroup> groups, AdamWConfig cfg)
    : groups_(std::move(groups)), cfg_(cfg) {
  if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1) {
    throw std::invalid_argument("adamw: betas must lie in [0, 1)");
  }
  m_.resize(groups_.size());
  v_.resize(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    if (groups_[g].lr <= 0.0) {
      throw std::invalid_argument("adamw: learning rate must be > 0");
    }
    m_[g].resize(groups_[g].params.size());
    v_[g].resize(groups_[g].params.size());
    for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
      const std::size_t n = groups_[g].params[p].size();
      m_[g][p].assign(n, 0.0);
      v_[g][p].assign(n, 0.0);
    }
  }
}

void AdamW::step() {
  // Validate every gradient before any parameter is touched, so a bad step
  // never leaves the model half-updated.
  for (auto& group : groups_) {
    for (Tensor& p : group.params) {
      if (!p.has_grad() || p.grad().size() != p.size()) {
        throw NumericError("adamw: parameter is missing its gradient");
      }
      for (double g : p.grad()) {
        if (!std::isfinite(g)) {
          throw NumericError("adamw: non-finite gradient, step aborted");
        }
      }
    }
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    ParamGroup& group = groups_[g];
    for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
      Tensor& p = group.params[pi];
      auto theta = p.mutable_data();
      auto grad = p.grad();
      auto& m = m_[g][pi];
      auto& v = v_[g][pi];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        theta[i] -= group.lr * group.weight_decay * theta[i];
        theta[i] -= group.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }
}

void AdamW::zero_grads() {
  for (auto& group : groups_) {
    for (Tensor& p : group.params) {
      p.ensure_grad();
      p.zero_grad();
    }
  }
}

NamedTensors AdamW::state() const {
  NamedTensors out;
  out.emplace_back("opt.t",
                   Tensor({1}, {static_cast<double>(t_)}));
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
      const Shape& shape = groups_[g].params[p].shape();
      const std::string base =
          "opt.g" + std::to_string(g) + ".p" + std::to_string(p);
      out.emplace_back(base + ".m", Tensor(shape, m_[g][p]));
      out.emplace_back(base + ".v", Tensor(shape, v_[g][p]));
    }
  }
  return out;
}

void AdamW::load_state(const NamedTensors& state) {
  for (const auto& [name, tensor] : state) {
    if (name == "opt.t") {
      t_ = static_cast<std::uint64_t>(tensor.value());
      continue;
    }
    // Names look like opt.g<G>.p<P>.m or .v
    std::size_t g = 0, p = 0;
    char kind = 0;
    if (std::sscanf(name.c_str(), "opt.g%zu.p%zu.%c", &g, &p, &kind) != 3 ||
        g >= groups_.size() || p >= groups_[g].params.size() ||
        (kind != 'm' && kind != 'v')) {
      throw ConfigError("adamw: unrecognized optimizer state entry " + name);
    }
    auto& dst = kind == 'm' ? m_[g][p] : v_[g][p];
    if (tensor.size() != dst.size()) {
      throw ConfigError("adamw: state shape mismatch for " + name);
    }
    dst.assign(tensor.data().begin(), tensor.data().end());
  }
}

}  // namespace dmlkit
