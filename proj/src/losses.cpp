#include "dmlkit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dmlkit {

namespace {

// log(1 + sum(exp(z))) with the shift M = max(0, max(z)), so no exponent
// ever exceeds 0. Also fills `weights` with d/dz_i = exp(z_i) / (1 + sum),
// computed in the same shifted form.
double softplus_lse(const std::vector<double>& z, std::vector<double>* weights) {
  double m = 0.0;
  for (double v : z) m = std::max(m, v);
  double denom = std::exp(-m);
  for (double v : z) denom += std::exp(v - m);
  if (weights != nullptr) {
    weights->resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      (*weights)[i] = std::exp(z[i] - m) / denom;
    }
  }
  return m + std::log(denom);
}

void check_labels(const std::vector<int>& labels, std::size_t batch,
                  std::size_t num_classes) {
  if (labels.size() != batch) {
    throw std::invalid_argument("losses: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(batch));
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ConfigError("losses: label " + std::to_string(l) +
                        " has no proxy (classes: " + std::to_string(num_classes) +
                        ")");
    }
  }
}

}  // namespace

ProxyBank init_proxies(std::size_t num_classes, std::size_t dim,
                       std::uint64_t seed) {
  if (num_classes < 1 || dim < 1) {
    throw std::invalid_argument("proxies: num_classes and dim must be >= 1");
  }
  std::mt19937_64 rng(seed);
  return ProxyBank{Tensor::randn({num_classes, dim}, rng, 1.0, true)};
}

Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined() || a.ndim() != 2 || b.ndim() != 2) {
    throw std::invalid_argument("cosine: operands must be 2-d");
  }
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("cosine: dim mismatch, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  auto reject_tiny_rows = [](const Tensor& t, const char* side) {
    const std::size_t rows = t.dim(0), d = t.dim(1);
    auto v = t.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double ss = 0.0;
      for (std::size_t c = 0; c < d; ++c) ss += v[r * d + c] * v[r * d + c];
      if (std::sqrt(ss) < 1e-12) {
        throw NumericError("cosine: near-zero-norm " + std::string(side) +
                           " row " + std::to_string(r));
      }
    }
  };
  reject_tiny_rows(a, "left");
  reject_tiny_rows(b, "right");
  return matmul(l2_normalize(a, 1), transpose(l2_normalize(b, 1)));
}

Tensor proxy_anchor_loss(const Tensor& x, const std::vector<int>& labels,
                         const ProxyBank& bank, const ProxyAnchorConfig& cfg) {
  if (!x.defined() || x.ndim() != 2 || x.dim(0) < 1) {
    throw std::invalid_argument("proxy_anchor: batch must be a non-empty 2-d matrix");
  }
  if (cfg.alpha <= 0.0 || cfg.delta <= 0.0) {
    throw std::invalid_argument("proxy_anchor: alpha and delta must be > 0");
  }
  const std::size_t m = x.dim(0);
  const std::size_t np = bank.num_classes();
  check_labels(labels, m, np);

  Tensor s = cosine_similarity_matrix(x, bank.proxies);
  auto sv = s.data();

  // Per-proxy positive/negative logit lists and their source entries.
  std::vector<std::vector<double>> pos_z(np), neg_z(np);
  std::vector<std::vector<std::size_t>> pos_src(np), neg_src(np);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < np; ++j) {
      const double sij = sv[i * np + j];
      if (static_cast<std::size_t>(labels[i]) == j) {
        pos_z[j].push_back(-cfg.alpha * (sij - cfg.delta));
        pos_src[j].push_back(i * np + j);
      } else {
        neg_z[j].push_back(cfg.alpha * (sij + cfg.delta));
        neg_src[j].push_back(i * np + j);
      }
    }
  }
  std::size_t p_plus = 0;
  for (std::size_t j = 0; j < np; ++j) {
    if (!pos_z[j].empty()) ++p_plus;
  }

  double loss = 0.0;
  // Gradient d(loss)/dS, assembled alongside the forward pass.
  std::vector<double> ds(m * np, 0.0);
  std::vector<double> weights;
  for (std::size_t j = 0; j < np; ++j) {
    if (!pos_z[j].empty()) {
      loss += softplus_lse(pos_z[j], &weights) / static_cast<double>(p_plus);
      for (std::size_t t = 0; t < weights.size(); ++t) {
        ds[pos_src[j][t]] +=
            weights[t] * (-cfg.alpha) / static_cast<double>(p_plus);
      }
    }
    if (!neg_z[j].empty()) {
      loss += softplus_lse(neg_z[j], &weights) / static_cast<double>(np);
      for (std::size_t t = 0; t < weights.size(); ++t) {
        ds[neg_src[j][t]] += weights[t] * cfg.alpha / static_cast<double>(np);
      }
    }
  }

  const bool need = tracked(s);
  Tensor out = detail::make_op_output({1}, {loss}, "proxy_anchor_loss", need);
  if (!need) return out;
  Tensor ts = s, out_t = out;
  Tape::active()->record(out_t, [ts, out_t, ds = std::move(ds)]() mutable {
    const double g = out_t.grad()[0];
    ts.ensure_grad();
    auto gs = ts.grad_mutable();
    for (std::size_t i = 0; i < ds.size(); ++i) gs[i] += g * ds[i];
  });
  return out;
}

Tensor ms_loss(const Tensor& x, const std::vector<int>& labels,
               const MsConfig& cfg) {
  if (!x.defined() || x.ndim() != 2 || x.dim(0) < 2) {
    throw std::invalid_argument("ms_loss: batch must hold at least 2 samples");
  }
  if (cfg.gamma <= 0.0 || cfg.beta <= 0.0) {
    throw std::invalid_argument("ms_loss: gamma and beta must be > 0");
  }
  const std::size_t m = x.dim(0);
  if (labels.size() != m) {
    throw std::invalid_argument("ms_loss: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(m));
  }
  const double neg_sigma =
      cfg.negative_margin_sign == NegativeMarginSign::plus ? cfg.sigma
                                                           : -cfg.sigma;

  Tensor s = cosine_similarity_matrix(x, x);
  auto sv = s.data();

  double loss = 0.0;
  std::vector<double> ds(m * m, 0.0);
  std::vector<double> z, weights;
  std::vector<std::size_t> src;
  for (std::size_t i = 0; i < m; ++i) {
    // Positive pairs: same class, self excluded.
    z.clear();
    src.clear();
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i && labels[k] == labels[i]) {
        z.push_back(-cfg.gamma * (sv[i * m + k] - cfg.sigma));
        src.push_back(i * m + k);
      }
    }
    if (!z.empty()) {
      loss += softplus_lse(z, &weights) / (cfg.gamma * static_cast<double>(m));
      for (std::size_t t = 0; t < weights.size(); ++t) {
        ds[src[t]] += -weights[t] / static_cast<double>(m);
      }
    }
    // Negative pairs: different class.
    z.clear();
    src.clear();
    for (std::size_t k = 0; k < m; ++k) {
      if (labels[k] != labels[i]) {
        z.push_back(cfg.beta * (sv[i * m + k] + neg_sigma));
        src.push_back(i * m + k);
      }
    }
    if (!z.empty()) {
      loss += softplus_lse(z, &weights) / (cfg.beta * static_cast<double>(m));
      for (std::size_t t = 0; t < weights.size(); ++t) {
        ds[src[t]] += weights[t] / static_cast<double>(m);
      }
    }
  }

  const bool need = tracked(s);
  Tensor out = detail::make_op_output({1}, {loss}, "ms_loss", need);
  if (!need) return out;
  Tensor ts = s, out_t = out;
  Tape::active()->record(out_t, [ts, out_t, ds = std::move(ds)]() mutable {
    const double g = out_t.grad()[0];
    ts.ensure_grad();
    auto gs = ts.grad_mutable();
    for (std::size_t i = 0; i < ds.size(); ++i) gs[i] += g * ds[i];
  });
  return out;
}

HybridLossResult hybrid_loss(const Tensor& x, const std::vector<int>& labels,
                             const ProxyBank& bank,
                             const ProxyAnchorConfig& pa_cfg,
                             const MsConfig& ms_cfg,
                             const HybridConfig& h_cfg) {
  if (h_cfg.lambda < 0.0 || !std::isfinite(h_cfg.lambda)) {
    throw std::invalid_argument("hybrid_loss: lambda must be finite and >= 0");
  }
  HybridLossResult r;
  r.ms = ms_loss(x, labels, ms_cfg);
  r.pa = proxy_anchor_loss(x, labels, bank, pa_cfg);
  r.total = add(r.ms, scale(r.pa, h_cfg.lambda));
  return r;
}

}  // namespace dmlkit
