#pragma once

#include <cstdint>
#include <vector>

#include "dmlkit/tensor.hpp"

namespace dmlkit {

// One learnable proxy per class; class id is the row index.
struct ProxyBank {
  Tensor proxies;  // num_classes x D, requires_grad

  std::size_t num_classes() const { return proxies.dim(0); }
  std::size_t dim() const { return proxies.dim(1); }
};

struct ProxyAnchorConfig {
  double alpha = 32.0;  // scaling factor
  double delta = 0.1;   // margin
};

enum class NegativeMarginSign { plus, minus };

struct MsConfig {
  double gamma = 2.0;
  double beta = 50.0;
  double sigma = 1.0;  // similarity margin
  // The negative-pair exponent as printed is beta*(S + sigma); `minus`
  // selects the canonical multi-similarity form beta*(S - sigma).
  NegativeMarginSign negative_margin_sign = NegativeMarginSign::plus;
};

struct HybridConfig {
  double lambda = 0.03;  // weight of the proxy-anchor component
};

// i.i.d. standard-normal proxies, seed-reproducible.
ProxyBank init_proxies(std::size_t num_classes, std::size_t dim,
                       std::uint64_t seed);

// S[i,j] = <a_i, b_j> / (|a_i| |b_j|). Rows with raw norm < 1e-12 are
// rejected. Differentiable through both arguments.
Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b);

// Proxy-anchor loss: the positive log term averaged over proxies with at
// least one positive in the batch, the negative log term averaged over all
// proxies. Inner sums are evaluated in max-shifted log-sum-exp form.
Tensor proxy_anchor_loss(const Tensor& x, const std::vector<int>& labels,
                         const ProxyBank& bank, const ProxyAnchorConfig& cfg);

// Multi-similarity loss over in-batch cosine similarities, averaged over all
// m anchors; anchors with no positives (or no negatives) keep only the term
// they have pairs for.
Tensor ms_loss(const Tensor& x, const std::vector<int>& labels,
               const MsConfig& cfg);

struct HybridLossResult {
  Tensor total;  // ms + lambda * pa
  Tensor ms;
  Tensor pa;
};

HybridLossResult hybrid_loss(const Tensor& x, const std::vector<int>& labels,
                             const ProxyBank& bank,
                             const ProxyAnchorConfig& pa_cfg,
                             const MsConfig& ms_cfg, const HybridConfig& h_cfg);

}  // namespace dmlkit
