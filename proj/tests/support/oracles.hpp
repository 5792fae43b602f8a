#pragma once

// Independent naive oracles used by both the unit tests and the acceptance
// harness: plain scalar loops, no log-sum-exp shifting, no code shared with
// the library implementations they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "dmlkit/tensor.hpp"

namespace oracles {

inline double naive_cosine(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::vector<double> row(const dmlkit::Tensor& t, std::size_t r) {
  const std::size_t d = t.dim(1);
  return std::vector<double>(t.data().begin() + r * d,
                             t.data().begin() + (r + 1) * d);
}

inline double naive_proxy_anchor(const dmlkit::Tensor& x,
                                 const std::vector<int>& labels,
                                 const dmlkit::Tensor& proxies, double alpha,
                                 double delta) {
  const std::size_t m = x.dim(0);
  const std::size_t p = proxies.dim(0);
  std::set<int> positive_proxies(labels.begin(), labels.end());

  double pos_term = 0.0;
  for (int c : positive_proxies) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (labels[i] != c) continue;
      const double sim = naive_cosine(row(x, i), row(proxies, c));
      s += std::exp(-alpha * (sim - delta));
    }
    pos_term += std::log(1.0 + s);
  }
  pos_term /= static_cast<double>(positive_proxies.size());

  double neg_term = 0.0;
  for (std::size_t c = 0; c < p; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (labels[i] == static_cast<int>(c)) continue;
      const double sim = naive_cosine(row(x, i), row(proxies, c));
      s += std::exp(alpha * (sim + delta));
    }
    neg_term += std::log(1.0 + s);
  }
  neg_term /= static_cast<double>(p);
  return pos_term + neg_term;
}

inline double naive_ms(const dmlkit::Tensor& x, const std::vector<int>& labels,
                       double gamma, double beta, double sigma,
                       bool plus_sign) {
  const std::size_t m = x.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      const double s = naive_cosine(row(x, i), row(x, k));
      if (labels[k] == labels[i]) {
        pos += std::exp(-gamma * (s - sigma));
      } else {
        neg += std::exp(beta * (s + (plus_sign ? sigma : -sigma)));
      }
    }
    total += std::log(1.0 + pos) / gamma + std::log(1.0 + neg) / beta;
  }
  return total / static_cast<double>(m);
}

// O(n^2) Recall@K with a full sort per query: similarity descending, ties by
// lower id, optional self-exclusion by id.
inline std::vector<double> naive_recall_at_k(
    const dmlkit::Tensor& queries, const std::vector<int>& query_labels,
    const std::vector<int>& query_ids, const dmlkit::Tensor& index_emb,
    const std::vector<int>& index_labels, const std::vector<int>& index_ids,
    const std::vector<std::size_t>& ks, bool exclude_self) {
  const std::size_t nq = queries.dim(0);
  const std::size_t n = index_emb.dim(0);
  std::vector<std::size_t> hit_counts(ks.size(), 0);
  for (std::size_t qi = 0; qi < nq; ++qi) {
    const auto q = row(queries, qi);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
      if (exclude_self && index_ids[i] == query_ids[qi]) continue;
      order.push_back(i);
    }
    std::vector<double> sims(n);
    for (std::size_t i : order) sims[i] = naive_cosine(q, row(index_emb, i));
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (sims[a] != sims[b]) return sims[a] > sims[b];
      return index_ids[a] < index_ids[b];
    });
    for (std::size_t j = 0; j < ks.size(); ++j) {
      bool hit = false;
      for (std::size_t r = 0; r < std::min(ks[j], order.size()); ++r) {
        if (index_labels[order[r]] == query_labels[qi]) {
          hit = true;
          break;
        }
      }
      hit_counts[j] += hit ? 1 : 0;
    }
  }
  std::vector<double> recall(ks.size());
  for (std::size_t j = 0; j < ks.size(); ++j) {
    recall[j] =
        static_cast<double>(hit_counts[j]) / static_cast<double>(nq);
  }
  return recall;
}

inline dmlkit::Tensor rand_embeddings(std::size_t n, std::size_t d,
                                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> data(n * d);
  for (double& v : data) {
    v = dist(rng);
    v += v >= 0.0 ? 0.05 : -0.05;  // keep row norms comfortably nonzero
  }
  return dmlkit::Tensor({n, d}, std::move(data));
}

inline std::vector<int> rand_labels(std::size_t n, int num_classes,
                                    std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(0, num_classes - 1);
  std::vector<int> labels(n);
  for (int& l : labels) l = dist(rng);
  return labels;
}

// Random orthogonal matrix (Gram-Schmidt on a random square matrix) for the
// rotation-invariance checks.
inline std::vector<double> random_rotation(std::size_t d,
                                           std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<std::vector<double>> basis(d, std::vector<double>(d));
  for (std::size_t i = 0; i < d; ++i) {
    bool ok = false;
    while (!ok) {
      for (double& v : basis[i]) v = dist(rng);
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += basis[i][k] * basis[j][k];
        for (std::size_t k = 0; k < d; ++k) basis[i][k] -= dot * basis[j][k];
      }
      double norm = 0.0;
      for (double v : basis[i]) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (double& v : basis[i]) v /= norm;
        ok = true;
      }
    }
  }
  std::vector<double> flat(d * d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) flat[i * d + j] = basis[i][j];
  }
  return flat;
}

// rows(out) = rows(emb) * R^T, preserving pairwise inner products.
inline dmlkit::Tensor rotate(const dmlkit::Tensor& emb,
                             const std::vector<double>& rotation) {
  const std::size_t n = emb.dim(0), d = emb.dim(1);
  std::vector<double> out(n * d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        acc += rotation[i * d + j] * emb.data()[r * d + j];
      }
      out[r * d + i] = acc;
    }
  }
  return dmlkit::Tensor({n, d}, std::move(out));
}

}  // namespace oracles
