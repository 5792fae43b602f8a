#include "dmlkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include "dmlkit/errors.hpp"
#include "json.hpp"

namespace dmlkit {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Similarities of one unit-norm query row against every index row.
void query_similarities(const RetrievalIndex& index, const double* q,
                        std::vector<double>& sims) {
  const std::size_t n = index.embeddings.dim(0);
  const std::size_t d = index.embeddings.dim(1);
  const double* e = index.embeddings.data().data();
  sims.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    const double* row = e + i * d;
    for (std::size_t j = 0; j < d; ++j) dot += q[j] * row[j];
    sims[i] = dot;
  }
}

// Ranking order: similarity descending, then id ascending.
bool ranks_before(const RetrievalIndex& index, const std::vector<double>& sims,
                  std::size_t a, std::size_t b) {
  if (sims[a] != sims[b]) return sims[a] > sims[b];
  return index.ids[a] < index.ids[b];
}

}  // namespace

RetrievalIndex build_index(const Tensor& embeddings,
                           const std::vector<int>& labels,
                           const std::vector<int>& ids) {
  if (embeddings.ndim() != 2) {
    throw std::invalid_argument("build_index: embeddings must be 2-D, got " +
                                shape_str(embeddings.shape()));
  }
  const std::size_t n = embeddings.dim(0);
  if (n == 0) throw std::invalid_argument("build_index: empty index");
  if (labels.size() != n || ids.size() != n) {
    throw std::invalid_argument(
        "build_index: labels/ids must match embedding rows");
  }
  std::unordered_set<int> seen;
  for (int id : ids) {
    if (!seen.insert(id).second) {
      throw std::invalid_argument("build_index: duplicate id " +
                                  std::to_string(id));
    }
  }
  RetrievalIndex index;
  index.embeddings = l2_normalize(embeddings, 1);
  index.labels = labels;
  index.ids = ids;
  return index;
}

std::vector<std::pair<int, double>> nearest(const RetrievalIndex& index,
                                            const Tensor& query,
                                            std::size_t k) {
  const std::size_t n = index.embeddings.dim(0);
  const std::size_t d = index.embeddings.dim(1);
  if (query.size() != d) {
    throw std::invalid_argument("nearest: query has " +
                                std::to_string(query.size()) +
                                " elements, index dim is " + std::to_string(d));
  }
  if (k == 0 || k > n) {
    throw std::invalid_argument("nearest: k=" + std::to_string(k) +
                                " out of range for index of size " +
                                std::to_string(n));
  }
  Tensor q = l2_normalize(reshape(query, {1, d}), 1);
  std::vector<double> sims;
  query_similarities(index, q.data().data(), sims);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      return ranks_before(index, sims, a, b);
                    });
  std::vector<std::pair<int, double>> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.emplace_back(index.ids[order[i]], sims[order[i]]);
  }
  return out;
}

RecallReport recall_at_k(const Tensor& queries,
                         const std::vector<int>& query_labels,
                         const std::vector<int>& query_ids,
                         const RetrievalIndex& index,
                         const std::vector<std::size_t>& ks,
                         bool exclude_self) {
  if (queries.ndim() != 2) {
    throw std::invalid_argument("recall_at_k: queries must be 2-D, got " +
                                shape_str(queries.shape()));
  }
  const std::size_t nq = queries.dim(0);
  const std::size_t d = queries.dim(1);
  const std::size_t n = index.embeddings.dim(0);
  if (nq == 0) throw std::invalid_argument("recall_at_k: empty query set");
  if (d != index.embeddings.dim(1)) {
    throw std::invalid_argument("recall_at_k: query dim " + std::to_string(d) +
                                " != index dim " +
                                std::to_string(index.embeddings.dim(1)));
  }
  if (query_labels.size() != nq || query_ids.size() != nq) {
    throw std::invalid_argument(
        "recall_at_k: labels/ids must match query rows");
  }
  if (ks.empty()) throw std::invalid_argument("recall_at_k: empty k list");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == 0) throw std::invalid_argument("recall_at_k: k must be >= 1");
    if (i > 0 && ks[i] <= ks[i - 1]) {
      throw std::invalid_argument(
          "recall_at_k: k values must be strictly ascending");
    }
  }
  const std::size_t pool = n - (exclude_self ? 1 : 0);
  if (ks.back() > pool) {
    throw std::invalid_argument(
        "recall_at_k: k=" + std::to_string(ks.back()) +
        " exceeds candidate pool of " + std::to_string(pool));
  }

  Tensor qn = l2_normalize(queries, 1);
  const double* qdata = qn.data().data();
  const std::size_t kmax = ks.back();

  // hits[q * ks.size() + j] = 1 iff query q has a same-class item in top-ks[j].
  std::vector<char> hits(nq * ks.size(), 0);

  auto run_range = [&](std::size_t begin, std::size_t end) {
    std::vector<double> sims;
    std::vector<std::size_t> order;
    for (std::size_t qi = begin; qi < end; ++qi) {
      query_similarities(index, qdata + qi * d, sims);
      order.clear();
      for (std::size_t i = 0; i < n; ++i) {
        if (exclude_self && index.ids[i] == query_ids[qi]) continue;
        order.push_back(i);
      }
      std::partial_sort(order.begin(),
                        order.begin() + static_cast<long>(kmax), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          return ranks_before(index, sims, a, b);
                        });
      std::size_t ki = 0;
      bool found = false;
      for (std::size_t rank = 0; rank < kmax && ki < ks.size(); ++rank) {
        if (!found && index.labels[order[rank]] == query_labels[qi]) {
          found = true;
        }
        while (ki < ks.size() && ks[ki] == rank + 1) {
          hits[qi * ks.size() + ki] = found ? 1 : 0;
          ++ki;
        }
      }
    }
  };

  const std::size_t workers = std::min(worker_threads(), nq);
  if (workers <= 1) {
    run_range(0, nq);
  } else {
    std::vector<std::thread> pool_threads;
    const std::size_t chunk = (nq + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(begin + chunk, nq);
      if (begin >= end) break;
      pool_threads.emplace_back(run_range, begin, end);
    }
    for (auto& t : pool_threads) t.join();
  }

  RecallReport report;
  report.ks = ks;
  report.n_queries = nq;
  report.recall.resize(ks.size());
  for (std::size_t j = 0; j < ks.size(); ++j) {
    std::size_t count = 0;
    for (std::size_t qi = 0; qi < nq; ++qi) count += hits[qi * ks.size() + j];
    report.recall[j] = static_cast<double>(count) / static_cast<double>(nq);
  }
  return report;
}

std::string recall_to_csv(const RecallReport& report) {
  std::string out = "k,recall\n";
  for (std::size_t j = 0; j < report.ks.size(); ++j) {
    out += std::to_string(report.ks[j]);
    out += ',';
    out += fmt_double(report.recall[j]);
    out += '\n';
  }
  return out;
}

std::string recall_to_json(const RecallReport& report) {
  nlohmann::ordered_json doc;
  doc["n_queries"] = report.n_queries;
  nlohmann::ordered_json recall = nlohmann::ordered_json::object();
  for (std::size_t j = 0; j < report.ks.size(); ++j) {
    recall[std::to_string(report.ks[j])] = report.recall[j];
  }
  doc["recall"] = recall;
  return doc.dump(2) + "\n";
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("DMLKIT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ConfigError("DMLKIT_THREADS must be a positive integer, got '" +
                        std::string(env) + "'");
    }
    return static_cast<std::size_t>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return std::min<std::size_t>(std::max(1u, hc), 8);
}

}  // namespace dmlkit
