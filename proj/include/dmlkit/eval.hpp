#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmlkit/tensor.hpp"

namespace dmlkit {

// Embeddings are L2-normalized on ingest so similarity is a plain dot
// product. Immutable after build; concurrent queries are safe.
struct RetrievalIndex {
  Tensor embeddings;        // n x D, unit rows
  std::vector<int> labels;  // n
  std::vector<int> ids;     // n, unique
};

RetrievalIndex build_index(const Tensor& embeddings,
                           const std::vector<int>& labels,
                           const std::vector<int>& ids);

// Exact top-k by cosine similarity, descending; ties broken by lower id.
std::vector<std::pair<int, double>> nearest(const RetrievalIndex& index,
                                            const Tensor& query, std::size_t k);

struct RecallReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // aligned with ks, non-decreasing
  std::size_t n_queries = 0;
};

// Recall@K = fraction of queries whose top-k (by cosine, exact brute force)
// contains at least one same-class item. exclude_self drops the index entry
// whose id equals the query's id (standard protocol, queries == index).
RecallReport recall_at_k(const Tensor& queries,
                         const std::vector<int>& query_labels,
                         const std::vector<int>& query_ids,
                         const RetrievalIndex& index,
                         const std::vector<std::size_t>& ks,
                         bool exclude_self);

std::string recall_to_csv(const RecallReport& report);
std::string recall_to_json(const RecallReport& report);

// Worker cap: DMLKIT_THREADS when set (>= 1), else hardware concurrency
// clamped to [1, 8]. Parallel recall work is partitioned per query, so the
// thread count never changes results.
std::size_t worker_threads();

}  // namespace dmlkit
