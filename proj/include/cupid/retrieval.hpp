#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cupid {

/// Row-major view over `rows` embeddings of width `dim`.
struct EmbeddingRows {
    std::span<const float> values;
    std::size_t rows = 0;
    std::size_t dim = 0;

    std::span<const float> row(std::size_t i) const { return values.subspan(i * dim, dim); }
};

/// Rank of each query's ground-truth candidate: 1 + the number of candidates
/// whose dot-product score is strictly greater. Ties resolve optimistically.
std::vector<std::size_t> rank_queries(const EmbeddingRows& queries, const EmbeddingRows& candidates,
                                      std::span<const std::size_t> ground_truth,
                                      unsigned threads = 1);

struct RetrievalResult {
    std::vector<std::size_t> ranks;
    std::map<std::size_t, double> recall_at;
    std::size_t median_rank = 0;
};

/// recall_at[k] = fraction of ranks <= k; median_rank is the lower median
/// (order statistic ceil(n/2)).
RetrievalResult summarize(std::span<const std::size_t> ranks, std::span<const std::size_t> ks);

/// {"recall": {"1":..}, "median_rank", "query_count", "candidate_count"}
std::string probe_report_json(const RetrievalResult& result, std::size_t candidate_count);

}  // namespace cupid
