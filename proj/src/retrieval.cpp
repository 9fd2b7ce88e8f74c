#include "cupid/retrieval.hpp"

#include <algorithm>

#include "cupid/error.hpp"
#include "cupid/io.hpp"
#include "parallel.hpp"

namespace cupid {

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
    }
    return acc;
}

void check_rows(const EmbeddingRows& m, const char* what) {
    if (m.dim == 0 || m.values.size() != m.rows * m.dim) {
        fail(ErrorKind::schema, std::string(what) + " embeddings do not match rows x dim");
    }
}

}  // namespace

std::vector<std::size_t> rank_queries(const EmbeddingRows& queries, const EmbeddingRows& candidates,
                                      std::span<const std::size_t> ground_truth, unsigned threads) {
    check_rows(queries, "query");
    check_rows(candidates, "candidate");
    if (queries.dim != candidates.dim) {
        fail(ErrorKind::schema, "query dim " + std::to_string(queries.dim) + " != candidate dim " +
                                    std::to_string(candidates.dim));
    }
    if (ground_truth.size() != queries.rows) {
        fail(ErrorKind::argument, "need exactly one ground-truth index per query");
    }
    for (std::size_t gt : ground_truth) {
        if (gt >= candidates.rows) {
            fail(ErrorKind::argument, "ground-truth index " + std::to_string(gt) + " out of range");
        }
    }

    std::vector<std::size_t> ranks(queries.rows);
    detail::parallel_for(queries.rows, threads, [&](std::size_t q) {
        const auto query = queries.row(q);
        const double truth = dot(query, candidates.row(ground_truth[q]));
        std::size_t greater = 0;
        for (std::size_t c = 0; c < candidates.rows; ++c) {
            if (dot(query, candidates.row(c)) > truth) {
                ++greater;
            }
        }
        ranks[q] = greater + 1;
    });
    return ranks;
}

RetrievalResult summarize(std::span<const std::size_t> ranks, std::span<const std::size_t> ks) {
    if (ranks.empty()) {
        fail(ErrorKind::argument, "cannot summarize an empty rank list");
    }
    RetrievalResult result;
    result.ranks.assign(ranks.begin(), ranks.end());
    for (std::size_t r : ranks) {
        if (r < 1) {
            fail(ErrorKind::argument, "ranks are 1-based");
        }
    }
    for (std::size_t k : ks) {
        if (k < 1) {
            fail(ErrorKind::argument, "recall cutoffs must be positive");
        }
        const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
        result.recall_at[k] = static_cast<double>(hits) / static_cast<double>(ranks.size());
    }
    auto sorted = result.ranks;
    const std::size_t lower = (sorted.size() + 1) / 2 - 1;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(lower), sorted.end());
    result.median_rank = sorted[lower];
    return result;
}

std::string probe_report_json(const RetrievalResult& result, std::size_t candidate_count) {
    io::json recall = io::json::object();
    for (const auto& [k, value] : result.recall_at) {
        recall[std::to_string(k)] = value;
    }
    io::json j;
    j["recall"] = std::move(recall);
    j["median_rank"] = result.median_rank;
    j["query_count"] = result.ranks.size();
    j["candidate_count"] = candidate_count;
    return j.dump(2) + "\n";
}

}  // namespace cupid
