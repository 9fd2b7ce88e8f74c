#pragma once

// Shared generators and brute-force oracles for the test binaries. Oracles here
// deliberately avoid the library's reducers: they enumerate, sort and count.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "cupid/embedding_store.hpp"
#include "cupid/error.hpp"
#include "cupid/similarity.hpp"

namespace cupid::testing {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("cupid-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

inline void spit(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// Kind of the cupid::Error thrown by `fn`, or nullopt when nothing is thrown.
template <typename Fn>
std::optional<ErrorKind> error_kind(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Ids are shuffled against generation order so that id order and index order
// disagree. With `coarse`, values come from {-1, 0, 1} and ties are common.
inline std::vector<ClipMatrix> random_videos(std::mt19937_64& rng, std::size_t count, std::uint32_t dim,
                                             std::uint32_t max_clips, const std::string& prefix,
                                             bool coarse = false) {
    std::vector<std::size_t> labels(count);
    std::iota(labels.begin(), labels.end(), 0);
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<ClipMatrix> videos;
    videos.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto clips = static_cast<std::uint32_t>(pick(rng, 1, max_clips));
        std::vector<float> values(static_cast<std::size_t>(clips) * dim);
        for (float& v : values) {
            v = coarse ? static_cast<float>(static_cast<int>(pick(rng, 0, 2)) - 1)
                       : static_cast<float>(uniform(rng, -1.0, 1.0));
        }
        char id[32];
        std::snprintf(id, sizeof id, "%s%05zu", prefix.c_str(), labels[i]);
        videos.push_back(ClipMatrix::make(id, dim, std::move(values)));
    }
    return videos;
}

inline CorpusHandle make_corpus(const std::string& id, CorpusRole role, const std::vector<ClipMatrix>& videos) {
    return CorpusHandle::from_videos(id, role, videos);
}

// Direct L x Q enumeration in f64.
inline double naive_pair(const ClipMatrix& t, const ClipMatrix& s, Pooling pooling) {
    double sum = 0.0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::uint32_t l = 0; l < t.clip_count; ++l) {
        for (std::uint32_t q = 0; q < s.clip_count; ++q) {
            double dot = 0.0;
            for (std::uint32_t k = 0; k < t.dim; ++k) {
                dot += static_cast<double>(t.values[l * t.dim + k]) * static_cast<double>(s.values[q * s.dim + k]);
            }
            sum += dot;
            best = std::max(best, dot);
        }
    }
    if (pooling == Pooling::max) return best;
    return sum / (static_cast<double>(t.clip_count) * static_cast<double>(s.clip_count));
}

// Column means of a materialized kernel: f64 sum down each column, then / P.
inline std::vector<double> oracle_column_means(const DenseKernel& k) {
    std::vector<double> means(k.cols(), 0.0);
    for (std::size_t i = 0; i < k.cols(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < k.rows(); ++j) sum += static_cast<double>(k.at(j, i));
        means[i] = sum / static_cast<double>(k.rows());
    }
    return means;
}

// Full sort of (score desc, id asc); returns the first c ids.
inline std::vector<std::string> oracle_top_ids(const std::vector<std::string>& ids, const std::vector<double>& means,
                                               std::size_t c) {
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (means[a] != means[b]) return means[a] > means[b];
        return ids[a] < ids[b];
    });
    std::vector<std::string> out;
    for (std::size_t r = 0; r < c; ++r) out.push_back(ids[order[r]]);
    return out;
}

// One kernel row fully sorted by (score desc, id asc).
inline std::vector<ScoredSource> oracle_sorted_row(const DenseKernel& k, std::size_t row) {
    std::vector<ScoredSource> out;
    for (std::size_t i = 0; i < k.cols(); ++i) out.push_back({k.source_ids[i], k.at(row, i)});
    std::sort(out.begin(), out.end(), [](const ScoredSource& a, const ScoredSource& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.source_id < b.source_id;
    });
    return out;
}

struct OraclePool {
    std::size_t k = 0;
    std::map<std::string, float> best;  // id -> best per-row score
};

// Grow a uniform per-row depth from 1 until the union reaches `target` ids or k = N.
inline OraclePool oracle_knn_pool(const DenseKernel& kernel, std::size_t target) {
    std::vector<std::vector<ScoredSource>> rows;
    for (std::size_t j = 0; j < kernel.rows(); ++j) rows.push_back(oracle_sorted_row(kernel, j));
    OraclePool pool;
    for (std::size_t k = 1; k <= kernel.cols(); ++k) {
        pool.k = k;
        pool.best.clear();
        for (const auto& row : rows) {
            for (std::size_t r = 0; r < k; ++r) {
                auto [it, inserted] = pool.best.emplace(row[r].source_id, row[r].score);
                if (!inserted) it->second = std::max(it->second, row[r].score);
            }
        }
        if (pool.best.size() >= target) break;
    }
    return pool;
}

// Rank = position of the ground truth after a full descending sort, counting
// every candidate whose score is strictly larger.
inline std::size_t oracle_rank(const std::vector<double>& scores, std::size_t truth) {
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const auto first = std::find(sorted.begin(), sorted.end(), scores[truth]);
    return static_cast<std::size_t>(first - sorted.begin()) + 1;
}

}  // namespace cupid::testing
