#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cupid/embedding_store.hpp"

namespace cupid {

enum class Pooling { mean, max };

std::string_view to_string(Pooling pooling);
Pooling pooling_from_string(std::string_view text);

/// Tiling and parallelism knobs. None of them changes any result bit.
struct TileConfig {
    std::size_t tile_rows = 64;      // target videos per tile
    std::size_t tile_cols = 1024;    // source videos per tile
    unsigned threads = 1;
    std::size_t memory_budget_bytes = std::size_t{1} << 30;  // dense matrix only
};

/// Clip-level similarity between two videos, accumulated in f64.
///
/// Mean pooling returns the grand mean of all L x Q clip dot products. It is
/// evaluated as dot(sum of target clips, sum of source clips) / (L * Q), which is
/// the same quantity and is exactly symmetric in its arguments. Max pooling
/// returns the largest single clip dot product.
double pair_similarity(const ClipMatrix& target, const ClipMatrix& source, Pooling pooling);

/// One kernel entry as stored: the f64 pair score rounded to f32.
inline float kernel_entry(double pair_score) { return static_cast<float>(pair_score); }

/// Materialized P x N kernel, row-major (row = target, column = source).
struct DenseKernel {
    std::vector<std::string> target_ids;
    std::vector<std::string> source_ids;
    std::vector<float> values;

    std::size_t rows() const { return target_ids.size(); }
    std::size_t cols() const { return source_ids.size(); }
    float at(std::size_t row, std::size_t col) const { return values[row * cols() + col]; }
};

DenseKernel build_similarity_matrix(const CorpusHandle& target, const CorpusHandle& source,
                                    Pooling pooling, const TileConfig& tile = {});

struct ColumnMeans {
    std::vector<std::string> source_ids;
    std::vector<double> means;
};

struct ScoredSource {
    std::string source_id;
    float score = 0.0f;

    friend bool operator==(const ScoredSource&, const ScoredSource&) = default;
};

/// Strict total order used for every ranking: higher score first, then
/// ascending source id.
inline bool ranks_before(float score_a, std::string_view id_a, float score_b, std::string_view id_b) {
    if (score_a != score_b) return score_a > score_b;
    return id_a < id_b;
}

struct RowTopK {
    std::vector<std::string> target_ids;
    std::vector<std::vector<ScoredSource>> rows;  // each sorted by ranks_before
};

/// Column i = (1/P) * sum over targets (ascending) of the f32 kernel entry,
/// accumulated in f64. K is never materialized.
ColumnMeans stream_column_means(const CorpusHandle& target, const CorpusHandle& source,
                                Pooling pooling, const TileConfig& tile = {});

/// Per-target top-k sources via bounded heaps. K is never materialized.
RowTopK stream_row_topk(const CorpusHandle& target, const CorpusHandle& source, Pooling pooling,
                        std::size_t k, const TileConfig& tile = {});

/// Same reductions derived from a materialized kernel.
ColumnMeans column_means(const DenseKernel& kernel);
RowTopK row_topk(const DenseKernel& kernel, std::size_t k);

// Dense dump: "CPDK" | u16 version=1 | u32 P | u32 N | P*N f32 row-major.
std::vector<std::byte> encode_dense_kernel(const DenseKernel& kernel);
/// Decodes a dense dump. Ids are not part of the dump, so they come back as
/// "0".."P-1" / "0".."N-1".
DenseKernel decode_dense_kernel(std::span<const std::byte> bytes);

// Column means JSON-lines: {"source_id","avg_sim"}
std::string column_means_jsonl(const ColumnMeans& means);
ColumnMeans read_column_means(const std::filesystem::path& path);

}  // namespace cupid
