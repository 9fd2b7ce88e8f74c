#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cupid/embedding_store.hpp"
#include "cupid/similarity.hpp"

namespace cupid {

enum class Strategy { avg_sim, knn, heuristic };

std::string_view to_string(Strategy strategy);
/// Accepts both "avg_sim" and the CLI spelling "avg-sim".
Strategy strategy_from_string(std::string_view text);

inline constexpr double kDefaultExpansionFactor = 3.0;
inline constexpr std::size_t kDefaultCapacity = 200000;

struct CurationConfig {
    std::size_t capacity = kDefaultCapacity;
    Strategy strategy = Strategy::avg_sim;
    double expansion_factor = kDefaultExpansionFactor;
    std::uint64_t seed = 0;
    Pooling pooling = Pooling::mean;

    /// Range checks; `source_count` enables the capacity <= N check.
    void validate(std::optional<std::size_t> source_count = std::nullopt) const;

    friend bool operator==(const CurationConfig&, const CurationConfig&) = default;
};

struct ManifestRow {
    std::size_t rank = 0;
    std::string video_id;
    std::optional<double> score;

    friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

struct CurationManifest {
    Strategy strategy = Strategy::avg_sim;
    std::vector<ManifestRow> entries;
    CurationConfig config;
    std::size_t excluded_count = 0;

    std::size_t size() const { return entries.size(); }
    std::vector<std::string> ids() const;

    friend bool operator==(const CurationManifest&, const CurationManifest&) = default;
};

/// Top-c sources by column mean, ties by ascending id.
CurationManifest curate_avg_sim(const ColumnMeans& means, std::size_t capacity);

/// Supplies per-target top-k lists (each sorted by ranks_before) for any k.
struct RowTopKProvider {
    std::size_t target_count = 0;
    std::size_t source_count = 0;
    std::function<RowTopK(std::size_t k)> fetch;
};

/// Provider backed by the streaming reducer; every fetch is a full pass.
RowTopKProvider streaming_topk_provider(const CorpusHandle& target, const CorpusHandle& source,
                                        Pooling pooling, const TileConfig& tile = {});

/// Provider backed by a materialized kernel.
RowTopKProvider dense_topk_provider(DenseKernel kernel);

struct KnnPool {
    std::size_t k = 0;                 // per-row depth at which the pool target was met
    std::vector<ScoredSource> members; // best per-row score per id, sorted by ranks_before
};

/// Grows per-row k from 1 until the deduplicated union of row prefixes holds at
/// least `pool_target` ids, or k reaches the source count.
KnnPool build_knn_pool(const RowTopKProvider& provider, std::size_t pool_target);

/// KNN curation: pool of round(expansion_factor * c) ids, then a seeded uniform
/// sample of c distinct ids, ranked by best per-row score.
CurationManifest curate_knn(const RowTopKProvider& provider, std::size_t capacity,
                            double expansion_factor, std::uint64_t seed);

/// round(expansion_factor * capacity), halves away from zero.
std::size_t knn_pool_target(std::size_t capacity, double expansion_factor);

/// Uniform sample of `count` distinct indices from [0, population), returned in
/// ascending order. Deterministic for a given seed on every platform.
std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    std::uint64_t seed);

struct HeuristicRules {
    std::set<std::string> allowed_categories;
    std::set<std::string> target_vocabulary;  // lowercase words
    bool require_human_subtitles = true;
    std::optional<std::size_t> cap;

    void validate() const;
};

/// Lowercases ASCII, deletes ASCII punctuation, splits on whitespace.
std::vector<std::string> tokenize_title(std::string_view text);

/// Builds a vocabulary from downstream metadata titles and categories.
std::set<std::string> vocabulary_from(std::span<const VideoMeta> downstream);

bool passes_heuristic(const VideoMeta& meta, const HeuristicRules& rules);

/// Keeps videos satisfying every rule, ordered by ascending id; scores are null.
CurationManifest curate_heuristic(std::span<const VideoMeta> metadata, const HeuristicRules& rules);

/// Drops entries whose id is in `downstream_ids` and recompacts ranks.
CurationManifest exclude_overlap(const CurationManifest& manifest,
                                 const std::unordered_set<std::string>& downstream_ids);

struct ScheduleStage {
    CurationManifest manifest;
    std::size_t steps = 0;
};

struct StagedSchedule {
    std::vector<ScheduleStage> stages;
    std::size_t total_steps() const;
};

/// Splits total_steps over stage_count stages as evenly as possible; the
/// remainder goes one step each to the earliest stages.
std::vector<std::size_t> split_steps(std::size_t stage_count, std::size_t total_steps);

/// Validates strictly decreasing sizes and at least one step per stage.
void check_stage_sizes(std::span<const std::size_t> sizes, std::size_t total_steps);

StagedSchedule build_incremental_schedule(std::vector<CurationManifest> manifests,
                                          std::size_t total_steps);

// Manifest JSON-lines {"rank","video_id","score","strategy"} plus a JSON sidecar
// {"strategy","config","entry_count","excluded_count"}.
std::string manifest_jsonl(const CurationManifest& manifest);
std::string manifest_sidecar_json(const CurationManifest& manifest);
std::filesystem::path sidecar_path(const std::filesystem::path& manifest_path);
void write_curation_manifest(const std::filesystem::path& path, const CurationManifest& manifest);
CurationManifest read_curation_manifest(const std::filesystem::path& path);

struct ScheduleLine {
    std::size_t stage = 0;
    std::optional<std::string> manifest_path;
    std::size_t steps = 0;
    std::size_t size = 0;

    friend bool operator==(const ScheduleLine&, const ScheduleLine&) = default;
};

// Schedule JSON-lines {"stage","manifest_path","steps","size"}; stage is 1-based.
std::string schedule_jsonl(std::span<const ScheduleLine> lines);
std::vector<ScheduleLine> read_schedule(const std::filesystem::path& path);

}  // namespace cupid
