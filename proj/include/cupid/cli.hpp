#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cupid/curation.hpp"
#include "cupid/nce.hpp"
#include "cupid/similarity.hpp"

namespace cupid::cli {

enum class Command { ingest, similarity, curate, schedule, probe, nce_check, stats };

std::string_view to_string(Command command);

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct RunConfig {
    Command command = Command::stats;
    std::filesystem::path out;

    // corpora and metadata
    std::vector<std::filesystem::path> shards;
    std::uint32_t dim = 0;
    std::filesystem::path source_manifest;
    std::filesystem::path target_manifest;
    std::filesystem::path metadata;
    std::filesystem::path target_metadata;
    std::filesystem::path exclude_ids;
    std::filesystem::path column_means;

    // similarity
    Pooling pooling = Pooling::mean;
    std::filesystem::path dense_out;
    std::size_t topk = 0;
    std::filesystem::path topk_out;
    std::size_t tile_rows = 64;
    std::size_t tile_cols = 1024;
    unsigned threads = 1;
    std::size_t memory_budget_mb = 1024;

    // curation
    Strategy strategy = Strategy::avg_sim;
    std::size_t capacity = kDefaultCapacity;
    double expansion_factor = kDefaultExpansionFactor;
    std::uint64_t seed = 0;
    std::vector<std::string> categories;
    std::vector<std::string> vocabulary;
    bool require_human_subtitles = true;
    std::optional<std::size_t> cap;

    // schedule
    std::vector<std::size_t> sizes;
    std::size_t steps = 0;
    std::filesystem::path ranked_manifest;

    // probe
    std::filesystem::path queries;
    std::filesystem::path candidates;
    std::filesystem::path ground_truth;
    std::vector<std::size_t> ks{1, 5, 10};

    // nce-check
    std::size_t batch = 4;
    std::size_t grids = 1;
    double step = 1e-5;

    TileConfig tile() const;
};

/// Raised for invalid invocations; maps to kExitUsage.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checks parameter ranges and that every referenced input exists.
void validate(const RunConfig& config);

/// Executes one command. Primary outputs are published atomically and a run
/// report is written next to `out` as `<out>.report.json`. Returns the exit
/// status; failures print one JSON line to stderr.
int run(const RunConfig& config);

/// Parses argv (flags plus optional `--config file.json`, flags winning).
/// Throws UsageError on bad input. Returns nullopt when help was printed.
std::optional<RunConfig> parse_args(int argc, const char* const* argv);

/// Full process entry point: parse, run, map errors to exit codes.
int main_entry(int argc, const char* const* argv);

}  // namespace cupid::cli
