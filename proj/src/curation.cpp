#include "cupid/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <unordered_map>

#include "cupid/error.hpp"
#include "cupid/io.hpp"

namespace cupid {

namespace {

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased and independent of the
    // standard library's distribution implementation.
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
        const std::uint64_t x = rng();
        if (x >= threshold) {
            return x % n;
        }
    }
}

void rerank(std::vector<ManifestRow>& rows) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].rank = i + 1;
    }
}

io::json config_to_json(const CurationConfig& config) {
    io::json j;
    j["capacity"] = config.capacity;
    j["strategy"] = std::string(to_string(config.strategy));
    j["expansion_factor"] = config.expansion_factor;
    j["seed"] = config.seed;
    j["pooling"] = std::string(to_string(config.pooling));
    return j;
}

CurationConfig config_from_json(const io::json& j, const std::string& where) {
    CurationConfig config;
    config.capacity = io::field<std::size_t>(j, "capacity", where);
    config.strategy = strategy_from_string(io::field<std::string>(j, "strategy", where));
    config.expansion_factor = io::field<double>(j, "expansion_factor", where);
    config.seed = io::field<std::uint64_t>(j, "seed", where);
    config.pooling = pooling_from_string(io::field<std::string>(j, "pooling", where));
    return config;
}

}  // namespace

std::string_view to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::avg_sim: return "avg_sim";
        case Strategy::knn: return "knn";
        case Strategy::heuristic: return "heuristic";
    }
    return "avg_sim";
}

Strategy strategy_from_string(std::string_view text) {
    if (text == "avg_sim" || text == "avg-sim") return Strategy::avg_sim;
    if (text == "knn") return Strategy::knn;
    if (text == "heuristic") return Strategy::heuristic;
    fail(ErrorKind::argument, "unknown strategy '" + std::string(text) + "'");
}

void CurationConfig::validate(std::optional<std::size_t> source_count) const {
    if (capacity < 1) {
        fail(ErrorKind::argument, "capacity must be positive");
    }
    if (strategy == Strategy::knn && !(expansion_factor >= 2.0 && expansion_factor <= 4.0)) {
        fail(ErrorKind::argument, "expansion factor must lie in [2, 4]");
    }
    if (strategy != Strategy::heuristic && source_count && capacity > *source_count) {
        fail(ErrorKind::capacity, "capacity " + std::to_string(capacity) + " exceeds source count " +
                                      std::to_string(*source_count));
    }
}

std::vector<std::string> CurationManifest::ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& row : entries) {
        out.push_back(row.video_id);
    }
    return out;
}

CurationManifest curate_avg_sim(const ColumnMeans& means, std::size_t capacity) {
    const std::size_t n = means.source_ids.size();
    if (means.means.size() != n) {
        fail(ErrorKind::argument, "column means and ids differ in length");
    }
    CurationConfig config;
    config.capacity = capacity;
    config.strategy = Strategy::avg_sim;
    config.validate(n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto before = [&](std::size_t a, std::size_t b) {
        if (means.means[a] != means.means[b]) return means.means[a] > means.means[b];
        return means.source_ids[a] < means.source_ids[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(capacity), order.end(),
                      before);

    CurationManifest manifest;
    manifest.strategy = Strategy::avg_sim;
    manifest.config = config;
    manifest.entries.reserve(capacity);
    for (std::size_t r = 0; r < capacity; ++r) {
        manifest.entries.push_back({r + 1, means.source_ids[order[r]], means.means[order[r]]});
    }
    return manifest;
}

RowTopKProvider streaming_topk_provider(const CorpusHandle& target, const CorpusHandle& source,
                                        Pooling pooling, const TileConfig& tile) {
    RowTopKProvider provider;
    provider.target_count = target.video_count();
    provider.source_count = source.video_count();
    provider.fetch = [&target, &source, pooling, tile](std::size_t k) {
        return stream_row_topk(target, source, pooling, k, tile);
    };
    return provider;
}

RowTopKProvider dense_topk_provider(DenseKernel kernel) {
    auto shared = std::make_shared<const DenseKernel>(std::move(kernel));
    RowTopKProvider provider;
    provider.target_count = shared->rows();
    provider.source_count = shared->cols();
    provider.fetch = [shared](std::size_t k) { return row_topk(*shared, k); };
    return provider;
}

std::size_t knn_pool_target(std::size_t capacity, double expansion_factor) {
    return static_cast<std::size_t>(std::llround(expansion_factor * static_cast<double>(capacity)));
}

KnnPool build_knn_pool(const RowTopKProvider& provider, std::size_t pool_target) {
    const std::size_t rows = provider.target_count;
    const std::size_t n = provider.source_count;
    if (rows == 0 || n == 0) {
        fail(ErrorKind::argument, "KNN pool needs non-empty target and source corpora");
    }
    pool_target = std::max<std::size_t>(1, pool_target);

    std::unordered_map<std::string, float> best;
    std::size_t depth = 0;  // row prefixes already folded into `best`
    // First fetch is deep enough to reach the target if rows never overlapped.
    std::size_t fetch_k = std::min(n, std::max<std::size_t>(1, (pool_target + rows - 1) / rows));
    for (;;) {
        const RowTopK lists = provider.fetch(fetch_k);
        if (lists.rows.size() != rows) {
            fail(ErrorKind::argument, "top-k provider returned the wrong number of rows");
        }
        for (std::size_t k = depth + 1; k <= fetch_k; ++k) {
            for (const auto& row : lists.rows) {
                if (row.size() < k) {
                    continue;
                }
                const auto& hit = row[k - 1];
                auto [it, inserted] = best.emplace(hit.source_id, hit.score);
                if (!inserted && hit.score > it->second) {
                    it->second = hit.score;
                }
            }
            depth = k;
            if (best.size() >= pool_target || k == n) {
                KnnPool pool;
                pool.k = k;
                pool.members.reserve(best.size());
                for (auto& [id, score] : best) {
                    pool.members.push_back({id, score});
                }
                std::sort(pool.members.begin(), pool.members.end(),
                          [](const ScoredSource& a, const ScoredSource& b) {
                              return ranks_before(a.score, a.source_id, b.score, b.source_id);
                          });
                return pool;
            }
        }
        fetch_k = std::min(n, fetch_k * 2);
    }
}

std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    std::uint64_t seed) {
    if (count > population) {
        fail(ErrorKind::capacity, "cannot sample " + std::to_string(count) + " of " +
                                      std::to_string(population));
    }
    std::vector<std::size_t> index(population);
    std::iota(index.begin(), index.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(bounded(rng, population - i));
        std::swap(index[i], index[j]);
    }
    index.resize(count);
    std::sort(index.begin(), index.end());
    return index;
}

CurationManifest curate_knn(const RowTopKProvider& provider, std::size_t capacity,
                            double expansion_factor, std::uint64_t seed) {
    CurationConfig config;
    config.capacity = capacity;
    config.strategy = Strategy::knn;
    config.expansion_factor = expansion_factor;
    config.seed = seed;
    config.validate(provider.source_count);

    const KnnPool pool = build_knn_pool(provider, knn_pool_target(capacity, expansion_factor));
    // Pool members are rank-sorted, so ascending sample indices keep rank order.
    const auto picked = sample_without_replacement(pool.members.size(), capacity, seed);

    CurationManifest manifest;
    manifest.strategy = Strategy::knn;
    manifest.config = config;
    manifest.entries.reserve(capacity);
    for (std::size_t idx : picked) {
        const auto& member = pool.members[idx];
        manifest.entries.push_back({0, member.source_id, static_cast<double>(member.score)});
    }
    rerank(manifest.entries);
    return manifest;
}

void HeuristicRules::validate() const {
    if (allowed_categories.empty()) {
        fail(ErrorKind::argument, "heuristic rules need at least one allowed category");
    }
    if (cap && *cap == 0) {
        fail(ErrorKind::argument, "heuristic cap must be positive");
    }
}

std::vector<std::string> tokenize_title(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        const auto byte = static_cast<unsigned char>(ch);
        if (byte < 0x80 && std::ispunct(byte)) {
            continue;
        }
        if (byte < 0x80 && std::isspace(byte)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
            continue;
        }
        current.push_back(byte < 0x80 ? static_cast<char>(std::tolower(byte)) : ch);
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

std::set<std::string> vocabulary_from(std::span<const VideoMeta> downstream) {
    std::set<std::string> vocabulary;
    for (const auto& meta : downstream) {
        for (auto& token : tokenize_title(meta.title)) vocabulary.insert(std::move(token));
        for (auto& token : tokenize_title(meta.category)) vocabulary.insert(std::move(token));
    }
    return vocabulary;
}

bool passes_heuristic(const VideoMeta& meta, const HeuristicRules& rules) {
    if (!rules.allowed_categories.contains(meta.category)) {
        return false;
    }
    if (rules.require_human_subtitles && meta.subtitle_source != SubtitleSource::human) {
        return false;
    }
    const auto tokens = tokenize_title(meta.title);
    return std::any_of(tokens.begin(), tokens.end(),
                       [&](const std::string& t) { return rules.target_vocabulary.contains(t); });
}

CurationManifest curate_heuristic(std::span<const VideoMeta> metadata, const HeuristicRules& rules) {
    rules.validate();
    std::vector<std::string> kept;
    for (const auto& meta : metadata) {
        if (passes_heuristic(meta, rules)) {
            kept.push_back(meta.video_id);
        }
    }
    std::sort(kept.begin(), kept.end());
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
    if (rules.cap && kept.size() > *rules.cap) {
        kept.resize(*rules.cap);
    }

    CurationManifest manifest;
    manifest.strategy = Strategy::heuristic;
    manifest.config.strategy = Strategy::heuristic;
    manifest.config.capacity = rules.cap.value_or(kept.size());
    manifest.entries.reserve(kept.size());
    for (auto& id : kept) {
        manifest.entries.push_back({0, std::move(id), std::nullopt});
    }
    rerank(manifest.entries);
    return manifest;
}

CurationManifest exclude_overlap(const CurationManifest& manifest,
                                 const std::unordered_set<std::string>& downstream_ids) {
    CurationManifest out;
    out.strategy = manifest.strategy;
    out.config = manifest.config;
    out.excluded_count = manifest.excluded_count;
    for (const auto& row : manifest.entries) {
        if (downstream_ids.contains(row.video_id)) {
            ++out.excluded_count;
        } else {
            out.entries.push_back(row);
        }
    }
    rerank(out.entries);
    return out;
}

std::size_t StagedSchedule::total_steps() const {
    std::size_t total = 0;
    for (const auto& stage : stages) total += stage.steps;
    return total;
}

std::vector<std::size_t> split_steps(std::size_t stage_count, std::size_t total_steps) {
    if (stage_count == 0) {
        fail(ErrorKind::argument, "schedule needs at least one stage");
    }
    if (total_steps < stage_count) {
        fail(ErrorKind::argument, "fewer steps than stages");
    }
    std::vector<std::size_t> steps(stage_count, total_steps / stage_count);
    for (std::size_t i = 0; i < total_steps % stage_count; ++i) {
        ++steps[i];
    }
    return steps;
}

void check_stage_sizes(std::span<const std::size_t> sizes, std::size_t total_steps) {
    if (sizes.empty()) {
        fail(ErrorKind::argument, "schedule needs at least one stage");
    }
    for (std::size_t i = 1; i < sizes.size(); ++i) {
        if (sizes[i] >= sizes[i - 1]) {
            fail(ErrorKind::argument, "stage sizes must be strictly decreasing");
        }
    }
    if (total_steps < sizes.size()) {
        fail(ErrorKind::argument, "fewer steps than stages");
    }
}

StagedSchedule build_incremental_schedule(std::vector<CurationManifest> manifests,
                                          std::size_t total_steps) {
    std::vector<std::size_t> sizes;
    sizes.reserve(manifests.size());
    for (const auto& m : manifests) sizes.push_back(m.size());
    check_stage_sizes(sizes, total_steps);
    const auto steps = split_steps(manifests.size(), total_steps);

    StagedSchedule schedule;
    schedule.stages.reserve(manifests.size());
    for (std::size_t i = 0; i < manifests.size(); ++i) {
        schedule.stages.push_back({std::move(manifests[i]), steps[i]});
    }
    return schedule;
}

std::string manifest_jsonl(const CurationManifest& manifest) {
    const std::string strategy(to_string(manifest.strategy));
    std::string text;
    for (const auto& row : manifest.entries) {
        io::json j;
        j["rank"] = row.rank;
        j["video_id"] = row.video_id;
        j["score"] = row.score ? io::json(*row.score) : io::json(nullptr);
        j["strategy"] = strategy;
        text += io::dump_line(j);
        text += '\n';
    }
    return text;
}

std::string manifest_sidecar_json(const CurationManifest& manifest) {
    io::json j;
    j["strategy"] = std::string(to_string(manifest.strategy));
    j["config"] = config_to_json(manifest.config);
    j["entry_count"] = manifest.entries.size();
    j["excluded_count"] = manifest.excluded_count;
    return j.dump(2) + "\n";
}

std::filesystem::path sidecar_path(const std::filesystem::path& manifest_path) {
    auto path = manifest_path;
    path += ".meta.json";
    return path;
}

void write_curation_manifest(const std::filesystem::path& path, const CurationManifest& manifest) {
    io::write_atomic(path, manifest_jsonl(manifest));
    io::write_atomic(sidecar_path(path), manifest_sidecar_json(manifest));
}

CurationManifest read_curation_manifest(const std::filesystem::path& path) {
    CurationManifest manifest;
    const auto meta_path = sidecar_path(path);
    const bool has_sidecar = std::filesystem::exists(meta_path);
    if (has_sidecar) {
        const auto meta = io::json::parse(io::read_text(meta_path), nullptr, false);
        if (meta.is_discarded()) {
            fail(ErrorKind::format, meta_path.string() + ": not valid JSON");
        }
        const std::string where = meta_path.string();
        manifest.strategy = strategy_from_string(io::field<std::string>(meta, "strategy", where));
        manifest.config = config_from_json(io::field<io::json>(meta, "config", where), where);
        manifest.excluded_count = io::field<std::size_t>(meta, "excluded_count", where);
    }

    std::unordered_set<std::string> seen;
    const auto rows = io::read_jsonl(path);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string where = path.string() + " line " + std::to_string(i + 1);
        ManifestRow row;
        row.rank = io::field<std::size_t>(rows[i], "rank", where);
        row.video_id = io::field<std::string>(rows[i], "video_id", where);
        const auto& score = rows[i].find("score");
        if (score != rows[i].end() && !score->is_null()) {
            row.score = io::field<double>(rows[i], "score", where);
        }
        const auto strategy = strategy_from_string(io::field<std::string>(rows[i], "strategy", where));
        if (!has_sidecar && i == 0) {
            manifest.strategy = strategy;
            manifest.config.strategy = strategy;
        } else if (strategy != manifest.strategy) {
            fail(ErrorKind::data, where + ": strategy differs from the rest of the manifest");
        }
        if (row.rank != i + 1) {
            fail(ErrorKind::data, where + ": ranks must run 1..n without gaps");
        }
        if (!seen.insert(row.video_id).second) {
            fail(ErrorKind::data, where + ": duplicate video id '" + row.video_id + "'");
        }
        manifest.entries.push_back(std::move(row));
    }
    return manifest;
}

std::string schedule_jsonl(std::span<const ScheduleLine> lines) {
    std::string text;
    for (const auto& line : lines) {
        io::json j;
        j["stage"] = line.stage;
        j["manifest_path"] = line.manifest_path ? io::json(*line.manifest_path) : io::json(nullptr);
        j["steps"] = line.steps;
        j["size"] = line.size;
        text += io::dump_line(j);
        text += '\n';
    }
    return text;
}

std::vector<ScheduleLine> read_schedule(const std::filesystem::path& path) {
    std::vector<ScheduleLine> lines;
    const auto rows = io::read_jsonl(path);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string where = path.string() + " line " + std::to_string(i + 1);
        ScheduleLine line;
        line.stage = io::field<std::size_t>(rows[i], "stage", where);
        const auto& mp = rows[i].find("manifest_path");
        if (mp != rows[i].end() && !mp->is_null()) {
            line.manifest_path = io::field<std::string>(rows[i], "manifest_path", where);
        }
        line.steps = io::field<std::size_t>(rows[i], "steps", where);
        line.size = io::field<std::size_t>(rows[i], "size", where);
        lines.push_back(std::move(line));
    }
    return lines;
}

}  // namespace cupid
