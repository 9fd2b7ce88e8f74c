#include "cupid/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "cupid/embedding_store.hpp"
#include "cupid/error.hpp"
#include "cupid/io.hpp"
#include "cupid/retrieval.hpp"

namespace cupid::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

std::shared_ptr<spdlog::logger> logger() {
    if (auto existing = spdlog::get("cupid")) {
        return existing;
    }
    auto created = spdlog::stderr_logger_mt("cupid");
    const char* level = std::getenv("CUPID_LOG");
    created->set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
    created->set_pattern("[%H:%M:%S.%e] [%l] %v");
    return created;
}

// Collects what a run read and wrote for the run report.
class RunRecord {
public:
    void input(const fs::path& path) {
        if (!path.empty()) inputs_.push_back(path);
    }
    void output(const fs::path& path) { outputs_.push_back(path); }

    json inputs_json() const {
        json list = json::array();
        for (const auto& p : inputs_) {
            json entry;
            entry["path"] = p.string();
            entry["sha256"] = fs::exists(p) ? json(io::sha256_file(p)) : json(nullptr);
            list.push_back(std::move(entry));
        }
        return list;
    }

    json outputs_json() const {
        json list = json::array();
        for (const auto& p : outputs_) list.push_back(p.string());
        return list;
    }

private:
    std::vector<fs::path> inputs_;
    std::vector<fs::path> outputs_;
};

// Holds finished artifacts until every computation has succeeded.
class Publisher {
public:
    void stage(fs::path path, std::string content) { pending_.emplace_back(std::move(path), std::move(content)); }

    void publish(RunRecord& record) {
        for (const auto& [path, content] : pending_) {
            io::write_atomic(path, content);
            record.output(path);
        }
        pending_.clear();
    }

private:
    std::vector<std::pair<fs::path, std::string>> pending_;
};

json config_echo(const RunConfig& c) {
    const auto paths = [](const std::vector<fs::path>& v) {
        json list = json::array();
        for (const auto& p : v) list.push_back(p.string());
        return list;
    };
    json j;
    j["command"] = std::string(to_string(c.command));
    j["out"] = c.out.string();
    j["shards"] = paths(c.shards);
    j["dim"] = c.dim;
    j["source_manifest"] = c.source_manifest.string();
    j["target_manifest"] = c.target_manifest.string();
    j["metadata"] = c.metadata.string();
    j["target_metadata"] = c.target_metadata.string();
    j["exclude_ids"] = c.exclude_ids.string();
    j["column_means"] = c.column_means.string();
    j["pooling"] = std::string(to_string(c.pooling));
    j["dense_out"] = c.dense_out.string();
    j["topk"] = c.topk;
    j["topk_out"] = c.topk_out.string();
    j["tile_rows"] = c.tile_rows;
    j["tile_cols"] = c.tile_cols;
    j["threads"] = c.threads;
    j["memory_budget_mb"] = c.memory_budget_mb;
    j["strategy"] = std::string(to_string(c.strategy));
    j["capacity"] = c.capacity;
    j["expansion_factor"] = c.expansion_factor;
    j["seed"] = c.seed;
    j["categories"] = c.categories;
    j["vocabulary"] = c.vocabulary;
    j["require_human_subtitles"] = c.require_human_subtitles;
    j["cap"] = c.cap ? json(*c.cap) : json(nullptr);
    j["sizes"] = c.sizes;
    j["steps"] = c.steps;
    j["ranked_manifest"] = c.ranked_manifest.string();
    j["queries"] = c.queries.string();
    j["candidates"] = c.candidates.string();
    j["ground_truth"] = c.ground_truth.string();
    j["ks"] = c.ks;
    j["batch"] = c.batch;
    j["grids"] = c.grids;
    j["step"] = c.step;
    return j;
}

fs::path report_path(const fs::path& out) {
    auto path = out;
    path += ".report.json";
    return path;
}

void print_error(std::string_view kind, std::string_view message) {
    json line;
    line["error"] = kind;
    line["message"] = message;
    std::cerr << io::dump_line(line) << std::endl;
}

std::string relative_to(const fs::path& target, const fs::path& base_dir) {
    std::error_code ec;
    const auto rel = fs::relative(fs::absolute(target), fs::absolute(base_dir), ec);
    return ec || rel.empty() ? fs::absolute(target).generic_string() : rel.generic_string();
}

std::unordered_set<std::string> read_id_list(const fs::path& path) {
    std::unordered_set<std::string> ids;
    const std::string text = io::read_text(path);
    std::size_t begin = 0;
    std::size_t line_no = 0;
    while (begin <= text.size()) {
        std::size_t end = text.find('\n', begin);
        if (end == std::string::npos) end = text.size();
        ++line_no;
        std::string line = text.substr(begin, end - begin);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first != std::string::npos) {
            line.erase(0, first);
            if (line.front() == '{') {
                const auto row = json::parse(line, nullptr, false);
                if (row.is_discarded()) {
                    fail(ErrorKind::format, path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
                }
                ids.insert(io::field<std::string>(row, "video_id", path.string() + ":" + std::to_string(line_no)));
            } else {
                ids.insert(line);
            }
        }
        begin = end + 1;
    }
    return ids;
}

CorpusHandle open_shard_as_corpus(const fs::path& shard, const std::string& name) {
    const auto bytes = ShardBytes::map_file(shard);
    const auto header = read_shard_header(bytes->bytes());
    return CorpusHandle::from_shards(name, CorpusRole::target, {shard}, header.dim);
}

std::vector<float> single_clip_rows(const CorpusHandle& corpus) {
    std::vector<float> values;
    values.reserve(corpus.video_count() * corpus.dim());
    for (std::size_t i = 0; i < corpus.video_count(); ++i) {
        const auto video = corpus.load_video_at(i);
        if (video.clip_count != 1) {
            fail(ErrorKind::data, "probe embedding '" + video.video_id + "' must have exactly one clip");
        }
        values.insert(values.end(), video.values.begin(), video.values.end());
    }
    return values;
}

json run_ingest(const RunConfig& c, RunRecord& record, Publisher& publisher) {
    std::vector<ManifestEntry> entries;
    std::unordered_set<std::string> seen;
    std::uint64_t clips = 0;
    const fs::path base = c.out.parent_path().empty() ? fs::path(".") : c.out.parent_path();
    for (const auto& shard : c.shards) {
        record.input(shard);
        const auto bytes = ShardBytes::map_file(shard);
        auto decoded = ingest_shard(bytes->bytes(), c.dim, relative_to(shard, base));
        for (auto& e : decoded) {
            if (!seen.insert(e.video_id).second) {
                fail(ErrorKind::data, "duplicate video id '" + e.video_id + "' across shards");
            }
            clips += e.clip_count;
            entries.push_back(std::move(e));
        }
        logger()->info("ingested {} ({} videos so far)", shard.string(), entries.size());
    }
    std::string text;
    for (const auto& e : entries) {
        json row;
        row["video_id"] = e.video_id;
        row["shard"] = e.shard;
        row["offset"] = e.offset;
        row["clip_count"] = e.clip_count;
        text += io::dump_line(row) + "\n";
    }
    publisher.stage(c.out, std::move(text));

    json summary;
    summary["video_count"] = entries.size();
    summary["shard_count"] = c.shards.size();
    summary["dim"] = c.dim;
    summary["clip_count"] = clips;
    return summary;
}

json run_similarity(const RunConfig& c, RunRecord& record, Publisher& publisher) {
    record.input(c.target_manifest);
    record.input(c.source_manifest);
    const auto target = CorpusHandle::open(c.target_manifest, CorpusRole::target);
    const auto source = CorpusHandle::open(c.source_manifest, CorpusRole::source);
    logger()->info("similarity: {} targets x {} sources, dim {}", target.video_count(), source.video_count(),
                   target.dim());

    const auto means = stream_column_means(target, source, c.pooling, c.tile());
    publisher.stage(c.out, column_means_jsonl(means));

    if (!c.dense_out.empty()) {
        const auto kernel = build_similarity_matrix(target, source, c.pooling, c.tile());
        const auto bytes = encode_dense_kernel(kernel);
        publisher.stage(c.dense_out, std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    }
    if (c.topk > 0) {
        const auto top = stream_row_topk(target, source, c.pooling, c.topk, c.tile());
        std::string text;
        for (std::size_t j = 0; j < top.rows.size(); ++j) {
            for (std::size_t r = 0; r < top.rows[j].size(); ++r) {
                json row;
                row["target_id"] = top.target_ids[j];
                row["rank"] = r + 1;
                row["source_id"] = top.rows[j][r].source_id;
                row["score"] = top.rows[j][r].score;
                text += io::dump_line(row) + "\n";
            }
        }
        fs::path path = c.topk_out;
        if (path.empty()) {
            path = c.out;
            path += ".topk.jsonl";
        }
        publisher.stage(path, std::move(text));
    }

    json summary;
    summary["target_count"] = target.video_count();
    summary["source_count"] = source.video_count();
    summary["dim"] = target.dim();
    if (!means.means.empty()) {
        const auto [lo, hi] = std::minmax_element(means.means.begin(), means.means.end());
        summary["avg_sim_min"] = *lo;
        summary["avg_sim_max"] = *hi;
    }
    return summary;
}

json run_curate(const RunConfig& c, RunRecord& record, Publisher& publisher) {
    CurationManifest manifest;
    switch (c.strategy) {
        case Strategy::avg_sim: {
            ColumnMeans means;
            if (!c.column_means.empty()) {
                record.input(c.column_means);
                means = read_column_means(c.column_means);
            } else {
                record.input(c.target_manifest);
                record.input(c.source_manifest);
                const auto target = CorpusHandle::open(c.target_manifest, CorpusRole::target);
                const auto source = CorpusHandle::open(c.source_manifest, CorpusRole::source);
                means = stream_column_means(target, source, c.pooling, c.tile());
            }
            manifest = curate_avg_sim(means, c.capacity);
            break;
        }
        case Strategy::knn: {
            record.input(c.target_manifest);
            record.input(c.source_manifest);
            const auto target = CorpusHandle::open(c.target_manifest, CorpusRole::target);
            const auto source = CorpusHandle::open(c.source_manifest, CorpusRole::source);
            const auto provider = streaming_topk_provider(target, source, c.pooling, c.tile());
            manifest = curate_knn(provider, c.capacity, c.expansion_factor, c.seed);
            break;
        }
        case Strategy::heuristic: {
            record.input(c.metadata);
            HeuristicRules rules;
            rules.allowed_categories.insert(c.categories.begin(), c.categories.end());
            for (const auto& word : c.vocabulary) {
                for (auto& token : tokenize_title(word)) rules.target_vocabulary.insert(std::move(token));
            }
            if (!c.target_metadata.empty()) {
                record.input(c.target_metadata);
                const auto downstream = read_metadata(c.target_metadata);
                rules.target_vocabulary.merge(vocabulary_from(downstream));
            }
            rules.require_human_subtitles = c.require_human_subtitles;
            rules.cap = c.cap;
            manifest = curate_heuristic(read_metadata(c.metadata), rules);
            break;
        }
    }
    manifest.config.pooling = c.pooling;
    if (!c.exclude_ids.empty()) {
        record.input(c.exclude_ids);
        manifest = exclude_overlap(manifest, read_id_list(c.exclude_ids));
    }
    publisher.stage(c.out, manifest_jsonl(manifest));
    publisher.stage(sidecar_path(c.out), manifest_sidecar_json(manifest));

    json summary;
    summary["strategy"] = std::string(to_string(manifest.strategy));
    summary["entry_count"] = manifest.size();
    summary["excluded_count"] = manifest.excluded_count;
    return summary;
}

json run_schedule(const RunConfig& c, RunRecord& record, Publisher& publisher) {
    check_stage_sizes(c.sizes, c.steps);
    std::vector<ScheduleLine> lines;
    if (!c.ranked_manifest.empty()) {
        record.input(c.ranked_manifest);
        const auto ranked = read_curation_manifest(c.ranked_manifest);
        std::vector<CurationManifest> stages;
        for (std::size_t size : c.sizes) {
            if (size > ranked.size()) {
                fail(ErrorKind::capacity, "stage size " + std::to_string(size) + " exceeds ranked manifest of " +
                                              std::to_string(ranked.size()));
            }
            CurationManifest stage = ranked;
            stage.entries.resize(size);
            stage.config.capacity = size;
            stages.push_back(std::move(stage));
        }
        const auto schedule = build_incremental_schedule(std::move(stages), c.steps);
        for (std::size_t i = 0; i < schedule.stages.size(); ++i) {
            fs::path stage_path = c.out;
            stage_path.replace_extension();
            stage_path += ".stage" + std::to_string(i + 1) + ".jsonl";
            publisher.stage(stage_path, manifest_jsonl(schedule.stages[i].manifest));
            publisher.stage(sidecar_path(stage_path), manifest_sidecar_json(schedule.stages[i].manifest));
            lines.push_back({i + 1, stage_path.filename().string(), schedule.stages[i].steps,
                             schedule.stages[i].manifest.size()});
        }
    } else {
        const auto steps = split_steps(c.sizes.size(), c.steps);
        for (std::size_t i = 0; i < c.sizes.size(); ++i) {
            lines.push_back({i + 1, std::nullopt, steps[i], c.sizes[i]});
        }
    }
    publisher.stage(c.out, schedule_jsonl(lines));

    json summary;
    summary["stage_count"] = lines.size();
    json steps = json::array();
    for (const auto& line : lines) steps.push_back(line.steps);
    summary["steps"] = std::move(steps);
    return summary;
}

json run_probe(const RunConfig& c, RunRecord& record, Publisher& publisher) {
    record.input(c.queries);
    record.input(c.candidates);
    const auto queries = open_shard_as_corpus(c.queries, "queries");
    const auto candidates = open_shard_as_corpus(c.candidates, "candidates");
    if (queries.dim() != candidates.dim()) {
        fail(ErrorKind::schema, "query dim " + std::to_string(queries.dim()) + " != candidate dim " +
                                    std::to_string(candidates.dim()));
    }
    if (queries.video_count() == 0 || candidates.video_count() == 0) {
        fail(ErrorKind::argument, "probe needs at least one query and one candidate");
    }
    const auto query_values = single_clip_rows(queries);
    const auto candidate_values = single_clip_rows(candidates);

    std::unordered_map<std::string, std::size_t> candidate_index;
    const auto candidate_ids = candidates.video_ids();
    for (std::size_t i = 0; i < candidate_ids.size(); ++i) candidate_index.emplace(candidate_ids[i], i);

    std::unordered_map<std::string, std::string> mapping;
    if (!c.ground_truth.empty()) {
        record.input(c.ground_truth);
        const auto rows = io::read_jsonl(c.ground_truth);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::string where = c.ground_truth.string() + " line " + std::to_string(i + 1);
            mapping[io::field<std::string>(rows[i], "query_id", where)] =
                io::field<std::string>(rows[i], "candidate_id", where);
        }
    }
    std::vector<std::size_t> truth;
    for (const auto& qid : queries.video_ids()) {
        const auto mapped = mapping.find(qid);
        const std::string& cid = mapped == mapping.end() ? qid : mapped->second;
        const auto it = candidate_index.find(cid);
        if (it == candidate_index.end()) {
            fail(ErrorKind::not_found, "no ground-truth candidate '" + cid + "' for query '" + qid + "'");
        }
        truth.push_back(it->second);
    }

    const EmbeddingRows q{query_values, queries.video_count(), queries.dim()};
    const EmbeddingRows k{candidate_values, candidates.video_count(), candidates.dim()};
    const auto ranks = rank_queries(q, k, truth, c.threads);
    const auto result = summarize(ranks, c.ks);
    publisher.stage(c.out, probe_report_json(result, candidates.video_count()));

    json summary;
    summary["query_count"] = ranks.size();
    summary["candidate_count"] = candidates.video_count();
    summary["median_rank"] = result.median_rank;
    return summary;
}

json run_nce_check(const RunConfig& c, bool& passed, Publisher& publisher) {
    constexpr double kTolerance = 1e-4;
    json modes;
    passed = true;
    for (const auto mode : {nce::NegativeMode::standard, nce::NegativeMode::n_squared}) {
        double worst = 0.0;
        json losses = json::array();
        for (std::size_t g = 0; g < c.grids; ++g) {
            const auto grid = nce::random_grid(c.batch, c.seed + g);
            const auto check = nce::check_gradient(grid, mode, c.step);
            worst = std::max(worst, check.max_relative_error);
            losses.push_back(nce::nce_loss(grid, mode));
        }
        const auto probe = nce::random_grid(c.batch, c.seed);
        json entry;
        entry["losses"] = std::move(losses);
        entry["negatives_per_anchor"] = nce::negative_set(probe, mode, 0).size();
        entry["max_relative_error"] = worst;
        entry["pass"] = worst < kTolerance;
        passed = passed && worst < kTolerance;
        modes[std::string(nce::to_string(mode))] = std::move(entry);
    }
    json report;
    report["batch"] = c.batch;
    report["seed"] = c.seed;
    report["grids"] = c.grids;
    report["step"] = c.step;
    report["tolerance"] = kTolerance;
    report["modes"] = std::move(modes);
    report["max_relative_error"] = std::max(report["modes"]["standard"]["max_relative_error"].get<double>(),
                                            report["modes"]["n_squared"]["max_relative_error"].get<double>());
    report["pass"] = passed;
    publisher.stage(c.out, report.dump(2) + "\n");

    json summary;
    summary["max_relative_error"] = report["max_relative_error"];
    summary["pass"] = passed;
    return summary;
}

json run_stats(const RunConfig& c, RunRecord& record, Publisher& publisher) {
    json stats;
    const fs::path& manifest_path = c.source_manifest.empty() ? c.target_manifest : c.source_manifest;
    if (!manifest_path.empty()) {
        record.input(manifest_path);
        const auto role = c.source_manifest.empty() ? CorpusRole::target : CorpusRole::source;
        const auto corpus = CorpusHandle::open(manifest_path, role);
        corpus.verify();
        std::uint64_t total = 0;
        std::uint32_t lo = std::numeric_limits<std::uint32_t>::max();
        std::uint32_t hi = 0;
        std::set<std::string> shards;
        for (const auto& e : corpus.manifest()) {
            total += e.clip_count;
            lo = std::min(lo, e.clip_count);
            hi = std::max(hi, e.clip_count);
            shards.insert(e.shard);
        }
        json corpus_stats;
        corpus_stats["corpus_id"] = corpus.corpus_id();
        corpus_stats["role"] = std::string(to_string(role));
        corpus_stats["video_count"] = corpus.video_count();
        corpus_stats["dim"] = corpus.dim();
        corpus_stats["shard_count"] = shards.size();
        corpus_stats["clips_total"] = total;
        corpus_stats["clips_min"] = corpus.video_count() ? lo : 0;
        corpus_stats["clips_max"] = hi;
        corpus_stats["clips_mean"] =
            corpus.video_count() ? static_cast<double>(total) / static_cast<double>(corpus.video_count()) : 0.0;
        stats["corpus"] = std::move(corpus_stats);
    }
    if (!c.metadata.empty()) {
        record.input(c.metadata);
        const auto records = read_metadata(c.metadata);
        std::map<std::string, std::size_t> categories;
        std::map<std::string, std::size_t> subtitles;
        double duration = 0.0;
        for (const auto& m : records) {
            ++categories[m.category];
            ++subtitles[std::string(to_string(m.subtitle_source))];
            duration += m.duration_s;
        }
        json meta;
        meta["video_count"] = records.size();
        meta["categories"] = categories;
        meta["subtitle_source"] = subtitles;
        meta["duration_s_total"] = duration;
        stats["metadata"] = std::move(meta);
    }
    publisher.stage(c.out, stats.dump(2) + "\n");
    return stats;
}

void require_file(const fs::path& path, const char* flag) {
    if (path.empty()) {
        throw UsageError(std::string(flag) + " is required");
    }
    if (!fs::is_regular_file(path)) {
        throw UsageError(std::string(flag) + " path does not exist: " + path.string());
    }
}

void optional_file(const fs::path& path, const char* flag) {
    if (!path.empty() && !fs::is_regular_file(path)) {
        throw UsageError(std::string(flag) + " path does not exist: " + path.string());
    }
}

}  // namespace

std::string_view to_string(Command command) {
    switch (command) {
        case Command::ingest: return "ingest";
        case Command::similarity: return "similarity";
        case Command::curate: return "curate";
        case Command::schedule: return "schedule";
        case Command::probe: return "probe";
        case Command::nce_check: return "nce-check";
        case Command::stats: return "stats";
    }
    return "stats";
}

TileConfig RunConfig::tile() const {
    TileConfig tile;
    tile.tile_rows = tile_rows;
    tile.tile_cols = tile_cols;
    tile.threads = threads;
    tile.memory_budget_bytes = memory_budget_mb * std::size_t{1024} * 1024;
    return tile;
}

void validate(const RunConfig& c) {
    if (c.out.empty()) {
        throw UsageError("--out is required");
    }
    if (c.threads < 1 || c.tile_rows < 1 || c.tile_cols < 1) {
        throw UsageError("--threads, --tile-rows and --tile-cols must be positive");
    }
    switch (c.command) {
        case Command::ingest:
            if (c.shards.empty()) throw UsageError("--shards is required");
            for (const auto& s : c.shards) require_file(s, "--shards");
            if (c.dim == 0) throw UsageError("--dim must be positive");
            break;
        case Command::similarity:
            require_file(c.target_manifest, "--target-manifest");
            require_file(c.source_manifest, "--source-manifest");
            break;
        case Command::curate:
            if (c.capacity < 1) throw UsageError("--capacity must be positive");
            if (c.strategy == Strategy::knn && !(c.expansion_factor >= 2.0 && c.expansion_factor <= 4.0)) {
                throw UsageError("--expansion-factor must lie in [2, 4]");
            }
            if (c.strategy == Strategy::heuristic) {
                require_file(c.metadata, "--metadata");
                optional_file(c.target_metadata, "--target-metadata");
                if (c.categories.empty()) throw UsageError("--categories is required for the heuristic strategy");
                if (c.vocabulary.empty() && c.target_metadata.empty()) {
                    throw UsageError("heuristic strategy needs --vocabulary or --target-metadata");
                }
                if (c.cap && *c.cap == 0) throw UsageError("--cap must be positive");
            } else if (c.strategy == Strategy::avg_sim && !c.column_means.empty()) {
                require_file(c.column_means, "--column-means");
            } else {
                require_file(c.target_manifest, "--target-manifest");
                require_file(c.source_manifest, "--source-manifest");
            }
            optional_file(c.exclude_ids, "--exclude-ids");
            break;
        case Command::schedule:
            if (c.sizes.empty()) throw UsageError("--sizes is required");
            if (c.steps < 1) throw UsageError("--steps must be positive");
            optional_file(c.ranked_manifest, "--manifest");
            break;
        case Command::probe:
            require_file(c.queries, "--queries");
            require_file(c.candidates, "--candidates");
            optional_file(c.ground_truth, "--ground-truth");
            if (c.ks.empty()) throw UsageError("--ks needs at least one cutoff");
            for (auto k : c.ks) {
                if (k < 1) throw UsageError("--ks cutoffs must be positive");
            }
            break;
        case Command::nce_check:
            if (c.batch < 1) throw UsageError("--batch must be positive");
            if (c.grids < 1) throw UsageError("--grids must be positive");
            if (!(c.step > 0.0)) throw UsageError("--step must be positive");
            break;
        case Command::stats:
            optional_file(c.source_manifest, "--source-manifest");
            optional_file(c.target_manifest, "--target-manifest");
            optional_file(c.metadata, "--metadata");
            if (c.source_manifest.empty() && c.target_manifest.empty() && c.metadata.empty()) {
                throw UsageError("stats needs a manifest or --metadata");
            }
            break;
    }
}

int run(const RunConfig& config) {
    const auto started = std::chrono::steady_clock::now();
    RunRecord record;
    Publisher publisher;
    json result;
    std::string status = "ok";
    json error = nullptr;
    int exit_code = kExitOk;

    try {
        validate(config);
        logger()->info("running {}", to_string(config.command));
        switch (config.command) {
            case Command::ingest: result = run_ingest(config, record, publisher); break;
            case Command::similarity: result = run_similarity(config, record, publisher); break;
            case Command::curate: result = run_curate(config, record, publisher); break;
            case Command::schedule: result = run_schedule(config, record, publisher); break;
            case Command::probe: result = run_probe(config, record, publisher); break;
            case Command::nce_check: {
                bool passed = true;
                result = run_nce_check(config, passed, publisher);
                if (!passed) {
                    status = "check_failed";
                    exit_code = kExitFailure;
                    print_error("check_failed", "gradient check exceeded tolerance");
                }
                break;
            }
            case Command::stats: result = run_stats(config, record, publisher); break;
        }
        publisher.publish(record);
    } catch (const UsageError& e) {
        status = "error";
        error = json{{"kind", "usage"}, {"message", e.what()}};
        print_error("usage", e.what());
        exit_code = kExitUsage;
    } catch (const Error& e) {
        status = "error";
        error = json{{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}};
        print_error(to_string(e.kind()), e.what());
        exit_code = kExitFailure;
    } catch (const std::exception& e) {
        status = "error";
        error = json{{"kind", "internal"}, {"message", e.what()}};
        print_error("internal", e.what());
        exit_code = kExitFailure;
    }

    if (!config.out.empty()) {
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        json report;
        report["command"] = std::string(to_string(config.command));
        report["status"] = status;
        report["exit_code"] = exit_code;
        report["config"] = config_echo(config);
        try {
            report["inputs"] = record.inputs_json();
        } catch (const std::exception&) {
            report["inputs"] = json::array();
        }
        report["outputs"] = record.outputs_json();
        report["result"] = result;
        report["error"] = error;
        report["timings"] = json{{"total_s", elapsed}};
        try {
            io::write_atomic(report_path(config.out), report.dump(2) + "\n");
        } catch (const std::exception& e) {
            logger()->error("could not write run report: {}", e.what());
        }
    }
    return exit_code;
}

namespace {

// Expands `--config file.json` into flag tokens placed before the user's own
// flags; keys the user passed explicitly are skipped so flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        }
    }
    if (config_path.empty() || args.size() < 2) {
        return args;
    }
    json config;
    try {
        config = json::parse(io::read_text(config_path));
    } catch (const json::exception& e) {
        throw UsageError("cannot parse config file " + config_path + ": " + e.what());
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (!config.is_object()) {
        throw UsageError("config file must hold a JSON object");
    }
    const auto given = [&](const std::string& flag) {
        return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
            return a == flag || a.rfind(flag + "=", 0) == 0;
        });
    };
    const auto scalar = [](const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
        return v.dump();
    };

    std::vector<std::string> expanded(args.begin(), args.begin() + 2);
    for (const auto& [key, value] : config.items()) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (flag == "--config" || given(flag)) {
            continue;
        }
        expanded.push_back(flag);
        if (value.is_array()) {
            for (const auto& v : value) expanded.push_back(scalar(v));
        } else {
            expanded.push_back(scalar(value));
        }
    }
    expanded.insert(expanded.end(), args.begin() + 2, args.end());
    return expanded;
}

}  // namespace

std::optional<RunConfig> parse_args(int argc, const char* const* argv) {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(args);

    RunConfig c;
    std::string pooling = "mean";
    std::string strategy = "avg-sim";
    std::size_t cap = 0;
    std::string config_path;

    CLI::App app{"cupid: curate domain-matched pre-training subsets from embedding corpora"};
    app.name("cupid");
    app.require_subcommand(1, 1);

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--out", c.out, "primary output path")->required();
        sub->add_option("--config", config_path, "JSON config file; explicit flags win");
    };
    const auto corpora = [&](CLI::App* sub) {
        sub->add_option("--source-manifest", c.source_manifest, "source corpus manifest (JSON-lines)");
        sub->add_option("--target-manifest", c.target_manifest, "target corpus manifest (JSON-lines)");
    };
    const auto kernel = [&](CLI::App* sub) {
        sub->add_option("--pooling", pooling, "clip pooling")->check(CLI::IsMember({"mean", "max"}));
        sub->add_option("--threads", c.threads, "worker threads (results do not depend on it)");
        sub->add_option("--tile-rows", c.tile_rows, "target videos per tile");
        sub->add_option("--tile-cols", c.tile_cols, "source videos per tile");
        sub->add_option("--memory-budget-mb", c.memory_budget_mb, "dense kernel memory budget");
    };

    auto* ingest = app.add_subcommand("ingest", "validate shards and write a corpus manifest");
    common(ingest);
    ingest->add_option("--shards", c.shards, "shard files")->required();
    ingest->add_option("--dim", c.dim, "expected embedding dim")->required();

    auto* similarity = app.add_subcommand("similarity", "column means (and optional dense/top-k dumps)");
    common(similarity);
    corpora(similarity);
    kernel(similarity);
    similarity->add_option("--dense-out", c.dense_out, "write the dense kernel here");
    similarity->add_option("--topk", c.topk, "also write per-target top-k");
    similarity->add_option("--topk-out", c.topk_out, "top-k output path");

    auto* curate = app.add_subcommand("curate", "select a curated subset");
    common(curate);
    corpora(curate);
    kernel(curate);
    curate->add_option("--strategy", strategy, "curation strategy")
        ->check(CLI::IsMember({"avg-sim", "avg_sim", "knn", "heuristic"}));
    curate->add_option("--capacity", c.capacity, "curated subset size c");
    curate->add_option("--expansion-factor", c.expansion_factor, "KNN pool size relative to c");
    curate->add_option("--seed", c.seed, "KNN sampling seed");
    curate->add_option("--column-means", c.column_means, "precomputed column means (avg-sim)");
    curate->add_option("--metadata", c.metadata, "source metadata (heuristic)");
    curate->add_option("--target-metadata", c.target_metadata, "downstream metadata for the title vocabulary");
    curate->add_option("--categories", c.categories, "allowed categories (heuristic)");
    curate->add_option("--vocabulary", c.vocabulary, "title vocabulary words (heuristic)");
    curate->add_option("--require-human-subtitles", c.require_human_subtitles, "keep only human subtitles");
    curate->add_option("--cap", cap, "truncate heuristic output by ascending id");
    curate->add_option("--exclude-ids", c.exclude_ids, "ids to drop (downstream overlap)");

    auto* schedule = app.add_subcommand("schedule", "split training steps over decreasing stages");
    common(schedule);
    schedule->add_option("--sizes", c.sizes, "stage sizes, strictly decreasing")->delimiter(',')->required();
    schedule->add_option("--steps", c.steps, "total training steps")->required();
    schedule->add_option("--manifest", c.ranked_manifest, "ranked manifest to cut stage manifests from");

    auto* probe = app.add_subcommand("probe", "zero-shot retrieval recall and median rank");
    common(probe);
    probe->add_option("--queries", c.queries, "query shard (one clip per entry)")->required();
    probe->add_option("--candidates", c.candidates, "candidate shard (one clip per entry)")->required();
    probe->add_option("--ground-truth", c.ground_truth, "JSON-lines {query_id, candidate_id}");
    probe->add_option("--ks", c.ks, "recall cutoffs")->delimiter(',');
    probe->add_option("--threads", c.threads, "worker threads");

    auto* nce_check = app.add_subcommand("nce-check", "finite-difference check of the NCE gradients");
    common(nce_check);
    nce_check->add_option("--batch", c.batch, "batch size B");
    nce_check->add_option("--seed", c.seed, "grid seed");
    nce_check->add_option("--grids", c.grids, "number of random grids");
    nce_check->add_option("--step", c.step, "finite-difference step");

    auto* stats = app.add_subcommand("stats", "corpus and metadata statistics");
    common(stats);
    corpora(stats);
    stats->add_option("--metadata", c.metadata, "metadata JSON-lines");

    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return std::nullopt;
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }

    if (*ingest) c.command = Command::ingest;
    if (*similarity) c.command = Command::similarity;
    if (*curate) c.command = Command::curate;
    if (*schedule) c.command = Command::schedule;
    if (*probe) c.command = Command::probe;
    if (*nce_check) c.command = Command::nce_check;
    if (*stats) c.command = Command::stats;

    c.pooling = pooling_from_string(pooling);
    c.strategy = strategy_from_string(strategy);
    if (curate->count("--cap") > 0) {
        c.cap = cap;
    }
    return c;
}

int main_entry(int argc, const char* const* argv) {
    std::optional<RunConfig> config;
    try {
        config = parse_args(argc, argv);
    } catch (const UsageError& e) {
        print_error("usage", e.what());
        return kExitUsage;
    } catch (const Error& e) {
        print_error("usage", e.what());
        return kExitUsage;
    }
    if (!config) {
        return kExitOk;
    }
    return run(*config);
}

}  // namespace cupid::cli
