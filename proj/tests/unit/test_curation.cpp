#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "cupid/curation.hpp"
#include "support.hpp"

using namespace cupid;
using namespace cupid::testing;

namespace {

ColumnMeans means_of(std::vector<std::pair<std::string, double>> rows) {
    ColumnMeans m;
    for (auto& [id, v] : rows) {
        m.source_ids.push_back(id);
        m.means.push_back(v);
    }
    return m;
}

CurationManifest ranked(std::size_t n, Strategy strategy = Strategy::avg_sim) {
    CurationManifest m;
    m.strategy = strategy;
    m.config.strategy = strategy;
    m.config.capacity = n;
    for (std::size_t i = 0; i < n; ++i) {
        m.entries.push_back({i + 1, "v" + std::to_string(i), 1.0 - 0.01 * static_cast<double>(i)});
    }
    return m;
}

// Fixed 5 x 20 kernel with distinct values and a few exact ties.
DenseKernel fixture_kernel() {
    DenseKernel k;
    for (int j = 0; j < 5; ++j) k.target_ids.push_back("t" + std::to_string(j));
    for (int i = 0; i < 20; ++i) {
        char id[8];
        std::snprintf(id, sizeof id, "s%02d", (i * 7) % 20);
        k.source_ids.push_back(id);
    }
    for (int j = 0; j < 5; ++j) {
        for (int i = 0; i < 20; ++i) {
            k.values.push_back(static_cast<float>(((i * 13 + j * 5) % 17) - 8) * 0.125f);
        }
    }
    return k;
}

VideoMeta meta(std::string id, std::string category, std::string title, SubtitleSource subs) {
    return {std::move(id), std::move(category), std::move(title), subs, 60.0};
}

}  // namespace

TEST_CASE("avg-sim takes the top column means") {
    const auto m = curate_avg_sim(means_of({{"a", 0.9}, {"b", 0.1}, {"d", 0.5}}), 2);
    CHECK(m.ids() == std::vector<std::string>{"a", "d"});
    CHECK(m.entries[0].rank == 1);
    CHECK(m.entries[1].score == 0.5);
    CHECK(m.strategy == Strategy::avg_sim);

    const auto all = curate_avg_sim(means_of({{"a", 0.9}, {"b", 0.1}, {"d", 0.5}}), 3);
    CHECK(all.ids() == std::vector<std::string>{"a", "d", "b"});

    CHECK(curate_avg_sim(means_of({{"b", 0.5}, {"a", 0.5}}), 1).ids() == std::vector<std::string>{"a"});
    CHECK(error_kind([] { curate_avg_sim(means_of({{"a", 1.0}}), 2); }) == ErrorKind::capacity);
    CHECK(error_kind([] { curate_avg_sim(means_of({{"a", 1.0}}), 0); }).has_value());
}

TEST_CASE("avg-sim matches a full-sort oracle and is nested in c") {
    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = pick(rng, 1, 200);
        ColumnMeans m;
        for (std::size_t i = 0; i < n; ++i) {
            m.source_ids.push_back("s" + std::to_string(i));
            // coarse grid so ties are frequent
            m.means.push_back(static_cast<double>(pick(rng, 0, 20)) / 10.0);
        }
        const auto c = pick(rng, 1, n);
        const auto got = curate_avg_sim(m, c);
        CHECK(got.ids() == oracle_top_ids(m.source_ids, m.means, c));
        for (std::size_t r = 1; r < got.size(); ++r) CHECK(*got.entries[r - 1].score >= *got.entries[r].score);

        const auto smaller = curate_avg_sim(m, pick(rng, 1, c));
        const auto big = got.ids();
        for (std::size_t r = 0; r < smaller.size(); ++r) CHECK(smaller.entries[r].video_id == big[r]);
    }
}

TEST_CASE("KNN pool matches the dense oracle on the fixed fixture") {
    const auto kernel = fixture_kernel();
    const auto provider = dense_topk_provider(kernel);
    const std::size_t c = 4;
    const auto target = knn_pool_target(c, 3.0);
    CHECK(target == 12);

    const auto pool = build_knn_pool(provider, target);
    const auto oracle = oracle_knn_pool(kernel, target);
    CHECK(pool.k == oracle.k);
    REQUIRE(pool.members.size() == oracle.best.size());
    for (const auto& member : pool.members) {
        REQUIRE(oracle.best.contains(member.source_id));
        CHECK(oracle.best.at(member.source_id) == member.score);
    }

    const auto first = curate_knn(provider, c, 3.0, 7);
    CHECK(first.size() == c);
    for (const auto& row : first.entries) CHECK(oracle.best.contains(row.video_id));
    CHECK(curate_knn(provider, c, 3.0, 7) == first);

    const auto ids = first.ids();
    const std::set<std::string> unique(ids.begin(), ids.end());
    CHECK(unique.size() == c);
}

TEST_CASE("KNN pool matches the oracle on random kernels") {
    std::mt19937_64 rng(53);
    for (int trial = 0; trial < 100; ++trial) {
        const auto P = pick(rng, 1, 20);
        const auto N = pick(rng, 1, 200);
        const auto dim = static_cast<std::uint32_t>(pick(rng, 1, 16));
        const bool coarse = trial % 2 == 0;
        const auto T = make_corpus("T", CorpusRole::target, random_videos(rng, P, dim, 8, "t", coarse));
        const auto S = make_corpus("S", CorpusRole::source, random_videos(rng, N, dim, 8, "s", coarse));
        const auto kernel = build_similarity_matrix(T, S, Pooling::mean);
        const auto c = pick(rng, 1, N);
        const double factor = 2.0 + static_cast<double>(pick(rng, 0, 4)) * 0.5;
        const auto target = knn_pool_target(c, factor);

        const auto oracle = oracle_knn_pool(kernel, target);
        const auto pool = build_knn_pool(streaming_topk_provider(T, S, Pooling::mean), target);
        CHECK(pool.k == oracle.k);
        std::map<std::string, float> got;
        for (const auto& m : pool.members) got.emplace(m.source_id, m.score);
        CHECK(got == oracle.best);

        const auto picked = curate_knn(dense_topk_provider(kernel), c, factor, trial);
        CHECK(picked.size() == c);
        for (const auto& row : picked.entries) CHECK(oracle.best.contains(row.video_id));
    }
}

TEST_CASE("KNN returns the whole pool when it has exactly c members") {
    // One target row, three sources: pool target round(2 * 1) = 2 reached at k = 2.
    DenseKernel k;
    k.target_ids = {"t"};
    k.source_ids = {"x", "y", "z"};
    k.values = {0.2f, 0.9f, 0.5f};
    const auto pool = build_knn_pool(dense_topk_provider(k), 2);
    CHECK(pool.members.size() == 2);
    const auto m = curate_knn(dense_topk_provider(k), 2, 2.0, 99);
    CHECK(m.ids().size() == 2);
    // c = N forces the whole corpus into the pool, in best-score order
    const auto all = curate_knn(dense_topk_provider(k), 3, 2.0, 5);
    CHECK(all.ids() == std::vector<std::string>{"y", "z", "x"});
    CHECK(error_kind([&] { curate_knn(dense_topk_provider(k), 4, 3.0, 1); }) == ErrorKind::capacity);
    CHECK(error_kind([&] { curate_knn(dense_topk_provider(k), 1, 5.0, 1); }).has_value());
}

TEST_CASE("sampling without replacement") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = sample_without_replacement(30, 10, seed);
        CHECK(s.size() == 10);
        CHECK(std::is_sorted(s.begin(), s.end()));
        CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
        CHECK(s.back() < 30);
        CHECK(sample_without_replacement(30, 10, seed) == s);
    }
    std::vector<std::size_t> all(8);
    std::iota(all.begin(), all.end(), 0);
    CHECK(sample_without_replacement(8, 8, 3) == all);

    // every element is drawn with probability count / population
    std::vector<int> hits(10, 0);
    const int draws = 20000;
    for (int seed = 0; seed < draws; ++seed) {
        for (auto i : sample_without_replacement(10, 3, static_cast<std::uint64_t>(seed))) ++hits[i];
    }
    for (int h : hits) CHECK(std::abs(h / static_cast<double>(draws) - 0.3) < 0.02);
}

TEST_CASE("title tokenizer folds case and drops punctuation") {
    CHECK(tokenize_title("Easy PASTA, step-by-step!") == std::vector<std::string>{"easy", "pasta", "stepbystep"});
    CHECK(tokenize_title("  ").empty());
}

TEST_CASE("heuristic curation applies all three rules") {
    HeuristicRules rules;
    rules.allowed_categories = {"Food and Entertaining"};
    rules.target_vocabulary = {"pasta", "soup"};
    const std::vector<VideoMeta> records{
        meta("v6", "Food and Entertaining", "Tomato SOUP tonight", SubtitleSource::human),
        meta("v2", "Food and Entertaining", "Pasta night", SubtitleSource::asr),
        meta("v3", "Sports", "Pasta for athletes", SubtitleSource::human),
        meta("v4", "Food and Entertaining", "Bread basics", SubtitleSource::human),
        meta("v1", "Food and Entertaining", "pasta!", SubtitleSource::human),
        meta("v5", "Hobbies", "Knitting", SubtitleSource::none),
    };
    const auto m = curate_heuristic(records, rules);
    CHECK(m.ids() == std::vector<std::string>{"v1", "v6"});
    for (const auto& row : m.entries) CHECK_FALSE(row.score.has_value());

    rules.cap = 1;
    CHECK(curate_heuristic(records, rules).ids() == std::vector<std::string>{"v1"});

    rules.cap.reset();
    rules.require_human_subtitles = false;
    CHECK(curate_heuristic(records, rules).ids() == std::vector<std::string>{"v1", "v2", "v6"});

    rules.allowed_categories.clear();
    CHECK(error_kind([&] { curate_heuristic(records, rules); }) == ErrorKind::argument);
}

TEST_CASE("category stage keeps the food share") {
    std::vector<VideoMeta> records;
    for (int i = 0; i < 1000; ++i) {
        const bool food = (i * 41) % 100 < 41;
        char id[16];
        std::snprintf(id, sizeof id, "v%04d", i);
        records.push_back(meta(id, food ? "Food and Entertaining" : "Sports", "clip", SubtitleSource::asr));
    }
    HeuristicRules rules;
    rules.allowed_categories = {"Food and Entertaining"};
    rules.target_vocabulary = {"clip"};
    rules.require_human_subtitles = false;
    const auto m = curate_heuristic(records, rules);
    CHECK(m.size() == 410);
    for (const auto& id : m.ids()) {
        const auto it = std::find_if(records.begin(), records.end(), [&](const VideoMeta& r) { return r.video_id == id; });
        CHECK(it->category == "Food and Entertaining");
    }
}

TEST_CASE("vocabulary from downstream metadata") {
    const std::vector<VideoMeta> downstream{meta("d1", "Cooking", "Make Ramen", SubtitleSource::human)};
    CHECK(vocabulary_from(downstream) == std::set<std::string>{"cooking", "make", "ramen"});
}

TEST_CASE("overlap exclusion") {
    const auto m = ranked(10);
    const auto same = exclude_overlap(m, {"zz"});
    CHECK(same.entries == m.entries);
    CHECK(same.excluded_count == 0);

    const auto seven = exclude_overlap(m, {"v0", "v4", "v9", "other"});
    CHECK(seven.size() == 7);
    CHECK(seven.excluded_count == 3);
    for (std::size_t i = 0; i < 7; ++i) CHECK(seven.entries[i].rank == i + 1);
    CHECK(seven.entries[0].video_id == "v1");

    std::unordered_set<std::string> everything;
    for (const auto& id : m.ids()) everything.insert(id);
    const auto none = exclude_overlap(m, everything);
    CHECK(none.size() == 0);
    CHECK(none.excluded_count == 10);
}

TEST_CASE("incremental schedule step split") {
    CHECK(split_steps(3, 100000) == std::vector<std::size_t>{33334, 33333, 33333});
    CHECK(split_steps(1, 17) == std::vector<std::size_t>{17});
    CHECK(split_steps(2, 5) == std::vector<std::size_t>{3, 2});

    std::vector<CurationManifest> stages{ranked(5), ranked(3), ranked(2)};
    const auto schedule = build_incremental_schedule(stages, 10);
    REQUIRE(schedule.stages.size() == 3);
    CHECK(schedule.total_steps() == 10);
    CHECK(schedule.stages[0].steps == 4);
    CHECK(schedule.stages[2].manifest.size() == 2);

    CHECK(error_kind([] { build_incremental_schedule({ranked(3), ranked(3)}, 10); }) == ErrorKind::argument);
    CHECK(error_kind([] { build_incremental_schedule({ranked(3), ranked(4)}, 10); }) == ErrorKind::argument);
    CHECK(error_kind([] { build_incremental_schedule({ranked(3), ranked(2)}, 1); }).has_value());
    CHECK(error_kind([] { build_incremental_schedule({}, 10); }).has_value());
}

TEST_CASE("step split properties") {
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 200; ++trial) {
        const auto stages = pick(rng, 1, 10);
        const auto total = pick(rng, stages, 100000);
        const auto steps = split_steps(stages, total);
        CHECK(std::accumulate(steps.begin(), steps.end(), std::size_t{0}) == total);
        CHECK(std::is_sorted(steps.rbegin(), steps.rend()));
        CHECK(steps.front() - steps.back() <= 1);
    }
}

TEST_CASE("manifest and schedule files round-trip") {
    TempDir dir("manifest");
    auto m = ranked(6);
    m.config.seed = 42;
    m.config.pooling = Pooling::max;
    m = exclude_overlap(m, {"v2"});
    write_curation_manifest(dir / "m.jsonl", m);
    CHECK(fs::exists(sidecar_path(dir / "m.jsonl")));
    CHECK(read_curation_manifest(dir / "m.jsonl") == m);

    HeuristicRules rules;
    rules.allowed_categories = {"x"};
    rules.target_vocabulary = {"a"};
    const std::vector<VideoMeta> records{meta("h1", "x", "a", SubtitleSource::human)};
    const auto h = curate_heuristic(records, rules);
    write_curation_manifest(dir / "h.jsonl", h);
    CHECK(read_curation_manifest(dir / "h.jsonl") == h);

    const std::vector<ScheduleLine> lines{{1, "stage1.jsonl", 3, 200}, {2, std::nullopt, 2, 100}};
    spit(dir / "s.jsonl", schedule_jsonl(lines));
    CHECK(read_schedule(dir / "s.jsonl") == lines);

    spit(dir / "gap.jsonl", "{\"rank\":1,\"video_id\":\"a\",\"score\":1,\"strategy\":\"avg_sim\"}\n"
                            "{\"rank\":3,\"video_id\":\"b\",\"score\":1,\"strategy\":\"avg_sim\"}\n");
    CHECK(error_kind([&] { read_curation_manifest(dir / "gap.jsonl"); }).has_value());
}
