#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cupid/io.hpp"
#include "cupid/retrieval.hpp"
#include "support.hpp"

using namespace cupid;
using namespace cupid::testing;

namespace {

std::vector<float> random_rows(std::mt19937_64& rng, std::size_t rows, std::size_t dim, bool coarse) {
    std::vector<float> v(rows * dim);
    for (float& x : v) {
        x = coarse ? static_cast<float>(static_cast<int>(pick(rng, 0, 2)) - 1) : static_cast<float>(uniform(rng, -1, 1));
    }
    return v;
}

}  // namespace

TEST_CASE("summary of the five-rank fixture") {
    const std::vector<std::size_t> ranks{1, 2, 3, 1, 5};
    const std::vector<std::size_t> ks{1, 5, 10};
    const auto r = summarize(ranks, ks);
    CHECK(r.recall_at.at(1) == 0.4);
    CHECK(r.recall_at.at(5) == 1.0);
    CHECK(r.recall_at.at(10) == 1.0);
    CHECK(r.median_rank == 2);
}

TEST_CASE("median conventions") {
    const std::vector<std::size_t> ks{1};
    CHECK(summarize(std::vector<std::size_t>{1, 1, 1}, ks).median_rank == 1);
    CHECK(summarize(std::vector<std::size_t>{1, 1, 1}, ks).recall_at.at(1) == 1.0);
    CHECK(summarize(std::vector<std::size_t>{2, 4}, ks).median_rank == 2);
    CHECK(summarize(std::vector<std::size_t>{9, 2, 4, 7}, ks).median_rank == 4);
    CHECK(error_kind([&] { summarize(std::vector<std::size_t>{}, ks); }) == ErrorKind::argument);
}

TEST_CASE("rank fixtures") {
    // one query, candidate scores 0.9, 0.1, 0.5, 0.7
    const std::vector<float> q{1, 0};
    const std::vector<float> c{0.9f, 0, 0.1f, 0, 0.5f, 0, 0.7f, 0};
    const EmbeddingRows Q{q, 1, 2};
    const EmbeddingRows C{c, 4, 2};
    CHECK(rank_queries(Q, C, std::vector<std::size_t>{1}) == std::vector<std::size_t>{4});
    CHECK(rank_queries(Q, C, std::vector<std::size_t>{3}) == std::vector<std::size_t>{2});
    CHECK(rank_queries(Q, C, std::vector<std::size_t>{2}) == std::vector<std::size_t>{3});

    // tie with the maximum resolves optimistically
    const std::vector<float> tied{1, 0, 1, 0, 0, 1};
    CHECK(rank_queries(Q, EmbeddingRows{tied, 3, 2}, std::vector<std::size_t>{1}) == std::vector<std::size_t>{1});

    const std::vector<float> wide{1, 0, 0};
    CHECK(error_kind([&] { rank_queries(Q, EmbeddingRows{wide, 1, 3}, std::vector<std::size_t>{0}); }) ==
          ErrorKind::schema);
    CHECK(error_kind([&] { rank_queries(Q, C, std::vector<std::size_t>{4}); }).has_value());
}

TEST_CASE("perfect diagonal retrieval") {
    const std::size_t n = 12;
    std::vector<float> eye(n * n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0f;
    std::vector<std::size_t> gt(n);
    std::iota(gt.begin(), gt.end(), 0);
    const EmbeddingRows rows{eye, n, n};
    const auto ranks = rank_queries(rows, rows, gt);
    const std::vector<std::size_t> ks{1, 5, 10};
    const auto r = summarize(ranks, ks);
    CHECK(r.recall_at.at(1) == 1.0);
    CHECK(r.median_rank == 1);
}

TEST_CASE("ranks equal full-sort ranks and survive monotone transforms") {
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 100; ++trial) {
        const auto qn = pick(rng, 1, 100);
        const auto cn = pick(rng, 1, 100);
        const auto dim = pick(rng, 1, 8);
        const bool coarse = trial % 2 == 0;
        const auto q = random_rows(rng, qn, dim, coarse);
        const auto c = random_rows(rng, cn, dim, coarse);
        std::vector<std::size_t> gt(qn);
        for (auto& g : gt) g = pick(rng, 0, cn - 1);

        const unsigned threads = trial % 3 == 0 ? 4u : 1u;
        const auto ranks = rank_queries(EmbeddingRows{q, qn, dim}, EmbeddingRows{c, cn, dim}, gt, threads);
        for (std::size_t i = 0; i < qn; ++i) {
            std::vector<double> scores(cn);
            for (std::size_t j = 0; j < cn; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < dim; ++k) dot += double(q[i * dim + k]) * double(c[j * dim + k]);
                scores[j] = dot;
            }
            CHECK(ranks[i] == oracle_rank(scores, gt[i]));
            CHECK(ranks[i] >= 1);
            CHECK(ranks[i] <= cn);
        }

        // doubling every query is a strictly increasing map of its scores
        auto doubled = q;
        for (float& x : doubled) x *= 2.0f;
        CHECK(rank_queries(EmbeddingRows{doubled, qn, dim}, EmbeddingRows{c, cn, dim}, gt) == ranks);

        std::vector<std::size_t> ks(cn);
        std::iota(ks.begin(), ks.end(), 1);
        const auto r = summarize(ranks, ks);
        double prev = 0.0;
        for (const auto& [k, v] : r.recall_at) {
            CHECK(v >= prev);
            prev = v;
        }
        CHECK(r.recall_at.at(cn) == 1.0);
    }
}

TEST_CASE("probe report layout") {
    const std::vector<std::size_t> ranks{1, 2, 3, 1, 5};
    const std::vector<std::size_t> ks{1, 5, 10};
    const auto report = io::json::parse(probe_report_json(summarize(ranks, ks), 7));
    CHECK(report["recall"]["1"].get<double>() == 0.4);
    CHECK(report["recall"]["10"].get<double>() == 1.0);
    CHECK(report["median_rank"].get<int>() == 2);
    CHECK(report["query_count"].get<int>() == 5);
    CHECK(report["candidate_count"].get<int>() == 7);
}
