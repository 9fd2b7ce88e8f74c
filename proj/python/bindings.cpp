#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cupid/cli.hpp"
#include "cupid/curation.hpp"
#include "cupid/embedding_store.hpp"
#include "cupid/error.hpp"
#include "cupid/nce.hpp"
#include "cupid/retrieval.hpp"
#include "cupid/similarity.hpp"

namespace py = pybind11;
using namespace cupid;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

ClipMatrix to_clip_matrix(const std::string& id, const FloatArray& array) {
    if (array.ndim() != 2) {
        throw py::value_error("clip matrix for '" + id + "' must be 2-D (clips x dim)");
    }
    const auto dim = static_cast<std::uint32_t>(array.shape(1));
    std::vector<float> values(array.data(), array.data() + array.size());
    return ClipMatrix::make(id, dim, std::move(values));
}

py::array_t<float> to_array(const ClipMatrix& m) {
    py::array_t<float> out({static_cast<py::ssize_t>(m.clip_count), static_cast<py::ssize_t>(m.dim)});
    std::copy(m.values.begin(), m.values.end(), out.mutable_data());
    return out;
}

std::vector<ClipMatrix> to_videos(const std::vector<std::pair<std::string, FloatArray>>& videos) {
    std::vector<ClipMatrix> out;
    out.reserve(videos.size());
    for (const auto& [id, array] : videos) out.push_back(to_clip_matrix(id, array));
    return out;
}

EmbeddingRows rows_of(const FloatArray& array, const char* what) {
    if (array.ndim() != 2) {
        throw py::value_error(std::string(what) + " embeddings must be 2-D");
    }
    return {std::span<const float>(array.data(), static_cast<std::size_t>(array.size())),
            static_cast<std::size_t>(array.shape(0)), static_cast<std::size_t>(array.shape(1))};
}

nce::ScoreGrid to_grid(const DoubleArray& scores, const std::optional<py::array_t<bool>>& mask) {
    if (scores.ndim() != 2 || scores.shape(0) != scores.shape(1)) {
        throw py::value_error("scores must be a square B x B array");
    }
    const auto batch = static_cast<std::size_t>(scores.shape(0));
    nce::ScoreGrid grid =
        nce::ScoreGrid::diagonal(batch, std::vector<double>(scores.data(), scores.data() + scores.size()));
    if (mask) {
        auto m = mask->unchecked<2>();
        if (static_cast<std::size_t>(m.shape(0)) != batch || static_cast<std::size_t>(m.shape(1)) != batch) {
            throw py::value_error("positive_mask must match scores");
        }
        for (std::size_t a = 0; a < batch; ++a) {
            for (std::size_t b = 0; b < batch; ++b) {
                grid.positive_mask[a * batch + b] = m(static_cast<py::ssize_t>(a), static_cast<py::ssize_t>(b));
            }
        }
        grid.validate();
    }
    return grid;
}

TileConfig tile_of(std::size_t tile_rows, std::size_t tile_cols, unsigned threads) {
    TileConfig tile;
    tile.tile_rows = tile_rows;
    tile.tile_cols = tile_cols;
    tile.threads = threads;
    return tile;
}

}  // namespace

PYBIND11_MODULE(_cupid, m) {
    m.doc() = "Curation of domain-matched pre-training subsets from clip-embedding corpora";

    py::register_exception<Error>(m, "CupidError", PyExc_ValueError);

    // embedding store
    m.def("write_shard",
          [](const std::vector<std::pair<std::string, FloatArray>>& videos, std::uint32_t dim) {
              const auto bytes = write_shard(to_videos(videos), dim);
              return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
          },
          py::arg("videos"), py::arg("dim") = 0,
          "Encode [(video_id, clips x dim float32 array), ...] as shard bytes.");
    m.def("ingest_shard",
          [](const py::bytes& data, std::uint32_t expected_dim, const std::string& shard_name) {
              const std::string raw = data;
              const auto entries = ingest_shard(
                  std::span(reinterpret_cast<const std::byte*>(raw.data()), raw.size()), expected_dim, shard_name);
              py::list out;
              for (const auto& e : entries) {
                  out.append(py::dict(py::arg("video_id") = e.video_id, py::arg("shard") = e.shard,
                                      py::arg("offset") = e.offset, py::arg("clip_count") = e.clip_count));
              }
              return out;
          },
          py::arg("data"), py::arg("expected_dim"), py::arg("shard_name") = "");
    m.def("decode_video",
          [](const py::bytes& data, std::uint32_t dim, std::uint64_t offset) {
              const std::string raw = data;
              const auto video =
                  decode_video(std::span(reinterpret_cast<const std::byte*>(raw.data()), raw.size()), dim, offset);
              return py::make_tuple(video.video_id, to_array(video));
          },
          py::arg("data"), py::arg("dim"), py::arg("offset"));
    m.def("write_manifest",
          [](const std::filesystem::path& path, const std::vector<py::dict>& rows) {
              std::vector<ManifestEntry> entries;
              for (const auto& r : rows) {
                  entries.push_back({r["video_id"].cast<std::string>(), r["shard"].cast<std::string>(),
                                     r["offset"].cast<std::uint64_t>(), r["clip_count"].cast<std::uint32_t>()});
              }
              write_manifest(path, entries);
          },
          py::arg("path"), py::arg("entries"));

    py::class_<CorpusHandle>(m, "Corpus")
        .def_static("open",
                    [](const std::filesystem::path& manifest, const std::string& role) {
                        return CorpusHandle::open(manifest, corpus_role_from_string(role));
                    },
                    py::arg("manifest"), py::arg("role") = "source")
        .def_static("from_videos",
                    [](const std::string& corpus_id, const std::string& role,
                       const std::vector<std::pair<std::string, FloatArray>>& videos) {
                        const auto list = to_videos(videos);
                        return CorpusHandle::from_videos(corpus_id, corpus_role_from_string(role), list);
                    },
                    py::arg("corpus_id"), py::arg("role"), py::arg("videos"))
        .def_property_readonly("corpus_id", &CorpusHandle::corpus_id)
        .def_property_readonly("dim", &CorpusHandle::dim)
        .def_property_readonly("role", [](const CorpusHandle& c) { return std::string(to_string(c.role())); })
        .def("__len__", &CorpusHandle::video_count)
        .def("video_ids", &CorpusHandle::video_ids)
        .def("load_video", [](const CorpusHandle& c, const std::string& id) { return to_array(c.load_video(id)); })
        .def("verify", &CorpusHandle::verify);

    m.def("make_uniform_windows",
          [](double duration, int n) {
              std::vector<std::pair<double, double>> out;
              for (const auto& w : make_uniform_windows(duration, n)) out.emplace_back(w.start_s, w.end_s);
              return out;
          },
          py::arg("duration_s"), py::arg("n"));
    m.def("merge_consecutive_subtitles",
          [](const std::vector<std::tuple<std::string, double, double>>& subs, int group) {
              std::vector<Subtitle> in;
              for (const auto& [text, start, end] : subs) in.push_back({text, start, end});
              std::vector<std::tuple<std::string, double, double>> out;
              for (const auto& s : merge_consecutive_subtitles(in, group)) out.emplace_back(s.text, s.start_s, s.end_s);
              return out;
          },
          py::arg("subtitles"), py::arg("group") = 3, "Subtitles are (text, start_s, end_s) tuples.");

    // similarity kernel
    m.def("pair_similarity",
          [](const FloatArray& target, const FloatArray& source, const std::string& pooling) {
              return pair_similarity(to_clip_matrix("target", target), to_clip_matrix("source", source),
                                     pooling_from_string(pooling));
          },
          py::arg("target"), py::arg("source"), py::arg("pooling") = "mean");
    m.def("build_similarity_matrix",
          [](const CorpusHandle& target, const CorpusHandle& source, const std::string& pooling,
             std::size_t tile_rows, std::size_t tile_cols, unsigned threads) {
              auto tile = tile_of(tile_rows, tile_cols, threads);
              DenseKernel kernel;
              {
                  py::gil_scoped_release release;
                  kernel = build_similarity_matrix(target, source, pooling_from_string(pooling), tile);
              }
              py::array_t<float> values({static_cast<py::ssize_t>(kernel.rows()), static_cast<py::ssize_t>(kernel.cols())});
              std::copy(kernel.values.begin(), kernel.values.end(), values.mutable_data());
              return py::make_tuple(values, kernel.target_ids, kernel.source_ids);
          },
          py::arg("target"), py::arg("source"), py::arg("pooling") = "mean", py::arg("tile_rows") = 64,
          py::arg("tile_cols") = 1024, py::arg("threads") = 1);
    m.def("stream_column_means",
          [](const CorpusHandle& target, const CorpusHandle& source, const std::string& pooling,
             std::size_t tile_rows, std::size_t tile_cols, unsigned threads) {
              ColumnMeans means;
              {
                  py::gil_scoped_release release;
                  means = stream_column_means(target, source, pooling_from_string(pooling),
                                              tile_of(tile_rows, tile_cols, threads));
              }
              return py::make_tuple(means.source_ids, py::array_t<double>(means.means.size(), means.means.data()));
          },
          py::arg("target"), py::arg("source"), py::arg("pooling") = "mean", py::arg("tile_rows") = 64,
          py::arg("tile_cols") = 1024, py::arg("threads") = 1);
    m.def("stream_row_topk",
          [](const CorpusHandle& target, const CorpusHandle& source, std::size_t k, const std::string& pooling,
             unsigned threads) {
              RowTopK top;
              {
                  py::gil_scoped_release release;
                  top = stream_row_topk(target, source, pooling_from_string(pooling), k, tile_of(64, 1024, threads));
              }
              std::vector<std::vector<std::pair<std::string, float>>> rows;
              for (const auto& row : top.rows) {
                  auto& out = rows.emplace_back();
                  for (const auto& hit : row) out.emplace_back(hit.source_id, hit.score);
              }
              return rows;
          },
          py::arg("target"), py::arg("source"), py::arg("k"), py::arg("pooling") = "mean", py::arg("threads") = 1);

    // curation
    py::class_<ManifestRow>(m, "ManifestRow")
        .def_readonly("rank", &ManifestRow::rank)
        .def_readonly("video_id", &ManifestRow::video_id)
        .def_readonly("score", &ManifestRow::score)
        .def("__repr__", [](const ManifestRow& r) {
            return "ManifestRow(rank=" + std::to_string(r.rank) + ", video_id='" + r.video_id + "')";
        });
    py::class_<CurationManifest>(m, "CurationManifest")
        .def_property_readonly("strategy", [](const CurationManifest& c) { return std::string(to_string(c.strategy)); })
        .def_readonly("entries", &CurationManifest::entries)
        .def_readonly("excluded_count", &CurationManifest::excluded_count)
        .def("ids", &CurationManifest::ids)
        .def("__len__", &CurationManifest::size)
        .def("to_jsonl", &manifest_jsonl)
        .def("write", [](const CurationManifest& c, const std::filesystem::path& path) { write_curation_manifest(path, c); })
        .def_static("read", &read_curation_manifest)
        .def("__eq__", [](const CurationManifest& a, const CurationManifest& b) { return a == b; });

    m.def("curate_avg_sim",
          [](const std::vector<std::string>& ids, const std::vector<double>& means, std::size_t capacity) {
              return curate_avg_sim(ColumnMeans{ids, means}, capacity);
          },
          py::arg("source_ids"), py::arg("column_means"), py::arg("capacity"));
    m.def("curate_knn",
          [](const CorpusHandle& target, const CorpusHandle& source, std::size_t capacity, double expansion_factor,
             std::uint64_t seed, const std::string& pooling, unsigned threads) {
              py::gil_scoped_release release;
              const auto provider =
                  streaming_topk_provider(target, source, pooling_from_string(pooling), tile_of(64, 1024, threads));
              auto manifest = curate_knn(provider, capacity, expansion_factor, seed);
              manifest.config.pooling = pooling_from_string(pooling);
              return manifest;
          },
          py::arg("target"), py::arg("source"), py::arg("capacity"), py::arg("expansion_factor") = kDefaultExpansionFactor,
          py::arg("seed") = 0, py::arg("pooling") = "mean", py::arg("threads") = 1);
    m.def("curate_heuristic",
          [](const std::vector<py::dict>& metadata, const std::set<std::string>& categories,
             const std::set<std::string>& vocabulary, bool require_human_subtitles, std::optional<std::size_t> cap) {
              std::vector<VideoMeta> records;
              for (const auto& r : metadata) {
                  records.push_back({r["video_id"].cast<std::string>(), r["category"].cast<std::string>(),
                                     r["title"].cast<std::string>(),
                                     subtitle_source_from_string(r["subtitle_source"].cast<std::string>()),
                                     r.contains("duration_s") ? r["duration_s"].cast<double>() : 0.0});
              }
              HeuristicRules rules{categories, vocabulary, require_human_subtitles, cap};
              return curate_heuristic(records, rules);
          },
          py::arg("metadata"), py::arg("categories"), py::arg("vocabulary"),
          py::arg("require_human_subtitles") = true, py::arg("cap") = py::none());
    m.def("exclude_overlap",
          [](const CurationManifest& manifest, const std::vector<std::string>& ids) {
              return exclude_overlap(manifest, std::unordered_set<std::string>(ids.begin(), ids.end()));
          },
          py::arg("manifest"), py::arg("downstream_ids"));
    m.def("split_steps", &split_steps, py::arg("stage_count"), py::arg("total_steps"));
    m.def("tokenize_title", &tokenize_title, py::arg("title"));

    // retrieval probe
    m.def("rank_queries",
          [](const FloatArray& queries, const FloatArray& candidates, const std::vector<std::size_t>& ground_truth) {
              return rank_queries(rows_of(queries, "query"), rows_of(candidates, "candidate"), ground_truth);
          },
          py::arg("queries"), py::arg("candidates"), py::arg("ground_truth"));
    m.def("summarize",
          [](const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& ks) {
              const auto result = summarize(ranks, ks);
              return py::dict(py::arg("recall_at") = result.recall_at, py::arg("median_rank") = result.median_rank);
          },
          py::arg("ranks"), py::arg("ks") = std::vector<std::size_t>{1, 5, 10});

    // contrastive numerics
    m.def("nce_loss",
          [](const DoubleArray& scores, const std::string& mode, std::optional<py::array_t<bool>> mask) {
              return nce::nce_loss(to_grid(scores, mask), nce::negative_mode_from_string(mode));
          },
          py::arg("scores"), py::arg("mode") = "n_squared", py::arg("positive_mask") = py::none());
    m.def("nce_loss_grad",
          [](const DoubleArray& scores, const std::string& mode, std::optional<py::array_t<bool>> mask) {
              const auto grid = to_grid(scores, mask);
              const auto result = nce::nce_loss_grad(grid, nce::negative_mode_from_string(mode));
              py::array_t<double> grad({static_cast<py::ssize_t>(grid.batch), static_cast<py::ssize_t>(grid.batch)});
              std::copy(result.grad.begin(), result.grad.end(), grad.mutable_data());
              return py::make_tuple(result.loss, grad);
          },
          py::arg("scores"), py::arg("mode") = "n_squared", py::arg("positive_mask") = py::none());
    m.def("negative_set",
          [](const DoubleArray& scores, const std::string& mode, std::size_t anchor) {
              return nce::negative_set(to_grid(scores, std::nullopt), nce::negative_mode_from_string(mode), anchor);
          },
          py::arg("scores"), py::arg("mode"), py::arg("anchor"));

    m.def("cli_main",
          [](const std::vector<std::string>& args) {
              std::vector<const char*> argv{"cupid"};
              for (const auto& a : args) argv.push_back(a.c_str());
              py::gil_scoped_release release;
              return cli::main_entry(static_cast<int>(argv.size()), argv.data());
          },
          py::arg("args"), "Run the command-line tool in-process; returns its exit status.");
}
