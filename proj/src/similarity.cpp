#include "cupid/similarity.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <numeric>

#include "cupid/error.hpp"
#include "cupid/io.hpp"
#include "parallel.hpp"

namespace cupid {

namespace {

// What a video contributes to pair scores under one pooling mode.
struct PreparedVideo {
    std::uint32_t clip_count = 0;
    std::vector<double> clip_sum;   // mean pooling
    std::vector<float> clips;       // max pooling
};

PreparedVideo prepare(ClipMatrix&& video, Pooling pooling) {
    PreparedVideo out;
    out.clip_count = video.clip_count;
    if (pooling == Pooling::mean) {
        out.clip_sum.assign(video.dim, 0.0);
        for (std::uint32_t c = 0; c < video.clip_count; ++c) {
            const auto row = video.clip(c);
            for (std::uint32_t k = 0; k < video.dim; ++k) {
                out.clip_sum[k] += static_cast<double>(row[k]);
            }
        }
    } else {
        out.clips = std::move(video.values);
    }
    return out;
}

double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
    }
    return acc;
}

double score(const PreparedVideo& target, const PreparedVideo& source, Pooling pooling,
             std::uint32_t dim) {
    if (pooling == Pooling::mean) {
        double acc = 0.0;
        for (std::uint32_t k = 0; k < dim; ++k) {
            acc += target.clip_sum[k] * source.clip_sum[k];
        }
        return acc / (static_cast<double>(target.clip_count) * static_cast<double>(source.clip_count));
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::uint32_t l = 0; l < target.clip_count; ++l) {
        const std::span<const float> t(target.clips.data() + std::size_t{l} * dim, dim);
        for (std::uint32_t q = 0; q < source.clip_count; ++q) {
            const std::span<const float> s(source.clips.data() + std::size_t{q} * dim, dim);
            best = std::max(best, dot(t, s));
        }
    }
    return best;
}

void check_corpora(const CorpusHandle& target, const CorpusHandle& source) {
    if (target.dim() != source.dim()) {
        fail(ErrorKind::schema, "target dim " + std::to_string(target.dim()) + " != source dim " +
                                    std::to_string(source.dim()));
    }
    if (target.video_count() == 0) {
        fail(ErrorKind::argument, "target corpus '" + target.corpus_id() + "' is empty");
    }
}

std::vector<PreparedVideo> prepare_range(const CorpusHandle& corpus, std::size_t begin,
                                         std::size_t end, Pooling pooling) {
    std::vector<PreparedVideo> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        out.push_back(prepare(corpus.load_video_at(i), pooling));
    }
    return out;
}

std::vector<PreparedVideo> prepare_targets(const CorpusHandle& target, Pooling pooling,
                                           unsigned threads) {
    std::vector<PreparedVideo> out(target.video_count());
    detail::parallel_for(out.size(), threads, [&](std::size_t j) {
        out[j] = prepare(target.load_video_at(j), pooling);
    });
    return out;
}

std::size_t tile_count(std::size_t extent, std::size_t tile) {
    return (extent + tile - 1) / tile;
}

TileConfig sanitized(TileConfig tile) {
    tile.tile_rows = std::max<std::size_t>(1, tile.tile_rows);
    tile.tile_cols = std::max<std::size_t>(1, tile.tile_cols);
    tile.threads = std::max(1u, tile.threads);
    return tile;
}

// Column-tile driver shared by the dense and column-mean paths.
template <typename Fn>
void for_each_column_tile(std::size_t cols, const TileConfig& tile, Fn&& fn) {
    detail::parallel_for(tile_count(cols, tile.tile_cols), tile.threads, [&](std::size_t t) {
        const std::size_t begin = t * tile.tile_cols;
        fn(t, begin, std::min(cols, begin + tile.tile_cols));
    });
}

// Index-based candidate for bounded heaps; ids are resolved only at the end.
struct Candidate {
    float score;
    std::size_t col;
};

// Front of a heap under this comparator is the worst retained candidate.
struct Better {
    const std::vector<std::string>* ids;
    bool operator()(const Candidate& a, const Candidate& b) const {
        return ranks_before(a.score, (*ids)[a.col], b.score, (*ids)[b.col]);
    }
};

class BoundedTopK {
public:
    BoundedTopK(std::size_t k, const std::vector<std::string>& ids) : k_(k), ids_(&ids) {
        heap_.reserve(k);
    }

    void offer(float value, std::size_t col) {
        const Candidate c{value, col};
        if (heap_.size() < k_) {
            heap_.push_back(c);
            std::push_heap(heap_.begin(), heap_.end(), better());
            return;
        }
        if (!better()(c, heap_.front())) {
            return;
        }
        std::pop_heap(heap_.begin(), heap_.end(), better());
        heap_.back() = c;
        std::push_heap(heap_.begin(), heap_.end(), better());
    }

    std::vector<Candidate> sorted() const {
        auto out = heap_;
        std::sort(out.begin(), out.end(), better());
        return out;
    }

private:
    Better better() const { return Better{ids_}; }

    std::size_t k_;
    const std::vector<std::string>* ids_;
    std::vector<Candidate> heap_;
};

template <typename T>
void put(std::vector<std::byte>& out, T value) {
    const auto* raw = reinterpret_cast<const std::byte*>(&value);
    out.insert(out.end(), raw, raw + sizeof(T));
}

}  // namespace

std::string_view to_string(Pooling pooling) {
    return pooling == Pooling::mean ? "mean" : "max";
}

Pooling pooling_from_string(std::string_view text) {
    if (text == "mean") return Pooling::mean;
    if (text == "max") return Pooling::max;
    fail(ErrorKind::argument, "unknown pooling '" + std::string(text) + "'");
}

double pair_similarity(const ClipMatrix& target, const ClipMatrix& source, Pooling pooling) {
    if (target.dim != source.dim) {
        fail(ErrorKind::schema, "dim mismatch: target '" + target.video_id + "' has " +
                                    std::to_string(target.dim) + ", source '" + source.video_id +
                                    "' has " + std::to_string(source.dim));
    }
    target.validate();
    source.validate();
    return score(prepare(ClipMatrix(target), pooling), prepare(ClipMatrix(source), pooling), pooling,
                 target.dim);
}

DenseKernel build_similarity_matrix(const CorpusHandle& target, const CorpusHandle& source,
                                    Pooling pooling, const TileConfig& config) {
    check_corpora(target, source);
    const TileConfig tile = sanitized(config);
    const std::size_t rows = target.video_count();
    const std::size_t cols = source.video_count();
    const std::size_t budget_cells = tile.memory_budget_bytes / sizeof(float);
    if (cols != 0 && rows > budget_cells / cols) {
        fail(ErrorKind::capacity, "dense " + std::to_string(rows) + "x" + std::to_string(cols) +
                                      " kernel exceeds the memory budget; use the streaming reducers");
    }

    DenseKernel kernel;
    kernel.target_ids = target.video_ids();
    kernel.source_ids = source.video_ids();
    kernel.values.assign(rows * cols, 0.0f);

    const auto targets = prepare_targets(target, pooling, tile.threads);
    const std::uint32_t dim = target.dim();
    for_each_column_tile(cols, tile, [&](std::size_t, std::size_t begin, std::size_t end) {
        const auto sources = prepare_range(source, begin, end, pooling);
        for (std::size_t r0 = 0; r0 < rows; r0 += tile.tile_rows) {
            const std::size_t r1 = std::min(rows, r0 + tile.tile_rows);
            for (std::size_t j = r0; j < r1; ++j) {
                float* out = kernel.values.data() + j * cols;
                for (std::size_t i = begin; i < end; ++i) {
                    out[i] = kernel_entry(score(targets[j], sources[i - begin], pooling, dim));
                }
            }
        }
    });
    return kernel;
}

ColumnMeans stream_column_means(const CorpusHandle& target, const CorpusHandle& source,
                                Pooling pooling, const TileConfig& config) {
    check_corpora(target, source);
    const TileConfig tile = sanitized(config);
    const std::size_t rows = target.video_count();
    const std::size_t cols = source.video_count();

    ColumnMeans result;
    result.source_ids = source.video_ids();
    result.means.assign(cols, 0.0);

    const auto targets = prepare_targets(target, pooling, tile.threads);
    const std::uint32_t dim = target.dim();
    for_each_column_tile(cols, tile, [&](std::size_t, std::size_t begin, std::size_t end) {
        const auto sources = prepare_range(source, begin, end, pooling);
        std::vector<double> acc(end - begin, 0.0);
        // Row tiles only block the loop; each column still sums rows in ascending order.
        for (std::size_t r0 = 0; r0 < rows; r0 += tile.tile_rows) {
            const std::size_t r1 = std::min(rows, r0 + tile.tile_rows);
            for (std::size_t i = begin; i < end; ++i) {
                double sum = acc[i - begin];
                for (std::size_t j = r0; j < r1; ++j) {
                    sum += static_cast<double>(kernel_entry(score(targets[j], sources[i - begin], pooling, dim)));
                }
                acc[i - begin] = sum;
            }
        }
        for (std::size_t i = begin; i < end; ++i) {
            result.means[i] = acc[i - begin] / static_cast<double>(rows);
        }
    });
    return result;
}

RowTopK stream_row_topk(const CorpusHandle& target, const CorpusHandle& source, Pooling pooling,
                        std::size_t k, const TileConfig& config) {
    if (k < 1) {
        fail(ErrorKind::argument, "k must be at least 1");
    }
    check_corpora(target, source);
    const TileConfig tile = sanitized(config);
    const std::size_t rows = target.video_count();
    const std::size_t cols = source.video_count();
    const std::size_t keep = std::min(k, cols);
    const auto source_ids = source.video_ids();

    const auto targets = prepare_targets(target, pooling, tile.threads);
    const std::uint32_t dim = target.dim();

    // Column tiles run in waves; each wave's per-tile winners fold into the
    // running per-row lists. Selection under a strict total order does not
    // depend on how candidates were grouped.
    std::vector<std::vector<Candidate>> best(rows);
    const std::size_t tiles = tile_count(cols, tile.tile_cols);
    const std::size_t wave = std::size_t{tile.threads} * 4;
    for (std::size_t first = 0; first < tiles; first += wave) {
        const std::size_t last = std::min(tiles, first + wave);
        std::vector<std::vector<std::vector<Candidate>>> partial(last - first);
        detail::parallel_for(last - first, tile.threads, [&](std::size_t w) {
            const std::size_t begin = (first + w) * tile.tile_cols;
            const std::size_t end = std::min(cols, begin + tile.tile_cols);
            const auto sources = prepare_range(source, begin, end, pooling);
            auto& lists = partial[w];
            lists.reserve(rows);
            for (std::size_t j = 0; j < rows; ++j) {
                BoundedTopK heap(keep, source_ids);
                for (std::size_t i = begin; i < end; ++i) {
                    heap.offer(kernel_entry(score(targets[j], sources[i - begin], pooling, dim)), i);
                }
                lists.push_back(heap.sorted());
            }
        });
        detail::parallel_for(rows, tile.threads, [&](std::size_t j) {
            BoundedTopK heap(keep, source_ids);
            for (const auto& c : best[j]) heap.offer(c.score, c.col);
            for (const auto& lists : partial) {
                for (const auto& c : lists[j]) heap.offer(c.score, c.col);
            }
            best[j] = heap.sorted();
        });
    }

    RowTopK result;
    result.target_ids = target.video_ids();
    result.rows.resize(rows);
    for (std::size_t j = 0; j < rows; ++j) {
        result.rows[j].reserve(best[j].size());
        for (const auto& c : best[j]) {
            result.rows[j].push_back({source_ids[c.col], c.score});
        }
    }
    return result;
}

ColumnMeans column_means(const DenseKernel& kernel) {
    if (kernel.rows() == 0) {
        fail(ErrorKind::argument, "kernel has no target rows");
    }
    ColumnMeans result;
    result.source_ids = kernel.source_ids;
    result.means.assign(kernel.cols(), 0.0);
    for (std::size_t i = 0; i < kernel.cols(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < kernel.rows(); ++j) {
            sum += static_cast<double>(kernel.at(j, i));
        }
        result.means[i] = sum / static_cast<double>(kernel.rows());
    }
    return result;
}

RowTopK row_topk(const DenseKernel& kernel, std::size_t k) {
    if (k < 1) {
        fail(ErrorKind::argument, "k must be at least 1");
    }
    const std::size_t keep = std::min(k, kernel.cols());
    RowTopK result;
    result.target_ids = kernel.target_ids;
    result.rows.resize(kernel.rows());
    std::vector<std::size_t> order(kernel.cols());
    for (std::size_t j = 0; j < kernel.rows(); ++j) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              return ranks_before(kernel.at(j, a), kernel.source_ids[a], kernel.at(j, b),
                                                  kernel.source_ids[b]);
                          });
        for (std::size_t n = 0; n < keep; ++n) {
            result.rows[j].push_back({kernel.source_ids[order[n]], kernel.at(j, order[n])});
        }
    }
    return result;
}

std::vector<std::byte> encode_dense_kernel(const DenseKernel& kernel) {
    std::vector<std::byte> out;
    out.reserve(14 + kernel.values.size() * sizeof(float));
    for (char ch : {'C', 'P', 'D', 'K'}) {
        out.push_back(static_cast<std::byte>(ch));
    }
    put(out, std::uint16_t{1});
    put(out, static_cast<std::uint32_t>(kernel.rows()));
    put(out, static_cast<std::uint32_t>(kernel.cols()));
    const auto* raw = reinterpret_cast<const std::byte*>(kernel.values.data());
    out.insert(out.end(), raw, raw + kernel.values.size() * sizeof(float));
    return out;
}

DenseKernel decode_dense_kernel(std::span<const std::byte> bytes) {
    if (bytes.size() < 14 || std::memcmp(bytes.data(), "CPDK", 4) != 0) {
        fail(ErrorKind::format, "bad dense kernel magic");
    }
    std::uint16_t version = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::memcpy(&version, bytes.data() + 4, 2);
    std::memcpy(&rows, bytes.data() + 6, 4);
    std::memcpy(&cols, bytes.data() + 10, 4);
    if (version != 1) {
        fail(ErrorKind::format, "unsupported dense kernel version " + std::to_string(version));
    }
    const std::size_t count = std::size_t{rows} * cols;
    if (bytes.size() != 14 + count * sizeof(float)) {
        fail(ErrorKind::format, "dense kernel size does not match its header");
    }
    DenseKernel kernel;
    for (std::uint32_t j = 0; j < rows; ++j) kernel.target_ids.push_back(std::to_string(j));
    for (std::uint32_t i = 0; i < cols; ++i) kernel.source_ids.push_back(std::to_string(i));
    kernel.values.resize(count);
    std::memcpy(kernel.values.data(), bytes.data() + 14, count * sizeof(float));
    return kernel;
}

std::string column_means_jsonl(const ColumnMeans& means) {
    std::string text;
    for (std::size_t i = 0; i < means.source_ids.size(); ++i) {
        io::json row;
        row["source_id"] = means.source_ids[i];
        row["avg_sim"] = means.means[i];
        text += io::dump_line(row);
        text += '\n';
    }
    return text;
}

ColumnMeans read_column_means(const std::filesystem::path& path) {
    ColumnMeans out;
    const auto rows = io::read_jsonl(path);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string where = path.string() + " line " + std::to_string(i + 1);
        out.source_ids.push_back(io::field<std::string>(rows[i], "source_id", where));
        out.means.push_back(io::field<double>(rows[i], "avg_sim", where));
    }
    return out;
}

}  // namespace cupid
