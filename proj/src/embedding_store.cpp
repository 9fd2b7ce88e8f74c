#include "cupid/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "cupid/error.hpp"
#include "cupid/io.hpp"

namespace cupid {

static_assert(std::endian::native == std::endian::little,
              "shard codec assumes a little-endian host");

namespace {

template <typename T>
void put(std::vector<std::byte>& out, T value) {
    const auto* raw = reinterpret_cast<const std::byte*>(&value);
    out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
public:
    Reader(std::span<const std::byte> bytes, std::uint64_t offset) : bytes_(bytes), pos_(offset) {}

    template <typename T>
    T take(const char* what) {
        T value;
        require(sizeof(T), what);
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string take_string(std::size_t length) {
        require(length, "video id");
        std::string text(reinterpret_cast<const char*>(bytes_.data() + pos_), length);
        pos_ += length;
        return text;
    }

    void take_floats(std::span<float> out, const std::string& video_id) {
        const std::size_t length = out.size() * sizeof(float);
        if (pos_ > bytes_.size() || bytes_.size() - pos_ < length) {
            fail(ErrorKind::format, "truncated values for video '" + video_id + "'");
        }
        std::memcpy(out.data(), bytes_.data() + pos_, length);
        pos_ += length;
    }

    void skip(std::uint64_t length, const char* what) {
        require(length, what);
        pos_ += length;
    }

    std::uint64_t position() const { return pos_; }

private:
    void require(std::uint64_t length, const char* what) const {
        if (pos_ > bytes_.size() || bytes_.size() - pos_ < length) {
            fail(ErrorKind::format, std::string("truncated shard while reading ") + what);
        }
    }

    std::span<const std::byte> bytes_;
    std::uint64_t pos_;
};

void check_finite(const ClipMatrix& video) {
    for (float v : video.values) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::data, "non-finite value in video '" + video.video_id + "'");
        }
    }
}

class MappedFile final : public ShardBytes {
public:
    explicit MappedFile(const std::filesystem::path& path) {
        const int fd = ::open(path.c_str(), O_RDONLY);
        if (fd < 0) {
            fail(ErrorKind::io, "cannot open shard " + path.string());
        }
        struct stat st {};
        if (::fstat(fd, &st) != 0) {
            ::close(fd);
            fail(ErrorKind::io, "cannot stat shard " + path.string());
        }
        size_ = static_cast<std::size_t>(st.st_size);
        if (size_ > 0) {
            data_ = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd, 0);
            if (data_ == MAP_FAILED) {
                data_ = nullptr;
                ::close(fd);
                fail(ErrorKind::io, "cannot map shard " + path.string());
            }
        }
        ::close(fd);
    }

    ~MappedFile() override {
        if (data_ != nullptr) {
            ::munmap(data_, size_);
        }
    }

    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;

    std::span<const std::byte> bytes() const override {
        return {static_cast<const std::byte*>(data_), size_};
    }

private:
    void* data_ = nullptr;
    std::size_t size_ = 0;
};

class OwnedBytes final : public ShardBytes {
public:
    explicit OwnedBytes(std::vector<std::byte> bytes) : bytes_(std::move(bytes)) {}
    std::span<const std::byte> bytes() const override { return bytes_; }

private:
    std::vector<std::byte> bytes_;
};

}  // namespace

ClipMatrix ClipMatrix::make(std::string video_id, std::uint32_t dim, std::vector<float> values) {
    if (dim == 0) {
        fail(ErrorKind::schema, "video '" + video_id + "' has dim 0");
    }
    if (values.size() % dim != 0) {
        fail(ErrorKind::schema, "video '" + video_id + "' value count is not a multiple of dim");
    }
    ClipMatrix m;
    m.video_id = std::move(video_id);
    m.dim = dim;
    m.clip_count = static_cast<std::uint32_t>(values.size() / dim);
    m.values = std::move(values);
    m.validate();
    return m;
}

void ClipMatrix::validate() const {
    if (dim == 0) {
        fail(ErrorKind::schema, "video '" + video_id + "' has dim 0");
    }
    if (clip_count == 0) {
        fail(ErrorKind::data, "video '" + video_id + "' has no clips");
    }
    if (values.size() != static_cast<std::size_t>(clip_count) * dim) {
        fail(ErrorKind::schema, "video '" + video_id + "' value count does not match clip_count x dim");
    }
    check_finite(*this);
}

std::string_view to_string(CorpusRole role) {
    return role == CorpusRole::source ? "source" : "target";
}

CorpusRole corpus_role_from_string(std::string_view text) {
    if (text == "source") return CorpusRole::source;
    if (text == "target") return CorpusRole::target;
    fail(ErrorKind::argument, "unknown corpus role '" + std::string(text) + "'");
}

ShardHeader read_shard_header(std::span<const std::byte> bytes) {
    if (bytes.size() < kShardHeaderSize) {
        fail(ErrorKind::format, "shard shorter than its header");
    }
    if (std::memcmp(bytes.data(), kShardMagic, 4) != 0) {
        fail(ErrorKind::format, "bad shard magic");
    }
    Reader reader(bytes, 4);
    const auto version = reader.take<std::uint16_t>("version");
    if (version != kShardVersion) {
        fail(ErrorKind::format, "unsupported shard version " + std::to_string(version));
    }
    ShardHeader header;
    header.dim = reader.take<std::uint32_t>("dim");
    header.video_count = reader.take<std::uint32_t>("video_count");
    if (header.dim == 0) {
        fail(ErrorKind::schema, "shard declares dim 0");
    }
    return header;
}

std::vector<std::byte> write_shard(std::span<const ClipMatrix> videos, std::uint32_t dim) {
    if (dim == 0) {
        dim = videos.empty() ? 1u : videos.front().dim;
    }
    std::unordered_set<std::string_view> seen;
    std::size_t total = kShardHeaderSize;
    for (const auto& v : videos) {
        if (v.dim != dim) {
            fail(ErrorKind::schema, "mixed dims in shard: video '" + v.video_id + "' has dim " +
                                        std::to_string(v.dim) + ", expected " + std::to_string(dim));
        }
        v.validate();
        if (v.video_id.size() > std::numeric_limits<std::uint16_t>::max()) {
            fail(ErrorKind::data, "video id too long: '" + v.video_id.substr(0, 32) + "...'");
        }
        if (!seen.insert(v.video_id).second) {
            fail(ErrorKind::data, "duplicate video id '" + v.video_id + "'");
        }
        total += 2 + v.video_id.size() + 4 + v.values.size() * sizeof(float);
    }
    if (videos.size() > std::numeric_limits<std::uint32_t>::max()) {
        fail(ErrorKind::capacity, "too many videos for one shard");
    }

    std::vector<std::byte> out;
    out.reserve(total);
    const auto* magic = reinterpret_cast<const std::byte*>(kShardMagic);
    out.insert(out.end(), magic, magic + 4);
    put(out, kShardVersion);
    put(out, dim);
    put(out, static_cast<std::uint32_t>(videos.size()));
    for (const auto& v : videos) {
        put(out, static_cast<std::uint16_t>(v.video_id.size()));
        const auto* id = reinterpret_cast<const std::byte*>(v.video_id.data());
        out.insert(out.end(), id, id + v.video_id.size());
        put(out, v.clip_count);
        const auto* raw = reinterpret_cast<const std::byte*>(v.values.data());
        out.insert(out.end(), raw, raw + v.values.size() * sizeof(float));
    }
    return out;
}

ClipMatrix decode_video(std::span<const std::byte> shard, std::uint32_t dim, std::uint64_t offset) {
    if (offset < kShardHeaderSize || offset >= shard.size()) {
        fail(ErrorKind::format, "record offset " + std::to_string(offset) + " outside shard");
    }
    Reader reader(shard, offset);
    const auto id_len = reader.take<std::uint16_t>("id length");
    ClipMatrix video;
    video.video_id = reader.take_string(id_len);
    video.dim = dim;
    video.clip_count = reader.take<std::uint32_t>("clip count");
    if (video.clip_count == 0) {
        fail(ErrorKind::data, "video '" + video.video_id + "' has no clips");
    }
    const std::uint64_t count = static_cast<std::uint64_t>(video.clip_count) * dim;
    if (count * sizeof(float) > shard.size() - reader.position()) {
        fail(ErrorKind::format, "truncated values for video '" + video.video_id + "'");
    }
    video.values.resize(count);
    reader.take_floats(video.values, video.video_id);
    check_finite(video);
    return video;
}

std::vector<ManifestEntry> ingest_shard(std::span<const std::byte> bytes,
                                        std::uint32_t expected_dim,
                                        const std::string& shard_name) {
    if (expected_dim == 0) {
        fail(ErrorKind::argument, "expected_dim must be positive");
    }
    const ShardHeader header = read_shard_header(bytes);
    if (header.dim != expected_dim) {
        fail(ErrorKind::schema, "shard dim " + std::to_string(header.dim) + " does not match expected " +
                                    std::to_string(expected_dim));
    }

    std::vector<ManifestEntry> entries;
    entries.reserve(header.video_count);
    std::unordered_set<std::string> seen;
    std::uint64_t offset = kShardHeaderSize;
    for (std::uint32_t i = 0; i < header.video_count; ++i) {
        ClipMatrix video = decode_video(bytes, header.dim, offset);
        if (!seen.insert(video.video_id).second) {
            fail(ErrorKind::data, "duplicate video id '" + video.video_id + "'");
        }
        const std::uint64_t record = 2 + video.video_id.size() + 4 + video.values.size() * sizeof(float);
        entries.push_back({std::move(video.video_id), shard_name, offset, video.clip_count});
        offset += record;
    }
    if (offset != bytes.size()) {
        fail(ErrorKind::format, "trailing bytes after last video record");
    }
    return entries;
}

std::shared_ptr<const ShardBytes> ShardBytes::map_file(const std::filesystem::path& path) {
    return std::make_shared<MappedFile>(path);
}

std::shared_ptr<const ShardBytes> ShardBytes::own(std::vector<std::byte> bytes) {
    return std::make_shared<OwnedBytes>(std::move(bytes));
}

void CorpusHandle::add_shard(const std::string& name, std::shared_ptr<const ShardBytes> bytes) {
    const ShardHeader header = read_shard_header(bytes->bytes());
    if (dim_ == 0) {
        dim_ = header.dim;
    } else if (header.dim != dim_) {
        fail(ErrorKind::schema, "shard '" + name + "' has dim " + std::to_string(header.dim) +
                                    ", corpus has " + std::to_string(dim_));
    }
    shards_.emplace(name, std::move(bytes));
}

void CorpusHandle::index_entries() {
    index_.clear();
    index_.reserve(manifest_.size());
    for (std::size_t i = 0; i < manifest_.size(); ++i) {
        if (!index_.emplace(manifest_[i].video_id, i).second) {
            fail(ErrorKind::data, "duplicate video id '" + manifest_[i].video_id + "' in corpus '" +
                                      corpus_id_ + "'");
        }
    }
}

CorpusHandle CorpusHandle::open(const std::filesystem::path& manifest_path, CorpusRole role,
                                std::string corpus_id) {
    CorpusHandle corpus;
    corpus.corpus_id_ = corpus_id.empty() ? manifest_path.stem().string() : std::move(corpus_id);
    corpus.role_ = role;
    corpus.manifest_ = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    for (const auto& entry : corpus.manifest_) {
        if (!corpus.shards_.contains(entry.shard)) {
            const std::filesystem::path shard_path(entry.shard);
            corpus.add_shard(entry.shard,
                             ShardBytes::map_file(shard_path.is_absolute() ? shard_path : base / shard_path));
        }
    }
    corpus.index_entries();
    return corpus;
}

CorpusHandle CorpusHandle::from_shards(std::string corpus_id, CorpusRole role,
                                       const std::vector<std::filesystem::path>& shards,
                                       std::uint32_t expected_dim) {
    CorpusHandle corpus;
    corpus.corpus_id_ = std::move(corpus_id);
    corpus.role_ = role;
    for (const auto& path : shards) {
        auto bytes = ShardBytes::map_file(path);
        auto entries = ingest_shard(bytes->bytes(), expected_dim, path.string());
        corpus.add_shard(path.string(), std::move(bytes));
        corpus.manifest_.insert(corpus.manifest_.end(), std::make_move_iterator(entries.begin()),
                                std::make_move_iterator(entries.end()));
    }
    corpus.dim_ = expected_dim;
    corpus.index_entries();
    return corpus;
}

CorpusHandle CorpusHandle::from_videos(std::string corpus_id, CorpusRole role,
                                       std::span<const ClipMatrix> videos) {
    if (videos.empty()) {
        fail(ErrorKind::argument, "in-memory corpus needs at least one video");
    }
    CorpusHandle corpus;
    corpus.corpus_id_ = std::move(corpus_id);
    corpus.role_ = role;
    auto bytes = ShardBytes::own(write_shard(videos));
    corpus.manifest_ = ingest_shard(bytes->bytes(), videos.front().dim, "<memory>");
    corpus.add_shard("<memory>", std::move(bytes));
    corpus.index_entries();
    return corpus;
}

std::vector<std::string> CorpusHandle::video_ids() const {
    std::vector<std::string> ids;
    ids.reserve(manifest_.size());
    for (const auto& entry : manifest_) {
        ids.push_back(entry.video_id);
    }
    return ids;
}

ClipMatrix CorpusHandle::load_video_at(std::size_t index) const {
    if (index >= manifest_.size()) {
        fail(ErrorKind::not_found, "video index " + std::to_string(index) + " out of range");
    }
    const auto& entry = manifest_[index];
    const auto& shard = shards_.at(entry.shard);
    ClipMatrix video = decode_video(shard->bytes(), dim_, entry.offset);
    if (video.video_id != entry.video_id) {
        fail(ErrorKind::format, "manifest entry '" + entry.video_id + "' points at record for '" +
                                    video.video_id + "'");
    }
    if (video.clip_count != entry.clip_count) {
        fail(ErrorKind::data, "video '" + entry.video_id + "' has " + std::to_string(video.clip_count) +
                                  " clips, manifest says " + std::to_string(entry.clip_count));
    }
    return video;
}

ClipMatrix CorpusHandle::load_video(std::string_view video_id) const {
    auto it = index_.find(std::string(video_id));
    if (it == index_.end()) {
        fail(ErrorKind::not_found, "video '" + std::string(video_id) + "' not in corpus '" + corpus_id_ + "'");
    }
    return load_video_at(it->second);
}

void CorpusHandle::verify() const {
    for (std::size_t i = 0; i < manifest_.size(); ++i) {
        (void)load_video_at(i);
    }
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
    std::string text;
    for (const auto& e : entries) {
        io::json row;
        row["video_id"] = e.video_id;
        row["shard"] = e.shard;
        row["offset"] = e.offset;
        row["clip_count"] = e.clip_count;
        text += io::dump_line(row);
        text += '\n';
    }
    io::write_atomic(path, text);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::vector<ManifestEntry> entries;
    const auto rows = io::read_jsonl(path);
    entries.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string where = path.string() + " entry " + std::to_string(i + 1);
        ManifestEntry e;
        e.video_id = io::field<std::string>(rows[i], "video_id", where);
        e.shard = io::field<std::string>(rows[i], "shard", where);
        e.offset = io::field<std::uint64_t>(rows[i], "offset", where);
        e.clip_count = io::field<std::uint32_t>(rows[i], "clip_count", where);
        entries.push_back(std::move(e));
    }
    return entries;
}

std::string_view to_string(SubtitleSource source) {
    switch (source) {
        case SubtitleSource::human: return "human";
        case SubtitleSource::asr: return "asr";
        case SubtitleSource::none: return "none";
    }
    return "none";
}

SubtitleSource subtitle_source_from_string(std::string_view text) {
    if (text == "human") return SubtitleSource::human;
    if (text == "asr") return SubtitleSource::asr;
    if (text == "none") return SubtitleSource::none;
    fail(ErrorKind::data, "unknown subtitle_source '" + std::string(text) + "'");
}

std::vector<VideoMeta> read_metadata(const std::filesystem::path& path) {
    std::vector<VideoMeta> records;
    std::unordered_set<std::string> seen;
    const auto rows = io::read_jsonl(path);
    records.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string where = path.string() + " record " + std::to_string(i + 1);
        VideoMeta m;
        m.video_id = io::field<std::string>(rows[i], "video_id", where);
        m.category = io::field<std::string>(rows[i], "category", where);
        m.title = io::field<std::string>(rows[i], "title", where);
        m.subtitle_source = subtitle_source_from_string(io::field<std::string>(rows[i], "subtitle_source", where));
        m.duration_s = io::field<double>(rows[i], "duration_s", where);
        if (!(m.duration_s >= 0.0)) {
            fail(ErrorKind::data, where + ": negative duration for '" + m.video_id + "'");
        }
        if (!seen.insert(m.video_id).second) {
            fail(ErrorKind::data, where + ": duplicate video id '" + m.video_id + "'");
        }
        records.push_back(std::move(m));
    }
    return records;
}

void write_metadata(const std::filesystem::path& path, std::span<const VideoMeta> records) {
    std::string text;
    for (const auto& m : records) {
        io::json row;
        row["video_id"] = m.video_id;
        row["category"] = m.category;
        row["title"] = m.title;
        row["subtitle_source"] = std::string(to_string(m.subtitle_source));
        row["duration_s"] = m.duration_s;
        text += io::dump_line(row);
        text += '\n';
    }
    io::write_atomic(path, text);
}

std::vector<std::pair<std::string, std::vector<Subtitle>>> read_subtitles(
    const std::filesystem::path& path) {
    std::vector<std::pair<std::string, std::vector<Subtitle>>> grouped;
    std::unordered_map<std::string, std::size_t> slot;
    const auto rows = io::read_jsonl(path);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string where = path.string() + " line " + std::to_string(i + 1);
        const auto id = io::field<std::string>(rows[i], "video_id", where);
        Subtitle sub{io::field<std::string>(rows[i], "text", where),
                     io::field<double>(rows[i], "start_s", where),
                     io::field<double>(rows[i], "end_s", where)};
        if (!(sub.start_s <= sub.end_s)) {
            fail(ErrorKind::data, where + ": subtitle ends before it starts");
        }
        auto [it, inserted] = slot.emplace(id, grouped.size());
        if (inserted) {
            grouped.emplace_back(id, std::vector<Subtitle>{});
        }
        grouped[it->second].second.push_back(std::move(sub));
    }
    return grouped;
}

std::vector<TimeWindow> make_uniform_windows(double duration_s, int n) {
    if (n <= 0) {
        fail(ErrorKind::argument, "window count must be positive");
    }
    if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
        fail(ErrorKind::argument, "duration must be positive and finite");
    }
    std::vector<TimeWindow> windows(static_cast<std::size_t>(n));
    const auto boundary = [&](int k) {
        return k == n ? duration_s : static_cast<double>(k) * duration_s / static_cast<double>(n);
    };
    for (int k = 0; k < n; ++k) {
        windows[static_cast<std::size_t>(k)] = {boundary(k), boundary(k + 1)};
    }
    return windows;
}

std::vector<Subtitle> merge_consecutive_subtitles(std::span<const Subtitle> subs, int group) {
    if (group < 1) {
        fail(ErrorKind::argument, "group must be at least 1");
    }
    for (std::size_t i = 1; i < subs.size(); ++i) {
        if (subs[i].start_s < subs[i - 1].start_s) {
            fail(ErrorKind::argument, "subtitles are not sorted by start time");
        }
    }
    std::vector<Subtitle> merged;
    const auto step = static_cast<std::size_t>(group);
    merged.reserve((subs.size() + step - 1) / step);
    for (std::size_t begin = 0; begin < subs.size(); begin += step) {
        const std::size_t end = std::min(subs.size(), begin + step);
        Subtitle out{subs[begin].text, subs[begin].start_s, subs[begin].end_s};
        for (std::size_t i = begin + 1; i < end; ++i) {
            out.text += ' ';
            out.text += subs[i].text;
            out.end_s = std::max(out.end_s, subs[i].end_s);
        }
        merged.push_back(std::move(out));
    }
    return merged;
}

}  // namespace cupid
