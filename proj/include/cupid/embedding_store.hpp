#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cupid {

/// Clip embeddings of one video, stored row-major: one row per clip.
///
/// The row-major clip x dim layout is the transpose of a d x Q column stack.
/// Nothing downstream depends on the orientation because only inner products
/// between rows are consumed.
struct ClipMatrix {
    std::string video_id;
    std::uint32_t dim = 0;
    std::uint32_t clip_count = 0;
    std::vector<float> values;

    /// Builds a matrix from flat row-major values and checks every invariant.
    static ClipMatrix make(std::string video_id, std::uint32_t dim, std::vector<float> values);

    std::span<const float> clip(std::size_t index) const {
        return {values.data() + index * dim, dim};
    }

    /// Throws data/schema errors when clip_count is zero, the value count is
    /// inconsistent, or any value is non-finite.
    void validate() const;

    friend bool operator==(const ClipMatrix&, const ClipMatrix&) = default;
};

enum class CorpusRole { source, target };

std::string_view to_string(CorpusRole role);
CorpusRole corpus_role_from_string(std::string_view text);

struct ManifestEntry {
    std::string video_id;
    std::string shard;          // shard path, relative to the manifest file when read from disk
    std::uint64_t offset = 0;   // byte offset of the video record inside the shard
    std::uint32_t clip_count = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// Shard layout (little-endian):
//   "CPDE" | u16 version=1 | u32 dim | u32 video_count
//   per video: u16 id_len | id bytes | u32 clip_count | clip_count*dim f32
inline constexpr char kShardMagic[4] = {'C', 'P', 'D', 'E'};
inline constexpr std::uint16_t kShardVersion = 1;
inline constexpr std::size_t kShardHeaderSize = 4 + 2 + 4 + 4;

struct ShardHeader {
    std::uint32_t dim = 0;
    std::uint32_t video_count = 0;
};

ShardHeader read_shard_header(std::span<const std::byte> bytes);

/// Encodes videos into one shard. `dim` defaults to the first video's dim; it
/// only matters for an empty shard, which otherwise records dim 1.
std::vector<std::byte> write_shard(std::span<const ClipMatrix> videos, std::uint32_t dim = 0);

/// Decodes and validates a whole shard. Returns one manifest entry per video,
/// with `shard` set to `shard_name`.
std::vector<ManifestEntry> ingest_shard(std::span<const std::byte> bytes,
                                        std::uint32_t expected_dim,
                                        const std::string& shard_name = {});

/// Decodes the record starting at `offset`.
ClipMatrix decode_video(std::span<const std::byte> shard, std::uint32_t dim, std::uint64_t offset);

/// Read-only byte buffer backing a shard, either memory-mapped or owned.
class ShardBytes {
public:
    virtual ~ShardBytes() = default;
    virtual std::span<const std::byte> bytes() const = 0;

    static std::shared_ptr<const ShardBytes> map_file(const std::filesystem::path& path);
    static std::shared_ptr<const ShardBytes> own(std::vector<std::byte> bytes);
};

/// Immutable random-access view of one corpus: a manifest plus its shards.
/// Safe for any number of concurrent readers.
class CorpusHandle {
public:
    /// Opens a JSON-lines manifest. Shard paths resolve relative to the
    /// manifest's directory. Record headers are bounds-checked lazily by
    /// load_video; use verify() for a full scan.
    static CorpusHandle open(const std::filesystem::path& manifest_path, CorpusRole role,
                             std::string corpus_id = {});

    /// Ingests shard files directly (full validation), without a manifest file.
    static CorpusHandle from_shards(std::string corpus_id, CorpusRole role,
                                    const std::vector<std::filesystem::path>& shards,
                                    std::uint32_t expected_dim);

    /// Builds an in-memory corpus by encoding `videos` into a single shard.
    static CorpusHandle from_videos(std::string corpus_id, CorpusRole role,
                                    std::span<const ClipMatrix> videos);

    const std::string& corpus_id() const { return corpus_id_; }
    CorpusRole role() const { return role_; }
    std::uint32_t dim() const { return dim_; }
    std::size_t video_count() const { return manifest_.size(); }
    std::span<const ManifestEntry> manifest() const { return manifest_; }
    std::vector<std::string> video_ids() const;

    ClipMatrix load_video(std::string_view video_id) const;
    ClipMatrix load_video_at(std::size_t index) const;

    /// Decodes every video; throws on the first invalid record.
    void verify() const;

private:
    CorpusHandle() = default;
    void add_shard(const std::string& name, std::shared_ptr<const ShardBytes> bytes);
    void index_entries();

    std::string corpus_id_;
    CorpusRole role_ = CorpusRole::source;
    std::uint32_t dim_ = 0;
    std::vector<ManifestEntry> manifest_;
    std::unordered_map<std::string, std::shared_ptr<const ShardBytes>> shards_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Manifest JSON-lines: {"video_id","shard","offset","clip_count"}
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

enum class SubtitleSource { human, asr, none };

std::string_view to_string(SubtitleSource source);
SubtitleSource subtitle_source_from_string(std::string_view text);

struct VideoMeta {
    std::string video_id;
    std::string category;
    std::string title;
    SubtitleSource subtitle_source = SubtitleSource::none;
    double duration_s = 0.0;

    friend bool operator==(const VideoMeta&, const VideoMeta&) = default;
};

/// Reads metadata JSON-lines. Rejects duplicate ids and negative durations.
std::vector<VideoMeta> read_metadata(const std::filesystem::path& path);
void write_metadata(const std::filesystem::path& path, std::span<const VideoMeta> records);

struct Subtitle {
    std::string text;
    double start_s = 0.0;
    double end_s = 0.0;

    friend bool operator==(const Subtitle&, const Subtitle&) = default;
};

/// Subtitles JSON-lines grouped by video id, in file order per video.
std::vector<std::pair<std::string, std::vector<Subtitle>>> read_subtitles(
    const std::filesystem::path& path);

struct TimeWindow {
    double start_s = 0.0;
    double end_s = 0.0;

    friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

/// Splits [0, duration_s] into n equal windows; window k starts at k*duration/n
/// and the last window ends exactly at duration_s.
std::vector<TimeWindow> make_uniform_windows(double duration_s, int n);

/// Merges each run of `group` consecutive subtitles into one, joining text with
/// single spaces. A trailing partial run becomes its own subtitle.
std::vector<Subtitle> merge_consecutive_subtitles(std::span<const Subtitle> subs, int group);

}  // namespace cupid
