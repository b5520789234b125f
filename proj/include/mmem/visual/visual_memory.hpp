#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmem/core/time.hpp"
#include "mmem/core/vector.hpp"

namespace mmem {

struct FeatureEntry {
    std::string segment_id;
    TimeRange range;
    Vector vector;  // unit norm

    bool operator==(const FeatureEntry&) const = default;
};

struct FrameRef {
    std::int64_t timestamp_ms = 0;
    std::string locator;

    bool operator==(const FrameRef&) const = default;
};

struct VisualHit {
    std::string segment_id;
    TimeRange range;
    double similarity = 0.0;

    bool operator==(const VisualHit&) const = default;
};

inline constexpr std::size_t kDefaultMaxFrames = 5;

// Segment features for similarity search plus a timestamp-ordered frame index.
// Both lists stay sorted by time regardless of insertion order.
class VisualMemory {
public:
    VisualMemory(std::int64_t visual_scale_ms, std::size_t dim);

    // Reassembles stored entries verbatim (no renormalization), then validates.
    static VisualMemory from_parts(std::int64_t visual_scale_ms, std::size_t dim,
                                   std::vector<FeatureEntry> features, std::vector<FrameRef> frames);

    std::int64_t visual_scale_ms() const { return visual_scale_ms_; }
    std::size_t dim() const { return dim_; }
    const std::vector<FeatureEntry>& features() const { return features_; }
    const std::vector<FrameRef>& frames() const { return frames_; }
    bool empty() const { return features_.empty() && frames_.empty(); }

    // Normalizes and stores the feature of one t_v-aligned segment.
    // Throws DegenerateFeature, DimensionMismatch, or InvalidArgument (bad
    // alignment, overlap, duplicate id).
    void index_segment(const std::string& segment_id, const TimeRange& range, std::span<const double> raw_vector);

    // Throws InvalidArgument on a duplicate timestamp or empty locator.
    void add_frame(std::int64_t timestamp_ms, std::string locator);

    // Exact top-k by cosine; ties go to the earlier segment.
    std::vector<VisualHit> feature_search(std::span<const double> query, std::size_t k) const;

    // Frames with timestamp in [start, end), uniformly subsampled to max_frames.
    std::vector<FrameRef> timestamp_fetch(const TimeRange& range, std::size_t max_frames = kDefaultMaxFrames) const;

    // Gaps in feature coverage of [0, total_ms) on the t_v grid.
    std::vector<TimeRange> coverage_gaps(std::int64_t total_ms) const;

    // Throws InternalConsistency on any broken invariant.
    void validate() const;

    bool operator==(const VisualMemory&) const = default;

private:
    std::int64_t visual_scale_ms_;
    std::size_t dim_;
    std::vector<FeatureEntry> features_;
    std::vector<FrameRef> frames_;
};

// Positions floor(i * (n - 1) / (m - 1)) for i < m; all of [0, n) when n <= m.
std::vector<std::size_t> uniform_subsample(std::size_t n, std::size_t m);

// Line-delimited {"segment_id", "start_ms", "end_ms", "vector": base64 LE doubles}.
void load_features(VisualMemory& memory, const std::filesystem::path& path);
// Line-delimited {"timestamp_ms", "locator"}.
void load_frames(VisualMemory& memory, const std::filesystem::path& path);

}  // namespace mmem
