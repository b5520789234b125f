#include "mmem/visual/visual_memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "mmem/error.hpp"
#include "mmem/util/digest.hpp"

namespace mmem {

VisualMemory::VisualMemory(std::int64_t visual_scale_ms, std::size_t dim)
    : visual_scale_ms_(visual_scale_ms), dim_(dim) {
    if (visual_scale_ms <= 0) throw Error(ErrorCode::InvalidArgument, "t_v must be positive");
    if (dim == 0) throw Error(ErrorCode::InvalidArgument, "feature dimension must be positive");
}

VisualMemory VisualMemory::from_parts(std::int64_t visual_scale_ms, std::size_t dim,
                                      std::vector<FeatureEntry> features, std::vector<FrameRef> frames) {
    VisualMemory m(visual_scale_ms, dim);
    m.features_ = std::move(features);
    m.frames_ = std::move(frames);
    std::set<std::string> ids;
    for (const auto& e : m.features_) {
        if (e.segment_id.empty() || !ids.insert(e.segment_id).second) {
            throw Error(ErrorCode::InternalConsistency, "feature ids must be unique and non-empty");
        }
    }
    for (const auto& f : m.frames_) {
        if (f.locator.empty() || f.timestamp_ms < 0) throw Error(ErrorCode::InternalConsistency, "bad frame entry");
    }
    m.validate();
    return m;
}

void VisualMemory::index_segment(const std::string& segment_id, const TimeRange& range,
                                 std::span<const double> raw_vector) {
    if (raw_vector.size() != dim_) {
        throw Error(ErrorCode::DimensionMismatch, "feature for '" + segment_id + "' has dimension " +
                                                      std::to_string(raw_vector.size()) + ", index has " +
                                                      std::to_string(dim_));
    }
    auto unit = normalized(raw_vector);
    if (segment_id.empty()) throw Error(ErrorCode::InvalidArgument, "feature segment id is empty");
    if (!range.valid() || range.duration() > visual_scale_ms_ || range.start_ms % visual_scale_ms_ != 0) {
        throw Error(ErrorCode::InvalidArgument, "feature range for '" + segment_id + "' is not a t_v segment");
    }
    auto pos = std::lower_bound(features_.begin(), features_.end(), range.start_ms,
                                [](const FeatureEntry& e, std::int64_t s) { return e.range.start_ms < s; });
    if (pos != features_.end() && pos->range.start_ms == range.start_ms) {
        throw Error(ErrorCode::InvalidArgument, "a feature already covers " + format_day_range(range));
    }
    for (const auto& e : features_) {
        if (e.segment_id == segment_id) {
            throw Error(ErrorCode::InvalidArgument, "duplicate feature segment id '" + segment_id + "'");
        }
    }
    features_.insert(pos, FeatureEntry{segment_id, range, std::move(unit)});
}

void VisualMemory::add_frame(std::int64_t timestamp_ms, std::string locator) {
    if (locator.empty()) throw Error(ErrorCode::InvalidArgument, "frame locator is empty");
    if (timestamp_ms < 0) throw Error(ErrorCode::InvalidArgument, "frame timestamp is negative");
    auto pos = std::lower_bound(frames_.begin(), frames_.end(), timestamp_ms,
                                [](const FrameRef& f, std::int64_t t) { return f.timestamp_ms < t; });
    if (pos != frames_.end() && pos->timestamp_ms == timestamp_ms) {
        throw Error(ErrorCode::InvalidArgument, "duplicate frame timestamp " + std::to_string(timestamp_ms));
    }
    frames_.insert(pos, FrameRef{timestamp_ms, std::move(locator)});
}

std::vector<VisualHit> VisualMemory::feature_search(std::span<const double> query, std::size_t k) const {
    if (features_.empty() || k == 0) return {};
    if (query.size() != dim_) {
        throw Error(ErrorCode::DimensionMismatch, "query dimension " + std::to_string(query.size()) +
                                                      " does not match index dimension " + std::to_string(dim_));
    }
    const auto q = normalized(query);
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(features_.size());
    for (std::size_t i = 0; i < features_.size(); ++i) scored.emplace_back(unit_cosine(q, features_[i].vector), i);
    // features_ is sorted by start, so the index breaks similarity ties.
    const auto cmp = [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    };
    k = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), cmp);
    std::vector<VisualHit> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const auto& e = features_[scored[i].second];
        out.push_back({e.segment_id, e.range, scored[i].first});
    }
    return out;
}

std::vector<std::size_t> uniform_subsample(std::size_t n, std::size_t m) {
    std::vector<std::size_t> out;
    if (n == 0 || m == 0) return out;
    if (n <= m) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(i);
        return out;
    }
    if (m == 1) return {0};
    for (std::size_t i = 0; i < m; ++i) out.push_back(i * (n - 1) / (m - 1));
    return out;
}

std::vector<FrameRef> VisualMemory::timestamp_fetch(const TimeRange& range, std::size_t max_frames) const {
    if (!range.valid()) throw Error(ErrorCode::InvalidArgument, "timestamp fetch needs a valid range");
    const auto lo = std::lower_bound(frames_.begin(), frames_.end(), range.start_ms,
                                     [](const FrameRef& f, std::int64_t t) { return f.timestamp_ms < t; });
    const auto hi = std::lower_bound(lo, frames_.end(), range.end_ms,
                                     [](const FrameRef& f, std::int64_t t) { return f.timestamp_ms < t; });
    const auto n = static_cast<std::size_t>(hi - lo);
    std::vector<FrameRef> out;
    for (auto i : uniform_subsample(n, max_frames)) out.push_back(*(lo + static_cast<std::ptrdiff_t>(i)));
    return out;
}

std::vector<TimeRange> VisualMemory::coverage_gaps(std::int64_t total_ms) const {
    std::vector<TimeRange> gaps;
    std::size_t j = 0;
    for (const auto& cell : partition_timeline(total_ms, visual_scale_ms_)) {
        while (j < features_.size() && features_[j].range.start_ms < cell.start_ms) ++j;
        if (j < features_.size() && features_[j].range == cell) continue;
        gaps.push_back(cell);
    }
    return gaps;
}

void VisualMemory::validate() const {
    for (std::size_t i = 0; i < features_.size(); ++i) {
        const auto& e = features_[i];
        if (e.vector.size() != dim_) throw Error(ErrorCode::InternalConsistency, "feature dimension drift");
        if (std::abs(l2_norm(e.vector) - 1.0) > 1e-6) {
            throw Error(ErrorCode::InternalConsistency, "feature '" + e.segment_id + "' is not unit norm");
        }
        if (!e.range.valid() || e.range.start_ms % visual_scale_ms_ != 0 || e.range.duration() > visual_scale_ms_) {
            throw Error(ErrorCode::InternalConsistency, "feature '" + e.segment_id + "' is off the t_v grid");
        }
        if (i > 0 && features_[i - 1].range.end_ms > e.range.start_ms) {
            throw Error(ErrorCode::InternalConsistency, "feature ranges overlap or are out of order");
        }
    }
    for (std::size_t i = 1; i < frames_.size(); ++i) {
        if (frames_[i - 1].timestamp_ms >= frames_[i].timestamp_ms) {
            throw Error(ErrorCode::InternalConsistency, "frame timestamps are not strictly increasing");
        }
    }
}

namespace {

template <class Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ParseError("malformed record at " + where, line);
        try {
            fn(j);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("bad record at " + where + ": " + e.what(), line);
        }
    }
}

}  // namespace

void load_features(VisualMemory& memory, const std::filesystem::path& path) {
    for_each_record(path, [&](const nlohmann::json& j) {
        const auto range = TimeRange::of(j.at("start_ms").get<std::int64_t>(), j.at("end_ms").get<std::int64_t>());
        memory.index_segment(j.at("segment_id").get<std::string>(), range,
                             decode_vector(j.at("vector").get<std::string>()));
    });
}

void load_frames(VisualMemory& memory, const std::filesystem::path& path) {
    for_each_record(path, [&](const nlohmann::json& j) {
        memory.add_frame(j.at("timestamp_ms").get<std::int64_t>(), j.at("locator").get<std::string>());
    });
}

}  // namespace mmem
