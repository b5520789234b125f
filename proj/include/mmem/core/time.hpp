#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmem {

inline constexpr std::int64_t kSecondMs = 1000;
inline constexpr std::int64_t kMinuteMs = 60 * kSecondMs;
inline constexpr std::int64_t kHourMs = 60 * kMinuteMs;
inline constexpr std::int64_t kDayMs = 24 * kHourMs;

// Half-open interval [start_ms, end_ms) in milliseconds from stream origin.
struct TimeRange {
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;

    // Validating constructor; throws InvalidArgument unless 0 <= start < end.
    static TimeRange of(std::int64_t start_ms, std::int64_t end_ms);

    bool valid() const noexcept { return start_ms >= 0 && start_ms < end_ms; }
    std::int64_t duration() const noexcept { return end_ms - start_ms; }
    bool contains(std::int64_t t) const noexcept { return t >= start_ms && t < end_ms; }
    bool covers(const TimeRange& other) const noexcept {
        return start_ms <= other.start_ms && other.end_ms <= end_ms;
    }

    auto operator<=>(const TimeRange&) const = default;
};

struct Segment {
    std::string id;
    TimeRange range;
    std::int64_t scale_ms = 0;
    std::string caption;
    std::optional<std::string> transcript;

    bool operator==(const Segment&) const = default;
};

// Episodic scales t_0 < ... < t_N plus the semantic window and visual segment lengths.
struct TimescaleConfig {
    std::vector<std::int64_t> scales_ms;
    std::int64_t semantic_scale_ms = 10 * kMinuteMs;
    std::int64_t visual_scale_ms = 30 * kSecondMs;

    // 30 s / 3 min / 10 min / 1 h, the week-long egocentric configuration.
    static TimescaleConfig egocentric_defaults();

    void validate() const;
    std::int64_t fine_scale() const { return scales_ms.front(); }
    bool has_scale(std::int64_t scale_ms) const;

    bool operator==(const TimescaleConfig&) const = default;
};

// Consecutive non-overlapping ranges covering [0, total_ms); only the last may be short.
std::vector<TimeRange> partition_timeline(std::int64_t total_ms, std::int64_t scale_ms);

// Sorted, disjoint, non-adjacent union of the given ranges.
std::vector<TimeRange> coalesce(std::span<const TimeRange> ranges);

std::int64_t union_length(std::span<const TimeRange> ranges);

// Temporal IoU over interval unions. Empty truth is an error; empty retrieved yields 0.
double tiou(std::span<const TimeRange> retrieved, std::span<const TimeRange> truth);

// "DAY X HH:MM:SS" labels for egocentric streams. DAY 1 starts at offset 0.
std::string format_day_timestamp(std::int64_t ms);
std::int64_t parse_day_timestamp(std::string_view text);

// "DAY X HH:MM:SS - DAY Y HH:MM:SS"; the second DAY may be omitted ("DAY2 18:34:01-18:34:29").
std::string format_day_range(const TimeRange& range);
std::optional<TimeRange> parse_day_range(std::string_view text);

}  // namespace mmem
