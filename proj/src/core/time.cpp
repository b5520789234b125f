#include "mmem/core/time.hpp"

#include <algorithm>
#include <cstdio>
#include <regex>

#include "mmem/error.hpp"

namespace mmem {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid-argument";
        case ErrorCode::DegenerateEntity: return "degenerate-entity";
        case ErrorCode::UnknownNode: return "unknown-node";
        case ErrorCode::InternalConsistency: return "internal-consistency";
        case ErrorCode::Parse: return "parse";
        case ErrorCode::Validation: return "validation";
        case ErrorCode::Backend: return "backend";
        case ErrorCode::Configuration: return "configuration";
        case ErrorCode::Dependency: return "dependency";
        case ErrorCode::Ingest: return "ingest";
        case ErrorCode::DimensionMismatch: return "dimension-mismatch";
        case ErrorCode::DegenerateFeature: return "degenerate-feature";
        case ErrorCode::DigestMismatch: return "digest-mismatch";
        case ErrorCode::UnsupportedVersion: return "unsupported-version";
        case ErrorCode::Io: return "io";
    }
    return "unknown";
}

TimeRange TimeRange::of(std::int64_t start_ms, std::int64_t end_ms) {
    TimeRange r{start_ms, end_ms};
    if (!r.valid()) {
        throw Error(ErrorCode::InvalidArgument,
                    "invalid time range [" + std::to_string(start_ms) + ", " +
                        std::to_string(end_ms) + ")");
    }
    return r;
}

TimescaleConfig TimescaleConfig::egocentric_defaults() {
    return TimescaleConfig{
        {30 * kSecondMs, 3 * kMinuteMs, 10 * kMinuteMs, kHourMs}, 10 * kMinuteMs, 30 * kSecondMs};
}

void TimescaleConfig::validate() const {
    if (scales_ms.empty()) {
        throw Error(ErrorCode::InvalidArgument, "timescale list is empty");
    }
    for (std::size_t i = 0; i < scales_ms.size(); ++i) {
        if (scales_ms[i] <= 0) {
            throw Error(ErrorCode::InvalidArgument, "timescales must be positive");
        }
        if (i > 0 && scales_ms[i] <= scales_ms[i - 1]) {
            throw Error(ErrorCode::InvalidArgument, "timescales must be strictly increasing");
        }
    }
    if (semantic_scale_ms <= 0 || visual_scale_ms <= 0) {
        throw Error(ErrorCode::InvalidArgument, "semantic and visual scales must be positive");
    }
}

bool TimescaleConfig::has_scale(std::int64_t scale_ms) const {
    return std::find(scales_ms.begin(), scales_ms.end(), scale_ms) != scales_ms.end();
}

std::vector<TimeRange> partition_timeline(std::int64_t total_ms, std::int64_t scale_ms) {
    if (total_ms <= 0 || scale_ms <= 0) {
        throw Error(ErrorCode::InvalidArgument, "partition_timeline needs positive total and scale");
    }
    std::vector<TimeRange> out;
    out.reserve(static_cast<std::size_t>((total_ms + scale_ms - 1) / scale_ms));
    for (std::int64_t start = 0; start < total_ms; start += scale_ms) {
        out.push_back(TimeRange{start, std::min(start + scale_ms, total_ms)});
    }
    return out;
}

std::vector<TimeRange> coalesce(std::span<const TimeRange> ranges) {
    std::vector<TimeRange> sorted(ranges.begin(), ranges.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<TimeRange> out;
    for (const auto& r : sorted) {
        if (r.end_ms <= r.start_ms) continue;
        if (!out.empty() && r.start_ms <= out.back().end_ms) {
            out.back().end_ms = std::max(out.back().end_ms, r.end_ms);
        } else {
            out.push_back(r);
        }
    }
    return out;
}

std::int64_t union_length(std::span<const TimeRange> ranges) {
    std::int64_t total = 0;
    for (const auto& r : coalesce(ranges)) total += r.duration();
    return total;
}

double tiou(std::span<const TimeRange> retrieved, std::span<const TimeRange> truth) {
    if (truth.empty()) {
        throw Error(ErrorCode::InvalidArgument, "tiou needs a non-empty ground-truth set");
    }
    if (retrieved.empty()) return 0.0;

    const auto a = coalesce(retrieved);
    const auto b = coalesce(truth);

    // Two-pointer sweep over the disjoint sorted lists.
    std::int64_t inter = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const auto lo = std::max(a[i].start_ms, b[j].start_ms);
        const auto hi = std::min(a[i].end_ms, b[j].end_ms);
        if (hi > lo) inter += hi - lo;
        if (a[i].end_ms < b[j].end_ms) ++i; else ++j;
    }
    std::int64_t len_a = 0, len_b = 0;
    for (const auto& r : a) len_a += r.duration();
    for (const auto& r : b) len_b += r.duration();
    const auto uni = len_a + len_b - inter;
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

const char* const kClock = R"((\d{1,2}):(\d{2}):(\d{2})(?:\.(\d{1,3}))?)";

std::int64_t clock_ms(const std::string& h, const std::string& m, const std::string& s,
                      const std::string& frac) {
    const auto hh = std::stoll(h), mm = std::stoll(m), ss = std::stoll(s);
    if (hh >= 24 || mm >= 60 || ss >= 60) {
        throw Error(ErrorCode::InvalidArgument, "clock field out of range");
    }
    std::int64_t ms = 0;
    if (!frac.empty()) {
        std::string padded = frac;
        padded.resize(3, '0');
        ms = std::stoll(padded);
    }
    return hh * kHourMs + mm * kMinuteMs + ss * kSecondMs + ms;
}

std::int64_t day_offset(const std::string& day) {
    const auto d = std::stoll(day);
    if (d < 1) throw Error(ErrorCode::InvalidArgument, "DAY numbering starts at 1");
    return (d - 1) * kDayMs;
}

}  // namespace

std::string format_day_timestamp(std::int64_t ms) {
    if (ms < 0) throw Error(ErrorCode::InvalidArgument, "negative timestamp");
    const auto day = ms / kDayMs + 1;
    auto rest = ms % kDayMs;
    const auto h = rest / kHourMs;
    rest %= kHourMs;
    const auto m = rest / kMinuteMs;
    rest %= kMinuteMs;
    const auto s = rest / kSecondMs;
    const auto frac = rest % kSecondMs;
    char buf[64];
    if (frac == 0) {
        std::snprintf(buf, sizeof buf, "DAY %lld %02lld:%02lld:%02lld", static_cast<long long>(day),
                      static_cast<long long>(h), static_cast<long long>(m),
                      static_cast<long long>(s));
    } else {
        std::snprintf(buf, sizeof buf, "DAY %lld %02lld:%02lld:%02lld.%03lld",
                      static_cast<long long>(day), static_cast<long long>(h),
                      static_cast<long long>(m), static_cast<long long>(s),
                      static_cast<long long>(frac));
    }
    return buf;
}

std::int64_t parse_day_timestamp(std::string_view text) {
    static const std::regex re(std::string(R"(^\s*DAY\s*(\d+)\s+)") + kClock + R"(\s*$)",
                               std::regex::icase);
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_match(text.begin(), text.end(), m, re)) {
        throw Error(ErrorCode::InvalidArgument, "not a DAY timestamp: " + std::string(text));
    }
    return day_offset(m[1].str()) + clock_ms(m[2].str(), m[3].str(), m[4].str(), m[5].str());
}

std::string format_day_range(const TimeRange& range) {
    return format_day_timestamp(range.start_ms) + " - " + format_day_timestamp(range.end_ms);
}

std::optional<TimeRange> parse_day_range(std::string_view text) {
    static const std::regex re(std::string(R"(^\s*\[?\s*DAY\s*(\d+)\s+)") + kClock +
                                   R"(\s*-\s*(?:DAY\s*(\d+)\s+)?)" + kClock + R"(\s*\]?\s*$)",
                               std::regex::icase);
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_match(text.begin(), text.end(), m, re)) return std::nullopt;
    try {
        const auto start_day = day_offset(m[1].str());
        const auto end_day = m[6].matched ? day_offset(m[6].str()) : start_day;
        const auto start = start_day + clock_ms(m[2].str(), m[3].str(), m[4].str(), m[5].str());
        const auto end = end_day + clock_ms(m[7].str(), m[8].str(), m[9].str(), m[10].str());
        if (start >= end) return std::nullopt;
        return TimeRange{start, end};
    } catch (const Error&) {
        return std::nullopt;
    }
}

}  // namespace mmem
