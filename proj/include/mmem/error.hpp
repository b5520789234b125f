#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmem {

enum class ErrorCode {
    InvalidArgument,
    DegenerateEntity,
    UnknownNode,
    InternalConsistency,
    Parse,
    Validation,
    Backend,
    Configuration,
    Dependency,
    Ingest,
    DimensionMismatch,
    DegenerateFeature,
    DigestMismatch,
    UnsupportedVersion,
    Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Raised when a model response cannot be turned into the expected structure.
// The raw response is kept so callers can log or journal it.
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::string raw, ErrorCode code = ErrorCode::Parse)
        : Error(code, message), raw_(std::move(raw)) {}

    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

class BackendError : public Error {
public:
    BackendError(const std::string& message, bool retryable)
        : Error(ErrorCode::Backend, message), retryable_(retryable) {}

    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

struct TimeGap {
    std::int64_t start_ms;
    std::int64_t end_ms;
};

// Coarse caption construction needs every finer caption under its range.
class DependencyError : public Error {
public:
    DependencyError(const std::string& message, std::vector<TimeGap> gaps)
        : Error(ErrorCode::Dependency, message), gaps_(std::move(gaps)) {}

    const std::vector<TimeGap>& gaps() const noexcept { return gaps_; }

private:
    std::vector<TimeGap> gaps_;
};

class IngestError : public Error {
public:
    IngestError(std::string segment_id, const std::string& message)
        : Error(ErrorCode::Ingest, message), segment_id_(std::move(segment_id)) {}

    const std::string& segment_id() const noexcept { return segment_id_; }

private:
    std::string segment_id_;
};

}  // namespace mmem
