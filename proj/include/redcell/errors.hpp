#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace redcell {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Remote endpoint failed after retries; retriable from the caller's side.
struct BackendUnavailable : Error {
    using Error::Error;
};

// Input exceeds the backend context window; the caller must truncate.
struct InputTooLong : Error {
    using Error::Error;
};

// Gradient requested from a verdict-only handle.
struct NotDifferentiable : Error {
    using Error::Error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};

struct ResolutionMismatch : Error {
    using Error::Error;
};

struct PixelRangeViolation : Error {
    using Error::Error;
};

struct KTooLarge : Error {
    using Error::Error;
};

struct InvalidLength : Error {
    using Error::Error;
};

struct TokenizerIncompatible : Error {
    using Error::Error;
};

struct ZeroNormEmbedding : Error {
    using Error::Error;
};

struct EmptyTarget : Error {
    using Error::Error;
};

struct EmptyPrompt : Error {
    using Error::Error;
};

struct MissingPlaceholder : Error {
    using Error::Error;
};

struct EmptySuite : Error {
    using Error::Error;
};

struct MalformedRecord : Error {
    MalformedRecord(const std::string& msg, int line_no)
        : Error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
    int line;
};

struct SpecInvalid : Error {
    using Error::Error;
};

struct UnknownHandle : Error {
    explicit UnknownHandle(const std::string& handle_id)
        : Error("unknown handle id: " + handle_id), id(handle_id) {}
    std::string id;
};

// A pipeline run aborted mid-flight; the call log up to the failure is kept.
struct IncompleteRun : Error {
    IncompleteRun(const std::string& msg, std::vector<std::string> log)
        : Error(msg), call_log(std::move(log)) {}
    std::vector<std::string> call_log;
};

} // namespace redcell
