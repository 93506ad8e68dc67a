#pragma once

#include <string>

#include "redcell/gateway.hpp"

namespace redcell {

struct RemoteModeratorConfig {
    std::string url; // http(s)://host:port/path
    double verdict_threshold = 0.5;
    int retries = 3; // attempts after the first failure
    int timeout_ms = 2000;
    int backoff_base_ms = 50;
    bool concurrent_scoring = true;
    long max_input_chars = 0;
};

/// Moderator served over HTTP: POST {"text": ...} returns {"score": ...,
/// "verdict": "safe"|"unsafe"}. Failures are retried with exponential
/// backoff before surfacing as BackendUnavailable. A reply whose verdict
/// disagrees with its own score against the threshold is rejected outright.
class RemoteModerator final : public ModeratorHandle {
public:
    RemoteModerator(std::string id, RemoteModeratorConfig config);

protected:
    double score_impl(const std::string& text) const override;

private:
    RemoteModeratorConfig config_;
    std::string base_;
    std::string path_;
};

} // namespace redcell
