#include "redcell/remote.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <thread>

namespace redcell {

using nlohmann::json;

namespace {

std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw SpecInvalid("remote url needs a scheme: " + url);
    }
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

RemoteModerator::RemoteModerator(std::string id, RemoteModeratorConfig config)
    : ModeratorHandle(std::move(id), 0, config.verdict_threshold, config.concurrent_scoring,
                      config.max_input_chars),
      config_(std::move(config)) {
    std::tie(base_, path_) = split_url(config_.url);
}

double RemoteModerator::score_impl(const std::string& text) const {
    json request;
    request["text"] = text;
    std::string body = request.dump();

    std::string last_failure = "no attempt made";
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (attempt > 0) {
            auto delay = std::chrono::milliseconds(config_.backoff_base_ms) * (1 << (attempt - 1));
            std::this_thread::sleep_for(delay);
        }
        httplib::Client client(base_);
        client.set_connection_timeout(0, config_.timeout_ms * 1000);
        client.set_read_timeout(0, config_.timeout_ms * 1000);
        client.set_write_timeout(0, config_.timeout_ms * 1000);

        auto res = client.Post(path_, body, "application/json");
        if (!res) {
            last_failure = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_failure = "status " + std::to_string(res->status);
            continue;
        }
        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::exception& e) {
            last_failure = std::string("invalid JSON reply: ") + e.what();
            continue;
        }
        if (!reply.contains("score") || !reply["score"].is_number() ||
            !reply.contains("verdict") || !reply["verdict"].is_string()) {
            last_failure = "reply lacks numeric score or string verdict";
            continue;
        }
        double score = reply["score"].get<double>();
        std::string verdict = reply["verdict"].get<std::string>();
        if (verdict != "safe" && verdict != "unsafe") {
            last_failure = "unknown verdict label: " + verdict;
            continue;
        }
        bool unsafe_by_score = score > verdict_threshold();
        if (unsafe_by_score != (verdict == "unsafe")) {
            throw Error(id() + ": remote verdict '" + verdict + "' contradicts score " +
                        std::to_string(score) + " at threshold " +
                        std::to_string(verdict_threshold()));
        }
        return score;
    }
    throw BackendUnavailable(id() + ": " + config_.url + " unavailable after " +
                             std::to_string(config_.retries + 1) + " attempts (" + last_failure +
                             ")");
}

} // namespace redcell
