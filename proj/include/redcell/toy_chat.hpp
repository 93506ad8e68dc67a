#pragma once

#include <map>
#include <string>
#include <vector>

#include "redcell/gateway.hpp"

namespace redcell {

/// Returns the last user message verbatim.
class EchoChat final : public ChatModelHandle {
public:
    explicit EchoChat(std::string id, std::string system_prompt = "", bool accepts_images = true);
    std::string generate(const std::vector<ChatMessage>& messages,
                         const std::optional<Image>& image) const override;
};

class AlwaysRefuseChat final : public ChatModelHandle {
public:
    AlwaysRefuseChat(std::string id, std::string refusal_text);
    std::string generate(const std::vector<ChatMessage>& messages,
                         const std::optional<Image>& image) const override;

private:
    std::string refusal_;
};

/// Emits a scripted two-part answer when the request carries one of the
/// dual-framing markers, refuses otherwise. Scripted entries are matched by
/// the raw prompt appearing as a substring of the rendered request.
class ScriptedDualChat final : public ChatModelHandle {
public:
    ScriptedDualChat(std::string id, std::vector<std::string> meta_markers,
                     std::map<std::string, std::string> scripted, std::string refusal_text);
    std::string generate(const std::vector<ChatMessage>& messages,
                         const std::optional<Image>& image) const override;

private:
    std::vector<std::string> meta_markers_;
    std::map<std::string, std::string> scripted_;
    std::string refusal_;
};

struct GatedStackChatConfig {
    std::vector<std::string> meta_markers;
    std::string refusal_text = "I cannot assist with this request.";
    std::string harmful_text;
    EncoderPtr gate_encoder;
    std::string gate_target_prompt;
    double min_cosine = 0.8;
    std::string repeat_instruction;
};

/// Stand-in for a guarded assistant with two layers: it only produces its
/// unsafe two-part answer when the request uses a dual-framing marker, and
/// when a system prompt is installed it additionally demands an attached
/// image whose embedding aligns with the gate target. When the request ends
/// with the configured repeat instruction, the reply echoes the request's
/// final line.
class GatedStackChat final : public ChatModelHandle {
public:
    GatedStackChat(std::string id, std::string system_prompt, GatedStackChatConfig config);
    std::string generate(const std::vector<ChatMessage>& messages,
                         const std::optional<Image>& image) const override;

private:
    GatedStackChatConfig config_;
};

/// Replays an exact (prompt, response) -> score table; unknown pairs throw.
class RecordedRewardHandle final : public RewardHandle {
public:
    explicit RecordedRewardHandle(std::string id);
    void record(const std::string& prompt, const std::string& response, double score);
    double reward_score(const std::string& prompt, const std::string& response) const override;

private:
    std::map<std::string, double> table_;
};

/// Deterministic shaped reward: longer structured answers score above
/// refusals, with a small hash-derived jitter to break ties.
class HeuristicRewardHandle final : public RewardHandle {
public:
    explicit HeuristicRewardHandle(std::string id);
    double reward_score(const std::string& prompt, const std::string& response) const override;
};

} // namespace redcell
