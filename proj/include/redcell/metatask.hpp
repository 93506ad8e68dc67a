#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "redcell/gateway.hpp"

namespace redcell {

inline constexpr char kPromptPlaceholder[] = "<prompt>";

struct MetaTemplate {
    std::string name;
    std::string text; // contains kPromptPlaceholder exactly once
};

/// The built-in dual-framing catalog: the original wording plus four
/// paraphrases.
const std::vector<MetaTemplate>& meta_template_catalog();
const MetaTemplate& meta_template(const std::string& name);

/// Phrases that mark a request as dual-framed, one per catalog entry.
std::vector<std::string> meta_task_markers();

/// Pure placeholder substitution.
std::string render_meta_task(const MetaTemplate& tmpl, const std::string& prompt);

struct DualSplit {
    std::vector<std::string> segments;   // at least one
    std::vector<std::string> separators; // segments.size() + 1 entries, interleaved
};

/// Split a response into its enumerated answers ("Answer 1:", "Answer 2:",
/// ...), falling back to blank-line paragraphs and finally to the whole
/// text. Separators keep every byte, so reconstruct() is lossless.
DualSplit split_dual_response(const std::string& response);
std::string reconstruct(const DualSplit& split);

/// Substring matcher over a phrase list, case-insensitive, with an
/// optional fallback predicate consulted when no phrase fires. Empty or
/// whitespace-only responses count as refusals.
class RefusalMatcher {
public:
    explicit RefusalMatcher(std::vector<std::string> phrases,
                            std::function<bool(const std::string&)> fallback = nullptr);
    static RefusalMatcher from_file(const std::filesystem::path& path);

    bool is_refusal(const std::string& response) const;
    const std::vector<std::string>& phrases() const { return phrases_; }

private:
    std::vector<std::string> phrases_; // stored lowercased
    std::function<bool(const std::string&)> fallback_;
};

struct RewardGapResult {
    double mean_dual = 0.0;
    double mean_refusal = 0.0;
    double gap = 0.0;      // mean_dual - mean_refusal
    double win_rate = 0.0; // strict wins only, ties are not wins
    int count = 0;
    std::vector<double> dual_scores;
    std::vector<double> refusal_scores;
};

/// For each prompt, score the model's answer to the dual-framed request
/// against its answer to the raw request, both rated under the raw prompt.
RewardGapResult reward_gap(const std::vector<std::string>& prompts, const MetaTemplate& tmpl,
                           const ChatModelHandle& chat, const RewardHandle& reward);

} // namespace redcell
