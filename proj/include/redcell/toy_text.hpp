#pragma once

#include <memory>
#include <string>
#include <vector>

#include "redcell/gateway.hpp"

namespace redcell {

/// Deterministic surrogate vocabulary: 64 "risk" words, 64 "calm" words,
/// 128 neutral fillers, a few overlapping word pairs, and the 52 ASCII
/// letters as single-character tokens. Multi-character tokens carry a
/// leading space so decoded text keeps word boundaries.
std::vector<std::string> surrogate_vocabulary();

std::shared_ptr<const ToyTokenizer> surrogate_tokenizer();

/// Linear bag-of-tokens scorer: score = bias + sum of per-token weights.
/// The relaxed surface is linear in the selection matrix, so the gradient
/// is exact and identical across positions.
class BagOfTokensModerator final : public GradientModeratorHandle {
public:
    BagOfTokensModerator(std::string id, std::shared_ptr<const ToyTokenizer> tok,
                         Eigen::VectorXd weights, double bias, double verdict_threshold = 0.0);

    const ToyTokenizer* tokenizer() const override { return tok_.get(); }
    const Eigen::VectorXd& weights() const { return weights_; }
    double bias() const { return bias_; }

protected:
    double score_impl(const std::string& text) const override;
    Eigen::MatrixXd grad_impl(const std::vector<int>& prefix_tokens,
                              const Eigen::MatrixXd& selection) const override;
    double relaxed_impl(const std::vector<int>& prefix_tokens,
                        const Eigen::MatrixXd& selection) const override;

private:
    double pre_activation(const std::vector<int>& prefix_tokens,
                          const Eigen::MatrixXd& selection) const;

    std::shared_ptr<const ToyTokenizer> tok_;
    Eigen::VectorXd weights_;
    double bias_;
};

/// Logistic scorer over token counts: score = sigmoid(bias + w . counts),
/// interpreted as the probability the text is unsafe. Verdict threshold 0.5.
class LogisticTextModerator final : public GradientModeratorHandle {
public:
    LogisticTextModerator(std::string id, std::shared_ptr<const ToyTokenizer> tok,
                          Eigen::VectorXd weights, double bias);

    const ToyTokenizer* tokenizer() const override { return tok_.get(); }
    const Eigen::VectorXd& weights() const { return weights_; }
    double bias() const { return bias_; }

protected:
    double score_impl(const std::string& text) const override;
    Eigen::MatrixXd grad_impl(const std::vector<int>& prefix_tokens,
                              const Eigen::MatrixXd& selection) const override;
    double relaxed_impl(const std::vector<int>& prefix_tokens,
                        const Eigen::MatrixXd& selection) const override;

private:
    double pre_activation(const std::vector<int>& prefix_tokens,
                          const Eigen::MatrixXd& selection) const;

    std::shared_ptr<const ToyTokenizer> tok_;
    Eigen::VectorXd weights_;
    double bias_;
};

/// Substring detector used as a judging backend. Scores 1.0 when any
/// flagged keyword occurs in the text, 0.0 otherwise. It has no tokenizer
/// and no gradient, so appended token noise cannot move its score.
class KeywordJudgeModerator final : public ModeratorHandle {
public:
    KeywordJudgeModerator(std::string id, std::vector<std::string> keywords);

protected:
    double score_impl(const std::string& text) const override;

private:
    std::vector<std::string> keywords_;
};

struct ModerationExample {
    std::string text;
    bool unsafe = false;
};

/// Labeled corpus over the surrogate vocabulary. Unsafe examples lean on
/// risk words, safe examples on calm words; fillers appear in both.
std::vector<ModerationExample> synthetic_moderation_corpus(const ToyTokenizer& tok, int count,
                                                           std::uint64_t seed);

/// Prompts built mostly from risk words, for attack studies that need
/// inputs a fitted moderator flags as unsafe.
std::vector<std::string> synthetic_risky_prompts(const ToyTokenizer& tok, int count,
                                                 std::uint64_t seed, int tokens_per_prompt = 8);

struct FitConfig {
    int epochs = 40;
    double learning_rate = 0.15;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
};

/// Plain SGD on the logistic loss over bag-of-token counts. Deterministic
/// for a fixed corpus, config, and seed.
std::shared_ptr<LogisticTextModerator> fit_logistic_moderator(
    std::string id, std::shared_ptr<const ToyTokenizer> tok,
    const std::vector<ModerationExample>& corpus, const FitConfig& config);

} // namespace redcell
