#include "redcell/toy_text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "redcell/rng.hpp"

namespace redcell {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

std::vector<int> token_counts(const ToyTokenizer& tok, const std::string& text) {
    std::vector<int> counts(static_cast<std::size_t>(tok.vocab_size()), 0);
    for (int id : tok.encode(text)) {
        counts[static_cast<std::size_t>(id)] += 1;
    }
    return counts;
}

} // namespace

std::vector<std::string> surrogate_vocabulary() {
    std::vector<std::string> vocab;
    vocab.reserve(312);
    char buf[16];
    for (int i = 0; i < 64; ++i) {
        std::snprintf(buf, sizeof(buf), " risk%02d", i);
        vocab.emplace_back(buf);
    }
    for (int i = 0; i < 64; ++i) {
        std::snprintf(buf, sizeof(buf), " calm%02d", i);
        vocab.emplace_back(buf);
    }
    for (int i = 0; i < 128; ++i) {
        std::snprintf(buf, sizeof(buf), " word%03d", i);
        vocab.emplace_back(buf);
    }
    vocab.emplace_back(" kit");
    vocab.emplace_back(" kitty");
    vocab.emplace_back(" ship");
    vocab.emplace_back(" shipment");
    for (char c = 'a'; c <= 'z'; ++c) {
        vocab.emplace_back(1, c);
    }
    for (char c = 'A'; c <= 'Z'; ++c) {
        vocab.emplace_back(1, c);
    }
    return vocab;
}

std::shared_ptr<const ToyTokenizer> surrogate_tokenizer() {
    static const auto shared = std::make_shared<const ToyTokenizer>(surrogate_vocabulary());
    return shared;
}

BagOfTokensModerator::BagOfTokensModerator(std::string id,
                                           std::shared_ptr<const ToyTokenizer> tok,
                                           Eigen::VectorXd weights, double bias,
                                           double verdict_threshold)
    : GradientModeratorHandle(std::move(id), tok->vocab_size(), verdict_threshold),
      tok_(std::move(tok)), weights_(std::move(weights)), bias_(bias) {
    if (weights_.size() != tok_->vocab_size()) {
        throw ShapeMismatch(this->id() + ": weight vector does not match vocabulary");
    }
}

double BagOfTokensModerator::score_impl(const std::string& text) const {
    double z = bias_;
    for (int id : tok_->encode(text)) {
        z += weights_[id];
    }
    return z;
}

double BagOfTokensModerator::pre_activation(const std::vector<int>& prefix_tokens,
                                            const Eigen::MatrixXd& selection) const {
    double z = bias_;
    for (int id : prefix_tokens) {
        z += weights_[id];
    }
    for (Eigen::Index i = 0; i < selection.rows(); ++i) {
        z += selection.row(i).dot(weights_);
    }
    return z;
}

double BagOfTokensModerator::relaxed_impl(const std::vector<int>& prefix_tokens,
                                          const Eigen::MatrixXd& selection) const {
    return pre_activation(prefix_tokens, selection);
}

Eigen::MatrixXd BagOfTokensModerator::grad_impl(const std::vector<int>& prefix_tokens,
                                                const Eigen::MatrixXd& selection) const {
    (void)prefix_tokens;
    Eigen::MatrixXd grad(selection.rows(), weights_.size());
    for (Eigen::Index i = 0; i < selection.rows(); ++i) {
        grad.row(i) = weights_.transpose();
    }
    return grad;
}

LogisticTextModerator::LogisticTextModerator(std::string id,
                                             std::shared_ptr<const ToyTokenizer> tok,
                                             Eigen::VectorXd weights, double bias)
    : GradientModeratorHandle(std::move(id), tok->vocab_size(), 0.5),
      tok_(std::move(tok)), weights_(std::move(weights)), bias_(bias) {
    if (weights_.size() != tok_->vocab_size()) {
        throw ShapeMismatch(this->id() + ": weight vector does not match vocabulary");
    }
}

double LogisticTextModerator::score_impl(const std::string& text) const {
    double z = bias_;
    for (int id : tok_->encode(text)) {
        z += weights_[id];
    }
    return sigmoid(z);
}

double LogisticTextModerator::pre_activation(const std::vector<int>& prefix_tokens,
                                             const Eigen::MatrixXd& selection) const {
    double z = bias_;
    for (int id : prefix_tokens) {
        z += weights_[id];
    }
    for (Eigen::Index i = 0; i < selection.rows(); ++i) {
        z += selection.row(i).dot(weights_);
    }
    return z;
}

double LogisticTextModerator::relaxed_impl(const std::vector<int>& prefix_tokens,
                                           const Eigen::MatrixXd& selection) const {
    return sigmoid(pre_activation(prefix_tokens, selection));
}

Eigen::MatrixXd LogisticTextModerator::grad_impl(const std::vector<int>& prefix_tokens,
                                                 const Eigen::MatrixXd& selection) const {
    double p = sigmoid(pre_activation(prefix_tokens, selection));
    double scale = p * (1.0 - p);
    Eigen::MatrixXd grad(selection.rows(), weights_.size());
    for (Eigen::Index i = 0; i < selection.rows(); ++i) {
        grad.row(i) = scale * weights_.transpose();
    }
    return grad;
}

KeywordJudgeModerator::KeywordJudgeModerator(std::string id, std::vector<std::string> keywords)
    : ModeratorHandle(std::move(id), 0, 0.5), keywords_(std::move(keywords)) {}

double KeywordJudgeModerator::score_impl(const std::string& text) const {
    for (const auto& kw : keywords_) {
        if (!kw.empty() && text.find(kw) != std::string::npos) {
            return 1.0;
        }
    }
    return 0.0;
}

std::vector<ModerationExample> synthetic_moderation_corpus(const ToyTokenizer& tok, int count,
                                                           std::uint64_t seed) {
    Rng rng(derive_seed(seed, "moderation-corpus"));
    std::vector<ModerationExample> corpus;
    corpus.reserve(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n) {
        bool unsafe = rng.below(2) == 1;
        int len = 6 + static_cast<int>(rng.below(9));
        std::string text;
        for (int i = 0; i < len; ++i) {
            double r = rng.uniform01();
            int id;
            if (unsafe) {
                if (r < 0.55) {
                    id = static_cast<int>(rng.below(64)); // risk block
                } else if (r < 0.70) {
                    id = 64 + static_cast<int>(rng.below(64)); // calm block
                } else {
                    id = 128 + static_cast<int>(rng.below(128)); // filler block
                }
            } else {
                if (r < 0.05) {
                    id = static_cast<int>(rng.below(64));
                } else if (r < 0.50) {
                    id = 64 + static_cast<int>(rng.below(64));
                } else {
                    id = 128 + static_cast<int>(rng.below(128));
                }
            }
            text += tok.token(id);
        }
        corpus.push_back({std::move(text), unsafe});
    }
    return corpus;
}

std::vector<std::string> synthetic_risky_prompts(const ToyTokenizer& tok, int count,
                                                 std::uint64_t seed, int tokens_per_prompt) {
    Rng rng(derive_seed(seed, "risky-prompts"));
    std::vector<std::string> prompts;
    prompts.reserve(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n) {
        std::string text;
        for (int i = 0; i < tokens_per_prompt; ++i) {
            int id = rng.uniform01() < 0.75 ? static_cast<int>(rng.below(64))
                                            : 128 + static_cast<int>(rng.below(128));
            text += tok.token(id);
        }
        prompts.push_back(std::move(text));
    }
    return prompts;
}

std::shared_ptr<LogisticTextModerator> fit_logistic_moderator(
    std::string id, std::shared_ptr<const ToyTokenizer> tok,
    const std::vector<ModerationExample>& corpus, const FitConfig& config) {
    const int vocab = tok->vocab_size();
    std::vector<std::vector<int>> counts;
    counts.reserve(corpus.size());
    for (const auto& ex : corpus) {
        counts.push_back(token_counts(*tok, ex.text));
    }

    Eigen::VectorXd w = Eigen::VectorXd::Zero(vocab);
    double b = 0.0;
    Rng rng(derive_seed(config.seed, "logistic-fit"));
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        for (std::size_t idx : order) {
            const auto& x = counts[idx];
            double z = b;
            for (int v = 0; v < vocab; ++v) {
                if (x[static_cast<std::size_t>(v)] != 0) {
                    z += w[v] * x[static_cast<std::size_t>(v)];
                }
            }
            double g = sigmoid(z) - (corpus[idx].unsafe ? 1.0 : 0.0);
            for (int v = 0; v < vocab; ++v) {
                double step = g * x[static_cast<std::size_t>(v)] + config.l2 * w[v];
                if (step != 0.0) {
                    w[v] -= config.learning_rate * step;
                }
            }
            b -= config.learning_rate * g;
        }
    }
    return std::make_shared<LogisticTextModerator>(std::move(id), std::move(tok), std::move(w), b);
}

} // namespace redcell
