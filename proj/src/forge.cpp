#include "redcell/forge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace redcell {

void validate(const SignatureConfig& config) {
    if (config.length <= 0) {
        throw InvalidLength("signature length must be positive");
    }
    if (config.stage_split.first <= 0 || config.stage_split.second < 0 ||
        config.stage_split.first + config.stage_split.second != config.length) {
        throw InvalidLength("stage split must be positive-first and sum to the length");
    }
    if (config.top_k <= 0) {
        throw SpecInvalid("top_k must be positive");
    }
    if (config.candidate_count <= 0) {
        throw SpecInvalid("candidate_count must be positive");
    }
    if (config.max_iterations < 0) {
        throw SpecInvalid("max_iterations must be non-negative");
    }
    if (config.init_charset.empty()) {
        throw SpecInvalid("init charset must not be empty");
    }
}

std::vector<int> init_signature(const ToyTokenizer& tok, int length, const std::string& charset,
                                Rng& rng) {
    if (length < 1) {
        throw InvalidLength("signature length must be positive");
    }
    std::string text;
    text.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        text += charset[rng.below(charset.size())];
    }
    auto ids = tok.encode(text);
    if (static_cast<int>(ids.size()) != length) {
        throw TokenizerIncompatible("init charset does not tokenize one id per character");
    }
    return ids;
}

Eigen::MatrixXd one_hot_selection(const std::vector<int>& ids, int vocab_size) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ids.size()), vocab_size);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab_size) {
            throw ShapeMismatch("token id outside vocabulary");
        }
        s(static_cast<Eigen::Index>(i), ids[i]) = 1.0;
    }
    return s;
}

std::vector<std::vector<int>> candidate_pool(const Eigen::MatrixXd& grad, int top_k) {
    const int vocab = static_cast<int>(grad.cols());
    if (top_k > vocab) {
        throw KTooLarge("top_k of " + std::to_string(top_k) + " exceeds vocabulary of " +
                        std::to_string(vocab));
    }
    std::vector<std::vector<int>> pool(static_cast<std::size_t>(grad.rows()));
    std::vector<int> order(static_cast<std::size_t>(vocab));
    for (Eigen::Index i = 0; i < grad.rows(); ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (grad(i, a) != grad(i, b)) {
                return grad(i, a) < grad(i, b);
            }
            return a < b;
        });
        pool[static_cast<std::size_t>(i)].assign(order.begin(), order.begin() + top_k);
    }
    return pool;
}

std::vector<std::vector<int>> sample_candidates(int positions, int pool_width, int candidate_count,
                                                Rng& rng) {
    std::vector<std::vector<int>> picks(static_cast<std::size_t>(candidate_count),
                                        std::vector<int>(static_cast<std::size_t>(positions)));
    for (auto& row : picks) {
        for (auto& cell : row) {
            cell = static_cast<int>(rng.below(static_cast<std::uint64_t>(pool_width)));
        }
    }
    return picks;
}

double weakly_supervised_loss(const ModeratorHandle& target, const ModeratorHandle* weak,
                              double lambda, const std::string& text) {
    double loss = target.score_text(text);
    if (weak != nullptr && lambda != 0.0) {
        loss += lambda * weak->score_text(text);
    }
    return loss;
}

std::string assemble_signature_text(const std::string& prefix, const std::string& signature) {
    if (prefix.empty()) {
        return signature;
    }
    return prefix + " " + signature;
}

namespace {

const ToyTokenizer& stage_tokenizer(const StageContext& ctx) {
    const ToyTokenizer* tok = ctx.target->tokenizer();
    if (tok == nullptr) {
        throw TokenizerIncompatible(ctx.target->id() + ": gradient target exposes no tokenizer");
    }
    return *tok;
}

double incumbent_loss(const StageContext& ctx, const ToyTokenizer& tok,
                      const std::vector<int>& tokens) {
    std::string full = assemble_signature_text(ctx.prefix, tok.decode(tokens));
    return weakly_supervised_loss(*ctx.target, ctx.weak, ctx.lambda, full);
}

std::vector<std::vector<int>> exhaustive_pool_product(const std::vector<std::vector<int>>& pool) {
    double combos = 1.0;
    for (const auto& row : pool) {
        combos *= static_cast<double>(row.size());
    }
    if (combos > 2e6) {
        throw Error("exhaustive candidate enumeration would exceed 2e6 combinations");
    }
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<std::size_t>(combos));
    std::vector<std::size_t> idx(pool.size(), 0);
    while (true) {
        std::vector<int> cand(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            cand[i] = pool[i][idx[i]];
        }
        out.push_back(std::move(cand));
        std::size_t p = pool.size();
        while (p > 0) {
            --p;
            if (++idx[p] < pool[p].size()) {
                break;
            }
            idx[p] = 0;
            if (p == 0) {
                return out;
            }
        }
    }
}

} // namespace

StageState init_stage(const StageContext& ctx, int length, const SignatureConfig& config) {
    const ToyTokenizer& tok = stage_tokenizer(ctx);
    Rng rng(derive_seed(config.seed, ctx.stage_label, "init"));
    StageState state;
    state.tokens = init_signature(tok, length, config.init_charset, rng);
    state.loss = incumbent_loss(ctx, tok, state.tokens);
    state.history.push_back(state.loss);
    return state;
}

void stage_step(const StageContext& ctx, const SignatureConfig& config, StageState& state) {
    const ToyTokenizer& tok = stage_tokenizer(ctx);
    const int length = static_cast<int>(state.tokens.size());
    Rng rng(derive_seed(config.seed, ctx.stage_label + "-iter",
                        static_cast<std::uint64_t>(state.iteration)));

    std::vector<int> prefix_ids = tok.encode(ctx.prefix);
    Eigen::MatrixXd grad = ctx.target->grad_wrt_selection(
        prefix_ids, one_hot_selection(state.tokens, ctx.target->vocabulary_size()));
    auto pool = candidate_pool(grad, config.top_k);

    std::vector<std::vector<int>> candidates;
    if (config.update_mode == UpdateMode::single_position) {
        candidates.reserve(static_cast<std::size_t>(config.candidate_count));
        for (int j = 0; j < config.candidate_count; ++j) {
            auto cand = state.tokens;
            int pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(length)));
            cand[static_cast<std::size_t>(pos)] =
                pool[static_cast<std::size_t>(pos)]
                    [rng.below(static_cast<std::uint64_t>(config.top_k))];
            candidates.push_back(std::move(cand));
        }
    } else if (config.exhaustive_candidates) {
        candidates = exhaustive_pool_product(pool);
    } else {
        auto picks = sample_candidates(length, config.top_k, config.candidate_count, rng);
        candidates.reserve(picks.size());
        for (const auto& row : picks) {
            std::vector<int> cand(row.size());
            for (std::size_t i = 0; i < row.size(); ++i) {
                cand[i] = pool[i][static_cast<std::size_t>(row[i])];
            }
            candidates.push_back(std::move(cand));
        }
    }

    double best_loss = std::numeric_limits<double>::infinity();
    const std::vector<int>* best = nullptr;
    for (const auto& cand : candidates) {
        std::string text = tok.decode(cand);
        if (tok.encode(text) != cand) {
            state.drift_discards += 1;
            continue;
        }
        double loss = weakly_supervised_loss(*ctx.target, ctx.weak, ctx.lambda,
                                             assemble_signature_text(ctx.prefix, text));
        if (loss < best_loss) {
            best_loss = loss;
            best = &cand;
        }
    }

    state.iteration += 1;
    if (best == nullptr) {
        state.noop_steps += 1;
    } else if (!config.monotone || best_loss < state.loss) {
        state.tokens = *best;
        state.loss = best_loss;
    }
    state.history.push_back(state.loss);
}

bool stage_target_safe(const StageContext& ctx, const StageState& state) {
    const ToyTokenizer& tok = stage_tokenizer(ctx);
    std::string full = assemble_signature_text(ctx.prefix, tok.decode(state.tokens));
    return ctx.target->verdict(full) == Verdict::safe;
}

StageReport finalize_stage(const StageContext& ctx, const StageState& state) {
    const ToyTokenizer& tok = stage_tokenizer(ctx);
    StageReport report;
    report.tokens = state.tokens;
    report.text = tok.decode(state.tokens);
    report.loss = state.loss;
    report.history = state.history;
    report.iterations = state.iteration;
    report.early_stopped = state.early_stopped;
    report.drift_discards = state.drift_discards;
    report.noop_steps = state.noop_steps;
    double best_seen = *std::min_element(state.history.begin(), state.history.end());
    report.no_improvement = !state.early_stopped && best_seen >= state.history.front();
    return report;
}

StageReport run_stage(const StageContext& ctx, int length, const SignatureConfig& config) {
    StageState state = init_stage(ctx, length, config);
    state.early_stopped = stage_target_safe(ctx, state);
    while (!state.early_stopped && state.iteration < config.max_iterations) {
        stage_step(ctx, config, state);
        if (stage_target_safe(ctx, state)) {
            state.early_stopped = true;
        }
    }
    return finalize_stage(ctx, state);
}

SignatureResult optimize_two_stage(const GradientModeratorHandle& m1,
                                   const GradientModeratorHandle* m2, const std::string& prompt,
                                   const SignatureConfig& config) {
    validate(config);

    StageContext ctx1;
    ctx1.target = &m1;
    ctx1.weak = m2;
    ctx1.lambda = config.lambda;
    ctx1.prefix = prompt;
    ctx1.stage_label = "stage1";

    SignatureResult result;
    result.stage1 = run_stage(ctx1, config.stage_split.first, config);
    result.signature_text = result.stage1.text;

    if (config.stage_split.second > 0 && m2 != nullptr) {
        StageContext ctx2;
        ctx2.target = m2;
        ctx2.weak = &m1;
        ctx2.lambda = config.lambda;
        ctx2.prefix = assemble_signature_text(prompt, result.stage1.text);
        ctx2.stage_label = "stage2";
        result.stage2 = run_stage(ctx2, config.stage_split.second, config);
        result.signature_text =
            assemble_signature_text(result.stage1.text, result.stage2->text);
    }

    result.no_improvement = result.stage1.no_improvement &&
                            (!result.stage2 || result.stage2->no_improvement);
    return result;
}

} // namespace redcell
