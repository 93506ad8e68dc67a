#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "redcell/gateway.hpp"
#include "redcell/rng.hpp"

namespace redcell {

enum class UpdateMode {
    multi_token,     // every candidate resamples all positions from the pool
    single_position, // every candidate changes one position of the incumbent
};

struct SignatureConfig {
    int length = 20;
    std::pair<int, int> stage_split = {15, 5};
    int top_k = 256;
    int candidate_count = 512;
    int max_iterations = 50; // per stage
    double lambda = 1.0;
    bool monotone = true; // false: always adopt the round's best candidate
    UpdateMode update_mode = UpdateMode::multi_token;
    bool exhaustive_candidates = false; // enumerate the full pool cross product
    std::string init_charset = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    std::uint64_t seed = 0;
};

void validate(const SignatureConfig& config);

/// Uniform characters from the charset, tokenized by the target handle.
/// The sampled string must tokenize to exactly `length` ids.
std::vector<int> init_signature(const ToyTokenizer& tok, int length, const std::string& charset,
                                Rng& rng);

Eigen::MatrixXd one_hot_selection(const std::vector<int>& ids, int vocab_size);

/// Per position, the top_k token ids ranked by steepest loss descent
/// (most negative gradient first, lower id breaking ties).
std::vector<std::vector<int>> candidate_pool(const Eigen::MatrixXd& grad, int top_k);

/// candidate_count rows; entry (j, i) picks a pool column for position i.
/// Kept as indices into the pool so replays stay audit-friendly.
std::vector<std::vector<int>> sample_candidates(int positions, int pool_width, int candidate_count,
                                                Rng& rng);

/// Combined objective: target score plus lambda times the weak handle's
/// score of the same text. lambda == 0 or a missing weak handle skips the
/// second call entirely.
double weakly_supervised_loss(const ModeratorHandle& target, const ModeratorHandle* weak,
                              double lambda, const std::string& text);

std::string assemble_signature_text(const std::string& prefix, const std::string& signature);

struct StageState {
    std::vector<int> tokens;
    double loss = 0.0;
    int iteration = 0;
    std::vector<double> history; // incumbent loss after each iteration, index 0 is init
    int drift_discards = 0;
    int noop_steps = 0;
    bool early_stopped = false;
};

struct StageContext {
    const GradientModeratorHandle* target = nullptr;
    const ModeratorHandle* weak = nullptr;
    double lambda = 0.0;
    std::string prefix;
    std::string stage_label;
};

StageState init_stage(const StageContext& ctx, int length, const SignatureConfig& config);

/// One optimization round: gradient at the incumbent, pool, candidates,
/// text-level re-scoring, then retention. Candidates whose decoded text
/// does not re-encode to the same ids are discarded; if every candidate
/// drifts the round is a no-op apart from the iteration counter.
void stage_step(const StageContext& ctx, const SignatureConfig& config, StageState& state);

/// Whether the stage's own target already rules the assembled text safe.
bool stage_target_safe(const StageContext& ctx, const StageState& state);

struct StageReport {
    std::vector<int> tokens;
    std::string text;
    double loss = 0.0;
    std::vector<double> history;
    int iterations = 0;
    bool early_stopped = false;
    bool no_improvement = false;
    int drift_discards = 0;
    int noop_steps = 0;
};

StageReport finalize_stage(const StageContext& ctx, const StageState& state);

StageReport run_stage(const StageContext& ctx, int length, const SignatureConfig& config);

struct SignatureResult {
    StageReport stage1;
    std::optional<StageReport> stage2;
    std::string signature_text;
    bool no_improvement = false; // no stage improved and none early-stopped
};

/// Stage one drives the gradient handle with the second moderator as a
/// weak term; stage two freezes the stage-one text, swaps the roles, and
/// appends its own block. Each stage stops early once its own target
/// verdict turns safe.
SignatureResult optimize_two_stage(const GradientModeratorHandle& m1,
                                   const GradientModeratorHandle* m2, const std::string& prompt,
                                   const SignatureConfig& config);

} // namespace redcell
