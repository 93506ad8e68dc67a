#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "redcell/gateway.hpp"

namespace redcell {

struct PGDConfig {
    int iterations = 50;
    double epsilon = 128.0 / 255.0;
    double alpha = 0.0; // values <= 0 resolve to epsilon / 10

    double effective_alpha() const { return alpha > 0.0 ? alpha : epsilon / 10.0; }
};

/// Settings tuned for 224px and 448px inputs.
PGDConfig pgd_preset_224();
PGDConfig pgd_preset_448();

/// Repeat the prompt-token rows cyclically until slot_count rows are
/// filled, truncating any overshoot.
Eigen::MatrixXd tile_target(const Eigen::MatrixXd& rows, int slot_count);

/// Cosine similarity between two embedding matrices flattened to vectors.
double cosine_objective(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Gradient of cosine_objective(embed(x), target) with respect to pixels.
Image cosine_pixel_gradient(const EncoderHandle& encoder, const Image& x,
                            const Eigen::MatrixXd& target);

/// One ascent step: x + alpha * sign(grad), projected onto the infinity
/// ball of radius epsilon around base, then clipped to the pixel range.
Image pgd_step(const Image& x, const Image& grad, const Image& base, double alpha, double epsilon,
               const PixelRange& range);

struct AlignmentState {
    Image x;
    int iteration = 0;
    std::vector<double> cosine_history;
};

struct AlignmentResult {
    std::string encoder_id;
    std::string target_prompt;
    Image base;
    Image perturbation;
    Image delivered; // base + perturbation, the image artifacts describe
    Eigen::MatrixXd target;
    std::vector<double> cosine_history; // iterations + 1 entries, index 0 is the base
    double final_cosine = 0.0;
};

AlignmentState init_alignment(const EncoderHandle& encoder, const Eigen::MatrixXd& target,
                              const Image& base);
void alignment_step(const EncoderHandle& encoder, const Eigen::MatrixXd& target, const Image& base,
                    const PGDConfig& config, AlignmentState& state);
AlignmentResult finish_alignment(const EncoderHandle& encoder, const std::string& target_prompt,
                                 const Eigen::MatrixXd& target, const Image& base,
                                 AlignmentState state);

/// Full run: tile the encoder's own embedding of the prompt, ascend for
/// exactly config.iterations steps, recompose the delivered image from
/// base plus perturbation before the final score.
AlignmentResult optimize_image(const EncoderHandle& encoder, const std::string& target_prompt,
                               const Image& base, const PGDConfig& config);

struct AlignmentArtifacts {
    std::filesystem::path png;
    std::filesystem::path base_npy;
    std::filesystem::path perturbation_npy;
    std::filesystem::path metadata_json;
};

/// adversarial.png (8-bit view), base.npy and perturbation.npy (exact
/// float64), metadata.json (config, history, digests). Byte-stable for
/// identical results.
AlignmentArtifacts write_alignment_artifacts(const std::filesystem::path& dir,
                                             const AlignmentResult& result,
                                             const EncoderHandle& encoder, const PGDConfig& config,
                                             std::uint64_t seed);

struct TransferEntry {
    std::string encoder_id;
    bool evaluated = false;
    double cosine = 0.0;
    std::string note;
};

struct TransferReport {
    bool digests_ok = false;
    bool self_checked = false;
    bool self_consistent = false; // recomputed source cosine equals metadata bit for bit
    double recomputed_final_cosine = 0.0;
    std::string source_encoder_id;
    std::string target_prompt;
    std::vector<TransferEntry> entries;
};

/// Rebuild the delivered image from the stored artifacts, verify digests,
/// and score it against each candidate encoder's own embedding of the
/// stored target prompt. Encoders with a different input resolution are
/// reported as not evaluated rather than resized.
TransferReport transfer_eval(const std::filesystem::path& artifact_dir,
                             const std::vector<EncoderPtr>& encoders);

} // namespace redcell
