#include "redcell/align.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>

#include "redcell/digest.hpp"
#include "redcell/npy.hpp"
#include "redcell/png_io.hpp"

namespace redcell {

using nlohmann::json;

PGDConfig pgd_preset_224() { return PGDConfig{50, 128.0 / 255.0, 0.0}; }
PGDConfig pgd_preset_448() { return PGDConfig{100, 64.0 / 255.0, 0.0}; }

Eigen::MatrixXd tile_target(const Eigen::MatrixXd& rows, int slot_count) {
    if (rows.rows() == 0 || rows.cols() == 0) {
        throw EmptyTarget("target has no embedding rows to tile");
    }
    if (slot_count <= 0) {
        throw ShapeMismatch("slot count must be positive");
    }
    Eigen::MatrixXd out(slot_count, rows.cols());
    for (int s = 0; s < slot_count; ++s) {
        out.row(s) = rows.row(s % rows.rows());
    }
    return out;
}

double cosine_objective(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeMismatch("cosine operands differ in shape");
    }
    double na = a.norm();
    double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw ZeroNormEmbedding("cosine undefined for zero-norm embedding");
    }
    return (a.array() * b.array()).sum() / (na * nb);
}

Image cosine_pixel_gradient(const EncoderHandle& encoder, const Image& x,
                            const Eigen::MatrixXd& target) {
    Eigen::MatrixXd e = encoder.embed_image(x);
    if (e.rows() != target.rows() || e.cols() != target.cols()) {
        throw ShapeMismatch("target shape does not match encoder output");
    }
    double ne = e.norm();
    double nt = target.norm();
    if (ne == 0.0 || nt == 0.0) {
        throw ZeroNormEmbedding("cosine gradient undefined for zero-norm embedding");
    }
    double dot = (e.array() * target.array()).sum();
    Eigen::MatrixXd out_grad = target / (ne * nt) - (dot / (ne * ne * ne * nt)) * e;
    return encoder.image_gradient(x, out_grad);
}

Image pgd_step(const Image& x, const Image& grad, const Image& base, double alpha, double epsilon,
               const PixelRange& range) {
    if (x.rows() != grad.rows() || x.cols() != grad.cols() || x.rows() != base.rows() ||
        x.cols() != base.cols()) {
        throw ShapeMismatch("pgd operands differ in shape");
    }
    Image next(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            double g = grad(r, c);
            double step = g > 0.0 ? alpha : (g < 0.0 ? -alpha : 0.0);
            double v = x(r, c) + step;
            v = std::min(base(r, c) + epsilon, std::max(base(r, c) - epsilon, v));
            v = std::min(range.high, std::max(range.low, v));
            next(r, c) = v;
        }
    }
    return next;
}

AlignmentState init_alignment(const EncoderHandle& encoder, const Eigen::MatrixXd& target,
                              const Image& base) {
    AlignmentState state;
    state.x = base;
    state.iteration = 0;
    state.cosine_history.push_back(cosine_objective(encoder.embed_image(base), target));
    return state;
}

void alignment_step(const EncoderHandle& encoder, const Eigen::MatrixXd& target, const Image& base,
                    const PGDConfig& config, AlignmentState& state) {
    Image grad = cosine_pixel_gradient(encoder, state.x, target);
    state.x = pgd_step(state.x, grad, base, config.effective_alpha(), config.epsilon,
                       encoder.pixel_range());
    state.iteration += 1;
    state.cosine_history.push_back(cosine_objective(encoder.embed_image(state.x), target));
}

AlignmentResult finish_alignment(const EncoderHandle& encoder, const std::string& target_prompt,
                                 const Eigen::MatrixXd& target, const Image& base,
                                 AlignmentState state) {
    AlignmentResult result;
    result.encoder_id = encoder.id();
    result.target_prompt = target_prompt;
    result.base = base;
    result.perturbation = state.x - base;
    result.delivered = base + result.perturbation;
    result.target = target;
    result.cosine_history = std::move(state.cosine_history);
    result.final_cosine = cosine_objective(encoder.embed_image(result.delivered), target);
    return result;
}

AlignmentResult optimize_image(const EncoderHandle& encoder, const std::string& target_prompt,
                               const Image& base, const PGDConfig& config) {
    encoder.validate_image(base);
    Eigen::MatrixXd target =
        tile_target(encoder.embed_prompt(target_prompt), encoder.embedding_slot_count());
    AlignmentState state = init_alignment(encoder, target, base);
    for (int t = 0; t < config.iterations; ++t) {
        alignment_step(encoder, target, base, config, state);
    }
    return finish_alignment(encoder, target_prompt, target, base, std::move(state));
}

AlignmentArtifacts write_alignment_artifacts(const std::filesystem::path& dir,
                                             const AlignmentResult& result,
                                             const EncoderHandle& encoder, const PGDConfig& config,
                                             std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    AlignmentArtifacts paths{dir / "adversarial.png", dir / "base.npy", dir / "perturbation.npy",
                             dir / "metadata.json"};

    const PixelRange& range = encoder.pixel_range();
    write_gray8_png(paths.png, result.delivered, range);
    save_npy(paths.base_npy, result.base);
    save_npy(paths.perturbation_npy, result.perturbation);

    double post_quant =
        cosine_objective(encoder.embed_image(quantize_gray8(result.delivered, range)),
                         result.target);

    json meta;
    meta["encoder_id"] = result.encoder_id;
    meta["target_prompt"] = result.target_prompt;
    meta["seed"] = seed;
    meta["resolution"] = encoder.input_resolution();
    meta["pixel_range"] = {{"low", range.low}, {"high", range.high}};
    meta["config"] = {{"iterations", config.iterations},
                      {"epsilon", config.epsilon},
                      {"alpha", config.effective_alpha()}};
    meta["cosine_history"] = result.cosine_history;
    meta["final_cosine"] = result.final_cosine;
    meta["post_quantization_cosine"] = post_quant;
    meta["digests"] = {{"adversarial.png", sha256_hex_file(paths.png)},
                       {"base.npy", sha256_hex_file(paths.base_npy)},
                       {"perturbation.npy", sha256_hex_file(paths.perturbation_npy)}};

    std::ofstream out(paths.metadata_json, std::ios::trunc);
    out << meta.dump(2) << "\n";
    if (!out) {
        throw std::runtime_error("cannot write " + paths.metadata_json.string());
    }
    return paths;
}

TransferReport transfer_eval(const std::filesystem::path& artifact_dir,
                             const std::vector<EncoderPtr>& encoders) {
    std::ifstream in(artifact_dir / "metadata.json");
    if (!in) {
        throw std::runtime_error("missing metadata.json in " + artifact_dir.string());
    }
    json meta = json::parse(in);

    TransferReport report;
    report.source_encoder_id = meta.at("encoder_id").get<std::string>();
    report.target_prompt = meta.at("target_prompt").get<std::string>();

    report.digests_ok = true;
    for (const auto& [name, digest] : meta.at("digests").items()) {
        if (sha256_hex_file(artifact_dir / name) != digest.get<std::string>()) {
            report.digests_ok = false;
        }
    }
    if (!report.digests_ok) {
        return report; // tampered artifacts are reported, never evaluated
    }

    Image base = load_npy(artifact_dir / "base.npy");
    Image perturbation = load_npy(artifact_dir / "perturbation.npy");
    if (base.rows() != perturbation.rows() || base.cols() != perturbation.cols()) {
        throw ShapeMismatch("base and perturbation artifacts differ in shape");
    }
    Image delivered = base + perturbation;

    for (const auto& encoder : encoders) {
        TransferEntry entry;
        entry.encoder_id = encoder->id();
        if (encoder->input_resolution() != delivered.rows() ||
            encoder->input_resolution() != delivered.cols()) {
            entry.note = "resolution mismatch, not evaluated";
            report.entries.push_back(std::move(entry));
            continue;
        }
        Eigen::MatrixXd target = tile_target(encoder->embed_prompt(report.target_prompt),
                                             encoder->embedding_slot_count());
        entry.cosine = cosine_objective(encoder->embed_image(delivered), target);
        entry.evaluated = true;
        report.entries.push_back(std::move(entry));

        if (encoder->id() == report.source_encoder_id) {
            report.self_checked = true;
            report.recomputed_final_cosine = report.entries.back().cosine;
            double stored = meta.at("final_cosine").get<double>();
            report.self_consistent = report.recomputed_final_cosine == stored;
        }
    }
    return report;
}

} // namespace redcell
