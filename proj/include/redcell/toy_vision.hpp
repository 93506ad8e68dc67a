#pragma once

#include <cstdint>
#include <string>

#include "redcell/gateway.hpp"

namespace redcell {

/// Embedding rows for prompt tokens drawn deterministically from a hash of
/// (seed, token). Values lie in [0, 1] so pixel-valued encoders can reach
/// them exactly.
Eigen::MatrixXd hashed_prompt_rows(const std::string& prompt, int dim, std::uint64_t seed);

/// Row-major reshape of the image into (slots x dim); requires
/// slots * dim == resolution^2. The Jacobian is a permutation, which makes
/// this the reference backend for gradient checks.
class IdentityEncoder final : public EncoderHandle {
public:
    IdentityEncoder(std::string id, int resolution, int slots, int dim,
                    std::uint64_t text_seed = 101, PixelRange range = {});

    Eigen::MatrixXd embed_prompt(const std::string& prompt) const override;
    bool differentiable() const override { return true; }
    Image image_gradient(const Image& image, const Eigen::MatrixXd& out_grad) const override;

protected:
    Eigen::MatrixXd embed_image_impl(const Image& image) const override;

private:
    std::uint64_t text_seed_;
};

/// Non-overlapping square patches averaged to one value each, packed
/// row-major into (slots x dim); requires (resolution / patch)^2 == slots * dim.
class PatchMeanEncoder final : public EncoderHandle {
public:
    PatchMeanEncoder(std::string id, int resolution, int patch, int slots, int dim,
                     std::uint64_t text_seed = 202, PixelRange range = {});

    Eigen::MatrixXd embed_prompt(const std::string& prompt) const override;
    bool differentiable() const override { return true; }
    Image image_gradient(const Image& image, const Eigen::MatrixXd& out_grad) const override;

protected:
    Eigen::MatrixXd embed_image_impl(const Image& image) const override;

private:
    int patch_;
    std::uint64_t text_seed_;
};

struct LinearEncoderConfig {
    int resolution = 32;
    int slots = 16;
    int dim = 4;
    std::uint64_t backbone_seed = 1;
    std::uint64_t head_seed = 2;
    std::uint64_t pathway_seed = 3;
    double head_noise_scale = 0.0;
    std::uint64_t head_noise_seed = 0;
    PixelRange range = {};
};

/// Random linear vision backbone with a per-model head on top and a text
/// pathway tied to pathway_seed. Two encoders sharing backbone and pathway
/// seeds but differing by a small head perturbation behave like sibling
/// checkpoints of one family; fully distinct seeds give an unrelated model.
class LinearToyEncoder final : public EncoderHandle {
public:
    LinearToyEncoder(std::string id, const LinearEncoderConfig& config);

    Eigen::MatrixXd embed_prompt(const std::string& prompt) const override;
    bool differentiable() const override { return true; }
    Image image_gradient(const Image& image, const Eigen::MatrixXd& out_grad) const override;

    const LinearEncoderConfig& config() const { return config_; }

protected:
    Eigen::MatrixXd embed_image_impl(const Image& image) const override;

private:
    LinearEncoderConfig config_;
    Eigen::MatrixXd backbone_; // feature_dim x pixels
    Eigen::MatrixXd head_;     // feature_dim x feature_dim
    Eigen::MatrixXd text_head_; // dim x feature_dim
};

Image mid_gray_image(int resolution, const PixelRange& range = {});
Image seeded_noise_image(int resolution, std::uint64_t seed, const PixelRange& range = {});

} // namespace redcell
