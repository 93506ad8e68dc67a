#include "redcell/toy_vision.hpp"

#include <cmath>
#include <sstream>

#include "redcell/rng.hpp"

namespace redcell {

namespace {

std::vector<std::string> whitespace_tokens(const std::string& prompt) {
    std::istringstream in(prompt);
    std::vector<std::string> tokens;
    std::string word;
    while (in >> word) {
        tokens.push_back(word);
    }
    return tokens;
}

Eigen::MatrixXd seeded_gaussian(int rows, int cols, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(rows, cols);
    double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            m(r, c) = scale * rng.normal();
        }
    }
    return m;
}

} // namespace

Eigen::MatrixXd hashed_prompt_rows(const std::string& prompt, int dim, std::uint64_t seed) {
    auto tokens = whitespace_tokens(prompt);
    if (tokens.empty()) {
        throw EmptyTarget("prompt has no tokens to embed");
    }
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(tokens.size()), dim);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        Rng rng(derive_seed(seed, "prompt-token", fnv1a64(tokens[t])));
        for (int d = 0; d < dim; ++d) {
            rows(static_cast<Eigen::Index>(t), d) = rng.uniform01();
        }
    }
    return rows;
}

IdentityEncoder::IdentityEncoder(std::string id, int resolution, int slots, int dim,
                                 std::uint64_t text_seed, PixelRange range)
    : EncoderHandle(std::move(id), slots, dim, resolution, range), text_seed_(text_seed) {
    if (slots * dim != resolution * resolution) {
        throw ShapeMismatch(this->id() + ": slots x dim must equal pixel count");
    }
}

Eigen::MatrixXd IdentityEncoder::embed_image_impl(const Image& image) const {
    const int res = input_resolution();
    const int dim = embedding_dim();
    Eigen::MatrixXd out(embedding_slot_count(), dim);
    for (int k = 0; k < res * res; ++k) {
        out(k / dim, k % dim) = image(k / res, k % res);
    }
    return out;
}

Eigen::MatrixXd IdentityEncoder::embed_prompt(const std::string& prompt) const {
    return hashed_prompt_rows(prompt, embedding_dim(), text_seed_);
}

Image IdentityEncoder::image_gradient(const Image& image, const Eigen::MatrixXd& out_grad) const {
    validate_image(image);
    const int res = input_resolution();
    const int dim = embedding_dim();
    if (out_grad.rows() != embedding_slot_count() || out_grad.cols() != dim) {
        throw ShapeMismatch(id() + ": upstream gradient has wrong shape");
    }
    Image grad(res, res);
    for (int k = 0; k < res * res; ++k) {
        grad(k / res, k % res) = out_grad(k / dim, k % dim);
    }
    return grad;
}

PatchMeanEncoder::PatchMeanEncoder(std::string id, int resolution, int patch, int slots, int dim,
                                   std::uint64_t text_seed, PixelRange range)
    : EncoderHandle(std::move(id), slots, dim, resolution, range), patch_(patch),
      text_seed_(text_seed) {
    if (patch <= 0 || resolution % patch != 0) {
        throw ShapeMismatch(this->id() + ": patch size must divide the resolution");
    }
    int grid = resolution / patch;
    if (grid * grid != slots * dim) {
        throw ShapeMismatch(this->id() + ": patch grid must equal slots x dim");
    }
}

Eigen::MatrixXd PatchMeanEncoder::embed_image_impl(const Image& image) const {
    const int grid = input_resolution() / patch_;
    const int dim = embedding_dim();
    const double inv_area = 1.0 / (patch_ * patch_);
    Eigen::MatrixXd out(embedding_slot_count(), dim);
    for (int pr = 0; pr < grid; ++pr) {
        for (int pc = 0; pc < grid; ++pc) {
            double sum = image.block(pr * patch_, pc * patch_, patch_, patch_).sum();
            int k = pr * grid + pc;
            out(k / dim, k % dim) = sum * inv_area;
        }
    }
    return out;
}

Eigen::MatrixXd PatchMeanEncoder::embed_prompt(const std::string& prompt) const {
    return hashed_prompt_rows(prompt, embedding_dim(), text_seed_);
}

Image PatchMeanEncoder::image_gradient(const Image& image, const Eigen::MatrixXd& out_grad) const {
    validate_image(image);
    const int res = input_resolution();
    const int grid = res / patch_;
    const int dim = embedding_dim();
    if (out_grad.rows() != embedding_slot_count() || out_grad.cols() != dim) {
        throw ShapeMismatch(id() + ": upstream gradient has wrong shape");
    }
    const double inv_area = 1.0 / (patch_ * patch_);
    Image grad(res, res);
    for (int pr = 0; pr < grid; ++pr) {
        for (int pc = 0; pc < grid; ++pc) {
            int k = pr * grid + pc;
            grad.block(pr * patch_, pc * patch_, patch_, patch_)
                .setConstant(out_grad(k / dim, k % dim) * inv_area);
        }
    }
    return grad;
}

LinearToyEncoder::LinearToyEncoder(std::string id, const LinearEncoderConfig& config)
    : EncoderHandle(std::move(id), config.slots, config.dim, config.resolution, config.range),
      config_(config) {
    const int pixels = config.resolution * config.resolution;
    const int features = config.slots * config.dim;
    if (features > pixels) {
        throw ShapeMismatch(this->id() + ": feature count exceeds pixel count");
    }
    backbone_ = seeded_gaussian(features, pixels, derive_seed(config.backbone_seed, "backbone"));
    head_ = Eigen::MatrixXd::Identity(features, features) +
            0.2 * seeded_gaussian(features, features, derive_seed(config.head_seed, "head"));
    if (config.head_noise_scale != 0.0) {
        head_ += config.head_noise_scale *
                 seeded_gaussian(features, features,
                                 derive_seed(config.head_seed, "head-noise", config.head_noise_seed));
    }
    text_head_ = seeded_gaussian(config.dim, features, derive_seed(config.pathway_seed, "text-head"));
}

Eigen::MatrixXd LinearToyEncoder::embed_image_impl(const Image& image) const {
    const int res = input_resolution();
    const int dim = embedding_dim();
    Eigen::VectorXd delta(res * res);
    const double mid = pixel_range().mid();
    for (int k = 0; k < res * res; ++k) {
        delta[k] = image(k / res, k % res) - mid;
    }
    Eigen::VectorXd feat = head_ * (backbone_ * delta);
    Eigen::MatrixXd out(embedding_slot_count(), dim);
    for (int k = 0; k < feat.size(); ++k) {
        out(k / dim, k % dim) = feat[k];
    }
    return out;
}

Eigen::MatrixXd LinearToyEncoder::embed_prompt(const std::string& prompt) const {
    auto tokens = whitespace_tokens(prompt);
    if (tokens.empty()) {
        throw EmptyTarget("prompt has no tokens to embed");
    }
    const int features = embedding_slot_count() * embedding_dim();
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(tokens.size()), embedding_dim());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        Rng rng(derive_seed(config_.pathway_seed, "word-feature", fnv1a64(tokens[t])));
        Eigen::VectorXd feature(features);
        double scale = 1.0 / std::sqrt(static_cast<double>(features));
        for (int k = 0; k < features; ++k) {
            feature[k] = scale * rng.normal();
        }
        rows.row(static_cast<Eigen::Index>(t)) = (text_head_ * feature).transpose();
    }
    return rows;
}

Image LinearToyEncoder::image_gradient(const Image& image, const Eigen::MatrixXd& out_grad) const {
    validate_image(image);
    const int res = input_resolution();
    const int dim = embedding_dim();
    if (out_grad.rows() != embedding_slot_count() || out_grad.cols() != dim) {
        throw ShapeMismatch(id() + ": upstream gradient has wrong shape");
    }
    Eigen::VectorXd g(out_grad.size());
    for (int k = 0; k < g.size(); ++k) {
        g[k] = out_grad(k / dim, k % dim);
    }
    Eigen::VectorXd grad_flat = backbone_.transpose() * (head_.transpose() * g);
    Image grad(res, res);
    for (int k = 0; k < res * res; ++k) {
        grad(k / res, k % res) = grad_flat[k];
    }
    return grad;
}

Image mid_gray_image(int resolution, const PixelRange& range) {
    return Image::Constant(resolution, resolution, range.mid());
}

Image seeded_noise_image(int resolution, std::uint64_t seed, const PixelRange& range) {
    Rng rng(seed);
    Image img(resolution, resolution);
    for (int r = 0; r < resolution; ++r) {
        for (int c = 0; c < resolution; ++c) {
            img(r, c) = range.low + (range.high - range.low) * rng.uniform01();
        }
    }
    return img;
}

} // namespace redcell
