#pragma once

#include <Eigen/Dense>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "redcell/errors.hpp"
#include "redcell/tokenizer.hpp"

namespace redcell {

using Image = Eigen::MatrixXd; // square, single channel, values in the handle's pixel range

enum class Verdict { safe, unsafe };

inline const char* to_string(Verdict v) { return v == Verdict::safe ? "safe" : "unsafe"; }

struct PixelRange {
    double low = 0.0;
    double high = 1.0;
    double mid() const { return 0.5 * (low + high); }
};

struct ChatMessage {
    std::string role; // "system" | "user" | "assistant"
    std::string content;
};

/// Content moderator: scalar loss toward the "safe" label plus a thresholded
/// verdict. Lower score means the moderator is more convinced the text is
/// safe; verdict is unsafe iff score > verdict_threshold.
class ModeratorHandle {
public:
    virtual ~ModeratorHandle() = default;

    const std::string& id() const { return id_; }
    int vocabulary_size() const { return vocabulary_size_; }
    double verdict_threshold() const { return verdict_threshold_; }
    bool concurrent_scoring() const { return concurrent_scoring_; }

    double score_text(const std::string& text) const {
        if (max_input_chars_ > 0 && text.size() > static_cast<std::size_t>(max_input_chars_)) {
            throw InputTooLong(id_ + ": input of " + std::to_string(text.size()) +
                               " chars exceeds context of " + std::to_string(max_input_chars_));
        }
        return score_impl(text);
    }

    Verdict verdict(const std::string& text) const {
        return score_text(text) > verdict_threshold_ ? Verdict::unsafe : Verdict::safe;
    }

    /// Handle-owned tokenizer; null for backends that do not expose one.
    virtual const ToyTokenizer* tokenizer() const { return nullptr; }

protected:
    ModeratorHandle(std::string id, int vocabulary_size, double verdict_threshold,
                    bool concurrent_scoring = true, long max_input_chars = 0)
        : id_(std::move(id)),
          vocabulary_size_(vocabulary_size),
          verdict_threshold_(verdict_threshold),
          concurrent_scoring_(concurrent_scoring),
          max_input_chars_(max_input_chars) {}

    virtual double score_impl(const std::string& text) const = 0;

private:
    std::string id_;
    int vocabulary_size_;
    double verdict_threshold_;
    bool concurrent_scoring_;
    long max_input_chars_;
};

/// Moderator that additionally exposes the loss gradient with respect to a
/// relaxed (continuous) token-selection matrix of shape (length x |V|).
/// Gradient calls are serialized per handle; scoring stays concurrent.
class GradientModeratorHandle : public ModeratorHandle {
public:
    /// d loss / d selection[i][v], all entries finite.
    Eigen::MatrixXd grad_wrt_selection(const std::vector<int>& prefix_tokens,
                                       const Eigen::MatrixXd& selection) const {
        check_selection(selection);
        std::lock_guard<std::mutex> lock(grad_mutex_);
        return grad_impl(prefix_tokens, selection);
    }

    /// Loss under a continuous selection; coincides with score_text on
    /// one-hot rows. Finite-difference oracles probe this surface.
    double relaxed_score(const std::vector<int>& prefix_tokens,
                         const Eigen::MatrixXd& selection) const {
        check_selection(selection);
        return relaxed_impl(prefix_tokens, selection);
    }

    const ToyTokenizer* tokenizer() const override = 0;

protected:
    using ModeratorHandle::ModeratorHandle;

    virtual Eigen::MatrixXd grad_impl(const std::vector<int>& prefix_tokens,
                                      const Eigen::MatrixXd& selection) const = 0;
    virtual double relaxed_impl(const std::vector<int>& prefix_tokens,
                                const Eigen::MatrixXd& selection) const = 0;

private:
    void check_selection(const Eigen::MatrixXd& selection) const {
        if (selection.cols() != vocabulary_size()) {
            throw ShapeMismatch(id() + ": selection has " + std::to_string(selection.cols()) +
                                " columns, vocabulary is " + std::to_string(vocabulary_size()));
        }
    }

    mutable std::mutex grad_mutex_;
};

/// Vision/text encoder pair behind one handle: images map to a fixed
/// (slot_count x dim) embedding matrix, token sequences map to one row per
/// token. Differentiable backends also expose a vector-Jacobian product so
/// callers can pull scalar objectives back to pixel space.
class EncoderHandle {
public:
    virtual ~EncoderHandle() = default;

    const std::string& id() const { return id_; }
    int embedding_slot_count() const { return slot_count_; }
    int embedding_dim() const { return dim_; }
    int input_resolution() const { return resolution_; }
    const PixelRange& pixel_range() const { return range_; }

    Eigen::MatrixXd embed_image(const Image& image) const {
        validate_image(image);
        return embed_image_impl(image);
    }

    /// One embedding row per whitespace-separated token of the prompt.
    virtual Eigen::MatrixXd embed_prompt(const std::string& prompt) const = 0;

    virtual bool differentiable() const { return false; }

    /// VJP: gradient w.r.t. pixels of sum(out_grad .* embed_image(image)).
    virtual Image image_gradient(const Image& image, const Eigen::MatrixXd& out_grad) const {
        (void)image;
        (void)out_grad;
        throw NotDifferentiable(id_ + ": encoder backend exposes no image gradient");
    }

    void validate_image(const Image& image) const {
        if (image.rows() != resolution_ || image.cols() != resolution_) {
            throw ResolutionMismatch(id_ + ": expected " + std::to_string(resolution_) + "x" +
                                     std::to_string(resolution_) + ", got " +
                                     std::to_string(image.rows()) + "x" +
                                     std::to_string(image.cols()));
        }
        if (image.minCoeff() < range_.low - 1e-12 || image.maxCoeff() > range_.high + 1e-12) {
            throw PixelRangeViolation(id_ + ": pixels outside [" + std::to_string(range_.low) +
                                      ", " + std::to_string(range_.high) + "]");
        }
    }

protected:
    EncoderHandle(std::string id, int slot_count, int dim, int resolution, PixelRange range)
        : id_(std::move(id)), slot_count_(slot_count), dim_(dim), resolution_(resolution),
          range_(range) {}

    virtual Eigen::MatrixXd embed_image_impl(const Image& image) const = 0;

private:
    std::string id_;
    int slot_count_;
    int dim_;
    int resolution_;
    PixelRange range_;
};

class ChatModelHandle {
public:
    virtual ~ChatModelHandle() = default;

    const std::string& id() const { return id_; }
    bool accepts_images() const { return accepts_images_; }
    const std::string& system_prompt() const { return system_prompt_; }

    /// Total on any (messages, optional image) input; returns a finite string.
    virtual std::string generate(const std::vector<ChatMessage>& messages,
                                 const std::optional<Image>& image) const = 0;

protected:
    ChatModelHandle(std::string id, std::string system_prompt, bool accepts_images)
        : id_(std::move(id)), system_prompt_(std::move(system_prompt)),
          accepts_images_(accepts_images) {}

private:
    std::string id_;
    std::string system_prompt_;
    bool accepts_images_;
};

/// Single scalar reward over a (prompt, response) pair; deterministic given
/// fixed backend state.
class RewardHandle {
public:
    virtual ~RewardHandle() = default;

    const std::string& id() const { return id_; }
    bool concurrent_scoring() const { return concurrent_scoring_; }

    virtual double reward_score(const std::string& prompt, const std::string& response) const = 0;

protected:
    explicit RewardHandle(std::string id, bool concurrent_scoring = true)
        : id_(std::move(id)), concurrent_scoring_(concurrent_scoring) {}

private:
    std::string id_;
    bool concurrent_scoring_;
};

using ModeratorPtr = std::shared_ptr<const ModeratorHandle>;
using GradientModeratorPtr = std::shared_ptr<const GradientModeratorHandle>;
using EncoderPtr = std::shared_ptr<const EncoderHandle>;
using ChatModelPtr = std::shared_ptr<const ChatModelHandle>;
using RewardPtr = std::shared_ptr<const RewardHandle>;

} // namespace redcell
