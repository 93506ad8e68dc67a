#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "redcell/gateway.hpp"
#include "redcell/toy_text.hpp"

namespace redcell {

/// Save fitted moderator weights as a standalone JSON asset.
void save_moderator_weights(const std::filesystem::path& path, const BagOfTokensModerator& m);
void save_moderator_weights(const std::filesystem::path& path, const LogisticTextModerator& m);
GradientModeratorPtr load_moderator_weights(const std::string& id,
                                            const std::filesystem::path& path);

/// Named handles resolved from a JSON manifest. Every entry has an id, a
/// type (moderator, gradient_moderator, encoder, chat, reward), and a kind
/// (toy, local, remote); toys are built from inline parameters, local
/// handles from weight files, remote handles from an endpoint URL. All
/// handles are constructed eagerly so a bad manifest fails at load time.
class Registry {
public:
    Registry() = default;

    static Registry from_file(const std::filesystem::path& path);
    static Registry from_json(const nlohmann::json& doc,
                              const std::filesystem::path& base_dir = ".");

    void add(const std::string& id, ModeratorPtr handle);
    void add(const std::string& id, GradientModeratorPtr handle);
    void add(const std::string& id, EncoderPtr handle);
    void add(const std::string& id, ChatModelPtr handle);
    void add(const std::string& id, RewardPtr handle);

    ModeratorPtr moderator(const std::string& id) const;
    GradientModeratorPtr gradient_moderator(const std::string& id) const;
    EncoderPtr encoder(const std::string& id) const;
    ChatModelPtr chat(const std::string& id) const;
    RewardPtr reward(const std::string& id) const;

    bool has_moderator(const std::string& id) const { return moderators_.count(id) != 0; }
    bool has_gradient_moderator(const std::string& id) const {
        return gradient_moderators_.count(id) != 0;
    }
    bool has_encoder(const std::string& id) const { return encoders_.count(id) != 0; }
    bool has_chat(const std::string& id) const { return chats_.count(id) != 0; }
    bool has_reward(const std::string& id) const { return rewards_.count(id) != 0; }

    std::vector<std::string> ids() const;

    /// Construct-and-probe report for every handle, one entry per id.
    nlohmann::json check() const;

private:
    void reserve_id(const std::string& id);

    std::map<std::string, ModeratorPtr> moderators_; // includes gradient moderators
    std::map<std::string, GradientModeratorPtr> gradient_moderators_;
    std::map<std::string, EncoderPtr> encoders_;
    std::map<std::string, ChatModelPtr> chats_;
    std::map<std::string, RewardPtr> rewards_;
    std::vector<std::string> order_;
};

} // namespace redcell
