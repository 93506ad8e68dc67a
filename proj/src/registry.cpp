#include "redcell/registry.hpp"

#include <fstream>

#include "redcell/metatask.hpp"
#include "redcell/remote.hpp"
#include "redcell/rng.hpp"
#include "redcell/stack.hpp"
#include "redcell/toy_chat.hpp"
#include "redcell/toy_vision.hpp"

namespace redcell {

using nlohmann::json;

namespace {

json weights_to_json(const std::string& backend, const ToyTokenizer* tok,
                     const Eigen::VectorXd& weights, double bias, double threshold) {
    json doc;
    doc["schema"] = "moderator-weights/1";
    doc["backend"] = backend;
    json vocab = json::array();
    for (int i = 0; i < tok->vocab_size(); ++i) {
        vocab.push_back(tok->token(i));
    }
    doc["vocab"] = std::move(vocab);
    doc["weights"] = std::vector<double>(weights.data(), weights.data() + weights.size());
    doc["bias"] = bias;
    doc["verdict_threshold"] = threshold;
    return doc;
}

void dump_json(const std::filesystem::path& path, const json& doc) {
    std::ofstream out(path, std::ios::trunc);
    out << doc.dump(2) << "\n";
    if (!out) {
        throw Error("cannot write " + path.string());
    }
}

json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    return json::parse(in);
}

std::string require_string(const json& entry, const char* field, const std::string& id) {
    if (!entry.contains(field) || !entry[field].is_string()) {
        throw SpecInvalid("handle '" + id + "': field '" + field + "' must be a string");
    }
    return entry[field].get<std::string>();
}

} // namespace

void save_moderator_weights(const std::filesystem::path& path, const BagOfTokensModerator& m) {
    dump_json(path,
              weights_to_json("bag", m.tokenizer(), m.weights(), m.bias(), m.verdict_threshold()));
}

void save_moderator_weights(const std::filesystem::path& path, const LogisticTextModerator& m) {
    dump_json(path, weights_to_json("logistic", m.tokenizer(), m.weights(), m.bias(),
                                    m.verdict_threshold()));
}

GradientModeratorPtr load_moderator_weights(const std::string& id,
                                            const std::filesystem::path& path) {
    json doc = load_json(path);
    if (doc.value("schema", "") != "moderator-weights/1") {
        throw SpecInvalid(path.string() + ": unknown weight file schema");
    }
    std::vector<std::string> vocab = doc.at("vocab").get<std::vector<std::string>>();
    std::vector<double> weights = doc.at("weights").get<std::vector<double>>();
    if (vocab.size() != weights.size()) {
        throw ShapeMismatch(path.string() + ": vocab and weight sizes differ");
    }
    auto tok = std::make_shared<const ToyTokenizer>(vocab);
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(weights.data(),
                                                          static_cast<Eigen::Index>(weights.size()));
    double bias = doc.at("bias").get<double>();
    std::string backend = doc.at("backend").get<std::string>();
    if (backend == "bag") {
        return std::make_shared<BagOfTokensModerator>(id, tok, w, bias,
                                                      doc.at("verdict_threshold").get<double>());
    }
    if (backend == "logistic") {
        return std::make_shared<LogisticTextModerator>(id, tok, w, bias);
    }
    throw SpecInvalid(path.string() + ": unknown moderator backend '" + backend + "'");
}

void Registry::reserve_id(const std::string& id) {
    for (const auto& existing : order_) {
        if (existing == id) {
            throw SpecInvalid("duplicate handle id '" + id + "'");
        }
    }
    order_.push_back(id);
}

void Registry::add(const std::string& id, ModeratorPtr handle) {
    reserve_id(id);
    moderators_[id] = std::move(handle);
}

void Registry::add(const std::string& id, GradientModeratorPtr handle) {
    reserve_id(id);
    moderators_[id] = handle;
    gradient_moderators_[id] = std::move(handle);
}

void Registry::add(const std::string& id, EncoderPtr handle) {
    reserve_id(id);
    encoders_[id] = std::move(handle);
}

void Registry::add(const std::string& id, ChatModelPtr handle) {
    reserve_id(id);
    chats_[id] = std::move(handle);
}

void Registry::add(const std::string& id, RewardPtr handle) {
    reserve_id(id);
    rewards_[id] = std::move(handle);
}

ModeratorPtr Registry::moderator(const std::string& id) const {
    auto it = moderators_.find(id);
    if (it == moderators_.end()) {
        throw UnknownHandle(id);
    }
    return it->second;
}

GradientModeratorPtr Registry::gradient_moderator(const std::string& id) const {
    auto it = gradient_moderators_.find(id);
    if (it == gradient_moderators_.end()) {
        throw UnknownHandle(id);
    }
    return it->second;
}

EncoderPtr Registry::encoder(const std::string& id) const {
    auto it = encoders_.find(id);
    if (it == encoders_.end()) {
        throw UnknownHandle(id);
    }
    return it->second;
}

ChatModelPtr Registry::chat(const std::string& id) const {
    auto it = chats_.find(id);
    if (it == chats_.end()) {
        throw UnknownHandle(id);
    }
    return it->second;
}

RewardPtr Registry::reward(const std::string& id) const {
    auto it = rewards_.find(id);
    if (it == rewards_.end()) {
        throw UnknownHandle(id);
    }
    return it->second;
}

std::vector<std::string> Registry::ids() const { return order_; }

Registry Registry::from_file(const std::filesystem::path& path) {
    return from_json(load_json(path), path.parent_path());
}

Registry Registry::from_json(const json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object() || !doc.contains("handles") || !doc["handles"].is_array()) {
        throw SpecInvalid("registry needs a 'handles' array");
    }
    Registry registry;

    // chats may reference encoders, so everything else loads first
    std::vector<json> deferred_chats;
    for (const auto& entry : doc["handles"]) {
        if (!entry.is_object()) {
            throw SpecInvalid("registry handle entries must be objects");
        }
        std::string id = require_string(entry, "id", "<unnamed>");
        std::string type = require_string(entry, "type", id);
        std::string kind = require_string(entry, "kind", id);

        if (type == "chat") {
            deferred_chats.push_back(entry);
            continue;
        }

        if (type == "moderator" && kind == "remote") {
            RemoteModeratorConfig config;
            config.url = require_string(entry, "url", id);
            config.verdict_threshold = entry.value("verdict_threshold", 0.5);
            config.retries = entry.value("retries", 3);
            config.timeout_ms = entry.value("timeout_ms", 2000);
            config.backoff_base_ms = entry.value("backoff_base_ms", 50);
            config.concurrent_scoring = entry.value("concurrent_scoring", true);
            config.max_input_chars = entry.value("max_input_chars", 0L);
            registry.add(id, std::make_shared<RemoteModerator>(id, config));
        } else if (type == "moderator" && kind == "toy") {
            std::string backend = require_string(entry, "backend", id);
            if (backend != "keyword") {
                throw SpecInvalid("handle '" + id + "': unknown toy moderator backend '" +
                                  backend + "'");
            }
            auto keywords = entry.value("keywords", std::vector<std::string>{});
            registry.add(id, std::make_shared<KeywordJudgeModerator>(id, keywords));
        } else if ((type == "moderator" || type == "gradient_moderator") && kind == "local") {
            auto handle = load_moderator_weights(id, base_dir / require_string(entry, "path", id));
            if (type == "gradient_moderator") {
                registry.add(id, handle);
            } else {
                registry.add(id, ModeratorPtr(handle));
            }
        } else if (type == "gradient_moderator" && kind == "toy") {
            std::string backend = require_string(entry, "backend", id);
            auto tok = surrogate_tokenizer();
            if (backend == "logistic") {
                FitConfig fit;
                fit.epochs = entry.value("epochs", 40);
                fit.learning_rate = entry.value("learning_rate", 0.15);
                fit.l2 = entry.value("l2", 1e-4);
                fit.seed = entry.value("fit_seed", std::uint64_t{0});
                auto corpus = synthetic_moderation_corpus(
                    *tok, entry.value("corpus_size", 400), entry.value("corpus_seed", std::uint64_t{0}));
                registry.add(id, GradientModeratorPtr(fit_logistic_moderator(id, tok, corpus, fit)));
            } else if (backend == "bag") {
                Rng rng(entry.value("weights_seed", std::uint64_t{0}));
                double scale = entry.value("weight_scale", 1.0);
                Eigen::VectorXd w(tok->vocab_size());
                for (int i = 0; i < w.size(); ++i) {
                    w[i] = scale * (2.0 * rng.uniform01() - 1.0);
                }
                registry.add(id, GradientModeratorPtr(std::make_shared<BagOfTokensModerator>(
                                     id, tok, w, entry.value("bias", 0.0),
                                     entry.value("verdict_threshold", 0.0))));
            } else {
                throw SpecInvalid("handle '" + id + "': unknown gradient backend '" + backend +
                                  "'");
            }
        } else if (type == "encoder" && kind == "toy") {
            std::string backend = require_string(entry, "backend", id);
            if (backend == "identity") {
                registry.add(id, EncoderPtr(std::make_shared<IdentityEncoder>(
                                     id, entry.value("resolution", 16), entry.value("slots", 32),
                                     entry.value("dim", 8), entry.value("text_seed", std::uint64_t{101}))));
            } else if (backend == "patch_mean") {
                registry.add(id, EncoderPtr(std::make_shared<PatchMeanEncoder>(
                                     id, entry.value("resolution", 224), entry.value("patch", 7),
                                     entry.value("slots", 128), entry.value("dim", 8),
                                     entry.value("text_seed", std::uint64_t{202}))));
            } else if (backend == "linear") {
                LinearEncoderConfig config;
                config.resolution = entry.value("resolution", 32);
                config.slots = entry.value("slots", 16);
                config.dim = entry.value("dim", 4);
                config.backbone_seed = entry.value("backbone_seed", std::uint64_t{1});
                config.head_seed = entry.value("head_seed", std::uint64_t{2});
                config.pathway_seed = entry.value("pathway_seed", std::uint64_t{3});
                config.head_noise_scale = entry.value("head_noise_scale", 0.0);
                config.head_noise_seed = entry.value("head_noise_seed", std::uint64_t{0});
                registry.add(id, EncoderPtr(std::make_shared<LinearToyEncoder>(id, config)));
            } else {
                throw SpecInvalid("handle '" + id + "': unknown encoder backend '" + backend +
                                  "'");
            }
        } else if (type == "reward" && kind == "toy") {
            std::string backend = require_string(entry, "backend", id);
            if (backend == "heuristic") {
                registry.add(id, RewardPtr(std::make_shared<HeuristicRewardHandle>(id)));
            } else if (backend == "recorded") {
                auto handle = std::make_shared<RecordedRewardHandle>(id);
                for (const auto& row : entry.value("table", json::array())) {
                    handle->record(row.at("prompt").get<std::string>(),
                                   row.at("response").get<std::string>(),
                                   row.at("score").get<double>());
                }
                registry.add(id, RewardPtr(handle));
            } else {
                throw SpecInvalid("handle '" + id + "': unknown reward backend '" + backend + "'");
            }
        } else {
            throw SpecInvalid("handle '" + id + "': unsupported type/kind pair '" + type + "/" +
                              kind + "'");
        }
    }

    for (const auto& entry : deferred_chats) {
        std::string id = entry["id"].get<std::string>();
        std::string kind = require_string(entry, "kind", id);
        if (kind != "toy") {
            throw SpecInvalid("handle '" + id + "': chats support only the toy kind");
        }
        std::string backend = require_string(entry, "backend", id);
        if (backend == "echo") {
            registry.add(id, ChatModelPtr(std::make_shared<EchoChat>(
                                 id, entry.value("system_prompt", std::string()))));
        } else if (backend == "refuse") {
            registry.add(id, ChatModelPtr(std::make_shared<AlwaysRefuseChat>(
                                 id, entry.value("refusal", "I cannot assist with this request."))));
        } else if (backend == "scripted_dual") {
            std::map<std::string, std::string> script;
            for (const auto& [prompt, response] : entry.value("script", json::object()).items()) {
                script[prompt] = response.get<std::string>();
            }
            registry.add(id, ChatModelPtr(std::make_shared<ScriptedDualChat>(
                                 id, entry.value("markers", meta_task_markers()), script,
                                 entry.value("refusal", "I cannot assist with this request."))));
        } else if (backend == "gated") {
            GatedStackChatConfig config;
            config.meta_markers = entry.value("markers", meta_task_markers());
            config.refusal_text = entry.value("refusal", config.refusal_text);
            config.harmful_text = entry.value("harmful_text", std::string());
            if (entry.contains("gate_encoder")) {
                config.gate_encoder = registry.encoder(entry["gate_encoder"].get<std::string>());
            }
            config.gate_target_prompt = entry.value("gate_target_prompt", std::string());
            config.min_cosine = entry.value("min_cosine", 0.8);
            config.repeat_instruction = entry.value("repeat_instruction",
                                                    std::string(kRepeatInstruction));
            registry.add(id, ChatModelPtr(std::make_shared<GatedStackChat>(
                                 id, entry.value("system_prompt", std::string()), config)));
        } else {
            throw SpecInvalid("handle '" + id + "': unknown chat backend '" + backend + "'");
        }
    }
    return registry;
}

json Registry::check() const {
    json report = json::array();
    for (const auto& id : order_) {
        json entry;
        entry["id"] = id;
        std::string status = "ok";
        std::string detail;
        try {
            if (auto it = gradient_moderators_.find(id); it != gradient_moderators_.end()) {
                entry["type"] = "gradient_moderator";
                const auto& m = *it->second;
                double score = m.score_text("probe");
                Eigen::MatrixXd grad =
                    m.grad_wrt_selection({}, Eigen::MatrixXd::Zero(1, m.vocabulary_size()));
                if (!grad.allFinite()) {
                    throw Error("gradient has non-finite entries");
                }
                detail = "score(probe)=" + std::to_string(score);
            } else if (auto mt = moderators_.find(id); mt != moderators_.end()) {
                entry["type"] = "moderator";
                detail = "score(probe)=" + std::to_string(mt->second->score_text("probe"));
            } else if (auto et = encoders_.find(id); et != encoders_.end()) {
                entry["type"] = "encoder";
                const auto& e = *et->second;
                auto emb = e.embed_image(mid_gray_image(e.input_resolution(), e.pixel_range()));
                auto rows = e.embed_prompt("probe prompt");
                detail = "embedding " + std::to_string(emb.rows()) + "x" +
                         std::to_string(emb.cols()) + ", prompt rows " +
                         std::to_string(rows.rows());
            } else if (auto ct = chats_.find(id); ct != chats_.end()) {
                entry["type"] = "chat";
                auto reply = ct->second->generate({{"user", "probe"}}, std::nullopt);
                detail = "replied " + std::to_string(reply.size()) + " chars";
            } else if (auto rt = rewards_.find(id); rt != rewards_.end()) {
                entry["type"] = "reward";
                if (dynamic_cast<const RecordedRewardHandle*>(rt->second.get()) != nullptr) {
                    detail = "recorded table, probe skipped";
                } else {
                    detail = "score(probe)=" +
                             std::to_string(rt->second->reward_score("probe", "probe"));
                }
            }
        } catch (const BackendUnavailable& e) {
            status = "unavailable";
            detail = e.what();
        } catch (const std::exception& e) {
            status = "error";
            detail = e.what();
        }
        entry["status"] = status;
        entry["detail"] = detail;
        report.push_back(std::move(entry));
    }
    return report;
}

} // namespace redcell
