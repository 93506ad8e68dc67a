#include "redcell/runspec.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "redcell/align.hpp"
#include "redcell/digest.hpp"
#include "redcell/forge.hpp"
#include "redcell/npy.hpp"
#include "redcell/rng.hpp"
#include "redcell/stack.hpp"
#include "redcell/toy_vision.hpp"

namespace redcell {

using nlohmann::json;

namespace {

const std::vector<std::string> kKinds = {"signature",     "image",          "reward_gap",
                                         "variant_sweep", "stack_ablation", "transfer_eval"};

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw SpecInvalid(path + ": " + msg);
}

std::string need_string(const json& doc, const std::string& field) {
    if (!doc.contains(field) || !doc[field].is_string() ||
        doc[field].get<std::string>().empty()) {
        fail(field, "must be a non-empty string");
    }
    return doc[field].get<std::string>();
}

void keep_known_fields(json& doc, const std::vector<std::string>& known) {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            unknown.push_back(key);
        }
    }
    if (!unknown.empty()) {
        fail(unknown.front(), "unknown field");
    }
}

int need_positive_int(const json& doc, const std::string& field, const std::string& path) {
    if (!doc.contains(field) || !doc[field].is_number_integer() || doc[field].get<int>() <= 0) {
        fail(path + "." + field, "must be a positive integer");
    }
    return doc[field].get<int>();
}

void normalize_prompts(json& doc) {
    bool inline_prompts = doc.contains("prompts");
    bool file_prompts = doc.contains("prompts_file");
    if (inline_prompts == file_prompts) {
        fail("prompts", "exactly one of 'prompts' or 'prompts_file' is required");
    }
    if (inline_prompts) {
        if (!doc["prompts"].is_array() || doc["prompts"].empty()) {
            fail("prompts", "must be a non-empty array of strings");
        }
        for (const auto& p : doc["prompts"]) {
            if (!p.is_string() || p.get<std::string>().empty()) {
                fail("prompts", "entries must be non-empty strings");
            }
        }
    } else if (!doc["prompts_file"].is_string()) {
        fail("prompts_file", "must be a path string");
    }
}

json normalize_signature_config(const json& in) {
    json cfg = in.is_null() ? json::object() : in;
    if (!cfg.is_object()) {
        fail("config", "must be an object");
    }
    keep_known_fields(cfg, {"length", "stage_split", "top_k", "candidate_count", "max_iterations",
                            "lambda", "monotone", "update_mode", "exhaustive_candidates",
                            "init_charset"});
    SignatureConfig defaults;
    json out;
    out["length"] = cfg.value("length", defaults.length);
    json split = cfg.value("stage_split", json::array({defaults.stage_split.first,
                                                       defaults.stage_split.second}));
    if (!split.is_array() || split.size() != 2 || !split[0].is_number_integer() ||
        !split[1].is_number_integer()) {
        fail("config.stage_split", "must be a two-integer array");
    }
    out["stage_split"] = split;
    out["top_k"] = cfg.value("top_k", defaults.top_k);
    out["candidate_count"] = cfg.value("candidate_count", defaults.candidate_count);
    out["max_iterations"] = cfg.value("max_iterations", defaults.max_iterations);
    out["lambda"] = cfg.value("lambda", defaults.lambda);
    out["monotone"] = cfg.value("monotone", defaults.monotone);
    std::string mode = cfg.value("update_mode", "multi_token");
    if (mode != "multi_token" && mode != "single_position") {
        fail("config.update_mode", "must be 'multi_token' or 'single_position'");
    }
    out["update_mode"] = mode;
    out["exhaustive_candidates"] = cfg.value("exhaustive_candidates",
                                             defaults.exhaustive_candidates);
    out["init_charset"] = cfg.value("init_charset", defaults.init_charset);

    SignatureConfig probe;
    probe.length = out["length"].get<int>();
    probe.stage_split = {split[0].get<int>(), split[1].get<int>()};
    probe.top_k = out["top_k"].get<int>();
    probe.candidate_count = out["candidate_count"].get<int>();
    probe.max_iterations = out["max_iterations"].get<int>();
    probe.init_charset = out["init_charset"].get<std::string>();
    try {
        validate(probe);
    } catch (const Error& e) {
        fail("config", e.what());
    }
    return out;
}

SignatureConfig signature_config_from(const json& cfg, std::uint64_t seed) {
    SignatureConfig config;
    config.length = cfg["length"].get<int>();
    config.stage_split = {cfg["stage_split"][0].get<int>(), cfg["stage_split"][1].get<int>()};
    config.top_k = cfg["top_k"].get<int>();
    config.candidate_count = cfg["candidate_count"].get<int>();
    config.max_iterations = cfg["max_iterations"].get<int>();
    config.lambda = cfg["lambda"].get<double>();
    config.monotone = cfg["monotone"].get<bool>();
    config.update_mode = cfg["update_mode"].get<std::string>() == "single_position"
                             ? UpdateMode::single_position
                             : UpdateMode::multi_token;
    config.exhaustive_candidates = cfg["exhaustive_candidates"].get<bool>();
    config.init_charset = cfg["init_charset"].get<std::string>();
    config.seed = seed;
    return config;
}

json normalize_pgd_config(const json& in) {
    json cfg = in.is_null() ? json::object() : in;
    if (!cfg.is_object()) {
        fail("config", "must be an object");
    }
    keep_known_fields(cfg, {"iterations", "epsilon", "alpha"});
    PGDConfig defaults;
    json out;
    out["iterations"] = cfg.value("iterations", defaults.iterations);
    out["epsilon"] = cfg.value("epsilon", defaults.epsilon);
    out["alpha"] = cfg.value("alpha", defaults.alpha);
    if (!out["iterations"].is_number_integer() || out["iterations"].get<int>() <= 0) {
        fail("config.iterations", "must be a positive integer");
    }
    if (out["epsilon"].get<double>() <= 0.0) {
        fail("config.epsilon", "must be positive");
    }
    return out;
}

std::string timestamp_now() {
    auto now = std::chrono::system_clock::now();
    auto t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void append_log(const std::filesystem::path& dir, const std::string& event, json extra = {}) {
    json line = std::move(extra);
    line["ts"] = timestamp_now();
    line["event"] = event;
    std::ofstream out(dir / "run.log.jsonl", std::ios::app);
    out << line.dump() << "\n";
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
    std::string text = doc.dump(2) + "\n";
    write_file_bytes(path, text.data(), text.size());
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    return json::parse(in);
}

bool manifest_excluded(const std::string& name) {
    return name == "manifest.json" || name == "run.log.jsonl" || name.rfind("checkpoint", 0) == 0;
}

void write_manifest(const std::filesystem::path& dir) {
    json digests = json::object();
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        std::string rel = std::filesystem::relative(entry.path(), dir).generic_string();
        if (manifest_excluded(entry.path().filename().string())) {
            continue;
        }
        digests[rel] = sha256_hex_file(entry.path());
    }
    json manifest;
    manifest["digest_algorithm"] = "sha256";
    manifest["artifacts"] = std::move(digests);
    write_json_file(dir / "manifest.json", manifest);
}

std::vector<std::string> resolve_prompts(const json& doc) {
    if (doc.contains("prompts")) {
        return doc["prompts"].get<std::vector<std::string>>();
    }
    auto prompts = load_prompt_lines(doc["prompts_file"].get<std::string>());
    if (prompts.empty()) {
        throw EmptySuite("prompt file has no usable lines: " +
                         doc["prompts_file"].get<std::string>());
    }
    return prompts;
}

RefusalMatcher matcher_from(const json& doc) {
    return RefusalMatcher::from_file(doc.value("refusal_phrases", "assets/refusal_phrases.json"));
}

json stage_state_to_json(const StageState& state) {
    json out;
    out["tokens"] = state.tokens;
    out["loss"] = state.loss;
    out["iteration"] = state.iteration;
    out["history"] = state.history;
    out["drift_discards"] = state.drift_discards;
    out["noop_steps"] = state.noop_steps;
    out["early_stopped"] = state.early_stopped;
    return out;
}

StageState stage_state_from_json(const json& doc) {
    StageState state;
    state.tokens = doc.at("tokens").get<std::vector<int>>();
    state.loss = doc.at("loss").get<double>();
    state.iteration = doc.at("iteration").get<int>();
    state.history = doc.at("history").get<std::vector<double>>();
    state.drift_discards = doc.at("drift_discards").get<int>();
    state.noop_steps = doc.at("noop_steps").get<int>();
    state.early_stopped = doc.at("early_stopped").get<bool>();
    return state;
}

json stage_report_to_json(const StageReport& report) {
    json out;
    out["tokens"] = report.tokens;
    out["text"] = report.text;
    out["loss"] = report.loss;
    out["history"] = report.history;
    out["iterations"] = report.iterations;
    out["early_stopped"] = report.early_stopped;
    out["no_improvement"] = report.no_improvement;
    out["drift_discards"] = report.drift_discards;
    out["noop_steps"] = report.noop_steps;
    return out;
}

StageReport stage_report_from_json(const json& doc) {
    StageReport report;
    report.tokens = doc.at("tokens").get<std::vector<int>>();
    report.text = doc.at("text").get<std::string>();
    report.loss = doc.at("loss").get<double>();
    report.history = doc.at("history").get<std::vector<double>>();
    report.iterations = doc.at("iterations").get<int>();
    report.early_stopped = doc.at("early_stopped").get<bool>();
    report.no_improvement = doc.at("no_improvement").get<bool>();
    report.drift_discards = doc.at("drift_discards").get<int>();
    report.noop_steps = doc.at("noop_steps").get<int>();
    return report;
}

struct HaltBudget {
    long remaining; // negative: unlimited

    bool exhausted() const { return remaining == 0; }
    void spend() {
        if (remaining > 0) {
            --remaining;
        }
    }
};

int run_signature(const RunSpec& spec, const Registry& registry, const ExecOptions& options,
                  const std::filesystem::path& dir, bool resuming) {
    const json& doc = spec.doc;
    auto target = registry.gradient_moderator(doc["target"].get<std::string>());
    GradientModeratorPtr weak;
    if (!doc["weak"].is_null()) {
        weak = registry.gradient_moderator(doc["weak"].get<std::string>());
    }
    SignatureConfig config = signature_config_from(doc["config"], doc["seed"].get<std::uint64_t>());
    std::string prompt = doc["prompt"].get<std::string>();
    bool stage2_enabled = config.stage_split.second > 0 && weak != nullptr;

    StageContext ctx1{target.get(), weak.get(), config.lambda, prompt, "stage1"};

    int stage = 1;
    StageState state;
    std::optional<StageReport> report1;
    std::filesystem::path checkpoint = dir / "checkpoint.json";
    if (resuming && std::filesystem::exists(checkpoint)) {
        json saved = read_json_file(checkpoint);
        stage = saved.at("stage").get<int>();
        state = stage_state_from_json(saved.at("state"));
        if (saved.contains("stage1_report") && !saved["stage1_report"].is_null()) {
            report1 = stage_report_from_json(saved["stage1_report"]);
        }
    } else {
        state = init_stage(ctx1, config.stage_split.first, config);
        state.early_stopped = stage_target_safe(ctx1, state);
    }

    HaltBudget budget{options.halt_after};
    auto checkpoint_now = [&](int active_stage) {
        json saved;
        saved["stage"] = active_stage;
        saved["state"] = stage_state_to_json(state);
        saved["stage1_report"] = report1 ? stage_report_to_json(*report1) : json(nullptr);
        write_json_file(checkpoint, saved);
    };

    auto drive = [&](const StageContext& ctx, int active_stage) -> bool {
        while (!state.early_stopped && state.iteration < config.max_iterations) {
            if (budget.exhausted()) {
                checkpoint_now(active_stage);
                append_log(dir, "halted", {{"stage", active_stage},
                                           {"iteration", state.iteration}});
                return false;
            }
            stage_step(ctx, config, state);
            budget.spend();
            if (stage_target_safe(ctx, state)) {
                state.early_stopped = true;
            }
            checkpoint_now(active_stage);
        }
        return true;
    };

    if (stage == 1) {
        if (!drive(ctx1, 1)) {
            return kExitHalted;
        }
        report1 = finalize_stage(ctx1, state);
        if (stage2_enabled) {
            stage = 2;
            StageContext ctx2{weak.get(), target.get(), config.lambda,
                              assemble_signature_text(prompt, report1->text), "stage2"};
            state = init_stage(ctx2, config.stage_split.second, config);
            state.early_stopped = stage_target_safe(ctx2, state);
            checkpoint_now(2);
        }
    }

    std::optional<StageReport> report2;
    if (stage == 2) {
        StageContext ctx2{weak.get(), target.get(), config.lambda,
                          assemble_signature_text(prompt, report1->text), "stage2"};
        if (!drive(ctx2, 2)) {
            return kExitHalted;
        }
        report2 = finalize_stage(ctx2, state);
    }

    std::string signature_text = report1->text;
    if (report2) {
        signature_text = assemble_signature_text(report1->text, report2->text);
    }
    std::string full_text = assemble_signature_text(prompt, signature_text);

    json result;
    result["run_id"] = spec.run_id;
    result["kind"] = spec.kind;
    result["target"] = target->id();
    result["weak"] = weak ? json(weak->id()) : json(nullptr);
    result["prompt"] = prompt;
    result["seed"] = doc["seed"];
    result["config"] = doc["config"];
    result["stage1"] = stage_report_to_json(*report1);
    result["stage2"] = report2 ? stage_report_to_json(*report2) : json(nullptr);
    result["signature_text"] = signature_text;
    bool no_improvement =
        report1->no_improvement && (!report2 || report2->no_improvement);
    result["no_improvement"] = no_improvement;
    result["final_verdicts"] = {
        {"target", to_string(target->verdict(full_text))},
        {"weak", weak ? json(to_string(weak->verdict(full_text))) : json(nullptr)}};
    write_json_file(dir / "result.json", result);

    std::filesystem::remove(checkpoint);
    write_manifest(dir);
    append_log(dir, "finished");
    if (options.strict && no_improvement) {
        return kExitFlagged;
    }
    return kExitOk;
}

int run_image(const RunSpec& spec, const Registry& registry, const ExecOptions& options,
              const std::filesystem::path& dir, bool resuming) {
    const json& doc = spec.doc;
    auto encoder = registry.encoder(doc["encoder"].get<std::string>());
    std::string target_prompt = doc["target_prompt"].get<std::string>();
    PGDConfig config;
    config.iterations = doc["config"]["iterations"].get<int>();
    config.epsilon = doc["config"]["epsilon"].get<double>();
    config.alpha = doc["config"]["alpha"].get<double>();
    std::uint64_t seed = doc["seed"].get<std::uint64_t>();

    Image base;
    if (doc["base"].get<std::string>() == "noise") {
        base = seeded_noise_image(encoder->input_resolution(), derive_seed(seed, "base-image"),
                                  encoder->pixel_range());
    } else {
        base = mid_gray_image(encoder->input_resolution(), encoder->pixel_range());
    }
    Eigen::MatrixXd target =
        tile_target(encoder->embed_prompt(target_prompt), encoder->embedding_slot_count());

    std::filesystem::path checkpoint = dir / "checkpoint.json";
    std::filesystem::path checkpoint_x = dir / "checkpoint_x.npy";
    AlignmentState state;
    if (resuming && std::filesystem::exists(checkpoint)) {
        json saved = read_json_file(checkpoint);
        state.iteration = saved.at("iteration").get<int>();
        state.cosine_history = saved.at("cosine_history").get<std::vector<double>>();
        state.x = load_npy(checkpoint_x);
    } else {
        state = init_alignment(*encoder, target, base);
    }

    HaltBudget budget{options.halt_after};
    while (state.iteration < config.iterations) {
        if (budget.exhausted()) {
            json saved;
            saved["iteration"] = state.iteration;
            saved["cosine_history"] = state.cosine_history;
            write_json_file(checkpoint, saved);
            save_npy(checkpoint_x, state.x);
            append_log(dir, "halted", {{"iteration", state.iteration}});
            return kExitHalted;
        }
        alignment_step(*encoder, target, base, config, state);
        budget.spend();
        json saved;
        saved["iteration"] = state.iteration;
        saved["cosine_history"] = state.cosine_history;
        write_json_file(checkpoint, saved);
        save_npy(checkpoint_x, state.x);
    }

    AlignmentResult result =
        finish_alignment(*encoder, target_prompt, target, base, std::move(state));
    write_alignment_artifacts(dir / "image_artifacts", result, *encoder, config, seed);

    json out;
    out["run_id"] = spec.run_id;
    out["kind"] = spec.kind;
    out["encoder"] = encoder->id();
    out["target_prompt"] = target_prompt;
    out["seed"] = doc["seed"];
    out["base"] = doc["base"];
    out["config"] = doc["config"];
    out["final_cosine"] = result.final_cosine;
    out["cosine_history"] = result.cosine_history;
    out["artifact_dir"] = "image_artifacts";
    write_json_file(dir / "result.json", out);

    std::filesystem::remove(checkpoint);
    std::filesystem::remove(checkpoint_x);
    write_manifest(dir);
    append_log(dir, "finished");
    return kExitOk;
}

int run_reward_gap(const RunSpec& spec, const Registry& registry, const ExecOptions& options,
                   const std::filesystem::path& dir) {
    const json& doc = spec.doc;
    auto chat = registry.chat(doc["chat"].get<std::string>());
    auto reward = registry.reward(doc["reward"].get<std::string>());
    const MetaTemplate& tmpl = meta_template(doc["template"].get<std::string>());
    auto prompts = resolve_prompts(doc);

    RewardGapResult result = reward_gap(prompts, tmpl, *chat, *reward);

    json out;
    out["run_id"] = spec.run_id;
    out["kind"] = spec.kind;
    out["chat"] = chat->id();
    out["reward"] = reward->id();
    out["template"] = tmpl.name;
    out["count"] = result.count;
    out["mean_dual"] = result.mean_dual;
    out["mean_refusal"] = result.mean_refusal;
    out["gap"] = result.gap;
    out["win_rate"] = result.win_rate;
    out["dual_scores"] = result.dual_scores;
    out["refusal_scores"] = result.refusal_scores;
    write_json_file(dir / "result.json", out);
    write_manifest(dir);
    append_log(dir, "finished");
    (void)options;
    return kExitOk;
}

int run_variant_sweep(const RunSpec& spec, const Registry& registry, const ExecOptions& options,
                      const std::filesystem::path& dir) {
    const json& doc = spec.doc;
    auto chat = registry.chat(doc["chat"].get<std::string>());
    auto judge = registry.moderator(doc["judge"].get<std::string>());
    auto prompts = resolve_prompts(doc);
    RefusalMatcher matcher = matcher_from(doc);

    std::vector<MetaTemplate> variants;
    for (const auto& name : doc["variants"]) {
        variants.push_back(meta_template(name.get<std::string>()));
    }

    auto outcomes = variant_sweep(prompts, variants, *chat, *judge, matcher);

    json rows = json::array();
    for (const auto& o : outcomes) {
        rows.push_back({{"variant", o.variant},
                        {"prompts", o.prompts},
                        {"excluded", o.excluded},
                        {"refusals", o.refusals},
                        {"harmful", o.harmful},
                        {"refusal_rate", o.refusal_rate},
                        {"harmful_rate", o.harmful_rate}});
    }
    json out;
    out["run_id"] = spec.run_id;
    out["kind"] = spec.kind;
    out["chat"] = chat->id();
    out["judge"] = judge->id();
    out["rows"] = std::move(rows);
    write_json_file(dir / "result.json", out);
    write_manifest(dir);
    append_log(dir, "finished");
    (void)options;
    return kExitOk;
}

int run_stack_ablation(const RunSpec& spec, const Registry& registry, const ExecOptions& options,
                       const std::filesystem::path& dir) {
    const json& doc = spec.doc;
    DefenseStack stack;
    if (!doc["input_moderator"].is_null()) {
        stack.input_moderator = registry.moderator(doc["input_moderator"].get<std::string>());
    }
    stack.chat = registry.chat(doc["chat"].get<std::string>());
    if (!doc["output_moderator"].is_null()) {
        stack.output_moderator = registry.moderator(doc["output_moderator"].get<std::string>());
    }
    stack.system_prompt = doc["system_prompt"].get<std::string>();
    auto judge = registry.moderator(doc["judge"].get<std::string>());
    auto prompts = resolve_prompts(doc);
    RefusalMatcher matcher = matcher_from(doc);

    std::optional<Image> image;
    if (!doc["image_artifact_dir"].is_null()) {
        std::filesystem::path adir = doc["image_artifact_dir"].get<std::string>();
        image = Image(load_npy(adir / "base.npy") + load_npy(adir / "perturbation.npy"));
    }

    auto rows = ablation_matrix(stack, prompts, doc["template"].get<std::string>(),
                                doc["signature_text"].get<std::string>(), image, *judge, matcher);

    json out_rows = json::array();
    for (const auto& row : rows) {
        out_rows.push_back({{"facets", row.facets()},
                            {"meta_task", row.meta_task},
                            {"signature", row.signature},
                            {"vision", row.vision},
                            {"prompts", row.prompts},
                            {"delivered", row.delivered},
                            {"harmful", row.harmful},
                            {"excluded", row.excluded},
                            {"harmful_rate", row.harmful_rate}});
    }
    json out;
    out["run_id"] = spec.run_id;
    out["kind"] = spec.kind;
    out["chat"] = stack.chat->id();
    out["rows"] = std::move(out_rows);
    write_json_file(dir / "result.json", out);
    write_manifest(dir);
    append_log(dir, "finished");
    (void)options;
    return kExitOk;
}

int run_transfer_eval(const RunSpec& spec, const Registry& registry, const ExecOptions& options,
                      const std::filesystem::path& dir) {
    const json& doc = spec.doc;
    std::filesystem::path artifact_dir = doc["artifact_dir"].get<std::string>();
    std::vector<EncoderPtr> encoders;
    for (const auto& id : doc["encoders"]) {
        encoders.push_back(registry.encoder(id.get<std::string>()));
    }

    TransferReport report = transfer_eval(artifact_dir, encoders);

    json entries = json::array();
    for (const auto& e : report.entries) {
        entries.push_back({{"encoder", e.encoder_id},
                           {"evaluated", e.evaluated},
                           {"cosine", e.cosine},
                           {"note", e.note}});
    }
    json out;
    out["run_id"] = spec.run_id;
    out["kind"] = spec.kind;
    out["source_encoder"] = report.source_encoder_id;
    out["target_prompt"] = report.target_prompt;
    out["digests_ok"] = report.digests_ok;
    out["self_checked"] = report.self_checked;
    out["self_consistent"] = report.self_consistent;
    out["recomputed_final_cosine"] = report.recomputed_final_cosine;
    out["entries"] = std::move(entries);
    write_json_file(dir / "result.json", out);
    write_manifest(dir);
    append_log(dir, "finished");
    (void)options;
    return kExitOk;
}

} // namespace

std::vector<std::string> load_prompt_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open prompt file: " + path.string());
    }
    std::vector<std::string> prompts;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") != std::string::npos) {
            prompts.push_back(line);
        }
    }
    return prompts;
}

RunSpec parse_run_spec(const json& doc, const Registry& registry) {
    if (!doc.is_object()) {
        fail("<root>", "run spec must be a JSON object");
    }
    json out;
    out["run_id"] = need_string(doc, "run_id");
    std::string run_id = out["run_id"].get<std::string>();
    if (run_id.find_first_not_of(
            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-") !=
        std::string::npos) {
        fail("run_id", "may contain only letters, digits, '-', and '_'");
    }
    std::string kind = need_string(doc, "kind");
    if (std::find(kKinds.begin(), kKinds.end(), kind) == kKinds.end()) {
        fail("kind", "unknown run kind '" + kind + "'");
    }
    out["kind"] = kind;
    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_integer() && !doc["seed"].is_number_unsigned()) {
            fail("seed", "must be a non-negative integer");
        }
        if (doc["seed"].is_number_integer() && doc["seed"].get<long long>() < 0) {
            fail("seed", "must be a non-negative integer");
        }
    }
    out["seed"] = doc.value("seed", std::uint64_t{0});

    json body = doc;
    body.erase("run_id");
    body.erase("kind");
    body.erase("seed");

    if (kind == "signature") {
        keep_known_fields(body, {"target", "weak", "prompt", "config"});
        std::string target = need_string(body, "target");
        if (!registry.has_gradient_moderator(target)) {
            throw UnknownHandle(target);
        }
        out["target"] = target;
        if (body.contains("weak") && !body["weak"].is_null()) {
            std::string weak = body["weak"].get<std::string>();
            if (!registry.has_gradient_moderator(weak)) {
                throw UnknownHandle(weak);
            }
            out["weak"] = weak;
        } else {
            out["weak"] = nullptr;
        }
        out["prompt"] = need_string(body, "prompt");
        out["config"] = normalize_signature_config(body.value("config", json()));
        if (out["config"]["stage_split"][1].get<int>() > 0 && out["weak"].is_null()) {
            fail("config.stage_split", "second stage needs a 'weak' gradient moderator");
        }
    } else if (kind == "image") {
        keep_known_fields(body, {"encoder", "target_prompt", "base", "config"});
        std::string encoder = need_string(body, "encoder");
        if (!registry.has_encoder(encoder)) {
            throw UnknownHandle(encoder);
        }
        out["encoder"] = encoder;
        out["target_prompt"] = need_string(body, "target_prompt");
        std::string base = body.value("base", "mid_gray");
        if (base != "mid_gray" && base != "noise") {
            fail("base", "must be 'mid_gray' or 'noise'");
        }
        out["base"] = base;
        out["config"] = normalize_pgd_config(body.value("config", json()));
    } else if (kind == "reward_gap") {
        keep_known_fields(body, {"chat", "reward", "template", "prompts", "prompts_file"});
        std::string chat = need_string(body, "chat");
        if (!registry.has_chat(chat)) {
            throw UnknownHandle(chat);
        }
        out["chat"] = chat;
        std::string reward = need_string(body, "reward");
        if (!registry.has_reward(reward)) {
            throw UnknownHandle(reward);
        }
        out["reward"] = reward;
        out["template"] = body.value("template", "ori");
        meta_template(out["template"].get<std::string>());
        normalize_prompts(body);
        if (body.contains("prompts")) {
            out["prompts"] = body["prompts"];
        } else {
            out["prompts_file"] = body["prompts_file"];
        }
    } else if (kind == "variant_sweep") {
        keep_known_fields(body, {"chat", "judge", "variants", "refusal_phrases", "prompts",
                                 "prompts_file"});
        std::string chat = need_string(body, "chat");
        if (!registry.has_chat(chat)) {
            throw UnknownHandle(chat);
        }
        out["chat"] = chat;
        std::string judge = need_string(body, "judge");
        if (!registry.has_moderator(judge)) {
            throw UnknownHandle(judge);
        }
        out["judge"] = judge;
        json variants = json::array();
        if (body.contains("variants")) {
            for (const auto& name : body["variants"]) {
                meta_template(name.get<std::string>());
                variants.push_back(name);
            }
        } else {
            for (const auto& tmpl : meta_template_catalog()) {
                variants.push_back(tmpl.name);
            }
        }
        if (variants.empty()) {
            fail("variants", "must name at least one template");
        }
        out["variants"] = std::move(variants);
        out["refusal_phrases"] = body.value("refusal_phrases", "assets/refusal_phrases.json");
        normalize_prompts(body);
        if (body.contains("prompts")) {
            out["prompts"] = body["prompts"];
        } else {
            out["prompts_file"] = body["prompts_file"];
        }
    } else if (kind == "stack_ablation") {
        keep_known_fields(body, {"input_moderator", "chat", "output_moderator", "system_prompt",
                                 "judge", "template", "signature_text", "image_artifact_dir",
                                 "refusal_phrases", "prompts", "prompts_file"});
        for (const char* role : {"input_moderator", "output_moderator"}) {
            if (body.contains(role) && !body[role].is_null()) {
                std::string id = body[role].get<std::string>();
                if (!registry.has_moderator(id)) {
                    throw UnknownHandle(id);
                }
                out[role] = id;
            } else {
                out[role] = nullptr;
            }
        }
        std::string chat = need_string(body, "chat");
        if (!registry.has_chat(chat)) {
            throw UnknownHandle(chat);
        }
        out["chat"] = chat;
        std::string judge = need_string(body, "judge");
        if (!registry.has_moderator(judge)) {
            throw UnknownHandle(judge);
        }
        out["judge"] = judge;
        out["system_prompt"] = body.value("system_prompt", "");
        out["template"] = body.value("template", "ori");
        meta_template(out["template"].get<std::string>());
        out["signature_text"] = need_string(body, "signature_text");
        out["image_artifact_dir"] = body.contains("image_artifact_dir")
                                        ? body["image_artifact_dir"]
                                        : json(nullptr);
        out["refusal_phrases"] = body.value("refusal_phrases", "assets/refusal_phrases.json");
        normalize_prompts(body);
        if (body.contains("prompts")) {
            out["prompts"] = body["prompts"];
        } else {
            out["prompts_file"] = body["prompts_file"];
        }
    } else { // transfer_eval
        keep_known_fields(body, {"artifact_dir", "encoders"});
        out["artifact_dir"] = need_string(body, "artifact_dir");
        if (!body.contains("encoders") || !body["encoders"].is_array() ||
            body["encoders"].empty()) {
            fail("encoders", "must be a non-empty array of encoder ids");
        }
        for (const auto& id : body["encoders"]) {
            if (!registry.has_encoder(id.get<std::string>())) {
                throw UnknownHandle(id.get<std::string>());
            }
        }
        out["encoders"] = body["encoders"];
    }

    RunSpec spec;
    spec.run_id = run_id;
    spec.kind = kind;
    spec.doc = std::move(out);
    return spec;
}

RunSpec parse_run_spec_file(const std::filesystem::path& path, const Registry& registry) {
    return parse_run_spec(read_json_file(path), registry);
}

json serialize_run_spec(const RunSpec& spec) { return spec.doc; }

int execute_run(const RunSpec& spec, const Registry& registry, const ExecOptions& options) {
    std::filesystem::path dir = options.output_root / spec.run_id;
    std::filesystem::create_directories(dir);
    write_json_file(dir / "spec.json", serialize_run_spec(spec));
    append_log(dir, "started", {{"kind", spec.kind}});

    if (spec.kind == "signature") {
        return run_signature(spec, registry, options, dir, false);
    }
    if (spec.kind == "image") {
        return run_image(spec, registry, options, dir, false);
    }
    if (spec.kind == "reward_gap") {
        return run_reward_gap(spec, registry, options, dir);
    }
    if (spec.kind == "variant_sweep") {
        return run_variant_sweep(spec, registry, options, dir);
    }
    if (spec.kind == "stack_ablation") {
        return run_stack_ablation(spec, registry, options, dir);
    }
    return run_transfer_eval(spec, registry, options, dir);
}

int resume_run(const std::string& run_id, const Registry& registry, const ExecOptions& options) {
    std::filesystem::path dir = options.output_root / run_id;
    if (!std::filesystem::exists(dir / "spec.json")) {
        throw Error("no spec.json under " + dir.string());
    }
    RunSpec spec = parse_run_spec(read_json_file(dir / "spec.json"), registry);
    if (std::filesystem::exists(dir / "result.json") &&
        !std::filesystem::exists(dir / "checkpoint.json")) {
        return kExitOk; // already complete
    }
    append_log(dir, "resumed");
    if (spec.kind == "signature") {
        return run_signature(spec, registry, options, dir, true);
    }
    if (spec.kind == "image") {
        return run_image(spec, registry, options, dir, true);
    }
    return execute_run(spec, registry, options);
}

std::vector<ReportRow> collect_report_rows(const std::vector<std::filesystem::path>& run_dirs,
                                           const AnnotationSummary* annotations) {
    std::vector<ReportRow> rows;
    auto annotate = [&](ReportRow& row) {
        if (annotations == nullptr) {
            return;
        }
        auto exact = annotations->rate(row.model, row.method);
        row.hm_rate = exact ? exact : annotations->rate(row.model, "");
    };

    for (const auto& dir : run_dirs) {
        json result = read_json_file(dir / "result.json");
        std::string kind = result.at("kind").get<std::string>();
        if (kind == "reward_gap") {
            ReportRow row;
            row.model = result["chat"].get<std::string>();
            row.method = "reward_gap/" + result["template"].get<std::string>();
            row.lg_rate = result["win_rate"].get<double>();
            annotate(row);
            rows.push_back(std::move(row));
        } else if (kind == "variant_sweep") {
            for (const auto& r : result["rows"]) {
                ReportRow row;
                row.model = result["chat"].get<std::string>();
                row.method = "sweep/" + r["variant"].get<std::string>();
                row.lg_rate = r["harmful_rate"].get<double>();
                annotate(row);
                rows.push_back(std::move(row));
            }
        } else if (kind == "stack_ablation") {
            for (const auto& r : result["rows"]) {
                ReportRow row;
                row.model = result["chat"].get<std::string>();
                row.method = "ablation/" + r["facets"].get<std::string>();
                row.lg_rate = r["harmful_rate"].get<double>();
                annotate(row);
                rows.push_back(std::move(row));
            }
        } else if (kind == "signature") {
            ReportRow row;
            row.model = result["target"].get<std::string>();
            row.method = "signature";
            bool target_safe = result["final_verdicts"]["target"].get<std::string>() == "safe";
            bool weak_ok = result["final_verdicts"]["weak"].is_null() ||
                           result["final_verdicts"]["weak"].get<std::string>() == "safe";
            row.lg_rate = target_safe && weak_ok ? 1.0 : 0.0;
            annotate(row);
            rows.push_back(std::move(row));
        }
        // image and transfer_eval runs carry cosine metrics, not rates
    }
    return rows;
}

} // namespace redcell
