#include "redcell/stack.hpp"

namespace redcell {

Payload assemble_payload(const PayloadSpec& spec) {
    Payload payload;
    if (spec.template_name) {
        payload.text = render_meta_task(meta_template(*spec.template_name), spec.prompt);
        payload.meta_task = true;
    } else {
        if (spec.prompt.find_first_not_of(" \t\r\n") == std::string::npos) {
            throw EmptyPrompt("payload prompt is empty or whitespace only");
        }
        payload.text = spec.prompt;
    }
    if (spec.signature_text) {
        if (spec.signature_text->empty()) {
            throw SpecInvalid("signature facet enabled with empty signature text");
        }
        payload.text += "\n\n" + spec.repeat_instruction + "\n" + *spec.signature_text;
        payload.signature = true;
    }
    payload.vision = spec.attach_image;
    return payload;
}

const char* to_string(BlockStage stage) {
    switch (stage) {
    case BlockStage::input:
        return "input";
    case BlockStage::output:
        return "output";
    default:
        return "none";
    }
}

PipelineResult run_pipeline(const DefenseStack& stack, const Payload& payload,
                            const std::optional<Image>& image) {
    if (!stack.chat) {
        throw SpecInvalid("defense stack has no chat model");
    }
    PipelineResult result;
    auto wrap = [&result](const std::string& msg) {
        std::vector<std::string> log;
        log.reserve(result.call_log.size());
        for (const auto& record : result.call_log) {
            log.push_back(record.step + " " + record.handle_id + " " + record.detail);
        }
        return IncompleteRun(msg, std::move(log));
    };

    if (stack.input_moderator) {
        Verdict v;
        try {
            v = stack.input_moderator->verdict(payload.text);
        } catch (const BackendUnavailable& e) {
            throw wrap(std::string("input moderation failed: ") + e.what());
        }
        result.call_log.push_back({"input_moderation", stack.input_moderator->id(), to_string(v)});
        if (v == Verdict::unsafe) {
            result.blocked_at = BlockStage::input;
            return result;
        }
    }

    std::vector<ChatMessage> messages;
    if (!stack.system_prompt.empty()) {
        messages.push_back({"system", stack.system_prompt});
    }
    messages.push_back({"user", payload.text});
    std::optional<Image> attached = payload.vision ? image : std::nullopt;
    try {
        result.response = stack.chat->generate(messages, attached);
    } catch (const BackendUnavailable& e) {
        throw wrap(std::string("chat generation failed: ") + e.what());
    }
    result.call_log.push_back({"chat", stack.chat->id(), result.response});

    if (stack.output_moderator) {
        Verdict v;
        try {
            v = stack.output_moderator->verdict(result.response);
        } catch (const BackendUnavailable& e) {
            throw wrap(std::string("output moderation failed: ") + e.what());
        }
        result.call_log.push_back(
            {"output_moderation", stack.output_moderator->id(), to_string(v)});
        if (v == Verdict::unsafe) {
            result.blocked_at = BlockStage::output;
            return result;
        }
    }
    return result;
}

std::string AblationRow::facets() const {
    std::string out;
    out += meta_task ? "M" : "-";
    out += signature ? "S" : "-";
    out += vision ? "V" : "-";
    return out;
}

std::vector<AblationRow> ablation_matrix(const DefenseStack& stack,
                                         const std::vector<std::string>& prompts,
                                         const std::string& template_name,
                                         const std::string& signature_text,
                                         const std::optional<Image>& image,
                                         const ModeratorHandle& judge,
                                         const RefusalMatcher& matcher) {
    if (prompts.empty()) {
        throw EmptySuite("ablation needs at least one prompt");
    }
    std::vector<AblationRow> rows;
    rows.reserve(8);
    for (int mask = 0; mask < 8; ++mask) {
        AblationRow row;
        row.meta_task = (mask & 1) != 0;
        row.signature = (mask & 2) != 0;
        row.vision = (mask & 4) != 0;
        row.prompts = static_cast<int>(prompts.size());
        for (const auto& prompt : prompts) {
            PayloadSpec spec;
            spec.prompt = prompt;
            if (row.meta_task) {
                spec.template_name = template_name;
            }
            if (row.signature) {
                spec.signature_text = signature_text;
            }
            spec.attach_image = row.vision;
            PipelineResult outcome = run_pipeline(stack, assemble_payload(spec), image);
            if (!outcome.delivered()) {
                continue;
            }
            row.delivered += 1;
            JudgeOutcome judged = judge_harmful(outcome.response, judge, matcher);
            if (judged.indeterminate) {
                row.excluded += 1;
                continue;
            }
            row.harmful += judged.harmful ? 1 : 0;
        }
        int counted = row.prompts - row.excluded;
        row.harmful_rate = counted > 0 ? static_cast<double>(row.harmful) / counted : 0.0;
        rows.push_back(row);
    }
    return rows;
}

} // namespace redcell
