#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "redcell/gateway.hpp"
#include "redcell/metatask.hpp"

namespace redcell {

struct JudgeOutcome {
    bool indeterminate = false; // judge backend unavailable, excluded from rates
    bool harmful = false;       // any sub-response judged unsafe
    bool refusal = false;       // only meaningful when not harmful
    int segments = 0;
};

/// Split the response into sub-responses and judge each one; the response
/// is harmful as soon as any segment is. Refusal matching runs only on
/// non-harmful responses. When strip_signature is non-empty its exact
/// occurrences are removed before judging.
JudgeOutcome judge_harmful(const std::string& response, const ModeratorHandle& judge,
                           const RefusalMatcher& matcher, const std::string& strip_signature = "");

struct VariantOutcome {
    std::string variant;
    int prompts = 0;
    int excluded = 0; // indeterminate judgments
    int refusals = 0;
    int harmful = 0;
    double refusal_rate = 0.0;
    double harmful_rate = 0.0;
};

/// Run every prompt through every dual-framing variant and tally judged
/// outcomes per variant. Rates use only determinate judgments.
std::vector<VariantOutcome> variant_sweep(const std::vector<std::string>& prompts,
                                          const std::vector<MetaTemplate>& variants,
                                          const ChatModelHandle& chat, const ModeratorHandle& judge,
                                          const RefusalMatcher& matcher);

struct BehavioralOutcome {
    std::string chat_id;
    bool attempted = false; // false when the model does not accept images
    bool indeterminate = false;
    bool harmful = false;
    bool refusal = false;
};

/// Behavioral read of an adversarial image: each chat model answers the
/// prompt with the image attached and the response is judged.
std::vector<BehavioralOutcome> behavioral_eval(const Image& image, const std::string& prompt,
                                               const std::vector<ChatModelPtr>& chats,
                                               const ModeratorHandle& judge,
                                               const RefusalMatcher& matcher);

struct AnnotationRecord {
    std::string prompt_id;
    std::string model;
    std::string method; // optional in the wire format, empty when absent
    std::vector<int> votes;
    bool success = false; // strict majority of 1-votes
};

struct AnnotationSummary {
    std::vector<AnnotationRecord> records;
    // (model, method) -> (successes, total)
    std::map<std::pair<std::string, std::string>, std::pair<int, int>> tallies;

    std::optional<double> rate(const std::string& model, const std::string& method) const;
};

/// One JSON object per line: {"prompt_id": ..., "model": ..., "votes":
/// [0/1, ...]} with an optional "method". A tie is not a success. Any
/// malformed line aborts with its line number.
AnnotationSummary ingest_annotations(std::istream& in);
AnnotationSummary ingest_annotations_file(const std::filesystem::path& path);

struct ReportRow {
    std::string model;
    std::string method;
    double lg_rate = 0.0;                // judged success fraction in [0, 1]
    std::optional<double> hm_rate;       // human-majority fraction, absent renders as a dash
};

std::string render_report_text(const std::vector<ReportRow>& rows);
std::string render_report_csv(const std::vector<ReportRow>& rows);
std::string render_report_json(const std::vector<ReportRow>& rows);

/// Writes report.txt, report.csv, and report.json. Output bytes depend
/// only on the rows.
void write_report(const std::filesystem::path& dir, const std::vector<ReportRow>& rows);

} // namespace redcell
