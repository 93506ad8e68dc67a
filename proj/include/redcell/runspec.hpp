#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "redcell/evalh.hpp"
#include "redcell/registry.hpp"

namespace redcell {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitSpec = 2;
inline constexpr int kExitHalted = 3;
inline constexpr int kExitFlagged = 4;

/// A validated, fully defaulted run description. `doc` is the normalized
/// form: parsing it again yields an identical spec.
struct RunSpec {
    std::string run_id;
    std::string kind; // signature | image | reward_gap | variant_sweep |
                      // stack_ablation | transfer_eval
    nlohmann::json doc;
};

RunSpec parse_run_spec(const nlohmann::json& doc, const Registry& registry);
RunSpec parse_run_spec_file(const std::filesystem::path& path, const Registry& registry);
nlohmann::json serialize_run_spec(const RunSpec& spec);

struct ExecOptions {
    std::filesystem::path output_root = "runs";
    bool strict = false;    // flagged-but-valid outcomes exit non-zero
    long halt_after = -1;   // stop after this many iterations, leaving a checkpoint
};

/// Execute under output_root/run_id: spec.json, kind-specific artifacts,
/// result.json, and manifest.json with content digests. Timestamps appear
/// only in run.log.jsonl, so everything else is byte-stable. Iterative
/// kinds checkpoint every iteration and resume exactly.
int execute_run(const RunSpec& spec, const Registry& registry, const ExecOptions& options);

/// Continue a halted run from its checkpoint; completed runs return
/// immediately with success.
int resume_run(const std::string& run_id, const Registry& registry, const ExecOptions& options);

/// Report rows extracted from completed runs, optionally joined with human
/// annotation rates by (model, method), falling back to model-wide
/// annotations.
std::vector<ReportRow> collect_report_rows(const std::vector<std::filesystem::path>& run_dirs,
                                           const AnnotationSummary* annotations);

std::vector<std::string> load_prompt_lines(const std::filesystem::path& path);

} // namespace redcell
