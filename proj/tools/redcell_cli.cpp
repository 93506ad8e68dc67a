#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "redcell/errors.hpp"
#include "redcell/evalh.hpp"
#include "redcell/registry.hpp"
#include "redcell/runspec.hpp"

namespace {

using nlohmann::json;

redcell::Registry load_registry(const std::string& path) {
    if (path.empty()) return redcell::Registry{};
    return redcell::Registry::from_file(path);
}

int cmd_run(const std::string& spec_path, const std::string& registry_path,
            const redcell::ExecOptions& options) {
    auto registry = load_registry(registry_path);
    auto spec = redcell::parse_run_spec_file(spec_path, registry);
    return redcell::execute_run(spec, registry, options);
}

int cmd_resume(const std::string& run_id, const std::string& registry_path,
               const redcell::ExecOptions& options) {
    auto registry = load_registry(registry_path);
    return redcell::resume_run(run_id, registry, options);
}

int cmd_report(const std::vector<std::string>& run_ids, const std::string& output_root,
               const std::string& annotations_path, const std::string& out_dir) {
    std::vector<std::filesystem::path> run_dirs;
    run_dirs.reserve(run_ids.size());
    for (const auto& id : run_ids) {
        run_dirs.emplace_back(std::filesystem::path(output_root) / id);
    }
    std::optional<redcell::AnnotationSummary> annotations;
    if (!annotations_path.empty()) {
        annotations = redcell::ingest_annotations_file(annotations_path);
    }
    auto rows = redcell::collect_report_rows(
        run_dirs, annotations ? &*annotations : nullptr);
    if (out_dir.empty()) {
        std::cout << redcell::render_report_text(rows);
    } else {
        redcell::write_report(out_dir, rows);
        std::cout << "report written to " << out_dir << "\n";
    }
    return redcell::kExitOk;
}

int cmd_registry_check(const std::string& registry_path) {
    auto registry = load_registry(registry_path);
    auto statuses = registry.check();
    bool all_ok = true;
    for (const auto& status : statuses) {
        const auto state = status.at("status").get<std::string>();
        std::cout << status.at("id").get<std::string>() << " ["
                  << status.at("type").get<std::string>() << "] " << state;
        if (const auto detail = status.value("detail", std::string{}); !detail.empty()) {
            std::cout << ": " << detail;
        }
        std::cout << "\n";
        if (state != "ok") all_ok = false;
    }
    return all_ok ? redcell::kExitOk : redcell::kExitError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial evaluation harness"};
    app.require_subcommand(1);

    std::string registry_path;
    redcell::ExecOptions options;

    std::string spec_path;
    auto* run = app.add_subcommand("run", "execute a run spec");
    run->add_option("spec", spec_path, "path to the run spec JSON")->required();
    run->add_option("--registry", registry_path, "handle registry manifest");
    run->add_option("--output-dir", options.output_root, "root directory for run outputs");
    run->add_flag("--strict", options.strict, "fail the process when the run is flagged");
    run->add_option("--halt-after", options.halt_after,
                    "stop after this many optimizer iterations");

    std::string run_id;
    auto* resume = app.add_subcommand("resume", "resume a halted run");
    resume->add_option("run_id", run_id, "identifier of the run to resume")->required();
    resume->add_option("--registry", registry_path, "handle registry manifest");
    resume->add_option("--output-dir", options.output_root, "root directory for run outputs");
    resume->add_flag("--strict", options.strict, "fail the process when the run is flagged");
    resume->add_option("--halt-after", options.halt_after,
                       "stop after this many optimizer iterations");

    std::vector<std::string> report_ids;
    std::string annotations_path;
    std::string report_out;
    auto* report = app.add_subcommand("report", "aggregate finished runs into a report");
    report->add_option("run_ids", report_ids, "run identifiers to aggregate")->required();
    report->add_option("--output-dir", options.output_root, "root directory for run outputs");
    report->add_option("--annotations", annotations_path, "JSONL annotation file to join");
    report->add_option("--out", report_out, "directory for report.txt/csv/json");

    auto* registry_cmd = app.add_subcommand("registry", "registry utilities");
    auto* check = registry_cmd->add_subcommand("check", "probe every registered handle");
    check->add_option("--registry", registry_path, "handle registry manifest")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(spec_path, registry_path, options);
        if (resume->parsed()) return cmd_resume(run_id, registry_path, options);
        if (report->parsed()) {
            return cmd_report(report_ids, options.output_root, annotations_path, report_out);
        }
        if (registry_cmd->parsed() && check->parsed()) {
            return cmd_registry_check(registry_path);
        }
    } catch (const redcell::SpecInvalid& e) {
        std::cerr << "spec error: " << e.what() << "\n";
        return redcell::kExitSpec;
    } catch (const redcell::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return redcell::kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return redcell::kExitError;
    }
    return redcell::kExitError;
}
