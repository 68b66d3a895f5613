#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nacforge/checkpoint.hpp"
#include "nacforge/cli/run_config.hpp"
#include "nacforge/compress.hpp"
#include "nacforge/data_forge.hpp"
#include "nacforge/evo_search.hpp"
#include "nacforge/tpe.hpp"

namespace nac::cli {

// Standardized train/val/test splits plus what is needed to regenerate them.
struct PreparedData {
    Task task = Task::SetClassification;
    Splits splits;
    Standardizer standardizer;
    nlohmann::json manifest;
};

Task task_of(TaskKind kind);

// Throws for the toy task, which has no data.
PreparedData prepare_data(const RunConfig& cfg);

SpaceDef toy_space_for(const RunConfig& cfg);
Evaluator toy_evaluator_for(const RunConfig& cfg);

struct GlobalOutcome {
    SearchResult result;
    std::vector<NamedCandidate> selected;
};

// Runs the configured search. `data` is ignored for the toy task.
GlobalOutcome run_global_stage(const RunConfig& cfg, const PreparedData* data);

// Writes global/trials.csv, global/archive.json and global/selected/<name>.json.
void write_global_outputs(const GlobalOutcome& g, const RunConfig& cfg, const std::filesystem::path& out_dir);

struct NamedArch {
    std::string name;
    ArchDescriptor arch;
};

// Accepts a bare architecture JSON or a selected-candidate wrapper holding
// an "architecture" field. Falls back to a built-in model name.
ArchDescriptor read_arch_file(const std::string& path_or_name);

std::vector<NamedArch> selected_archs(const std::filesystem::path& out_dir);

struct LocalOutcome {
    std::string name;
    ArchDescriptor arch;
    HpoResult hpo;
    std::vector<SparsityCurve> curves;
    std::optional<CompressedChoice> choice;
    nlohmann::json summary;
};

// HPO then compression for one architecture; outputs go to `dir`.
LocalOutcome run_local_one(const RunConfig& cfg, const PreparedData& data, const NamedArch& arch,
                           const std::filesystem::path& dir, std::ostream& log);

// Compression of an already trained model; outputs go to `dir`.
LocalOutcome run_compress_one(const RunConfig& cfg, const PreparedData& data, const std::string& name,
                              const Checkpoint& dense, const std::filesystem::path& dir, std::ostream& log);

// Collects global/archive.json and every */summary.json below `out_dir`.
nlohmann::json collect_report(const std::filesystem::path& out_dir);
std::string report_csv(const nlohmann::json& report);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// Timestamps and the effective config; the only non-reproducible output.
void write_run_meta(const std::filesystem::path& out_dir, const RunConfig& cfg, const std::string& command);

}  // namespace nac::cli
