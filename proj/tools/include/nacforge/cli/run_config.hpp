#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nacforge/compress.hpp"
#include "nacforge/errors.hpp"
#include "nacforge/tpe.hpp"

namespace nac::cli {

inline constexpr int kConfigVersion = 1;

// Invalid configuration or command-line input; `field` is a dotted path.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& reason)
        : Error("ConfigError", field + ": " + reason), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

enum class TaskKind { Jets, Bragg, Toy };

std::string_view to_string(TaskKind t);

struct DataConfig {
    std::string source = "synthetic";  // synthetic | file
    std::size_t n = 5000;
    // Jets: explicit separation, or calibrated from a target Bayes accuracy.
    std::optional<double> separation;
    double bayes_accuracy = 0.9;
    double noise_level = 0.05;  // Bragg
    std::filesystem::path path;  // file source
};

struct GlobalStage {
    bool enabled = true;
    std::string strategy = "nsga2";  // nsga2 | random
    std::size_t budget = 200;
    std::size_t pop_size = 25;
    double crossover_prob = 0.9;
    double mutation_rate = 0.1;
    std::size_t stall_limit = 50;
    int proxy_epochs = 10;
    std::size_t proxy_train_size = 4000;
    double learning_rate = 0.01;
    int batch_size = 64;
    std::size_t select_k = 4;
};

struct HpoStage {
    bool enabled = true;
    std::size_t budget = 20;
    int epochs = 60;
    TpeSettings settings;
};

struct CompressStage {
    bool enabled = true;
    CompressionPlan plan;
    double tolerance = 0.1;
};

// Additive analytic objectives over integer genes, for checking the search.
struct ToyObjectives {
    std::vector<std::vector<double>> error;
    std::vector<std::vector<double>> bops;
};

struct RunConfig {
    int version = kConfigVersion;
    TaskKind task = TaskKind::Jets;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "nacforge_out";
    std::size_t workers = 1;
    DataConfig data;
    GlobalStage global;
    HpoStage hpo;
    CompressStage compress;
    ToyObjectives toy;
};

// Relative paths are resolved against `base_dir`. Unknown keys are errors.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// The effective configuration, fully expanded, with absolute paths.
nlohmann::json run_config_to_json(const RunConfig& cfg);

// NACFORGE_SEED, when set, replaces the configured seed.
void apply_seed_override(RunConfig& cfg);

}  // namespace nac::cli
