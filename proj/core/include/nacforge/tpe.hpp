#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nacforge/arch_ir.hpp"
#include "nacforge/data_forge.hpp"
#include "nacforge/params.hpp"
#include "nacforge/rng.hpp"
#include "nacforge/train.hpp"

namespace nac {

enum class ParamKind { Uniform, LogUniform, Categorical };

struct HyperParam {
    std::string name;
    ParamKind kind = ParamKind::Uniform;
    double low = 0.0;
    double high = 1.0;
    std::vector<std::string> choices;  // Categorical

    static HyperParam uniform(std::string name, double low, double high);
    static HyperParam log_uniform(std::string name, double low, double high);
    static HyperParam categorical(std::string name, std::vector<std::string> choices);
};

struct HyperSpace {
    std::vector<HyperParam> params;

    std::size_t index_of(const std::string& name) const;
    void validate() const;
};

// lr, weight_decay, schedule, batch_size.
HyperSpace default_hyper_space();

// One value per parameter; categoricals hold the choice index.
using Assignment = std::vector<double>;

enum class TrialStatus { Complete, Failed };

struct TrialRecord {
    Assignment assignment;
    double score = 0.0;
    TrialStatus status = TrialStatus::Complete;
};

struct TpeSettings {
    double gamma = 0.25;
    std::size_t n_startup = 10;
    std::size_t n_candidates = 24;
};

// Number of Complete trials placed in the good set.
std::size_t good_count(std::size_t n_complete, double gamma);

bool within_space(const HyperSpace& space, const Assignment& a);

struct Suggestion {
    Assignment assignment;
    // Drawn candidates and their log l(x) - log g(x); empty during startup.
    std::vector<Assignment> candidates;
    std::vector<double> log_ratio;
};

Suggestion suggest_detailed(const std::vector<TrialRecord>& history, const HyperSpace& space, Rng& rng,
                            const TpeSettings& settings = {});
Assignment suggest(const std::vector<TrialRecord>& history, const HyperSpace& space, Rng& rng,
                   const TpeSettings& settings = {});

// log l(x) - log g(x) under the model fitted to `history` (requires at least
// n_startup Complete trials).
double log_density_ratio(const std::vector<TrialRecord>& history, const HyperSpace& space, const Assignment& x,
                         const TpeSettings& settings = {});

// Objective returning a score to minimize; throwing or returning a non-finite
// score marks the trial Failed.
using TpeObjective = std::function<double(const Assignment&, std::size_t trial_id)>;

struct TpeResult {
    std::vector<TrialRecord> history;
    std::size_t best = 0;
};

TpeResult run_tpe(const HyperSpace& space, std::size_t budget, Rng& rng, const TpeObjective& objective,
                  const TpeSettings& settings = {});

TrainConfig to_train_config(const HyperSpace& space, const Assignment& a, int epochs, std::uint64_t seed);

struct LocalHpoConfig {
    std::size_t budget = 20;
    int epochs = 60;
    HyperSpace space = default_hyper_space();
    TpeSettings settings;
};

struct HpoResult {
    TrainConfig best_config;
    double best_score = 0.0;  // validation error
    ParamStore best_params;
    std::vector<TrialRecord> history;
    std::size_t best_trial = 0;
};

HpoResult run_local_hpo(const ArchDescriptor& arch, const Dataset& train_set, const Dataset& val_set,
                        const LocalHpoConfig& cfg, Rng& rng);

// trial_id, lr, weight_decay, schedule, batch_size, score, status
std::string hpo_history_csv(const HyperSpace& space, const std::vector<TrialRecord>& history);

}  // namespace nac
