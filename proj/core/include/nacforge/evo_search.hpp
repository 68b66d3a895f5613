#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "nacforge/data_forge.hpp"
#include "nacforge/rng.hpp"
#include "nacforge/search_space.hpp"
#include "nacforge/train.hpp"

namespace nac {

struct Candidate {
    Genome genome;
    double error = 0.0;
    double bops = 0.0;
    std::uint64_t eval_seed = 0;
    int rank = 0;
    double crowding = 0.0;
    bool failed = false;
};

// a dominates b: no worse on both objectives and strictly better on one.
bool dominates(const Candidate& a, const Candidate& b);

// Fast non-dominated sort. Returns fronts of indices into `pop`, front 0 first;
// indices inside a front are ascending.
std::vector<std::vector<std::size_t>> non_dominated_sort(const std::vector<Candidate>& pop);

// Crowding distance for the members of one front, in the order given.
std::vector<double> crowding_distance(const std::vector<Candidate>& front);

// Area dominated by the points and bounded by `ref` (both objectives minimized).
double hypervolume_2d(const std::vector<Candidate>& points, double ref_error, double ref_bops);

class ParetoArchive {
public:
    // Number of current members dominating `c`; c joins the archive when this
    // is 0 and its genome is new. Members dominated by c are dropped.
    int insert(const Candidate& c);
    int dominated_by(const Candidate& c) const;

    const std::vector<Candidate>& members() const { return members_; }
    std::size_t size() const { return members_.size(); }
    bool contains(const Genome& g) const;

    // Members ordered by (bops, error, genome).
    std::vector<Candidate> sorted() const;

private:
    std::vector<Candidate> members_;
};

struct EvalOutcome {
    double error = 0.0;
    double bops = 0.0;
    bool failed = false;
};

// Must be safe to call concurrently on distinct genomes. Exceptions derived
// from std::exception are treated as failures.
using Evaluator = std::function<EvalOutcome(const Genome&, std::uint64_t seed)>;

struct TrialLogEntry {
    std::size_t trial_id = 0;
    Genome genome;
    double error = 0.0;
    double bops = 0.0;
    std::uint64_t eval_seed = 0;
    bool failed = false;
    int rank_at_insert = 0;
    std::size_t generation = 0;
};

struct GlobalSearchConfig {
    std::size_t budget = 200;
    std::size_t pop_size = 25;
    double crossover_prob = 0.9;
    double mutation_rate = 0.1;
    std::size_t workers = 1;
    // Consecutive generations without a single new genome before the search
    // gives up (only reachable when the space is nearly exhausted).
    std::size_t stall_limit = 50;
    std::function<void(std::size_t generation, const ParetoArchive&)> on_generation;

    void validate() const;
};

struct SearchResult {
    ParetoArchive archive;
    std::vector<TrialLogEntry> trials;
    std::vector<Candidate> population;
};

SearchResult run_global_search(const SpaceDef& space, const GlobalSearchConfig& cfg, Rng& rng,
                               const Evaluator& evaluator);

// Baseline: `budget` distinct uniform samples through the same evaluator.
SearchResult run_random_search(const SpaceDef& space, std::size_t budget, std::size_t workers, Rng& rng,
                               const Evaluator& evaluator);

struct NamedCandidate {
    std::string name;
    Candidate candidate;
};

// Geometric BOPs bins between the archive's min and max; the lowest-error
// member of each bin, returned in descending BOPs order. For k = 4 the names
// are large, medium, small, tiny.
std::vector<NamedCandidate> select_by_bops(const ParetoArchive& archive, std::size_t k = 4);

struct NasEvalConfig {
    TrainConfig train;  // epochs = proxy budget
    Dataset train_set;
    Dataset val_set;
};

// Trains the decoded architecture from scratch under the proxy budget and
// scores (validation error, BOPs at 32/32 dense).
Evaluator make_nas_evaluator(const SpaceDef& space, NasEvalConfig cfg);

nlohmann::json candidate_to_json(const Candidate& c);
Candidate candidate_from_json(const nlohmann::json& j);
nlohmann::json archive_to_json(const ParetoArchive& archive);

std::string trial_log_csv(const std::vector<TrialLogEntry>& trials);

}  // namespace nac
