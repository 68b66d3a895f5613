#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "nacforge/evo_search.hpp"
#include "nacforge/search_space.hpp"

namespace nac::testing {

// Fully enumerable 4-gene space (6^4 genomes) with additive objectives.
// Its Pareto front has 11 members with distinct objective pairs.
inline constexpr std::size_t kToyChoices = 6;
inline constexpr std::array<std::array<double, kToyChoices>, 4> kToyError = {{
    {7, 9, 3, 23, 12, 15},
    {4, 2, 2, 0, 12, 17},
    {29, 9, 25, 24, 1, 7},
    {16, 17, 11, 8, 24, 5},
}};
inline constexpr std::array<std::array<double, kToyChoices>, 4> kToyBops = {{
    {26, 3, 8, 6, 30, 29},
    {0, 26, 20, 25, 8, 25},
    {8, 6, 5, 9, 9, 20},
    {27, 23, 30, 27, 27, 28},
}};

inline SpaceDef toy_space() {
    std::vector<GeneDef> genes;
    for (int i = 0; i < 4; ++i) genes.push_back(GeneDef::integer("g" + std::to_string(i), {0, 1, 2, 3, 4, 5}));
    return custom_space(std::move(genes));
}

inline EvalOutcome toy_objectives(const Genome& g) {
    EvalOutcome o;
    for (std::size_t i = 0; i < 4; ++i) {
        o.error += kToyError[i][g.values[i]];
        o.bops += kToyBops[i][g.values[i]] + 1.0;
    }
    return o;
}

inline Evaluator toy_evaluator() {
    return [](const Genome& g, std::uint64_t) { return toy_objectives(g); };
}

inline std::vector<Candidate> toy_all() {
    std::vector<Candidate> all;
    for (std::size_t a = 0; a < kToyChoices; ++a)
        for (std::size_t b = 0; b < kToyChoices; ++b)
            for (std::size_t c = 0; c < kToyChoices; ++c)
                for (std::size_t d = 0; d < kToyChoices; ++d) {
                    Candidate cand;
                    cand.genome.values = {a, b, c, d};
                    const auto o = toy_objectives(cand.genome);
                    cand.error = o.error;
                    cand.bops = o.bops;
                    all.push_back(cand);
                }
    return all;
}

// Brute-force Pareto front by pairwise comparison, sorted by genome.
inline std::vector<Genome> brute_front(const std::vector<Candidate>& pts) {
    std::vector<Genome> out;
    for (const auto& p : pts) {
        bool dominated = false;
        for (const auto& q : pts) {
            if (q.error <= p.error && q.bops <= p.bops && (q.error < p.error || q.bops < p.bops)) {
                dominated = true;
                break;
            }
        }
        if (!dominated) out.push_back(p.genome);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline std::vector<Genome> archive_genomes(const ParetoArchive& a) {
    std::vector<Genome> out;
    for (const auto& m : a.members()) out.push_back(m.genome);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace nac::testing
