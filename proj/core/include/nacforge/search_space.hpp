#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nacforge/arch_ir.hpp"
#include "nacforge/rng.hpp"

namespace nac {

enum class GeneKind { Categorical, IntegerChoice };

struct GeneDef {
    std::string name;
    GeneKind kind = GeneKind::Categorical;
    std::vector<std::string> labels;  // Categorical
    std::vector<int> values;          // IntegerChoice

    static GeneDef categorical(std::string name, std::vector<std::string> labels);
    static GeneDef integer(std::string name, std::vector<int> values);

    std::size_t choice_count() const { return kind == GeneKind::Categorical ? labels.size() : values.size(); }
    std::string choice_string(std::size_t index) const;
};

struct Genome {
    std::vector<std::size_t> values;
    bool operator==(const Genome&) const = default;
    auto operator<=>(const Genome&) const = default;
};

// A fixed-length gene list plus the decoding template that maps loci to
// architecture slots. Spaces without a task (e.g. analytic toy spaces) can be
// searched but not decoded.
struct SpaceDef {
    std::optional<Task> task;
    std::vector<GeneDef> genes;
    std::vector<std::string> template_slots;

    std::size_t size() const { return genes.size(); }
    std::size_t index_of(std::string_view gene_name) const;
    const GeneDef& gene(std::string_view gene_name) const;
};

// Throws SchemaError when choice lists are empty/duplicated or the template
// references a gene that does not exist exactly once.
void check_space(const SpaceDef& space);
void check_genome(const SpaceDef& space, const Genome& genome);

SpaceDef space_for(Task task);
SpaceDef custom_space(std::vector<GeneDef> genes);

Genome sample(const SpaceDef& space, Rng& rng);

// Each gene with >= 2 choices moves to a different value with probability
// `rate`. If nothing changed, one such gene is forced to change.
Genome mutate(const SpaceDef& space, const Genome& genome, double rate, Rng& rng);

// Uniform crossover: each locus is swapped with probability 0.5.
std::pair<Genome, Genome> crossover(const Genome& a, const Genome& b, Rng& rng);

ArchDescriptor decode(const SpaceDef& space, const Genome& genome);

nlohmann::json genome_to_json(const Genome& genome);
Genome genome_from_json(const nlohmann::json& j);
std::string genome_to_string(const Genome& genome);
Genome genome_from_string(const std::string& text);

nlohmann::json space_to_json(const SpaceDef& space);

}  // namespace nac
