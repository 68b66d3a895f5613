#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nacforge/errors.hpp"
#include "nacforge/search_space.hpp"

using namespace nac;

namespace {

Genome genome_for(const SpaceDef& s, const std::vector<std::pair<std::string, std::string>>& picks) {
    Genome g;
    g.values.assign(s.size(), 0);
    for (const auto& [name, choice] : picks) {
        const auto& gene = s.gene(name);
        bool found = false;
        for (std::size_t i = 0; i < gene.choice_count(); ++i) {
            if (gene.choice_string(i) == choice) {
                g.values[s.index_of(name)] = i;
                found = true;
            }
        }
        REQUIRE_MESSAGE(found, name << "=" << choice);
    }
    return g;
}

}  // namespace

TEST_CASE("space transcriptions") {
    const auto bragg = space_for(Task::PatchRegression);
    const auto sets = space_for(Task::SetClassification);
    CHECK(bragg.gene("block1.conv1.kernel").values == std::vector<int>{1, 3});
    CHECK(bragg.gene("block1.type").labels == std::vector<std::string>{"Conv", "Attention", "None"});
    CHECK(bragg.gene("block2.conv2.out_ch").values == std::vector<int>{1, 2, 4, 8, 16, 32, 64});
    CHECK(bragg.gene("fc1.out_dim").values == std::vector<int>{4, 8, 16, 32, 64});
    CHECK(sets.gene("aggregator").labels == std::vector<std::string>{"mean", "maximum"});
    CHECK(sets.gene("phi2.bottleneck").values == std::vector<int>{1, 2, 4, 8, 16, 32, 64});
    const std::vector<std::string> acts{"ReLU", "LeakyReLU", "None"};
    CHECK(bragg.gene("fc2.act").labels == acts);
    CHECK(sets.gene("rho1.act").labels == acts);
}

TEST_CASE("single-choice gene always sampled") {
    const auto s = custom_space({GeneDef::integer("only", {7}), GeneDef::integer("two", {0, 1})});
    Rng rng(3);
    for (int i = 0; i < 100; ++i) CHECK(sample(s, rng).values[0] == 0);
}

TEST_CASE("two-choice sampling frequency") {
    const auto s = custom_space({GeneDef::integer("bit", {0, 1})});
    Rng rng(11);
    int ones = 0;
    for (int i = 0; i < 10000; ++i) ones += static_cast<int>(sample(s, rng).values[0]);
    CHECK(std::abs(ones / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("sampling is deterministic") {
    const auto s = space_for(Task::PatchRegression);
    Rng a(42), b(42);
    CHECK(sample(s, a) == sample(s, b));
}

TEST_CASE("decode of random genomes always validates") {
    for (Task task : {Task::PatchRegression, Task::SetClassification}) {
        const auto s = space_for(task);
        Rng rng(task == Task::PatchRegression ? 1 : 2);
        for (int i = 0; i < 10000; ++i) {
            const auto arch = decode(s, sample(s, rng));
            const auto issues = validate(arch);
            if (!issues.empty()) FAIL(issues.front().message);
        }
    }
}

TEST_CASE("degenerate bragg genome") {
    const auto s = space_for(Task::PatchRegression);
    const auto g = genome_for(s, {{"block1.type", "None"}, {"block2.type", "None"}, {"fc1.out_dim", "4"},
                                  {"fc2.out_dim", "4"}, {"fc3.out_dim", "4"}, {"fc1.norm", "None"},
                                  {"fc2.norm", "None"}, {"fc3.norm", "None"}, {"fc4.norm", "None"},
                                  {"fc1.act", "None"}, {"fc2.act", "None"}, {"fc3.act", "None"}, {"fc4.act", "None"}});
    const auto arch = decode(s, g);
    CHECK(is_valid(arch));
    int linears = 0;
    for (const auto& l : arch.layers) linears += std::holds_alternative<Linear>(l) ? 1 : 0;
    CHECK(linears == 4);
}

TEST_CASE("bragg_tiny is reachable by a genome") {
    const auto s = space_for(Task::PatchRegression);
    const auto g = genome_for(s, {{"block1.type", "None"}, {"block2.type", "None"},
                                  {"fc1.out_dim", "32"}, {"fc1.norm", "None"}, {"fc1.act", "LeakyReLU"},
                                  {"fc2.out_dim", "32"}, {"fc2.norm", "None"}, {"fc2.act", "LeakyReLU"},
                                  {"fc3.out_dim", "32"}, {"fc3.norm", "Batch"}, {"fc3.act", "LeakyReLU"},
                                  {"fc4.norm", "Batch"}, {"fc4.act", "None"}});
    const auto arch = decode(s, g);
    CHECK(count_params(arch) == 23094);
    CHECK(arch == builtin_model("bragg_tiny"));
}

TEST_CASE("mutation rules") {
    const auto s = space_for(Task::PatchRegression);
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const auto g = sample(s, rng);
        const auto m0 = mutate(s, g, 0.0, rng);
        std::size_t diff = 0;
        for (std::size_t k = 0; k < g.values.size(); ++k) diff += g.values[k] != m0.values[k];
        CHECK(diff == 1);
        const auto m1 = mutate(s, g, 1.0, rng);
        for (std::size_t k = 0; k < g.values.size(); ++k) CHECK(g.values[k] != m1.values[k]);
    }
    CHECK_THROWS_AS(mutate(s, sample(s, rng), 1.5, rng), DomainError);
}

TEST_CASE("mean mutation count at rate 0.2 over 30 genes") {
    std::vector<GeneDef> genes;
    for (int i = 0; i < 30; ++i) genes.push_back(GeneDef::integer("g" + std::to_string(i), {0, 1, 2, 3}));
    const auto s = custom_space(genes);
    Rng rng(17);
    double total = 0;
    for (int t = 0; t < 10000; ++t) {
        const auto g = sample(s, rng);
        const auto m = mutate(s, g, 0.2, rng);
        for (std::size_t k = 0; k < 30; ++k) total += g.values[k] != m.values[k];
    }
    CHECK(std::abs(total / 10000.0 - 6.0) < 1.0);
}

TEST_CASE("crossover properties") {
    const auto s = space_for(Task::SetClassification);
    Rng rng(8);
    const auto g = sample(s, rng);
    const auto [c1, c2] = crossover(g, g, rng);
    CHECK(c1 == g);
    CHECK(c2 == g);

    double from_a = 0, total = 0;
    for (int t = 0; t < 10000; ++t) {
        const auto a = sample(s, rng);
        const auto b = sample(s, rng);
        const auto [x, y] = crossover(a, b, rng);
        for (std::size_t k = 0; k < a.values.size(); ++k) {
            CHECK((x.values[k] == a.values[k] || x.values[k] == b.values[k]));
            if (a.values[k] != b.values[k]) {
                from_a += x.values[k] == a.values[k];
                total += 1;
            }
        }
    }
    CHECK(std::abs(from_a / total - 0.5) < 0.01);

    Genome short_g{{0, 1}};
    CHECK_THROWS_AS(crossover(g, short_g, rng), SpaceMismatch);
}

TEST_CASE("genome serialization round trip") {
    const auto s = space_for(Task::PatchRegression);
    Rng rng(21);
    for (int i = 0; i < 100; ++i) {
        const auto g = sample(s, rng);
        CHECK(genome_from_string(genome_to_string(g)) == g);
    }
    CHECK_THROWS_AS(genome_from_string("[1,-2]"), SchemaError);
}

TEST_CASE("decode is pure") {
    const auto s = space_for(Task::SetClassification);
    Rng rng(4);
    const auto g = sample(s, rng);
    CHECK(decode(s, g) == decode(s, g));
}

TEST_CASE("genome validity checks") {
    const auto s = space_for(Task::SetClassification);
    Genome g{std::vector<std::size_t>(s.size(), 0)};
    g.values[0] = 99;
    CHECK_THROWS_AS(decode(s, g), SpaceMismatch);
    CHECK_THROWS_AS(decode(s, Genome{{0}}), SpaceMismatch);
}

TEST_CASE("space schema checks") {
    CHECK_THROWS_AS(custom_space({GeneDef::integer("a", {})}), SchemaError);
    CHECK_THROWS_AS(custom_space({GeneDef::integer("a", {1, 1})}), SchemaError);
    CHECK_THROWS_AS(custom_space({GeneDef::integer("a", {1}), GeneDef::integer("a", {2})}), SchemaError);
    SpaceDef s = space_for(Task::SetClassification);
    s.template_slots.push_back("phi1.width");
    CHECK_THROWS_AS(check_space(s), SchemaError);
}
