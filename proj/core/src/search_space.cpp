#include "nacforge/search_space.hpp"

#include <algorithm>
#include <set>

#include "nacforge/errors.hpp"

namespace nac {

namespace {

const std::vector<std::string> kBlockChoices = {"Conv", "Attention", "None"};
const std::vector<int> kChannelChoices = {1, 2, 4, 8, 16, 32, 64};
const std::vector<int> kKernelChoices = {1, 3};
const std::vector<std::string> kNormChoices = {"Batch", "None"};
const std::vector<std::string> kActChoices = {"ReLU", "LeakyReLU", "None"};
const std::vector<int> kLinearChoices = {4, 8, 16, 32, 64};
const std::vector<std::string> kAggregatorChoices = {"mean", "maximum"};

// Fixed stem shared by every optimized BraggNN model.
constexpr int kStemChannels = 8;

void add_norm_act(std::vector<GeneDef>& genes, const std::string& prefix) {
    genes.push_back(GeneDef::categorical(prefix + ".norm", kNormChoices));
    genes.push_back(GeneDef::categorical(prefix + ".act", kActChoices));
}

SpaceDef bragg_space() {
    SpaceDef s;
    s.task = Task::PatchRegression;
    for (int b = 1; b <= 2; ++b) {
        const std::string p = "block" + std::to_string(b);
        s.genes.push_back(GeneDef::categorical(p + ".type", kBlockChoices));
        s.genes.push_back(GeneDef::integer(p + ".conv1.out_ch", kChannelChoices));
        s.genes.push_back(GeneDef::integer(p + ".conv1.kernel", kKernelChoices));
        add_norm_act(s.genes, p + ".conv1");
        s.genes.push_back(GeneDef::integer(p + ".conv2.out_ch", kChannelChoices));
        s.genes.push_back(GeneDef::integer(p + ".conv2.kernel", kKernelChoices));
        add_norm_act(s.genes, p + ".conv2");
        s.genes.push_back(GeneDef::integer(p + ".attn.qkv_dim", kChannelChoices));
        s.genes.push_back(GeneDef::categorical(p + ".attn.skip_act", kActChoices));
    }
    for (int f = 1; f <= 4; ++f) {
        const std::string p = "fc" + std::to_string(f);
        if (f < 4) s.genes.push_back(GeneDef::integer(p + ".out_dim", kLinearChoices));
        add_norm_act(s.genes, p);
    }
    for (const auto& g : s.genes) s.template_slots.push_back(g.name);
    return s;
}

SpaceDef deepsets_space() {
    SpaceDef s;
    s.task = Task::SetClassification;
    s.genes.push_back(GeneDef::integer("phi1.width", kLinearChoices));
    add_norm_act(s.genes, "phi1");
    s.genes.push_back(GeneDef::integer("phi2.bottleneck", kChannelChoices));
    add_norm_act(s.genes, "phi2");
    s.genes.push_back(GeneDef::categorical("aggregator", kAggregatorChoices));
    for (int r = 1; r <= 4; ++r) {
        const std::string p = "rho" + std::to_string(r);
        if (r < 4) s.genes.push_back(GeneDef::integer(p + ".width", kLinearChoices));
        add_norm_act(s.genes, p);
    }
    for (const auto& g : s.genes) s.template_slots.push_back(g.name);
    return s;
}

// Reads gene values by name during decoding.
struct GeneReader {
    const SpaceDef& space;
    const Genome& genome;

    std::size_t index(std::string_view name) const { return genome.values[space.index_of(name)]; }
    int integer(std::string_view name) const { return space.gene(name).values[index(name)]; }
    const std::string& label(std::string_view name) const { return space.gene(name).labels[index(name)]; }

    Activation act(std::string_view name) const {
        const auto& l = label(name);
        if (l == "ReLU") return Activation::relu();
        if (l == "LeakyReLU") return Activation::leaky_relu();
        return Activation::none();
    }

    void push_norm_act(std::vector<LayerSpec>& layers, const std::string& prefix, int channels) const {
        if (label(prefix + ".norm") == "Batch") layers.emplace_back(BatchNorm{channels});
        const Activation a = act(prefix + ".act");
        if (a.kind != ActKind::None) layers.emplace_back(a);
    }
};

ArchDescriptor decode_bragg(const GeneReader& g) {
    ArchDescriptor arch{Task::PatchRegression, default_input_shape(Task::PatchRegression), {}, 0};
    auto& layers = arch.layers;
    layers.emplace_back(Conv2d{1, kStemChannels, 3, 1});
    int channels = kStemChannels;
    int spatial = kPatchSize - 2;
    for (int b = 1; b <= 2; ++b) {
        const std::string p = "block" + std::to_string(b);
        const auto& type = g.label(p + ".type");
        if (type == "Conv") {
            const int c1 = g.integer(p + ".conv1.out_ch");
            const int k1 = g.integer(p + ".conv1.kernel");
            layers.emplace_back(Conv2d{channels, c1, k1, 1});
            g.push_norm_act(layers, p + ".conv1", c1);
            const int c2 = g.integer(p + ".conv2.out_ch");
            const int k2 = g.integer(p + ".conv2.kernel");
            layers.emplace_back(Conv2d{c1, c2, k2, 1});
            g.push_norm_act(layers, p + ".conv2", c2);
            channels = c2;
            spatial -= (k1 - 1) + (k2 - 1);
        } else if (type == "Attention") {
            layers.emplace_back(ConvAttention{channels, g.integer(p + ".attn.qkv_dim"), g.act(p + ".attn.skip_act")});
        }
    }
    layers.emplace_back(Flatten{});
    int dim = channels * spatial * spatial;
    for (int f = 1; f <= 4; ++f) {
        const std::string p = "fc" + std::to_string(f);
        const int out = f < 4 ? g.integer(p + ".out_dim") : kPatchOutputs;
        layers.emplace_back(Linear{dim, out});
        g.push_norm_act(layers, p, out);
        dim = out;
    }
    return arch;
}

ArchDescriptor decode_deepsets(const GeneReader& g) {
    ArchDescriptor arch{Task::SetClassification, default_input_shape(Task::SetClassification), {}, 0};
    auto& layers = arch.layers;
    const int w1 = g.integer("phi1.width");
    layers.emplace_back(Linear{kSetFeatures, w1});
    g.push_norm_act(layers, "phi1", w1);
    const int bottleneck = g.integer("phi2.bottleneck");
    layers.emplace_back(Linear{w1, bottleneck});
    g.push_norm_act(layers, "phi2", bottleneck);
    arch.phi_len = layers.size();
    layers.emplace_back(SetPool{g.label("aggregator") == "mean" ? PoolKind::Mean : PoolKind::Max});
    int dim = bottleneck;
    for (int r = 1; r <= 4; ++r) {
        const std::string p = "rho" + std::to_string(r);
        const int out = r < 4 ? g.integer(p + ".width") : kNumJetClasses;
        layers.emplace_back(Linear{dim, out});
        g.push_norm_act(layers, p, out);
        dim = out;
    }
    return arch;
}

}  // namespace

GeneDef GeneDef::categorical(std::string name, std::vector<std::string> labels) {
    GeneDef g;
    g.name = std::move(name);
    g.kind = GeneKind::Categorical;
    g.labels = std::move(labels);
    return g;
}

GeneDef GeneDef::integer(std::string name, std::vector<int> values) {
    GeneDef g;
    g.name = std::move(name);
    g.kind = GeneKind::IntegerChoice;
    g.values = std::move(values);
    return g;
}

std::string GeneDef::choice_string(std::size_t index) const {
    return kind == GeneKind::Categorical ? labels.at(index) : std::to_string(values.at(index));
}

std::size_t SpaceDef::index_of(std::string_view gene_name) const {
    for (std::size_t i = 0; i < genes.size(); ++i) {
        if (genes[i].name == gene_name) return i;
    }
    throw SchemaError("space has no gene named '" + std::string(gene_name) + "'");
}

const GeneDef& SpaceDef::gene(std::string_view gene_name) const { return genes[index_of(gene_name)]; }

void check_space(const SpaceDef& space) {
    std::set<std::string> names;
    for (const auto& g : space.genes) {
        if (g.choice_count() == 0) throw SchemaError("gene '" + g.name + "' has no choices");
        if (!names.insert(g.name).second) throw SchemaError("duplicate gene name '" + g.name + "'");
        if (g.kind == GeneKind::Categorical) {
            std::set<std::string> seen(g.labels.begin(), g.labels.end());
            if (seen.size() != g.labels.size()) throw SchemaError("gene '" + g.name + "' has duplicate choices");
        } else {
            std::set<int> seen(g.values.begin(), g.values.end());
            if (seen.size() != g.values.size()) throw SchemaError("gene '" + g.name + "' has duplicate choices");
        }
    }
    std::multiset<std::string> used(space.template_slots.begin(), space.template_slots.end());
    for (const auto& slot : space.template_slots) {
        if (!names.count(slot)) throw SchemaError("template references missing gene '" + slot + "'");
        if (used.count(slot) != 1) throw SchemaError("template references gene '" + slot + "' more than once");
    }
}

void check_genome(const SpaceDef& space, const Genome& genome) {
    if (genome.values.size() != space.genes.size()) {
        throw SpaceMismatch("genome has " + std::to_string(genome.values.size()) + " genes, space has " +
                            std::to_string(space.genes.size()));
    }
    for (std::size_t i = 0; i < genome.values.size(); ++i) {
        if (genome.values[i] >= space.genes[i].choice_count()) {
            throw SpaceMismatch("gene '" + space.genes[i].name + "' index " + std::to_string(genome.values[i]) +
                                " out of range");
        }
    }
}

SpaceDef space_for(Task task) {
    SpaceDef s = task == Task::PatchRegression ? bragg_space() : deepsets_space();
    check_space(s);
    return s;
}

SpaceDef custom_space(std::vector<GeneDef> genes) {
    SpaceDef s;
    s.genes = std::move(genes);
    check_space(s);
    return s;
}

Genome sample(const SpaceDef& space, Rng& rng) {
    Genome g;
    g.values.reserve(space.genes.size());
    for (const auto& gene : space.genes) g.values.push_back(rng.index(gene.choice_count()));
    return g;
}

Genome mutate(const SpaceDef& space, const Genome& genome, double rate, Rng& rng) {
    if (rate < 0.0 || rate > 1.0) throw DomainError("mutation rate must lie in [0, 1]");
    check_genome(space, genome);
    Genome out = genome;
    auto change = [&](std::size_t i) {
        const std::size_t n = space.genes[i].choice_count();
        const std::size_t step = 1 + rng.index(n - 1);
        out.values[i] = (out.values[i] + step) % n;
    };
    bool changed = false;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        if (space.genes[i].choice_count() < 2) continue;
        if (rng.bernoulli(rate)) {
            change(i);
            changed = true;
        }
    }
    if (!changed) {
        std::vector<std::size_t> mutable_loci;
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            if (space.genes[i].choice_count() >= 2) mutable_loci.push_back(i);
        }
        if (!mutable_loci.empty()) change(mutable_loci[rng.index(mutable_loci.size())]);
    }
    return out;
}

std::pair<Genome, Genome> crossover(const Genome& a, const Genome& b, Rng& rng) {
    if (a.values.size() != b.values.size()) {
        throw SpaceMismatch("crossover parents have " + std::to_string(a.values.size()) + " and " +
                            std::to_string(b.values.size()) + " genes");
    }
    Genome c1 = a;
    Genome c2 = b;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (rng.bernoulli(0.5)) std::swap(c1.values[i], c2.values[i]);
    }
    return {std::move(c1), std::move(c2)};
}

ArchDescriptor decode(const SpaceDef& space, const Genome& genome) {
    if (!space.task) throw SchemaError("space has no decoding template");
    check_genome(space, genome);
    const GeneReader reader{space, genome};
    return *space.task == Task::PatchRegression ? decode_bragg(reader) : decode_deepsets(reader);
}

nlohmann::json genome_to_json(const Genome& genome) { return nlohmann::json(genome.values); }

Genome genome_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw SchemaError("genome must be a JSON array of integers");
    Genome g;
    for (const auto& v : j) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
            throw SchemaError("genome entries must be non-negative integers");
        }
        g.values.push_back(v.get<std::size_t>());
    }
    return g;
}

std::string genome_to_string(const Genome& genome) { return genome_to_json(genome).dump(); }

Genome genome_from_string(const std::string& text) {
    try {
        return genome_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("genome JSON: ") + e.what());
    }
}

nlohmann::json space_to_json(const SpaceDef& space) {
    nlohmann::json genes = nlohmann::json::array();
    for (const auto& g : space.genes) {
        nlohmann::json choices = nlohmann::json::array();
        for (std::size_t i = 0; i < g.choice_count(); ++i) {
            if (g.kind == GeneKind::Categorical) {
                choices.push_back(g.labels[i]);
            } else {
                choices.push_back(g.values[i]);
            }
        }
        genes.push_back({{"name", g.name},
                         {"kind", g.kind == GeneKind::Categorical ? "Categorical" : "IntegerChoice"},
                         {"choices", std::move(choices)}});
    }
    nlohmann::json j{{"genes", std::move(genes)}};
    j["task"] = space.task ? nlohmann::json(std::string(to_string(*space.task))) : nlohmann::json(nullptr);
    return j;
}

}  // namespace nac
