#include "nacforge/arch_ir.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "nacforge/errors.hpp"

namespace nac {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

ActKind act_from_string(std::string_view s) {
    if (s == "ReLU") return ActKind::ReLU;
    if (s == "LeakyReLU") return ActKind::LeakyReLU;
    if (s == "None") return ActKind::None;
    throw SchemaError("unknown activation kind '" + std::string(s) + "'");
}

PoolKind pool_from_string(std::string_view s) {
    if (s == "Mean") return PoolKind::Mean;
    if (s == "Max") return PoolKind::Max;
    if (s == "Sum") return PoolKind::Sum;
    throw SchemaError("unknown pool kind '" + std::string(s) + "'");
}

std::string slope_string(const Activation& a) {
    return std::to_string(a.slope_num) + "/" + std::to_string(a.slope_den);
}

Activation activation_from_json(const nlohmann::json& j, const char* kind_key) {
    Activation a;
    a.kind = act_from_string(j.at(kind_key).get<std::string>());
    if (j.contains("slope")) {
        const auto text = j.at("slope").get<std::string>();
        const auto slash = text.find('/');
        if (slash == std::string::npos) {
            throw SchemaError("slope must be a rational 'num/den', got '" + text + "'");
        }
        a.slope_num = std::stoi(text.substr(0, slash));
        a.slope_den = std::stoi(text.substr(slash + 1));
        if (a.slope_den <= 0) {
            throw SchemaError("slope denominator must be positive");
        }
    }
    return a;
}

// Incoming-shape helpers. Shapes are checked before each layer is applied.
struct ShapeWalker {
    const ArchDescriptor& arch;
    std::vector<Shape> out;

    [[noreturn]] void mismatch(std::size_t i, const std::string& what) const {
        throw ShapeMismatch("layer " + std::to_string(i) + " (" + describe(arch.layers[i]) + "): " + what);
    }

    Shape apply(std::size_t i, const Shape& in) const {
        const bool in_phi = arch.task == Task::SetClassification && i < arch.phi_len;
        return std::visit(
            Overloaded{
                [&](const Conv2d& c) -> Shape {
                    if (in.size() != 3) mismatch(i, "Conv2d expects C x H x W input, got " + shape_string(in));
                    if (in[0] != c.in_ch) {
                        mismatch(i, "in_ch " + std::to_string(c.in_ch) + " != incoming channels " +
                                        std::to_string(in[0]));
                    }
                    const int h = (in[1] - c.kernel) / c.stride + 1;
                    const int w = (in[2] - c.kernel) / c.stride + 1;
                    if (in[1] - c.kernel < 0 || in[2] - c.kernel < 0 || h <= 0 || w <= 0) {
                        throw NonPositiveDim("layer " + std::to_string(i) + " (" + describe(arch.layers[i]) +
                                             "): spatial size " + shape_string(in) + " too small for kernel " +
                                             std::to_string(c.kernel));
                    }
                    return {c.out_ch, h, w};
                },
                [&](const Linear& l) -> Shape {
                    if (in_phi) {
                        if (in.size() != 2) mismatch(i, "per-element Linear expects S x D, got " + shape_string(in));
                        if (in[1] != l.in_dim) {
                            mismatch(i, "in_dim " + std::to_string(l.in_dim) + " != incoming " + std::to_string(in[1]));
                        }
                        return {in[0], l.out_dim};
                    }
                    if (in.size() != 1) mismatch(i, "Linear expects a flat input, got " + shape_string(in));
                    if (in[0] != l.in_dim) {
                        mismatch(i, "in_dim " + std::to_string(l.in_dim) + " != incoming " + std::to_string(in[0]));
                    }
                    return {l.out_dim};
                },
                [&](const BatchNorm& b) -> Shape {
                    int channels = 0;
                    if (in.size() == 3) {
                        channels = in[0];
                    } else if (in.size() == 2 && in_phi) {
                        channels = in[1];
                    } else if (in.size() == 1) {
                        channels = in[0];
                    } else {
                        mismatch(i, "BatchNorm cannot normalize " + shape_string(in));
                    }
                    if (channels != b.channels) {
                        mismatch(i, "channels " + std::to_string(b.channels) + " != incoming " +
                                        std::to_string(channels));
                    }
                    return in;
                },
                [&](const Activation&) -> Shape { return in; },
                [&](const Flatten&) -> Shape {
                    if (in_phi) mismatch(i, "Flatten is not allowed inside the per-element network");
                    return {static_cast<int>(shape_numel(in))};
                },
                [&](const ConvAttention& a) -> Shape {
                    if (in.size() != 3) mismatch(i, "ConvAttention expects C x H x W input, got " + shape_string(in));
                    if (in[0] != a.channels) {
                        mismatch(i, "channels " + std::to_string(a.channels) + " != incoming " +
                                        std::to_string(in[0]));
                    }
                    return in;
                },
                [&](const SetPool&) -> Shape {
                    if (in.size() != 2) mismatch(i, "SetPool expects S x D, got " + shape_string(in));
                    return {in[1]};
                },
            },
            arch.layers[i]);
    }
};

void check_static(const ArchDescriptor& arch, std::vector<ArchIssue>& issues) {
    auto bad = [&](std::size_t i, const std::string& what) {
        issues.push_back({"InvalidLayer", "layer " + std::to_string(i) + " (" + describe(arch.layers[i]) + "): " + what});
    };
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        std::visit(Overloaded{
                       [&](const Conv2d& c) {
                           if (c.in_ch < 1 || c.out_ch < 1) bad(i, "channel counts must be >= 1");
                           if (c.kernel != 1 && c.kernel != 3) bad(i, "kernel must be 1 or 3");
                           if (c.stride != 1) bad(i, "stride must be 1");
                       },
                       [&](const Linear& l) {
                           if (l.in_dim < 1 || l.out_dim < 1) bad(i, "dims must be >= 1");
                       },
                       [&](const BatchNorm& b) {
                           if (b.channels < 1) bad(i, "channels must be >= 1");
                       },
                       [&](const Activation& a) {
                           if (a.slope_den < 1) bad(i, "slope denominator must be >= 1");
                       },
                       [&](const Flatten&) {},
                       [&](const ConvAttention& a) {
                           if (a.channels < 1 || a.qkv_dim < 1) bad(i, "dims must be >= 1");
                       },
                       [&](const SetPool&) {},
                   },
                   arch.layers[i]);
    }
}

}  // namespace

std::string_view to_string(Task task) {
    return task == Task::PatchRegression ? "PatchRegression" : "SetClassification";
}

Task task_from_string(std::string_view name) {
    if (name == "PatchRegression") return Task::PatchRegression;
    if (name == "SetClassification") return Task::SetClassification;
    throw SchemaError("unknown task '" + std::string(name) + "'");
}

std::string shape_string(const Shape& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s.empty() ? "()" : s;
}

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string_view to_string(ActKind kind) {
    switch (kind) {
        case ActKind::ReLU: return "ReLU";
        case ActKind::LeakyReLU: return "LeakyReLU";
        case ActKind::None: return "None";
    }
    return "None";
}

std::string_view to_string(PoolKind kind) {
    switch (kind) {
        case PoolKind::Mean: return "Mean";
        case PoolKind::Max: return "Max";
        case PoolKind::Sum: return "Sum";
    }
    return "Mean";
}

std::string_view layer_type_name(const LayerSpec& layer) {
    static constexpr std::string_view names[] = {"Conv2d",  "Linear",        "BatchNorm", "Activation",
                                                 "Flatten", "ConvAttention", "SetPool"};
    return names[layer.index()];
}

std::string describe(const LayerSpec& layer) {
    return std::visit(
        Overloaded{
            [](const Conv2d& c) {
                return "Conv(" + std::to_string(c.in_ch) + ", " + std::to_string(c.out_ch) + ", " +
                       std::to_string(c.kernel) + ", " + std::to_string(c.stride) + ")";
            },
            [](const Linear& l) {
                return "Linear(" + std::to_string(l.in_dim) + ", " + std::to_string(l.out_dim) + ")";
            },
            [](const BatchNorm& b) { return "BN(" + std::to_string(b.channels) + ")"; },
            [](const Activation& a) { return std::string(to_string(a.kind)); },
            [](const Flatten&) { return std::string("Flatten"); },
            [](const ConvAttention& a) {
                return "ConvAttention(" + std::to_string(a.channels) + ", " + std::to_string(a.qkv_dim) + ", " +
                       std::string(to_string(a.skip_act.kind)) + ")";
            },
            [](const SetPool& p) { return "SetPool(" + std::string(to_string(p.kind)) + ")"; },
        },
        layer);
}

Shape default_input_shape(Task task) {
    if (task == Task::PatchRegression) return {1, kPatchSize, kPatchSize};
    return {kSetSize, kSetFeatures};
}

int head_dim(Task task) { return task == Task::PatchRegression ? kPatchOutputs : kNumJetClasses; }

std::vector<Shape> infer_shapes(const ArchDescriptor& arch) {
    if (arch.layers.empty()) {
        throw ShapeMismatch("architecture has no layers");
    }
    for (int d : arch.input_shape) {
        if (d <= 0) throw NonPositiveDim("input shape " + shape_string(arch.input_shape) + " has a non-positive dim");
    }
    ShapeWalker walker{arch, {}};
    walker.out.reserve(arch.layers.size());
    Shape current = arch.input_shape;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        current = walker.apply(i, current);
        walker.out.push_back(current);
    }
    return std::move(walker.out);
}

std::int64_t layer_params(const LayerSpec& layer) {
    return std::visit(Overloaded{
                          [](const Conv2d& c) -> std::int64_t {
                              return std::int64_t{c.out_ch} * c.in_ch * c.kernel * c.kernel + c.out_ch;
                          },
                          [](const Linear& l) -> std::int64_t { return std::int64_t{l.out_dim} * l.in_dim + l.out_dim; },
                          [](const BatchNorm& b) -> std::int64_t { return 2 * std::int64_t{b.channels}; },
                          [](const Activation&) -> std::int64_t { return 0; },
                          [](const Flatten&) -> std::int64_t { return 0; },
                          [](const ConvAttention& a) -> std::int64_t {
                              const std::int64_t qkv = std::int64_t{a.qkv_dim} * a.channels + a.qkv_dim;
                              const std::int64_t proj = std::int64_t{a.channels} * a.qkv_dim + a.channels;
                              return 3 * qkv + proj;
                          },
                          [](const SetPool&) -> std::int64_t { return 0; },
                      },
                      layer);
}

std::int64_t count_params(const ArchDescriptor& arch) {
    infer_shapes(arch);
    std::int64_t total = 0;
    for (const auto& layer : arch.layers) total += layer_params(layer);
    return total;
}

std::vector<ArchIssue> validate(const ArchDescriptor& arch) {
    std::vector<ArchIssue> issues;
    if (arch.layers.empty()) {
        issues.push_back({"Structure", "architecture has no layers"});
        return issues;
    }
    check_static(arch, issues);

    std::size_t pools = 0;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        if (std::holds_alternative<SetPool>(arch.layers[i])) {
            ++pools;
            if (arch.task == Task::SetClassification && i != arch.phi_len) {
                issues.push_back({"Structure", "SetPool at layer " + std::to_string(i) +
                                                   " but phi_len is " + std::to_string(arch.phi_len)});
            }
        }
    }
    if (arch.task == Task::SetClassification) {
        if (pools != 1) {
            issues.push_back({"Structure", "set architecture needs exactly one SetPool, found " + std::to_string(pools)});
        }
        if (arch.input_shape.size() != 2) {
            issues.push_back({"Structure", "set input shape must be S x D, got " + shape_string(arch.input_shape)});
        }
    } else {
        if (pools != 0) issues.push_back({"Structure", "SetPool is only valid in set architectures"});
        if (arch.phi_len != 0) issues.push_back({"Structure", "phi_len must be 0 for patch architectures"});
        if (arch.input_shape.size() != 3) {
            issues.push_back({"Structure", "patch input shape must be C x H x W, got " + shape_string(arch.input_shape)});
        }
    }

    try {
        const auto shapes = infer_shapes(arch);
        const Shape& last = shapes.back();
        const int want = head_dim(arch.task);
        if (last.size() != 1 || last[0] != want) {
            issues.push_back({"HeadDim", "head dim " + shape_string(last) + " != " + std::to_string(want)});
        }
    } catch (const ShapeMismatch& e) {
        issues.push_back({"ShapeMismatch", e.what()});
    } catch (const NonPositiveDim& e) {
        issues.push_back({"NonPositiveDim", e.what()});
    }
    return issues;
}

bool is_valid(const ArchDescriptor& arch) { return validate(arch).empty(); }

namespace {

ArchDescriptor patch_arch(std::vector<LayerSpec> layers) {
    return {Task::PatchRegression, default_input_shape(Task::PatchRegression), std::move(layers), 0};
}

ArchDescriptor set_arch(std::vector<LayerSpec> phi, PoolKind pool, std::vector<LayerSpec> rho) {
    ArchDescriptor a{Task::SetClassification, default_input_shape(Task::SetClassification), {}, phi.size()};
    a.layers = std::move(phi);
    a.layers.emplace_back(SetPool{pool});
    a.layers.insert(a.layers.end(), rho.begin(), rho.end());
    return a;
}

const Activation kRelu = Activation::relu();
const Activation kLeaky = Activation::leaky_relu();

Conv2d conv(int in, int out, int k = 3) { return {in, out, k, 1}; }
Linear lin(int in, int out) { return {in, out}; }
BatchNorm bn(int c) { return {c}; }

const std::map<std::string, ArchDescriptor, std::less<>>& fixtures() {
    static const std::map<std::string, ArchDescriptor, std::less<>> table = {
        {"bragg_tiny",
         patch_arch({conv(1, 8), Flatten{}, lin(8 * 9 * 9, 32), kLeaky, lin(32, 32), kLeaky, lin(32, 32), bn(32), kLeaky,
                     lin(32, 2), bn(2)})},
        {"bragg_small",
         patch_arch({conv(1, 8), conv(8, 2), kLeaky, conv(2, 4), bn(4), kLeaky, Flatten{}, lin(4 * 5 * 5, 64), bn(64),
                     kLeaky, lin(64, 32), bn(32), kRelu, lin(32, 16), bn(16), kLeaky, lin(16, 2), bn(2)})},
        {"bragg_medium",
         patch_arch({conv(1, 8), conv(8, 16), bn(16), kRelu, conv(16, 4), bn(4), kLeaky, Flatten{}, lin(4 * 5 * 5, 64),
                     kLeaky, lin(64, 64), kLeaky, lin(64, 16), bn(16), kLeaky, lin(16, 2), bn(2)})},
        {"bragg_large",
         patch_arch({conv(1, 8), conv(8, 64), bn(64), conv(64, 32), bn(32), Flatten{}, lin(5 * 5 * 32, 32), kLeaky,
                     lin(32, 64), kRelu, lin(64, 64), bn(64), kLeaky, lin(64, 2), bn(2)})},
        {"deepsets_tiny",
         set_arch({lin(3, 8), bn(8), kRelu, lin(8, 8)}, PoolKind::Mean, {lin(8, 32), kRelu, lin(32, 5)})},
        {"deepsets_small",
         set_arch({lin(3, 16), kLeaky, lin(16, 8), bn(8)}, PoolKind::Mean,
                  {lin(8, 8), bn(8), kRelu, lin(8, 16), kLeaky, lin(16, 16), kLeaky, lin(16, 5), bn(5)})},
        {"deepsets_medium",
         set_arch({lin(3, 32), kRelu, lin(32, 8)}, PoolKind::Mean,
                  {lin(8, 32), bn(32), kLeaky, lin(32, 16), kLeaky, lin(16, 64), bn(64), kLeaky, lin(64, 5)})},
        {"deepsets_large",
         set_arch({lin(3, 64), bn(64), kRelu, lin(64, 16), bn(16)}, PoolKind::Mean,
                  {lin(16, 128), bn(128), kRelu, lin(128, 16), bn(16), kLeaky, lin(16, 64), bn(64), kRelu, lin(64, 5),
                   bn(5)})},
        {"deepsets_original",
         set_arch({lin(3, 32), kRelu, lin(32, 32), kRelu}, PoolKind::Mean, {lin(32, 16), kRelu, lin(16, 5)})},
    };
    return table;
}

}  // namespace

std::vector<std::string> builtin_model_names() {
    std::vector<std::string> names;
    for (const auto& [name, _] : fixtures()) names.push_back(name);
    return names;
}

ArchDescriptor builtin_model(std::string_view name) {
    const auto& table = fixtures();
    const auto it = table.find(name);
    if (it == table.end()) {
        throw UnknownModel("no built-in architecture named '" + std::string(name) + "'");
    }
    return it->second;
}

nlohmann::json arch_to_json(const ArchDescriptor& arch) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : arch.layers) {
        nlohmann::json j;
        j["type"] = std::string(layer_type_name(layer));
        std::visit(Overloaded{
                       [&](const Conv2d& c) {
                           j["in_ch"] = c.in_ch;
                           j["out_ch"] = c.out_ch;
                           j["kernel"] = c.kernel;
                           j["stride"] = c.stride;
                       },
                       [&](const Linear& l) {
                           j["in_dim"] = l.in_dim;
                           j["out_dim"] = l.out_dim;
                       },
                       [&](const BatchNorm& b) { j["channels"] = b.channels; },
                       [&](const Activation& a) {
                           j["kind"] = std::string(to_string(a.kind));
                           if (a.kind == ActKind::LeakyReLU) j["slope"] = slope_string(a);
                       },
                       [&](const Flatten&) {},
                       [&](const ConvAttention& a) {
                           j["channels"] = a.channels;
                           j["qkv_dim"] = a.qkv_dim;
                           j["skip_act"] = std::string(to_string(a.skip_act.kind));
                       },
                       [&](const SetPool& p) { j["kind"] = std::string(to_string(p.kind)); },
                   },
                   layer);
        layers.push_back(std::move(j));
    }
    return nlohmann::json{{"task", std::string(to_string(arch.task))},
                          {"input_shape", arch.input_shape},
                          {"phi_len", arch.phi_len},
                          {"layers", std::move(layers)}};
}

ArchDescriptor arch_from_json(const nlohmann::json& j) {
    try {
        ArchDescriptor arch;
        arch.task = task_from_string(j.at("task").get<std::string>());
        arch.input_shape = j.at("input_shape").get<Shape>();
        arch.phi_len = j.value("phi_len", std::size_t{0});
        for (const auto& l : j.at("layers")) {
            const auto type = l.at("type").get<std::string>();
            if (type == "Conv2d") {
                arch.layers.emplace_back(Conv2d{l.at("in_ch").get<int>(), l.at("out_ch").get<int>(),
                                                l.at("kernel").get<int>(), l.value("stride", 1)});
            } else if (type == "Linear") {
                arch.layers.emplace_back(Linear{l.at("in_dim").get<int>(), l.at("out_dim").get<int>()});
            } else if (type == "BatchNorm") {
                arch.layers.emplace_back(BatchNorm{l.at("channels").get<int>()});
            } else if (type == "Activation") {
                arch.layers.emplace_back(activation_from_json(l, "kind"));
            } else if (type == "Flatten") {
                arch.layers.emplace_back(Flatten{});
            } else if (type == "ConvAttention") {
                Activation skip;
                skip.kind = act_from_string(l.at("skip_act").get<std::string>());
                arch.layers.emplace_back(ConvAttention{l.at("channels").get<int>(), l.at("qkv_dim").get<int>(), skip});
            } else if (type == "SetPool") {
                arch.layers.emplace_back(SetPool{pool_from_string(l.at("kind").get<std::string>())});
            } else {
                throw SchemaError("unknown layer type '" + type + "'");
            }
        }
        return arch;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("architecture JSON: ") + e.what());
    }
}

std::string arch_to_string(const ArchDescriptor& arch) { return arch_to_json(arch).dump(2) + "\n"; }

ArchDescriptor arch_from_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("architecture JSON: ") + e.what());
    }
    return arch_from_json(j);
}

ArchDescriptor load_arch(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open architecture file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return arch_from_string(buf.str());
}

void save_arch(const ArchDescriptor& arch, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write architecture file '" + path + "'");
    out << arch_to_string(arch);
}

}  // namespace nac
