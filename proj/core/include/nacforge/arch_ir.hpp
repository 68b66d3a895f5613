#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace nac {

enum class Task { PatchRegression, SetClassification };

std::string_view to_string(Task task);
Task task_from_string(std::string_view name);

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

enum class ActKind { ReLU, LeakyReLU, None };
enum class PoolKind { Mean, Max, Sum };

std::string_view to_string(ActKind kind);
std::string_view to_string(PoolKind kind);

struct Conv2d {
    int in_ch = 1;
    int out_ch = 1;
    int kernel = 1;
    int stride = 1;
    bool operator==(const Conv2d&) const = default;
};

struct Linear {
    int in_dim = 1;
    int out_dim = 1;
    bool operator==(const Linear&) const = default;
};

struct BatchNorm {
    int channels = 1;
    bool operator==(const BatchNorm&) const = default;
};

// Negative slope is kept as an exact rational.
struct Activation {
    ActKind kind = ActKind::None;
    int slope_num = 1;
    int slope_den = 128;

    static Activation relu() { return {ActKind::ReLU, 1, 128}; }
    static Activation leaky_relu() { return {ActKind::LeakyReLU, 1, 128}; }
    static Activation none() { return {ActKind::None, 1, 128}; }

    double slope() const { return static_cast<double>(slope_num) / slope_den; }
    bool operator==(const Activation&) const = default;
};

struct Flatten {
    bool operator==(const Flatten&) const = default;
};

// Single-head attention over spatial positions: 1x1 query/key/value convs to
// qkv_dim channels, a 1x1 projection back to `channels`, residual skip, then
// skip_act.
struct ConvAttention {
    int channels = 1;
    int qkv_dim = 1;
    Activation skip_act;
    bool operator==(const ConvAttention&) const = default;
};

struct SetPool {
    PoolKind kind = PoolKind::Mean;
    bool operator==(const SetPool&) const = default;
};

using LayerSpec = std::variant<Conv2d, Linear, BatchNorm, Activation, Flatten, ConvAttention, SetPool>;

std::string_view layer_type_name(const LayerSpec& layer);
std::string describe(const LayerSpec& layer);

struct ArchDescriptor {
    Task task = Task::PatchRegression;
    Shape input_shape;
    std::vector<LayerSpec> layers;
    // Number of leading layers applied per set element (phi); 0 for patches.
    std::size_t phi_len = 0;

    bool operator==(const ArchDescriptor&) const = default;
};

inline constexpr int kPatchSize = 11;
inline constexpr int kSetSize = 8;
inline constexpr int kSetFeatures = 3;
inline constexpr int kNumJetClasses = 5;
inline constexpr int kPatchOutputs = 2;

Shape default_input_shape(Task task);
int head_dim(Task task);

// One output shape per layer (batch dimension excluded). Patch tensors are
// C x H x W; set tensors inside phi are S x D; pooled/dense tensors are D.
std::vector<Shape> infer_shapes(const ArchDescriptor& arch);

std::int64_t layer_params(const LayerSpec& layer);
std::int64_t count_params(const ArchDescriptor& arch);

struct ArchIssue {
    std::string code;
    std::string message;
};

// Every violation found; empty means the architecture is valid.
std::vector<ArchIssue> validate(const ArchDescriptor& arch);
bool is_valid(const ArchDescriptor& arch);

std::vector<std::string> builtin_model_names();
ArchDescriptor builtin_model(std::string_view name);

nlohmann::json arch_to_json(const ArchDescriptor& arch);
ArchDescriptor arch_from_json(const nlohmann::json& j);

std::string arch_to_string(const ArchDescriptor& arch);
ArchDescriptor arch_from_string(const std::string& text);

ArchDescriptor load_arch(const std::string& path);
void save_arch(const ArchDescriptor& arch, const std::string& path);

}  // namespace nac
