#include "nacforge/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nacforge/errors.hpp"

namespace nac {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    void bytes(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(in_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
        return std::bit_cast<double>(v);
    }
    std::string bytes() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw CheckpointError("truncated checkpoint");
    }
    const std::string& in_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'N', 'A', 'C', 'F'};
constexpr std::uint32_t kMaxCount = 1u << 28;

std::uint32_t checked_count(std::uint32_t n, const char* what) {
    if (n > kMaxCount) throw CheckpointError(std::string("implausible ") + what + " count");
    return n;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    check_params(ckpt.arch, ckpt.params);
    Writer w;
    for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u32(kCheckpointVersion);
    w.bytes(arch_to_json(ckpt.arch).dump());
    w.i32(ckpt.params.quant ? ckpt.params.quant->weight_bits : 0);
    w.i32(ckpt.params.quant ? ckpt.params.quant->act_bits : 0);
    w.u32(static_cast<std::uint32_t>(ckpt.params.layers.size()));
    for (const auto& layer : ckpt.params.layers) {
        w.u32(static_cast<std::uint32_t>(layer.params.size()));
        for (const auto& p : layer.params) {
            w.bytes(p.name);
            w.u8(p.is_weight ? 1 : 0);
            w.u32(static_cast<std::uint32_t>(p.value.dims.size()));
            for (int d : p.value.dims) w.i32(d);
            for (double v : p.value.data) w.f64(v);
            w.u8(p.mask.empty() ? 0 : 1);
            for (auto m : p.mask) w.u8(m ? 1 : 0);
        }
        const bool stats = !layer.running_mean.data.empty();
        w.u8(stats ? 1 : 0);
        if (stats) {
            w.u32(static_cast<std::uint32_t>(layer.running_mean.size()));
            for (double v : layer.running_mean.data) w.f64(v);
            for (double v : layer.running_var.data) w.f64(v);
        }
    }
    return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    for (char c : kMagic) {
        if (r.u8() != static_cast<std::uint8_t>(c)) throw CheckpointError("bad magic; not a checkpoint");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    try {
        ckpt.arch = arch_from_string(r.bytes());
    } catch (const SchemaError& e) {
        throw CheckpointError(std::string("embedded architecture: ") + e.what());
    }
    const int wb = r.i32();
    const int ab = r.i32();
    if (wb != 0 || ab != 0) {
        ckpt.params.quant = BitConfig{wb, ab};
        if (!is_supported_bit_width(wb) || !is_supported_bit_width(ab)) throw CheckpointError("bad bit widths");
    }
    ckpt.params.layers.resize(checked_count(r.u32(), "layer"));
    for (auto& layer : ckpt.params.layers) {
        layer.params.resize(checked_count(r.u32(), "tensor"));
        for (auto& p : layer.params) {
            p.name = r.bytes();
            p.is_weight = r.u8() != 0;
            const std::uint32_t rank = checked_count(r.u32(), "rank");
            if (rank > 8) throw CheckpointError("implausible tensor rank");
            Shape dims(rank);
            std::int64_t numel = 1;
            for (auto& d : dims) {
                d = r.i32();
                if (d < 0 || d > static_cast<int>(kMaxCount)) throw CheckpointError("bad tensor dim");
                numel *= d;
                if (numel > kMaxCount) throw CheckpointError("tensor too large");
            }
            p.value = Tensor(std::move(dims));
            for (auto& v : p.value.data) v = r.f64();
            if (r.u8()) {
                p.mask.resize(p.value.size());
                for (auto& m : p.mask) {
                    m = r.u8();
                    if (m > 1) throw CheckpointError("mask entries must be 0 or 1");
                }
            }
        }
        if (r.u8()) {
            const std::uint32_t c = checked_count(r.u32(), "statistics");
            layer.running_mean = Tensor({static_cast<int>(c)});
            layer.running_var = Tensor({static_cast<int>(c)});
            for (auto& v : layer.running_mean.data) v = r.f64();
            for (auto& v : layer.running_var.data) v = r.f64();
        }
    }
    if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
    try {
        check_params(ckpt.arch, ckpt.params);
    } catch (const ShapeMismatch& e) {
        throw CheckpointError(std::string("parameters do not match architecture: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write '" + path + "'");
    const std::string bytes = encode_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return decode_checkpoint(buf.str());
}

nlohmann::json export_manifest(const Checkpoint& ckpt, int reuse_factor) {
    check_params(ckpt.arch, ckpt.params);
    const int weight_bits = ckpt.params.quant ? ckpt.params.quant->weight_bits : 32;
    const int act_bits = ckpt.params.quant ? ckpt.params.quant->act_bits : 32;
    nlohmann::json tensors = nlohmann::json::array();
    for (std::size_t i = 0; i < ckpt.params.layers.size(); ++i) {
        const auto& layer = ckpt.params.layers[i];
        for (const auto& p : layer.params) {
            nlohmann::json t{{"layer", i},
                             {"name", p.name},
                             {"shape", p.value.dims},
                             {"bits", p.is_weight ? weight_bits : 32},
                             {"is_weight", p.is_weight}};
            std::vector<double> values = p.value.data;
            if (!p.mask.empty()) {
                for (std::size_t k = 0; k < values.size(); ++k) {
                    if (!p.mask[k]) values[k] = 0.0;
                }
                t["mask"] = p.mask;
            }
            t["values"] = values;
            if (p.is_weight && weight_bits < 32) {
                const double scale = quantization_scale(p.value, weight_bits);
                std::vector<long long> codes(values.size());
                for (std::size_t k = 0; k < values.size(); ++k) {
                    codes[k] = (p.mask.empty() || p.mask[k]) ? std::llround(std::nearbyint(p.value[k] / scale)) : 0;
                }
                t["scale"] = scale;
                t["codes"] = codes;
            }
            tensors.push_back(std::move(t));
        }
        if (!layer.running_mean.data.empty()) {
            tensors.push_back({{"layer", i},
                               {"name", "running_mean"},
                               {"shape", layer.running_mean.dims},
                               {"bits", 32},
                               {"is_weight", false},
                               {"values", layer.running_mean.data}});
            tensors.push_back({{"layer", i},
                               {"name", "running_var"},
                               {"shape", layer.running_var.dims},
                               {"bits", 32},
                               {"is_weight", false},
                               {"values", layer.running_var.data}});
        }
    }
    return {{"format", "nacforge-deployment"},
            {"version", kCheckpointVersion},
            {"architecture", arch_to_json(ckpt.arch)},
            {"weight_bits", weight_bits},
            {"act_bits", act_bits},
            {"quantized", ckpt.params.quant.has_value()},
            {"sparsity", global_sparsity(ckpt.params)},
            {"reuse_factor", reuse_factor},
            {"tensors", std::move(tensors)}};
}

Checkpoint import_manifest(const nlohmann::json& m) {
    try {
        if (m.at("format").get<std::string>() != "nacforge-deployment") throw CheckpointError("not a deployment manifest");
        Checkpoint ckpt;
        ckpt.arch = arch_from_json(m.at("architecture"));
        if (m.at("quantized").get<bool>()) {
            ckpt.params.quant = BitConfig{m.at("weight_bits").get<int>(), m.at("act_bits").get<int>()};
        }
        ckpt.params.layers.resize(ckpt.arch.layers.size());
        for (const auto& t : m.at("tensors")) {
            const auto layer = t.at("layer").get<std::size_t>();
            if (layer >= ckpt.params.layers.size()) throw CheckpointError("tensor layer index out of range");
            auto& st = ckpt.params.layers[layer];
            const auto name = t.at("name").get<std::string>();
            Tensor value(t.at("shape").get<Shape>(), t.at("values").get<std::vector<double>>());
            if (name == "running_mean") {
                st.running_mean = std::move(value);
            } else if (name == "running_var") {
                st.running_var = std::move(value);
            } else {
                ParamTensor p{name, std::move(value), {}, t.at("is_weight").get<bool>()};
                if (t.contains("mask")) p.mask = t.at("mask").get<std::vector<std::uint8_t>>();
                st.params.push_back(std::move(p));
            }
        }
        check_params(ckpt.arch, ckpt.params);
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("manifest: ") + e.what());
    } catch (const ShapeMismatch& e) {
        throw CheckpointError(std::string("manifest: ") + e.what());
    }
}

}  // namespace nac
