#pragma once

#include <string>

#include <json.hpp>

#include "nacforge/arch_ir.hpp"
#include "nacforge/params.hpp"

namespace nac {

struct Checkpoint {
    ArchDescriptor arch;
    ParamStore params;
    bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout (all integers and reals little-endian):
//   "NACF" u32 version
//   u32 arch_json_len, arch JSON bytes
//   i32 weight_bits, i32 act_bits (0, 0 when unquantized)
//   u32 layer_count; per layer:
//     u32 tensor_count; per tensor:
//       u32 name_len, name, u8 is_weight, u32 rank, i32 dims[rank],
//       f64 values[numel], u8 has_mask, [u8 mask[numel]]
//     u8 has_stats, [f64 running_mean[C], f64 running_var[C]]
// Reals are stored as 64-bit so a reload reproduces forward outputs exactly.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Deployment manifest: architecture, raw weights, per-tensor bit widths,
// masks, integer codes and scales for quantized weights, and a reuse factor.
nlohmann::json export_manifest(const Checkpoint& ckpt, int reuse_factor = 1);
Checkpoint import_manifest(const nlohmann::json& manifest);

}  // namespace nac
