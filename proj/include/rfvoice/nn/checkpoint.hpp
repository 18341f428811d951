#pragma once

#include <filesystem>

#include "rfvoice/nn/model.hpp"

namespace rfvoice::nn {

// Binary layout: "RFVM" magic, u32 version, u32 descriptor length, topology
// descriptor text, u64 scalar count, float32 little-endian values in
// parameter order, u32 CRC-32 of everything before it.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const MaskNet& model);
// Replaces the model's parameter values. Throws FormatError on a bad magic,
// version, topology mismatch, size mismatch or checksum failure.
void load_checkpoint(const std::filesystem::path& path, MaskNet& model);
// Rounds parameters through float32, matching a save/load round trip.
void round_to_checkpoint_precision(MaskNet& model);

}  // namespace rfvoice::nn
