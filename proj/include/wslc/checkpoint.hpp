#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "wslc/nn.hpp"

namespace wslc {

inline constexpr char kCheckpointMagic[4] = {'W', 'S', 'L', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Little-endian layout: magic, u32 version, u32 param count, then per param
// u16 name length, UTF-8 name, u8 ndim, u32 dims, raw float32 data.
std::vector<unsigned char> encode_checkpoint(const std::vector<NamedTensor<float>>& params);
std::vector<NamedTensor<float>> decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model);

// Reads params and checks them against spec.
Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec);

}  // namespace wslc
