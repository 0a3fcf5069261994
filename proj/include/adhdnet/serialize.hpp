#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "adhdnet/tensor.hpp"

namespace adhdnet {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

inline constexpr char kWeightsMagic[4] = {'A', 'D', 'N', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

// Container layout (all integers u32 little-endian):
//   "ADNW" version
//   repeated until EOF: name_len name rank dims[rank] f32[numel]
void write_weights(std::ostream& out, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_weights(std::istream& in);

void save_weights(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

/// Writes via a sibling temporary file and rename, so readers never observe
/// a partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace adhdnet
