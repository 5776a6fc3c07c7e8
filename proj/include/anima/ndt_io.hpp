#pragma once

#include "anima/scalar.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include "anima/tensor.hpp"

namespace anima::inline ANIMA_NS::ndt {

/// NDT1 layout: "NDT1", dtype byte (0x01 = f32), rank byte, rank x u64 LE dims,
/// row-major f32 LE payload.
inline constexpr char kMagic[4] = {'N', 'D', 'T', '1'};
inline constexpr unsigned char kDtypeF32 = 0x01;

std::vector<unsigned char> encode(const NdTensor& t);
NdTensor decode(const std::vector<unsigned char>& bytes);

void save(const NdTensor& t, const std::filesystem::path& path);
NdTensor load(const std::filesystem::path& path);

}  // namespace anima::ndt
