// SPDX-License-Identifier: Apache-2.0
#pragma once

// VOL1 / MSK1 files, little-endian:
//   magic[4] "VOL1" | "MSK1", u32 version (1), u32 h, u32 w, u32 d,
//   f32 spacing[3] (x, y, z),
//   VOL1: h·w·d f32 voxels, slice-major
//   MSK1: u16 n_classes, then h·w·d u8 labels, slice-major

#include <string>
#include <vector>

#include "pairdiff/volume.hpp"

namespace pairdiff {

inline constexpr std::uint32_t kVolumeFormatVersion = 1;

std::vector<char> encode_volume(const Volume& vol);
Volume decode_volume(const std::vector<char>& bytes, const std::string& what = "volume");
std::vector<char> encode_masks(const MaskVolume& masks);
MaskVolume decode_masks(const std::vector<char>& bytes, const std::string& what = "masks");

void write_volume(const Volume& vol, const std::string& path);
Volume read_volume(const std::string& path);
void write_masks(const MaskVolume& masks, const std::string& path);
MaskVolume read_masks(const std::string& path);

}  // namespace pairdiff
