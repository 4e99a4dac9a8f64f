// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pairdiff/tensor.hpp"

namespace pairdiff {

using NamedTensor = std::pair<std::string, Tensor>;

/// CKPT1 layout, all integers little-endian:
///   "CKPT1" | u32 version | u32 count |
///   count × ( u16 name_len | name bytes | u8 rank | rank × u32 dim | f32 payload )
inline constexpr char kCheckpointMagic[] = "CKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes,
                                           const std::string& what = "checkpoint");

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace pairdiff
