// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/volume_io.hpp"

#include <string_view>

#include "binary_io.hpp"
#include "pairdiff/error.hpp"

namespace pairdiff {

namespace {

struct Header {
  std::uint32_t h = 0, w = 0, d = 0;
  Spacing spacing{};
};

void write_header(detail::ByteWriter& out, std::string_view magic, int h, int w, int d, const Spacing& sp) {
  if (h <= 0 || w <= 0 || d <= 0) throw ContractError("volume dims must be positive");
  out.bytes(magic);
  out.u32(kVolumeFormatVersion);
  out.u32(static_cast<std::uint32_t>(h));
  out.u32(static_cast<std::uint32_t>(w));
  out.u32(static_cast<std::uint32_t>(d));
  for (float s : sp) out.f32(s);
}

Header read_header(detail::ByteReader& in, std::string_view magic, const std::string& what) {
  const auto got = in.bytes(4);
  if (got != magic) throw FormatError(what + ": bad magic \"" + got + "\", expected " + std::string(magic));
  const auto version = in.u32();
  if (version != kVolumeFormatVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  Header hd;
  hd.h = in.u32();
  hd.w = in.u32();
  hd.d = in.u32();
  for (auto& s : hd.spacing) s = in.f32();
  if (hd.h == 0 || hd.w == 0 || hd.d == 0) throw FormatError(what + ": zero dimension in header");
  return hd;
}

}  // namespace

std::vector<char> encode_volume(const Volume& vol) {
  if (vol.voxels.size() != vol.slice_size() * static_cast<std::size_t>(vol.depth)) {
    throw ContractError("encode_volume: voxel count does not match dims");
  }
  detail::ByteWriter out;
  write_header(out, "VOL1", vol.height, vol.width, vol.depth, vol.spacing);
  for (float v : vol.voxels) out.f32(v);
  return out.buffer();
}

Volume decode_volume(const std::vector<char>& bytes, const std::string& what) {
  detail::ByteReader in(bytes, what);
  const auto hd = read_header(in, "VOL1", what);
  const std::size_t n = static_cast<std::size_t>(hd.h) * hd.w * hd.d;
  in.expect_remaining(4 * n, "voxel payload");
  Volume vol;
  vol.height = static_cast<int>(hd.h);
  vol.width = static_cast<int>(hd.w);
  vol.depth = static_cast<int>(hd.d);
  vol.spacing = hd.spacing;
  vol.voxels.resize(n);
  for (auto& v : vol.voxels) v = in.f32();
  return vol;
}

std::vector<char> encode_masks(const MaskVolume& masks) {
  if (masks.labels.size() != masks.slice_size() * static_cast<std::size_t>(masks.depth)) {
    throw ContractError("encode_masks: label count does not match dims");
  }
  detail::ByteWriter out;
  write_header(out, "MSK1", masks.height, masks.width, masks.depth, masks.spacing);
  out.u16(static_cast<std::uint16_t>(masks.n_classes));
  for (auto l : masks.labels) out.u8(l);
  return out.buffer();
}

MaskVolume decode_masks(const std::vector<char>& bytes, const std::string& what) {
  detail::ByteReader in(bytes, what);
  const auto hd = read_header(in, "MSK1", what);
  MaskVolume m;
  m.n_classes = in.u16();
  if (m.n_classes < 2 || m.n_classes > 256) {
    throw FormatError(what + ": n_classes " + std::to_string(m.n_classes) + " out of range");
  }
  const std::size_t n = static_cast<std::size_t>(hd.h) * hd.w * hd.d;
  in.expect_remaining(n, "label payload");
  m.height = static_cast<int>(hd.h);
  m.width = static_cast<int>(hd.w);
  m.depth = static_cast<int>(hd.d);
  m.spacing = hd.spacing;
  m.labels.resize(n);
  for (auto& l : m.labels) {
    l = in.u8();
    if (l >= m.n_classes) throw FormatError(what + ": label " + std::to_string(l) + " >= n_classes");
  }
  return m;
}

void write_volume(const Volume& vol, const std::string& path) { detail::write_file(path, encode_volume(vol)); }
Volume read_volume(const std::string& path) { return decode_volume(detail::read_file(path), path); }
void write_masks(const MaskVolume& masks, const std::string& path) { detail::write_file(path, encode_masks(masks)); }
MaskVolume read_masks(const std::string& path) { return decode_masks(detail::read_file(path), path); }

}  // namespace pairdiff
