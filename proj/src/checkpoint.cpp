// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/checkpoint.hpp"

#include <limits>
#include <unordered_set>

#include "binary_io.hpp"
#include "pairdiff/error.hpp"

namespace pairdiff {

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 5));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ContractError("checkpoint: parameter name too long: " + name.substr(0, 32));
    }
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  return w.buffer();
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes, const std::string& what) {
  detail::ByteReader r(bytes, what);
  if (bytes.size() < 5 || r.bytes(5) != std::string_view(kCheckpointMagic, 5)) {
    throw FormatError(what + ": bad magic, expected CKPT1");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16();
    auto name = r.bytes(len);
    if (!seen.insert(name).second) throw FormatError(what + ": duplicate parameter " + name);
    const auto rank = r.u8();
    Shape shape;
    for (int k = 0; k < rank; ++k) shape.push_back(r.u32());
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    r.need(4 * n);
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  r.expect_remaining(0, "trailing data after last parameter");
  return out;
}

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  detail::write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path), path);
}

}  // namespace pairdiff
