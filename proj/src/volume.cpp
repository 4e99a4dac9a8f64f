// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/volume.hpp"

#include <string>

#include "pairdiff/error.hpp"

namespace pairdiff {

Image Volume::slice(int z) const {
  if (z < 0 || z >= depth) throw ContractError("slice " + std::to_string(z) + " out of range");
  Image img(height, width);
  const auto n = slice_size();
  std::copy_n(voxels.begin() + static_cast<std::ptrdiff_t>(z * n), n, img.pixels.begin());
  return img;
}

AnatomicalMask MaskVolume::slice(int z) const {
  if (z < 0 || z >= depth) throw ContractError("mask slice " + std::to_string(z) + " out of range");
  AnatomicalMask m;
  m.height = height;
  m.width = width;
  m.n_classes = n_classes;
  const auto n = slice_size();
  m.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(z * n),
                  labels.begin() + static_cast<std::ptrdiff_t>((z + 1) * n));
  return m;
}

}  // namespace pairdiff
