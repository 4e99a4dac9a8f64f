// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace pairdiff {

/// Single-channel h×w float image, row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return pixels.size(); }
};

/// Per-slice multi-class label grid. Label 0 is background.
struct AnatomicalMask {
  int height = 0;
  int width = 0;
  int n_classes = 2;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

using Spacing = std::array<float, 3>;

/// H×W×D intensity grid stored slice-major: index = (z·H + y)·W + x.
struct Volume {
  int height = 0;
  int width = 0;
  int depth = 0;
  std::vector<float> voxels;
  Spacing spacing{1.0f, 1.0f, 1.0f};

  std::size_t slice_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * height + y) * width + x;
  }
  Image slice(int z) const;
};

/// Label counterpart of Volume, same layout.
struct MaskVolume {
  int height = 0;
  int width = 0;
  int depth = 0;
  int n_classes = 2;
  std::vector<std::uint8_t> labels;
  Spacing spacing{1.0f, 1.0f, 1.0f};

  std::size_t slice_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * height + y) * width + x;
  }
  AnatomicalMask slice(int z) const;
};

}  // namespace pairdiff
