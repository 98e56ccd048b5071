#pragma once

#include <cstdint>
#include <string>

namespace spars {

// Voxel extents / coordinates, x-fastest storage order throughout.
struct Dims3 {
  int x = 0, y = 0, z = 0;
  friend bool operator==(const Dims3&, const Dims3&) = default;
  std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) *
           static_cast<std::size_t>(z);
  }
  std::string str() const {
    return std::to_string(x) + "x" + std::to_string(y) + "x" + std::to_string(z);
  }
};

}  // namespace spars
