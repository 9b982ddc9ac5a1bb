#pragma once

#include "patchtrack/geometry.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace patchtrack {

/// Row-major 2-D grid; x indexes columns, y indexes rows.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, const T& fill = T{})
      : width_(width), height_(height), data_(checked_size(width, height), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const auto& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  bool operator==(const Grid&) const = default;

 private:
  static std::size_t checked_size(int w, int h) {
    if (w < 0 || h < 0) throw std::invalid_argument("Grid: negative dimensions");
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using ContactMask = Grid<std::uint8_t>;

inline std::size_t mask_count(const ContactMask& mask) {
  std::size_t n = 0;
  for (auto v : mask.data()) n += v ? 1 : 0;
  return n;
}

/// Per-pixel unit normals of the gel surface seen as the heightfield
/// z = depth(x, y): n ∝ (-dz/dx, -dz/dy, 1). Unmasked pixels hold (0, 0, 1).
struct NormalImage {
  Grid<Vec3> normals;
  ContactMask mask;

  int width() const { return normals.width(); }
  int height() const { return normals.height(); }
};

/// Per-pixel indentation depth in mm (0 = undisturbed gel, positive into the gel).
struct DepthImage {
  Grid<double> depth;
  ContactMask mask;

  int width() const { return depth.width(); }
  int height() const { return depth.height(); }
};

/// True iff any contact pixel lies on the outermost row or column.
inline bool contact_touches_border(const ContactMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  if (w == 0 || h == 0) return false;
  for (int x = 0; x < w; ++x) {
    if (mask(x, 0) || mask(x, h - 1)) return true;
  }
  for (int y = 0; y < h; ++y) {
    if (mask(0, y) || mask(w - 1, y)) return true;
  }
  return false;
}

}  // namespace patchtrack
