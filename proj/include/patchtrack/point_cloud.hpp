#pragma once

#include "patchtrack/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace patchtrack {

enum class Frame { Sensor, Object, World };

inline std::string to_string(Frame f) {
  switch (f) {
    case Frame::Sensor: return "sensor";
    case Frame::Object: return "object";
    case Frame::World: return "world";
  }
  return "unknown";
}

/// Points (mm) with unit normals, tagged with the frame they are expressed in.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  Frame frame = Frame::Sensor;
  int source_step = -1;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  void push_back(const Vec3& p, const Vec3& n) {
    points.push_back(p);
    normals.push_back(n);
  }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : points) c += p;
    return empty() ? c : Vec3(c / static_cast<double>(size()));
  }
};

inline PointCloud transformed(const PointCloud& cloud, const Pose& T, Frame new_frame) {
  PointCloud out;
  out.frame = new_frame;
  out.source_step = cloud.source_step;
  out.points.reserve(cloud.size());
  out.normals.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out.points.push_back(T.act(cloud.points[i]));
    out.normals.push_back(T.rotate(cloud.normals[i]));
  }
  return out;
}

namespace detail {

inline std::uint64_t pack_cell(std::int64_t x, std::int64_t y, std::int64_t z) {
  constexpr std::int64_t kOffset = 1 << 20;
  constexpr std::uint64_t kMask = (1u << 21) - 1;
  return ((static_cast<std::uint64_t>(x + kOffset) & kMask) << 42) |
         ((static_cast<std::uint64_t>(y + kOffset) & kMask) << 21) |
         (static_cast<std::uint64_t>(z + kOffset) & kMask);
}

}  // namespace detail

/// Uniform hash grid over a point set. Exact nearest-neighbour queries within
/// a radius; ties resolve to the lowest point index.
class SpatialGrid {
 public:
  SpatialGrid(const std::vector<Vec3>& points, double cell_size) : points_(&points), cell_(cell_size) {
    if (!(cell_size > 0.0)) throw std::invalid_argument("SpatialGrid: cell size must be positive");
    order_.resize(points.size());
    std::vector<std::uint64_t> keys(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      keys[i] = key_of(points[i]);
      order_[i] = static_cast<std::uint32_t>(i);
    }
    std::stable_sort(order_.begin(), order_.end(), [&](auto a, auto b) { return keys[a] < keys[b]; });
    for (std::size_t k = 0; k < order_.size();) {
      std::size_t e = k;
      while (e < order_.size() && keys[order_[e]] == keys[order_[k]]) ++e;
      ranges_.emplace(keys[order_[k]], std::pair<std::uint32_t, std::uint32_t>(k, e));
      k = e;
    }
  }

  struct Match {
    std::size_t index;
    double distance;
  };

  std::optional<Match> nearest(const Vec3& q, double max_dist) const {
    const double max2 = max_dist * max_dist;
    double best2 = std::numeric_limits<double>::infinity();
    std::size_t best = 0;
    bool found = false;
    visit_cells(q, max_dist, [&](std::uint32_t idx) {
      double d2 = ((*points_)[idx] - q).squaredNorm();
      if (d2 <= max2 && (d2 < best2 || (d2 == best2 && idx < best))) {
        best2 = d2;
        best = idx;
        found = true;
      }
    });
    if (!found) return std::nullopt;
    return Match{best, std::sqrt(best2)};
  }

  bool any_within(const Vec3& q, double radius) const {
    const double r2 = radius * radius;
    bool hit = false;
    visit_cells(q, radius, [&](std::uint32_t idx) { hit = hit || ((*points_)[idx] - q).squaredNorm() <= r2; });
    return hit;
  }

 private:
  std::array<std::int64_t, 3> cell_of(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)), static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }
  std::uint64_t key_of(const Vec3& p) const {
    auto c = cell_of(p);
    return detail::pack_cell(c[0], c[1], c[2]);
  }

  template <typename Fn>
  void visit_cells(const Vec3& q, double radius, Fn&& fn) const {
    auto c = cell_of(q);
    const auto reach = static_cast<std::int64_t>(std::ceil(radius / cell_));
    for (std::int64_t dx = -reach; dx <= reach; ++dx) {
      for (std::int64_t dy = -reach; dy <= reach; ++dy) {
        for (std::int64_t dz = -reach; dz <= reach; ++dz) {
          auto it = ranges_.find(detail::pack_cell(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == ranges_.end()) continue;
          for (auto k = it->second.first; k < it->second.second; ++k) fn(order_[k]);
        }
      }
    }
  }

  const std::vector<Vec3>* points_;
  double cell_;
  std::vector<std::uint32_t> order_;
  std::unordered_map<std::uint64_t, std::pair<std::uint32_t, std::uint32_t>> ranges_;
};

/// Voxel-grid downsampling: one centroid per occupied voxel with the averaged,
/// renormalized normal, followed by a thinning pass that drops any point
/// closer than voxel/2 to an earlier kept point. Output order follows the
/// voxel key order, so the result is independent of input order up to
/// floating-point summation order.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) throw std::invalid_argument("voxel_downsample: voxel size must be positive");
  struct Acc {
    Vec3 p = Vec3::Zero();
    Vec3 n = Vec3::Zero();
    int count = 0;
  };
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    keyed[i] = {detail::pack_cell(static_cast<std::int64_t>(std::floor(p.x() / voxel)),
                                  static_cast<std::int64_t>(std::floor(p.y() / voxel)),
                                  static_cast<std::int64_t>(std::floor(p.z() / voxel))),
                i};
  }
  std::sort(keyed.begin(), keyed.end());

  PointCloud centroids;
  centroids.frame = cloud.frame;
  centroids.source_step = cloud.source_step;
  for (std::size_t k = 0; k < keyed.size();) {
    Acc acc;
    std::size_t e = k;
    for (; e < keyed.size() && keyed[e].first == keyed[k].first; ++e) {
      acc.p += cloud.points[keyed[e].second];
      acc.n += cloud.normals[keyed[e].second];
      ++acc.count;
    }
    Vec3 n = acc.n.norm() > 1e-12 ? Vec3(acc.n.normalized()) : cloud.normals[keyed[k].second];
    centroids.push_back(acc.p / acc.count, n);
    k = e;
  }

  // Thinning: enforce a minimum spacing of voxel/2.
  const double min_spacing = 0.5 * voxel;
  PointCloud out;
  out.frame = cloud.frame;
  out.source_step = cloud.source_step;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> kept;
  auto cell = [&](const Vec3& p) {
    return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor(p.x() / min_spacing)),
                                       static_cast<std::int64_t>(std::floor(p.y() / min_spacing)),
                                       static_cast<std::int64_t>(std::floor(p.z() / min_spacing))};
  };
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    const Vec3& p = centroids.points[i];
    auto c = cell(p);
    bool too_close = false;
    for (int dx = -1; dx <= 1 && !too_close; ++dx) {
      for (int dy = -1; dy <= 1 && !too_close; ++dy) {
        for (int dz = -1; dz <= 1 && !too_close; ++dz) {
          auto it = kept.find(detail::pack_cell(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == kept.end()) continue;
          for (auto idx : it->second) {
            if ((out.points[idx] - p).norm() < min_spacing) {
              too_close = true;
              break;
            }
          }
        }
      }
    }
    if (too_close) continue;
    kept[detail::pack_cell(c[0], c[1], c[2])].push_back(out.size());
    out.push_back(p, centroids.normals[i]);
  }
  return out;
}

}  // namespace patchtrack
