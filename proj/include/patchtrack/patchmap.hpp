// Local contact patch: keyframe clouds fused in the object frame.

#pragma once

#include "patchtrack/point_cloud.hpp"

#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

namespace patchtrack {

struct FixedInterval {
  int k = 5;
};

struct OverlapThreshold {
  double fraction = 0.6;
};

using KeyframePolicy = std::variant<FixedInterval, OverlapThreshold>;

inline void validate(const KeyframePolicy& policy) {
  if (const auto* f = std::get_if<FixedInterval>(&policy)) {
    if (f->k < 1) throw std::invalid_argument("keyframe interval must be >= 1");
  } else {
    const double x = std::get<OverlapThreshold>(policy).fraction;
    if (!(x > 0.0 && x < 1.0)) throw std::invalid_argument("overlap threshold must lie in (0, 1)");
  }
}

/// Fixed interval: step % k == 0. Overlap threshold: measured overlap below
/// the threshold (the overlap must then be supplied).
inline bool should_add_keyframe(const KeyframePolicy& policy, int step, std::optional<double> overlap = {}) {
  if (step < 0) throw std::invalid_argument("should_add_keyframe: negative step");
  validate(policy);
  if (const auto* f = std::get_if<FixedInterval>(&policy)) return step % f->k == 0;
  if (!overlap) throw std::invalid_argument("should_add_keyframe: overlap policy needs a measured overlap");
  return *overlap < std::get<OverlapThreshold>(policy).fraction;
}

struct KeyframeRecord {
  int step = -1;
  PointCloud cloud;         ///< sensor frame
  Pose object_from_sensor;  ///< estimate used when the keyframe was fused
};

struct PatchMap {
  PointCloud cloud{{}, {}, Frame::Object, -1};
  std::vector<KeyframeRecord> keyframes;
  double voxel_size = 0.3;

  bool empty() const { return cloud.empty(); }
};

/// Moves a sensor-frame cloud into the object frame and merges it into the
/// map with voxel downsampling. Poses of earlier keyframes are not revisited.
inline PatchMap fuse_keyframe(PatchMap map, const PointCloud& sensor_cloud, const Pose& object_from_sensor) {
  if (sensor_cloud.frame != Frame::Sensor) throw std::invalid_argument("fuse_keyframe: cloud must be in sensor frame");
  PointCloud merged = map.cloud;
  merged.frame = Frame::Object;
  const PointCloud moved = transformed(sensor_cloud, object_from_sensor, Frame::Object);
  merged.points.insert(merged.points.end(), moved.points.begin(), moved.points.end());
  merged.normals.insert(merged.normals.end(), moved.normals.begin(), moved.normals.end());
  map.cloud = voxel_downsample(merged, map.voxel_size);
  map.cloud.source_step = sensor_cloud.source_step;
  map.keyframes.push_back({sensor_cloud.source_step, sensor_cloud, object_from_sensor});
  return map;
}

/// Fraction of `cloud` points with a map point within `radius` (0 for an
/// empty map).
inline double overlap_fraction(const PointCloud& cloud, const PatchMap& map, double radius) {
  if (cloud.empty()) throw std::invalid_argument("overlap_fraction: empty cloud");
  if (map.empty()) return 0.0;
  SpatialGrid grid(map.cloud.points, radius);
  std::size_t hits = 0;
  for (const auto& p : cloud.points) hits += grid.any_within(p, radius) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(cloud.size());
}

}  // namespace patchtrack
