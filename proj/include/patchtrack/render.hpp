// Idealized tactile sensor: contact depth rendering from an SDF, normals from
// depth, and synthetic normal-prediction noise.

#pragma once

#include "patchtrack/gel.hpp"
#include "patchtrack/image.hpp"
#include "patchtrack/shape.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace patchtrack {

/// Lowest point of the object along the sensor-frame column (x, y), found by
/// sphere tracing up from z = -max_indentation. Returns the indentation depth
/// (> 0) or 0 when the column misses the object above the gel plane.
inline double trace_column_depth(const ShapeSDF& shape, const Pose& object_from_sensor, double x, double y,
                                 double max_indentation) {
  constexpr double kHitEps = 1e-5;
  constexpr double kBracket = 1e-4;
  constexpr int kMaxSteps = 400;
  const Vec3 origin = object_from_sensor.act(Vec3(x, y, 0.0));
  const Vec3 dir = object_from_sensor.rotate(Vec3::UnitZ());
  auto sdf_at = [&](double z) { return shape(origin + z * dir); };

  auto bisect = [&](double lo, double hi) {  // sdf(lo) > 0 >= sdf(hi)
    for (int k = 0; k < 40; ++k) {
      double mid = 0.5 * (lo + hi);
      (sdf_at(mid) > 0.0 ? lo : hi) = mid;
    }
    return std::max(0.0, -0.5 * (lo + hi));
  };

  double z = -max_indentation;
  double f = sdf_at(z);
  if (f <= 0.0) return max_indentation;
  for (int step = 0; step < kMaxSteps; ++step) {
    if (f < kHitEps) {
      double hi = std::min(z + kBracket, 0.0);
      if (sdf_at(hi) <= 0.0) return bisect(z, hi);
      f = kHitEps;  // grazing: keep marching
    }
    const double z_prev = z;
    z += f;
    if (z >= 0.0) return sdf_at(0.0) <= 0.0 ? bisect(z_prev, 0.0) : 0.0;
    f = sdf_at(z);
    if (f <= 0.0) return bisect(z_prev, z);
  }
  return 0.0;
}

/// Renders the contact depth of `shape` (at world pose `object_pose`) pressed
/// into the gel of a sensor at world pose `sensor_pose`.
inline DepthImage render_depth(const ShapeSDF& shape, const Pose& object_pose, const Pose& sensor_pose,
                               const GelConfig& gel) {
  gel.validate();
  const Pose object_from_sensor = object_pose.inverse() * sensor_pose;
  DepthImage out{Grid<double>(gel.width, gel.height, 0.0), ContactMask(gel.width, gel.height, 0)};
  for (int j = 0; j < gel.height; ++j) {
    for (int i = 0; i < gel.width; ++i) {
      double d = trace_column_depth(shape, object_from_sensor, gel.pixel_x(i), gel.pixel_y(j), gel.max_indentation);
      if (d > 0.0) {
        out.depth(i, j) = std::min(d, gel.max_indentation);
        out.mask(i, j) = 1;
      }
    }
  }
  return out;
}

/// Normals of the depth heightfield, n ∝ (-dz/dx, -dz/dy, 1), scaled by the
/// pixel pitch. Interior contact pixels use central differences; pixels on the
/// image border or the contact rim use one-sided differences on the contact
/// side (second order when two contact neighbours are available), since the
/// gel surface has a slope discontinuity at the rim.
inline NormalImage depth_to_normals(const DepthImage& depth, const GelConfig& gel) {
  const int w = depth.width();
  const int h = depth.height();
  NormalImage out{Grid<Vec3>(w, h, Vec3::UnitZ()), depth.mask};
  // value(k) / inside(k) sample the line through the pixel at offset k.
  auto derivative = [](auto&& value, auto&& inside, int i, int n, double pitch) {
    const bool lo = i - 1 >= 0 && inside(i - 1);
    const bool hi = i + 1 < n && inside(i + 1);
    if (lo && hi) return (value(i + 1) - value(i - 1)) / (2.0 * pitch);
    if (hi) {
      if (i + 2 < n && inside(i + 2)) return (-3.0 * value(i) + 4.0 * value(i + 1) - value(i + 2)) / (2.0 * pitch);
      return (value(i + 1) - value(i)) / pitch;
    }
    if (lo) {
      if (i - 2 >= 0 && inside(i - 2)) return (3.0 * value(i) - 4.0 * value(i - 1) + value(i - 2)) / (2.0 * pitch);
      return (value(i) - value(i - 1)) / pitch;
    }
    // Isolated along this line: fall back to plain differences.
    if (n < 2) return 0.0;
    if (i == 0) return (value(1) - value(0)) / pitch;
    if (i == n - 1) return (value(n - 1) - value(n - 2)) / pitch;
    return (value(i + 1) - value(i - 1)) / (2.0 * pitch);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!depth.mask(x, y)) continue;
      double dx = derivative([&](int k) { return depth.depth(k, y); }, [&](int k) { return depth.mask(k, y) != 0; },
                             x, w, gel.pitch_x());
      double dy = derivative([&](int k) { return depth.depth(x, k); }, [&](int k) { return depth.mask(x, k) != 0; },
                             y, h, gel.pitch_y());
      out.normals(x, y) = Vec3(-dx, -dy, 1.0).normalized();
    }
  }
  return out;
}

/// Rotates every masked normal about a random tangent axis by an angle drawn
/// from |N(0, sigma)|. Deterministic for a fixed seed; sigma = 0 is a no-op.
inline NormalImage perturb_normals(const NormalImage& normals, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("perturb_normals: sigma must be >= 0");
  NormalImage out = normals;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> angle_dist(0.0, sigma);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      if (!out.mask(x, y)) continue;
      const Vec3 n = out.normals(x, y);
      const double theta = std::abs(angle_dist(rng));
      const double phi = phase_dist(rng);
      Vec3 t1 = (std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY()).cross(n).normalized();
      Vec3 t2 = n.cross(t1);
      Vec3 axis = std::cos(phi) * t1 + std::sin(phi) * t2;
      out.normals(x, y) = (n * std::cos(theta) + axis.cross(n) * std::sin(theta)).normalized();
    }
  }
  return out;
}

}  // namespace patchtrack
