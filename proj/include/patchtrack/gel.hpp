#pragma once

#include "patchtrack/errors.hpp"
#include "patchtrack/geometry.hpp"

#include <cmath>

namespace patchtrack {

enum class CameraModel { Orthographic, ClipProjection };

/// OpenGL-style perspective camera behind the gel. `view` maps camera
/// coordinates to sensor coordinates; the camera looks down its -z axis, which
/// must be aligned with the sensor +z axis.
struct ClipCamera {
  double near_plane = 1.0;
  double far_plane = 50.0;
  double fov_y = 0.4;  ///< radians
  double aspect = 1.0;
  Eigen::Matrix4d view = Eigen::Matrix4d::Identity();

  Eigen::Matrix4d projection() const {
    const double f = 1.0 / std::tan(0.5 * fov_y);
    const double n = near_plane;
    const double fa = far_plane;
    Eigen::Matrix4d P = Eigen::Matrix4d::Zero();
    P(0, 0) = f / aspect;
    P(1, 1) = f;
    P(2, 2) = (fa + n) / (n - fa);
    P(2, 3) = 2.0 * fa * n / (n - fa);
    P(3, 2) = -1.0;
    return P;
  }

  /// Distance from the camera centre to the gel plane along the optical axis.
  double gel_distance() const {
    Eigen::Vector4d origin_cam = view.inverse() * Eigen::Vector4d(0, 0, 0, 1);
    return -origin_cam.z() / origin_cam.w();
  }
};

/// Gel geometry and imaging model. Pixel (i, j) has its centre at sensor
/// coordinates ((i - (W-1)/2) * pitch_x, (j - (H-1)/2) * pitch_y), so the gel
/// centre is the sensor-frame origin and the undisturbed gel is the z = 0 plane.
/// Objects lie on the +z side; indentation moves the surface towards -z.
struct GelConfig {
  int width = 64;
  int height = 64;
  double extent_x = 20.0;  ///< mm
  double extent_y = 20.0;  ///< mm
  double max_indentation = 1.5;
  CameraModel camera = CameraModel::Orthographic;
  ClipCamera clip;

  double pitch_x() const { return extent_x / width; }
  double pitch_y() const { return extent_y / height; }

  double pixel_x(int i) const { return (i - 0.5 * (width - 1)) * pitch_x(); }
  double pixel_y(int j) const { return (j - 0.5 * (height - 1)) * pitch_y(); }

  void validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("gel resolution must be positive");
    if (!(extent_x > 0.0) || !(extent_y > 0.0)) throw ConfigError("gel extent must be positive");
    if (!(max_indentation > 0.0)) throw ConfigError("gel max indentation must be positive");
    if (camera == CameraModel::ClipProjection) {
      if (!(clip.near_plane > 0.0) || !(clip.near_plane < clip.far_plane)) {
        throw ConfigError("clip camera requires 0 < near < far");
      }
      if (!(clip.fov_y > 0.0) || !(clip.fov_y < 3.1)) throw ConfigError("clip camera fov_y out of range");
    }
  }

  /// Clip camera placed `distance` mm behind the gel, framing the gel extent
  /// exactly at the gel plane.
  static ClipCamera make_clip_camera(const GelConfig& gel, double near_plane, double far_plane,
                                     double distance) {
    ClipCamera c;
    c.near_plane = near_plane;
    c.far_plane = far_plane;
    c.fov_y = 2.0 * std::atan(0.5 * gel.extent_y / distance);
    c.aspect = gel.extent_x / gel.extent_y;
    // camera x = sensor x, camera y = -sensor y, camera z = -sensor z
    c.view = Eigen::Matrix4d::Identity();
    c.view(1, 1) = -1.0;
    c.view(2, 2) = -1.0;
    c.view(2, 3) = -distance;
    return c;
  }
};

}  // namespace patchtrack
