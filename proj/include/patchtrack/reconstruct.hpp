// Surface normals -> depth gradients -> Poisson-integrated depth -> 3-D cloud.

#pragma once

#include "patchtrack/gel.hpp"
#include "patchtrack/image.hpp"
#include "patchtrack/point_cloud.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace patchtrack {

/// Slope of the gel-surface height z = -depth in the sensor frame:
/// p = dz/dx = n_x / n_z, q = dz/dy = n_y / n_z. Zero outside the mask.
struct GradientField {
  Grid<double> p;
  Grid<double> q;
  ContactMask mask;

  int width() const { return p.width(); }
  int height() const { return p.height(); }
};

/// n_z is clamped below at this value before dividing (bounds slopes at 20).
inline constexpr double kMinNormalZ = 0.05;

inline GradientField normals_to_gradients(const NormalImage& normals) {
  const int w = normals.width();
  const int h = normals.height();
  GradientField g{Grid<double>(w, h, 0.0), Grid<double>(w, h, 0.0), normals.mask};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!normals.mask(x, y)) continue;
      const Vec3& n = normals.normals(x, y);
      const double nz = std::max(n.z(), kMinNormalZ);
      g.p(x, y) = n.x() / nz;
      g.q(x, y) = n.y() / nz;
    }
  }
  return g;
}

/// Type-I DST matrix S(k, n) = sin(pi (k+1)(n+1) / (N+1)); symmetric.
inline MatX dst1_matrix(Eigen::Index n) {
  MatX S(n, n);
  const double scale = std::numbers::pi / static_cast<double>(n + 1);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) S(k, j) = std::sin(scale * static_cast<double>((k + 1) * (j + 1)));
  }
  return S;
}

/// Separable 2-D DST-I. Images are matrices with rows indexing y.
inline MatX dst2(const MatX& field) {
  if (field.rows() < 2 || field.cols() < 2) throw std::invalid_argument("dst2: dimensions must be >= 2x2");
  return dst1_matrix(field.rows()) * field * dst1_matrix(field.cols());
}

/// Exact inverse of dst2, including the 2/(n+1) normalization on each axis.
inline MatX idst2(const MatX& coefficients) {
  if (coefficients.rows() < 2 || coefficients.cols() < 2) {
    throw std::invalid_argument("idst2: dimensions must be >= 2x2");
  }
  const double norm = (2.0 / static_cast<double>(coefficients.rows() + 1)) *
                      (2.0 / static_cast<double>(coefficients.cols() + 1));
  return norm * (dst1_matrix(coefficients.rows()) * coefficients * dst1_matrix(coefficients.cols()));
}

inline MatX to_matrix(const Grid<double>& g) {
  MatX m(g.height(), g.width());
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) m(y, x) = g(x, y);
  }
  return m;
}

/// Divergence of the depth gradient (-p, -q) by central differences, on the
/// interior pixels only (border entries are zero).
inline MatX depth_divergence(const GradientField& grad, double pitch_x, double pitch_y) {
  const int w = grad.width();
  const int h = grad.height();
  MatX div = MatX::Zero(h, w);
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      div(y, x) = -(grad.p(x + 1, y) - grad.p(x - 1, y)) / (2.0 * pitch_x) -
                  (grad.q(x, y + 1) - grad.q(x, y - 1)) / (2.0 * pitch_y);
    }
  }
  return div;
}

/// 5-point Laplacian on the interior pixels (border entries are zero).
inline MatX laplacian(const MatX& z, double pitch_x, double pitch_y) {
  MatX out = MatX::Zero(z.rows(), z.cols());
  for (Eigen::Index y = 1; y + 1 < z.rows(); ++y) {
    for (Eigen::Index x = 1; x + 1 < z.cols(); ++x) {
      out(y, x) = (z(y, x + 1) + z(y, x - 1) - 2.0 * z(y, x)) / (pitch_x * pitch_x) +
                  (z(y + 1, x) + z(y - 1, x) - 2.0 * z(y, x)) / (pitch_y * pitch_y);
    }
  }
  return out;
}

/// Integrates a gradient field into a depth map (positive into the gel).
///
/// Solves the 5-point Poisson equation  lap(depth) = div(-p, -q)  with
/// Dirichlet value `boundary_value` on the image border, diagonalized by the
/// DST-I. The result is then shifted so that the mean over unmasked pixels
/// equals `boundary_value`. Needs at least 4x4 pixels.
inline DepthImage poisson_solve(const GradientField& grad, double pitch_x, double pitch_y, double boundary_value) {
  const int w = grad.width();
  const int h = grad.height();
  if (w < 4 || h < 4) throw std::invalid_argument("poisson_solve: image must be at least 4x4");
  if (!grad.q.same_shape(grad.p) || !grad.mask.same_shape(grad.p)) {
    throw std::invalid_argument("poisson_solve: gradient components differ in size");
  }
  if (!(pitch_x > 0.0) || !(pitch_y > 0.0)) throw std::invalid_argument("poisson_solve: pitch must be positive");
  if (!std::isfinite(boundary_value)) throw std::invalid_argument("poisson_solve: boundary value not finite");
  for (std::size_t i = 0; i < grad.p.size(); ++i) {
    if (!std::isfinite(grad.p.data()[i]) || !std::isfinite(grad.q.data()[i])) {
      throw std::invalid_argument("poisson_solve: non-finite gradient");
    }
  }

  const MatX div = depth_divergence(grad, pitch_x, pitch_y);
  const Eigen::Index ni = h - 2;  // interior rows (y)
  const Eigen::Index nj = w - 2;  // interior cols (x)
  MatX coeff = dst2(div.block(1, 1, ni, nj));
  for (Eigen::Index v = 0; v < ni; ++v) {
    const double ey = (2.0 * std::cos(std::numbers::pi * static_cast<double>(v + 1) / static_cast<double>(ni + 1)) - 2.0) /
                      (pitch_y * pitch_y);
    for (Eigen::Index u = 0; u < nj; ++u) {
      const double ex =
          (2.0 * std::cos(std::numbers::pi * static_cast<double>(u + 1) / static_cast<double>(nj + 1)) - 2.0) /
          (pitch_x * pitch_x);
      coeff(v, u) /= (ex + ey);
    }
  }
  MatX z = MatX::Constant(h, w, boundary_value);
  z.block(1, 1, ni, nj).array() += idst2(coeff).array();

  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!grad.mask(x, y)) {
        sum += z(y, x);
        ++count;
      }
    }
  }
  if (count > 0) z.array() += boundary_value - sum / static_cast<double>(count);

  DepthImage out{Grid<double>(w, h, 0.0), grad.mask};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.depth(x, y) = z(y, x);
  }
  return out;
}

inline DepthImage poisson_solve(const GradientField& grad, double pixel_pitch, double boundary_value) {
  return poisson_solve(grad, pixel_pitch, pixel_pitch, boundary_value);
}

/// Sensor-frame position of pixel (i, j) at indentation `depth`.
inline Vec3 unproject_pixel(const GelConfig& gel, int i, int j, double depth) {
  if (gel.camera == CameraModel::Orthographic) return {gel.pixel_x(i), gel.pixel_y(j), -depth};

  const ClipCamera& cam = gel.clip;
  const double x_ndc = 2.0 * (i + 0.5) / gel.width - 1.0;
  const double y_ndc = 1.0 - 2.0 * (j + 0.5) / gel.height;
  // Eye-space distance of the surface point along the optical axis.
  const double eye_dist = cam.gel_distance() - depth;
  const Eigen::Matrix4d P = cam.projection();
  const double z_ndc = (P(2, 2) * -eye_dist + P(2, 3)) / eye_dist;
  Eigen::Vector4d eye = P.inverse() * Eigen::Vector4d(x_ndc, y_ndc, z_ndc, 1.0);
  eye /= eye.w();
  Eigen::Vector4d sensor = cam.view * eye;
  return sensor.head<3>() / sensor.w();
}

/// Unprojects masked depth pixels into a sensor-frame cloud. Point normals are
/// the outward object normals (n_x, n_y, -n_z) of the indented gel surface.
inline PointCloud depth_to_pointcloud(const DepthImage& depth, const NormalImage& normals, const GelConfig& gel) {
  if (!depth.depth.same_shape(normals.normals) || !depth.mask.same_shape(depth.depth)) {
    throw std::invalid_argument("depth_to_pointcloud: depth and normal images differ in size");
  }
  if (depth.width() != gel.width || depth.height() != gel.height) {
    throw std::invalid_argument("depth_to_pointcloud: image size does not match gel config");
  }
  PointCloud cloud;
  cloud.frame = Frame::Sensor;
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      if (!depth.mask(x, y)) continue;
      const Vec3& n = normals.normals(x, y);
      cloud.push_back(unproject_pixel(gel, x, y, depth.depth(x, y)), Vec3(n.x(), n.y(), -n.z()).normalized());
    }
  }
  return cloud;
}

/// Full pipeline for one normal image with the undisturbed gel as boundary.
inline PointCloud reconstruct_cloud(const NormalImage& normals, const GelConfig& gel, int step = -1) {
  DepthImage depth = poisson_solve(normals_to_gradients(normals), gel.pitch_x(), gel.pitch_y(), 0.0);
  PointCloud cloud = depth_to_pointcloud(depth, normals, gel);
  cloud.source_step = step;
  return cloud;
}

}  // namespace patchtrack
