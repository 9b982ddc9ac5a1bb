// Point-to-plane ICP between reconstructed contact clouds.

#pragma once

#include "patchtrack/errors.hpp"
#include "patchtrack/point_cloud.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace patchtrack {

struct ICPParams {
  int max_iterations = 30;
  double max_correspondence_distance = 2.0;  ///< mm
  double convergence_threshold = 1e-5;       ///< norm of the update twist
  int min_correspondences = 20;
  double max_condition_number = 1e8;

  void validate() const {
    if (max_iterations <= 0 || !(max_correspondence_distance > 0.0) || !(convergence_threshold > 0.0) ||
        min_correspondences <= 0 || !(max_condition_number > 1.0)) {
      throw ConfigError("ICP parameters must be strictly positive");
    }
  }
};

struct Correspondence {
  std::size_t source;
  std::size_t target;
  double distance;
};

struct ICPResult {
  Pose transform;  ///< maps source-frame points into the target frame
  bool converged = false;
  int iterations = 0;
  double rmse = 0.0;  ///< point-to-point RMSE over the final correspondences
  std::size_t correspondences = 0;
  double condition_number = 1.0;
  std::vector<double> rmse_history;  ///< RMSE before each update, then the final value
};

/// For each source point, the nearest target point within max_dist (ties go to
/// the lower target index). Same result as a brute-force search.
inline std::vector<Correspondence> nearest_neighbors(const PointCloud& source, const PointCloud& target,
                                                     double max_dist) {
  std::vector<Correspondence> out;
  if (source.empty() || target.empty()) return out;
  SpatialGrid grid(target.points, std::max(max_dist, 1e-6));
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (auto m = grid.nearest(source.points[i], max_dist)) out.push_back({i, m->index, m->distance});
  }
  return out;
}

inline double correspondence_rmse(const std::vector<Correspondence>& corr) {
  if (corr.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : corr) s += c.distance * c.distance;
  return std::sqrt(s / static_cast<double>(corr.size()));
}

/// Normal equations of the linearized point-to-plane objective, with the
/// rotation taken about the centroid of the matched source points.
struct PointToPlaneSystem {
  Mat6 H = Mat6::Zero();
  Vec6 g = Vec6::Zero();
  Vec3 center = Vec3::Zero();

  /// Ratio of extreme eigenvalues of H (infinite when H is singular).
  double condition_number() const {
    Eigen::SelfAdjointEigenSolver<Mat6> es(H, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    return hi / lo;
  }
};

inline PointToPlaneSystem point_to_plane_system(const PointCloud& source, const PointCloud& target,
                                                const std::vector<Correspondence>& corr) {
  PointToPlaneSystem sys;
  for (const auto& c : corr) sys.center += source.points[c.source];
  if (!corr.empty()) sys.center /= static_cast<double>(corr.size());
  for (const auto& c : corr) {
    const Vec3 p = source.points[c.source] - sys.center;
    const Vec3& n = target.normals[c.target];
    Vec6 J;
    J << p.cross(n), n;
    const double r = n.dot(source.points[c.source] - target.points[c.target]);
    sys.H += J * J.transpose();
    sys.g += J * r;
  }
  return sys;
}

namespace detail {

// x is a rotation about `center` followed by a translation; re-express it as
// a twist about the source-frame origin.
inline Twist twist_about_origin(const Vec6& x, const Vec3& center) {
  const Pose about_center =
      Pose::from_translation(center) * exp(Twist::from_vector(x)) * Pose::from_translation(-center);
  return log(about_center);
}

// Minimum-norm solution restricted to eigen-directions whose eigenvalue is
// within max_condition_number of the largest one.
inline Vec6 truncated_solve(const PointToPlaneSystem& sys, double max_condition_number) {
  Eigen::SelfAdjointEigenSolver<Mat6> es(sys.H);
  const double hi = es.eigenvalues().maxCoeff();
  Vec6 x = Vec6::Zero();
  if (!(hi > 0.0)) return x;
  for (int i = 0; i < 6; ++i) {
    const double l = es.eigenvalues()[i];
    if (l * max_condition_number < hi) continue;
    const Vec6 v = es.eigenvectors().col(i);
    x -= v * (v.dot(sys.g) / l);
  }
  return x;
}

}  // namespace detail

/// One Gauss-Newton step of point-to-plane ICP. Source points are taken as
/// already transformed; the returned twist is a left update, i.e. the new
/// source points are exp(xi) applied to the old ones.
inline Twist point_to_plane_step(const PointCloud& source, const PointCloud& target,
                                 const std::vector<Correspondence>& corr, double max_condition_number = 1e8) {
  if (corr.size() < 6) throw InsufficientOverlapError(corr.size(), 6);
  const PointToPlaneSystem sys = point_to_plane_system(source, target, corr);
  const double cond = sys.condition_number();
  if (!(cond <= max_condition_number)) throw DegenerateGeometryError(cond);
  return detail::twist_about_origin(sys.H.ldlt().solve(-sys.g), sys.center);
}

/// Registers `source` onto `target` starting from `init`. Throws
/// InsufficientOverlapError when an iteration finds too few correspondences.
/// Intermediate ill-conditioned steps (e.g. all matches on one face while far
/// from the optimum) only move along the well-determined directions; if the
/// normal matrix at the final estimate is still ill-conditioned,
/// DegenerateGeometryError is thrown.
inline ICPResult icp_register(const PointCloud& source, const PointCloud& target, const Pose& init,
                              const ICPParams& params = {}) {
  params.validate();
  ICPResult res;
  res.transform = init;
  const auto required = static_cast<std::size_t>(params.min_correspondences);
  std::vector<Correspondence> corr;
  PointCloud moved;
  for (int it = 0; it < params.max_iterations; ++it) {
    moved = transformed(source, res.transform, target.frame);
    corr = nearest_neighbors(moved, target, params.max_correspondence_distance);
    if (corr.size() < required) throw InsufficientOverlapError(corr.size(), required);
    res.rmse_history.push_back(correspondence_rmse(corr));
    const PointToPlaneSystem sys = point_to_plane_system(moved, target, corr);
    const Vec6 x = sys.condition_number() <= params.max_condition_number
                       ? Vec6(sys.H.ldlt().solve(-sys.g))
                       : detail::truncated_solve(sys, params.max_condition_number);
    const Twist xi = detail::twist_about_origin(x, sys.center);
    res.transform = exp(xi) * res.transform;
    res.iterations = it + 1;
    if (xi.norm() < params.convergence_threshold) {
      res.converged = true;
      break;
    }
  }
  moved = transformed(source, res.transform, target.frame);
  corr = nearest_neighbors(moved, target, params.max_correspondence_distance);
  if (corr.size() < required) throw InsufficientOverlapError(corr.size(), required);
  res.correspondences = corr.size();
  res.rmse = correspondence_rmse(corr);
  res.rmse_history.push_back(res.rmse);
  res.condition_number = point_to_plane_system(moved, target, corr).condition_number();
  if (!(res.condition_number <= params.max_condition_number)) throw DegenerateGeometryError(res.condition_number);
  return res;
}

}  // namespace patchtrack
