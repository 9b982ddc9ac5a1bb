#pragma once

#include "patchtrack/geometry.hpp"

#include <random>

namespace testing {

using namespace patchtrack;

inline Twist random_twist(std::mt19937_64& rng, double rot_scale, double trans_scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return {Vec3(u(rng), u(rng), u(rng)) * rot_scale, Vec3(u(rng), u(rng), u(rng)) * trans_scale};
}

inline Pose random_pose(std::mt19937_64& rng, double trans_scale = 10.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Quaterniond q(u(rng), u(rng), u(rng), u(rng));
  q.normalize();
  return {q.toRotationMatrix(), Vec3(u(rng), u(rng), u(rng)) * trans_scale};
}

inline Pose rot_z(double angle) { return Pose::from_axis_angle(Vec3::UnitZ(), angle); }

inline bool pose_near(const Pose& a, const Pose& b, double tol) {
  return (a.rotation() - b.rotation()).cwiseAbs().maxCoeff() <= tol &&
         (a.translation() - b.translation()).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace testing
