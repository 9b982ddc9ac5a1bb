// SE(3) pose algebra used by every factor, registration and rendering step.
//
// Conventions:
//   * A Pose maps body-frame coordinates into the parent (world) frame:
//     p_world = R * p_body + t.
//   * Twists are ordered (rotation, translation); rotation in radians,
//     translation in millimetres.
//   * oplus / ominus perturb on the right (body frame):
//       oplus(a, xi)  = a * exp(xi)
//       ominus(a, b)  = log(a^-1 * b)
//   * compose() re-projects the product rotation onto SO(3) through a unit
//     quaternion, so long chains of compositions keep det(R) = +1.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace patchtrack {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<  0.0,   -v.z(),  v.y(),
        v.z(),  0.0,   -v.x(),
       -v.y(),  v.x(),  0.0;
  // clang-format on
  return s;
}

/// Tangent coordinates of SE(3): rotation (rad) then translation (mm).
struct Twist {
  Vec3 rot = Vec3::Zero();
  Vec3 trans = Vec3::Zero();

  Twist() = default;
  Twist(const Vec3& r, const Vec3& t) : rot(r), trans(t) {}

  static Twist zero() { return {}; }
  static Twist from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }

  Vec6 vector() const {
    Vec6 v;
    v << rot, trans;
    return v;
  }
  double norm() const { return vector().norm(); }

  friend Twist operator*(double s, const Twist& xi) { return {s * xi.rot, s * xi.trans}; }
  friend Twist operator+(const Twist& a, const Twist& b) { return {a.rot + b.rot, a.trans + b.trans}; }
  friend Twist operator-(const Twist& a, const Twist& b) { return {a.rot - b.rot, a.trans - b.trans}; }
};

class Pose {
 public:
  Pose() = default;
  Pose(const Mat3& rotation, const Vec3& translation) : R_(rotation), t_(translation) {}

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static Pose from_rotation(const Mat3& R) { return {R, Vec3::Zero()}; }
  static Pose from_axis_angle(const Vec3& axis, double angle, const Vec3& t = Vec3::Zero()) {
    return {Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(), t};
  }

  /// Builds a pose from a (not necessarily normalized) quaternion w, x, y, z.
  static Pose from_quaternion(double w, double x, double y, double z, const Vec3& t) {
    Eigen::Quaterniond q(w, x, y, z);
    if (!(q.norm() > 0.0)) throw std::invalid_argument("Pose: zero quaternion");
    return {q.normalized().toRotationMatrix(), t};
  }

  /// Reads the 7-number form [qw qx qy qz tx ty tz].
  static Pose from_array(std::span<const double> a) {
    if (a.size() != 7) throw std::invalid_argument("Pose: expected 7 numbers [qw qx qy qz tx ty tz]");
    return from_quaternion(a[0], a[1], a[2], a[3], Vec3(a[4], a[5], a[6]));
  }

  /// 7-number form [qw qx qy qz tx ty tz] with qw >= 0.
  std::array<double, 7> to_array() const {
    Eigen::Quaterniond q(R_);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    return {q.w(), q.x(), q.y(), q.z(), t_.x(), t_.y(), t_.z()};
  }

  const Mat3& rotation() const { return R_; }
  const Vec3& translation() const { return t_; }

  Vec3 act(const Vec3& p) const { return R_ * p + t_; }
  Vec3 rotate(const Vec3& v) const { return R_ * v; }

  Pose inverse() const {
    Mat3 Rt = R_.transpose();
    return {Rt, -(Rt * t_)};
  }

  Pose operator*(const Pose& b) const { return {orthonormalized(R_ * b.R_), R_ * b.t_ + t_}; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = R_;
    m.topRightCorner<3, 1>() = t_;
    return m;
  }

  /// Geodesic rotation angle in [0, pi].
  double angle() const {
    double s = 0.5 * Vec3(R_(2, 1) - R_(1, 2), R_(0, 2) - R_(2, 0), R_(1, 0) - R_(0, 1)).norm();
    double c = 0.5 * (R_.trace() - 1.0);
    return std::atan2(s, c);
  }

  static Mat3 orthonormalized(const Mat3& R) {
    return Eigen::Quaterniond(R).normalized().toRotationMatrix();
  }

 private:
  Mat3 R_ = Mat3::Identity();
  Vec3 t_ = Vec3::Zero();
};

inline Pose compose(const Pose& a, const Pose& b) { return a * b; }
inline Pose inverse(const Pose& a) { return a.inverse(); }

namespace detail {

// Coefficients of the SO(3) exponential / left Jacobian, with Taylor
// expansions below the small-angle threshold.
struct RodriguesCoefficients {
  double a;  // sin(t)/t
  double b;  // (1 - cos t)/t^2
  double c;  // (t - sin t)/t^3
};

inline RodriguesCoefficients rodrigues(double theta) {
  double t2 = theta * theta;
  if (theta < 1e-4) {
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0};
  }
  double s = std::sin(theta);
  double co = std::cos(theta);
  return {s / theta, (1.0 - co) / t2, (theta - s) / (t2 * theta)};
}

}  // namespace detail

inline Mat3 so3_exp(const Vec3& w) {
  auto k = detail::rodrigues(w.norm());
  Mat3 W = skew(w);
  return Mat3::Identity() + k.a * W + k.b * W * W;
}

/// Rotation angle closer to pi than this is treated as the log singularity.
inline constexpr double kLogSingularityMargin = 1e-6;

/// SO(3) logarithm; throws std::domain_error at angle pi.
inline Vec3 so3_log(const Mat3& R) {
  Vec3 vee(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  double s = 0.5 * vee.norm();
  double c = 0.5 * (R.trace() - 1.0);
  double theta = std::atan2(s, c);
  if (std::numbers::pi - theta < kLogSingularityMargin) {
    throw std::domain_error("so3_log: rotation angle at pi has no unique logarithm");
  }
  if (theta < 1e-4) {
    double t2 = theta * theta;
    return 0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0) * vee;
  }
  if (theta < 3.0) return (theta / (2.0 * std::sin(theta))) * vee;

  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part (R + R^T)/2 - cos(t) I = (1 - cos t) a a^T.
  Mat3 S = 0.5 * (R + R.transpose()) - c * Mat3::Identity();
  int i = 0;
  S.diagonal().maxCoeff(&i);
  Vec3 axis = S.col(i) / std::sqrt(std::max(S(i, i), 1e-300));
  axis.normalize();
  if (axis.dot(vee) < 0.0) axis = -axis;
  return theta * axis;
}

/// Left Jacobian of SO(3) (the V matrix coupling translation in SE(3) exp).
inline Mat3 so3_left_jacobian(const Vec3& w) {
  auto k = detail::rodrigues(w.norm());
  Mat3 W = skew(w);
  return Mat3::Identity() + k.b * W + k.c * W * W;
}

inline Mat3 so3_left_jacobian_inverse(const Vec3& w) {
  double theta = w.norm();
  Mat3 W = skew(w);
  double d;
  if (theta < 1e-4) {
    double t2 = theta * theta;
    d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    d = (1.0 - theta * std::sin(theta) / (2.0 * (1.0 - std::cos(theta)))) / (theta * theta);
  }
  return Mat3::Identity() - 0.5 * W + d * W * W;
}

inline Pose exp(const Twist& xi) {
  return {so3_exp(xi.rot), so3_left_jacobian(xi.rot) * xi.trans};
}

/// SE(3) logarithm; throws std::domain_error when the rotation angle is pi.
inline Twist log(const Pose& a) {
  Vec3 w = so3_log(a.rotation());
  return {w, so3_left_jacobian_inverse(w) * a.translation()};
}

inline Pose oplus(const Pose& a, const Twist& xi) { return a * exp(xi); }

inline Twist ominus(const Pose& a, const Pose& b) { return log(a.inverse() * b); }

enum class DifferenceScheme { Central, Forward };

/// Tangent-space Jacobian of f at `at` (a list of poses).
///
/// Column block j*6 + i perturbs pose j by +/- eps along tangent coordinate i
/// through oplus. `f` may return a Pose (output differences are taken with
/// ominus against f(at)) or any Eigen column vector.
template <typename F>
MatX numerical_jacobian(F&& f, std::span<const Pose> at, double eps = 1e-6,
                        DifferenceScheme scheme = DifferenceScheme::Central) {
  if (!(eps > 0.0)) throw std::invalid_argument("numerical_jacobian: eps must be positive");
  std::vector<Pose> x(at.begin(), at.end());
  using Out = std::decay_t<decltype(f(std::span<const Pose>(x)))>;
  constexpr bool kPoseValued = std::is_same_v<Out, Pose>;

  auto call = [&] { return f(std::span<const Pose>(x)); };
  const Out base = call();
  // Output difference b - a in output tangent coordinates.
  auto delta = [&](const Out& a, const Out& b) -> VecX {
    if constexpr (kPoseValued) {
      return ominus(base, b).vector() - ominus(base, a).vector();
    } else {
      return VecX(b) - VecX(a);
    }
  };

  Eigen::Index rows = 6;
  if constexpr (!kPoseValued) rows = VecX(base).size();
  MatX J(rows, 6 * static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) {
    const Pose x0 = x[j];
    for (int i = 0; i < 6; ++i) {
      Vec6 d = Vec6::Zero();
      d[i] = eps;
      x[j] = oplus(x0, Twist::from_vector(d));
      const Out plus = call();
      const auto col = static_cast<Eigen::Index>(6 * j + static_cast<std::size_t>(i));
      if (scheme == DifferenceScheme::Central) {
        x[j] = oplus(x0, Twist::from_vector(-d));
        const Out minus = call();
        J.col(col) = delta(minus, plus) / (2.0 * eps);
      } else {
        J.col(col) = delta(base, plus) / eps;
      }
      x[j] = x0;
    }
  }
  return J;
}

}  // namespace patchtrack
