// Simulated contact episodes: object/sensor trajectories, rendered normal
// images and noisy pose measurements.

#pragma once

#include "patchtrack/errors.hpp"
#include "patchtrack/factors.hpp"
#include "patchtrack/render.hpp"

#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace patchtrack {

enum class TrajectoryKind { Linear, Arc, Rotation, Composite };

/// Which body moves in the world; the other stays at the identity.
enum class Mover { Object, Sensor };

inline std::string to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::Linear: return "linear";
    case TrajectoryKind::Arc: return "arc";
    case TrajectoryKind::Rotation: return "rotation";
    case TrajectoryKind::Composite: return "composite";
  }
  return "unknown";
}

inline TrajectoryKind trajectory_kind_from_string(const std::string& s) {
  if (s == "linear") return TrajectoryKind::Linear;
  if (s == "arc") return TrajectoryKind::Arc;
  if (s == "rotation") return TrajectoryKind::Rotation;
  if (s == "composite") return TrajectoryKind::Composite;
  throw ConfigError("unknown trajectory kind: " + s);
}

inline std::string to_string(Mover m) { return m == Mover::Object ? "object" : "sensor"; }

inline Mover mover_from_string(const std::string& s) {
  if (s == "object") return Mover::Object;
  if (s == "sensor") return Mover::Sensor;
  throw ConfigError("unknown mover: " + s);
}

/// Relative motion of the object over the gel, described in the sensor frame.
/// The object starts with orientation `orientation` (sensor-from-object) and
/// its lowest point pressed `indentation` mm into the gel at `start` (gel
/// plane, mm). The contact point then follows a path in the gel plane while
/// the object turns about the gel normal through that point.
struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Linear;
  int steps = 25;
  double dt = 0.1;  ///< s
  double indentation = 1.0;
  Mat3 orientation = Mat3::Identity();
  Eigen::Vector2d start = Eigen::Vector2d::Zero();
  double direction = 0.0;  ///< slide direction in the gel plane (rad)
  double length = 8.0;     ///< linear / composite slide length (mm)
  double arc_radius = 4.0;
  double arc_sweep = 0.5 * std::numbers::pi;
  double rotation = 0.35;  ///< total turn about the gel normal (rotation / composite)
  Mover mover = Mover::Object;
  int max_missing_contact = 2;  ///< consecutive contact-free steps tolerated

  void validate(const GelConfig& gel) const {
    if (steps < 3) throw ConfigError("trajectory needs at least 3 steps");
    if (!(dt > 0.0)) throw ConfigError("trajectory dt must be positive");
    if (!(indentation > 0.0) || !(indentation < gel.max_indentation)) {
      throw ConfigError("indentation must lie in (0, max indentation)");
    }
    if (max_missing_contact < 0) throw ConfigError("max_missing_contact must be >= 0");
    if (!(length >= 0.0) || !(arc_radius >= 0.0)) throw ConfigError("trajectory lengths must be >= 0");
  }
};

struct NoiseSpec {
  double normal_sigma = 0.05;  ///< rad
  NoiseModel eff = NoiseModel::isotropic(0.01, 1.0);
  NoiseModel vis = NoiseModel::isotropic(0.05, 2.0);

  static NoiseSpec none() { return {0.0, NoiseModel{Vec6::Zero()}, NoiseModel{Vec6::Zero()}}; }

  void validate() const {
    if (!(normal_sigma >= 0.0)) throw ConfigError("normal sigma must be >= 0");
    eff.validate_nonnegative();
    vis.validate_nonnegative();
  }
};

struct EpisodeStep {
  int index = 0;  ///< trajectory sample index (dropped frames leave gaps)
  double time = 0.0;
  Pose object;
  Pose effector;
  Pose effector_measured;
  NormalImage normals;
  DepthImage depth;  ///< ground truth, for evaluation only
};

struct Episode {
  ShapeSDF shape;
  GelConfig gel;
  TrajectorySpec trajectory;
  NoiseSpec noise;
  std::uint64_t seed = 0;
  Pose vision_prior;
  std::vector<EpisodeStep> steps;
  std::vector<int> dropped;  ///< indices of frames whose contact touched the image border
};

/// Sensor-from-object pose at path parameter s in [0, 1].
inline Pose trajectory_pose(const ShapeSDF& shape, const TrajectorySpec& traj, double s) {
  const Mat3& R0 = traj.orientation;
  const Vec3 down_in_object = R0.transpose() * Vec3::UnitZ();
  const Vec3 lowest = shape.support_min(down_in_object);
  const Vec3 c0(traj.start.x(), traj.start.y(), 0.0);
  const Pose P0(R0, Vec3(c0.x(), c0.y(), -traj.indentation) - R0 * lowest);

  Vec3 c = c0;
  double theta = 0.0;
  const Vec3 dir(std::cos(traj.direction), std::sin(traj.direction), 0.0);
  switch (traj.kind) {
    case TrajectoryKind::Linear:
      c = c0 + s * traj.length * dir;
      break;
    case TrajectoryKind::Arc: {
      // Circle through c0 whose centre lies arc_radius to the left of `dir`.
      const Vec3 left(-dir.y(), dir.x(), 0.0);
      const Vec3 centre = c0 + traj.arc_radius * left;
      const double phi = s * traj.arc_sweep;
      c = centre + Eigen::AngleAxisd(phi, Vec3::UnitZ()) * (c0 - centre);
      theta = phi;
      break;
    }
    case TrajectoryKind::Rotation:
      theta = s * traj.rotation;
      break;
    case TrajectoryKind::Composite:
      c = c0 + s * traj.length * dir;
      theta = s * traj.rotation;
      break;
  }
  const Pose M = Pose::from_translation(c) * Pose::from_axis_angle(Vec3::UnitZ(), theta) *
                 Pose::from_translation(-c0);
  return M * P0;
}

/// Draws a tangent-space sample with per-axis sigmas.
inline Twist sample_twist(const NoiseModel& noise, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vec6 v;
  for (int i = 0; i < 6; ++i) v[i] = noise.sigmas[i] * n01(rng);
  return Twist::from_vector(v);
}

/// Renders an episode. Frames whose contact touches the image border are
/// dropped; losing contact for more than max_missing_contact consecutive
/// steps, or keeping fewer than three frames, raises EpisodeGenerationError.
inline Episode generate_episode(const ShapeSDF& shape, const TrajectorySpec& traj, const GelConfig& gel,
                                const NoiseSpec& noise, std::uint64_t seed) {
  gel.validate();
  traj.validate(gel);
  noise.validate();

  Episode ep{shape, gel, traj, noise, seed, {}, {}, {}};
  std::mt19937_64 rng(seed);
  int missing = 0;
  for (int k = 0; k < traj.steps; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(traj.steps - 1);
    const Pose sensor_from_object = trajectory_pose(shape, traj, s);
    EpisodeStep st;
    st.index = k;
    st.time = k * traj.dt;
    if (traj.mover == Mover::Object) {
      st.effector = Pose{};
      st.object = sensor_from_object;
    } else {
      st.object = Pose{};
      st.effector = sensor_from_object.inverse();
    }
    // Noise is drawn for every trajectory sample so that dropping a frame
    // does not shift the noise of later frames.
    const Twist eff_noise = sample_twist(noise.eff, rng);
    const std::uint64_t normal_seed = rng();

    st.depth = render_depth(shape, st.object, st.effector, gel);
    if (mask_count(st.depth.mask) == 0) {
      if (++missing > traj.max_missing_contact) throw EpisodeGenerationError(k, "contact lost");
      continue;
    }
    missing = 0;
    if (contact_touches_border(st.depth.mask)) {
      ep.dropped.push_back(k);
      continue;
    }
    st.normals = perturb_normals(depth_to_normals(st.depth, gel), noise.normal_sigma, normal_seed);
    st.effector_measured = oplus(st.effector, eff_noise);
    ep.steps.push_back(std::move(st));
  }
  if (ep.steps.size() < 3) {
    throw EpisodeGenerationError(traj.steps - 1, "fewer than 3 usable frames");
  }
  ep.vision_prior = oplus(ep.steps.front().object, sample_twist(noise.vis, rng));
  return ep;
}

}  // namespace patchtrack
