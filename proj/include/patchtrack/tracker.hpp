// Per-step tracking loop: reconstruct, register, add factors, optimize, fuse.

#pragma once

#include "patchtrack/episode.hpp"
#include "patchtrack/factors.hpp"
#include "patchtrack/patchmap.hpp"
#include "patchtrack/reconstruct.hpp"
#include "patchtrack/registration.hpp"
#include "patchtrack/render.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace patchtrack {

enum class TrackerMode { ConstVel, ImageToImage, PatchGraph, GroundtruthPatch };

inline std::string to_string(TrackerMode m) {
  switch (m) {
    case TrackerMode::ConstVel: return "constvel";
    case TrackerMode::ImageToImage: return "im2im";
    case TrackerMode::PatchGraph: return "patchgraph";
    case TrackerMode::GroundtruthPatch: return "gtpatch";
  }
  return "unknown";
}

inline TrackerMode tracker_mode_from_string(const std::string& s) {
  if (s == "constvel") return TrackerMode::ConstVel;
  if (s == "im2im") return TrackerMode::ImageToImage;
  if (s == "patchgraph") return TrackerMode::PatchGraph;
  if (s == "gtpatch") return TrackerMode::GroundtruthPatch;
  throw ConfigError("unknown tracker mode: " + s);
}

struct TrackerConfig {
  GelConfig gel;
  ICPParams icp;
  LMParams lm;
  NoiseModel eff = NoiseModel::isotropic(0.01, 1.0);
  NoiseModel vis = NoiseModel::isotropic(0.05, 2.0);
  NoiseModel im2im = NoiseModel::isotropic(0.02, 0.5);
  NoiseModel im2pc = NoiseModel::isotropic(0.01, 0.3);
  NoiseModel vel = NoiseModel::isotropic(0.05, 2.0);
  KeyframePolicy keyframes = FixedInterval{5};
  double voxel_size = 0.3;
  double overlap_radius = 0.6;  ///< mm, for the overlap keyframe policy
  bool patch_uses_im2im = true;  ///< add image-to-image factors in the patch modes too
  double model_crop_scale = 1.5;  ///< model crop radius, in multiples of half the gel extent
  /// Correspondence caps (mm) of coarse pre-alignment passes before
  /// registering against the object model (GroundtruthPatch only); a failed
  /// coarse pass leaves the estimate as is.
  std::vector<double> model_coarse_distances = {8.0};
  std::optional<ShapeSDF> shape;  ///< object model, GroundtruthPatch only

  void validate(TrackerMode mode) const {
    gel.validate();
    icp.validate();
    for (const NoiseModel* n : {&eff, &vis, &im2im, &im2pc, &vel}) n->validate();
    patchtrack::validate(keyframes);
    for (double d : model_coarse_distances) {
      if (!(d > 0.0)) throw ConfigError("coarse correspondence distances must be positive");
    }
    if (!(voxel_size > 0.0) || !(overlap_radius > 0.0) || !(model_crop_scale > 0.0)) {
      throw ConfigError("tracker sizes must be positive");
    }
    if (mode == TrackerMode::GroundtruthPatch && !shape) {
      throw ConfigError("groundtruth-patch mode requires an object shape");
    }
  }
};

struct RegistrationSummary {
  bool converged = false;
  int iterations = 0;
  double rmse = 0.0;
  std::size_t correspondences = 0;
  double condition_number = 1.0;
  Pose transform;
};

inline RegistrationSummary summarize(const ICPResult& r) {
  return {r.converged, r.iterations, r.rmse, r.correspondences, r.condition_number, r.transform};
}

struct StepDiagnostics {
  int step = 0;
  std::size_t cloud_points = 0;
  bool registration_skipped = false;
  std::optional<RegistrationSummary> im2im;
  std::optional<RegistrationSummary> im2patch;
  bool keyframe = false;
  std::size_t patch_points = 0;
  int lm_iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<std::string> warnings;
};

struct PoseEstimate {
  Pose object;
  Pose effector;
  StepDiagnostics diagnostics;
};

struct EpisodeResult {
  TrackerMode mode = TrackerMode::ConstVel;
  std::vector<Pose> object_trajectory;  ///< final smoothed estimates, one per step
  std::vector<Pose> effector_trajectory;
  std::vector<Pose> online_objects;  ///< estimate of o_t right after step t
  double rotation_error = 0.0;       ///< rad
  double translation_error = 0.0;    ///< mm
  PointCloud patch;
  std::vector<StepDiagnostics> diagnostics;
};

/// Rotation angle and translation norm of estimate^-1 * truth.
inline std::pair<double, double> pose_error(const Pose& estimate, const Pose& truth) {
  const Pose d = estimate.inverse() * truth;
  return {d.angle(), d.translation().norm()};
}

/// Dense surface samples of an SDF at roughly `spacing` mm, in the object frame.
inline PointCloud sample_surface(const ShapeSDF& shape, double spacing) {
  const Aabb box = shape.bounds();
  PointCloud cloud;
  cloud.frame = Frame::Object;
  const Vec3 lo = box.min - Vec3::Constant(spacing);
  const Vec3 hi = box.max + Vec3::Constant(spacing);
  const auto n = ((hi - lo) / spacing).array().ceil().cast<int>().eval();
  for (int k = 0; k <= n.z(); ++k) {
    for (int j = 0; j <= n.y(); ++j) {
      for (int i = 0; i <= n.x(); ++i) {
        Vec3 p = lo + spacing * Vec3(i, j, k);
        if (std::abs(shape(p)) > spacing) continue;
        for (int it = 0; it < 3; ++it) {
          const Vec3 g = shape.gradient(p);
          if (g.norm() < 1e-9) break;
          p -= shape(p) * g.normalized();
        }
        const Vec3 g = shape.gradient(p);
        if (std::abs(shape(p)) > 1e-6 || g.norm() < 1e-9) continue;
        cloud.push_back(p, g.normalized());
      }
    }
  }
  return voxel_downsample(cloud, spacing);
}

class Tracker {
 public:
  /// Seeds the graph with the vision prior on o_0 and the effector prior on e_0.
  static Tracker init(TrackerMode mode, const TrackerConfig& config, const Pose& vision_prior,
                      const Pose& first_eff_measurement) {
    config.validate(mode);
    Tracker tr;
    tr.mode_ = mode;
    tr.config_ = config;
    tr.patch_.voxel_size = config.voxel_size;
    tr.graph_.add(VisPriorFactor{object_key(0), vision_prior, config.vis});
    tr.graph_.add(EffPriorFactor{effector_key(0), first_eff_measurement, config.eff});
    tr.values_[object_key(0)] = vision_prior;
    tr.values_[effector_key(0)] = first_eff_measurement;
    if (mode == TrackerMode::GroundtruthPatch) {
      tr.model_ = sample_surface(*config.shape, std::min(config.gel.pitch_x(), config.gel.pitch_y()));
    }
    return tr;
  }

  TrackerMode mode() const { return mode_; }
  const TrackerConfig& config() const { return config_; }
  const FactorGraph& graph() const { return graph_; }
  const Values& values() const { return values_; }
  const PatchMap& patch() const { return patch_; }
  int steps_processed() const { return next_; }

  /// Processes the next frame. The first call reuses the variables created by init.
  PoseEstimate step(const NormalImage& normals, const Pose& eff_measurement) {
    const int t = next_;
    StepDiagnostics diag;
    diag.step = t;

    if (t > 0) {
      values_[object_key(t)] = extrapolate(object_key(t - 1), t >= 2 ? object_key(t - 2) : object_key(t - 1));
      values_[effector_key(t)] =
          extrapolate(effector_key(t - 1), t >= 2 ? effector_key(t - 2) : effector_key(t - 1));
      graph_.add(EffPriorFactor{effector_key(t), eff_measurement, config_.eff});
      if (t >= 2) graph_.add(ConstVelFactor{object_key(t - 2), object_key(t - 1), object_key(t), config_.vel});
    }

    std::optional<PointCloud> cloud;
    if (mask_count(normals.mask) == 0 || contact_touches_border(normals.mask)) {
      diag.registration_skipped = true;
      diag.warnings.push_back("no usable contact; registration skipped");
    } else {
      cloud = reconstruct_cloud(normals, config_.gel, t);
      diag.cloud_points = cloud->size();
    }

    bool registered = false;
    std::optional<Pose> chained;  // S_t predicted from the image-to-image result
    const bool want_im2im = mode_ == TrackerMode::ImageToImage ||
                            (config_.patch_uses_im2im &&
                             (mode_ == TrackerMode::PatchGraph || mode_ == TrackerMode::GroundtruthPatch));
    if (cloud && want_im2im && prev_cloud_ && prev_step_ == t - 1) {
      try {
        const ICPResult r = icp_register(*cloud, *prev_cloud_, Pose{}, config_.icp);
        diag.im2im = summarize(r);
        if (!r.converged) diag.warnings.push_back("im2im registration did not converge");
        graph_.add(Im2ImFactor{object_key(t - 1), effector_key(t - 1), object_key(t), effector_key(t), r.transform,
                               config_.im2im});
        chained = s_estimate(t - 1) * r.transform;
        registered = true;
      } catch (const std::exception& e) {
        diag.warnings.push_back(std::string("im2im factor omitted: ") + e.what());
      }
    }

    const bool want_patch = mode_ == TrackerMode::PatchGraph || mode_ == TrackerMode::GroundtruthPatch;
    if (cloud && want_patch) {
      const Pose init = chained ? *chained : s_estimate(t);
      std::optional<PointCloud> target;
      if (mode_ == TrackerMode::GroundtruthPatch) {
        target = crop_model(init.act(cloud->centroid()));
      } else if (!patch_.empty()) {
        target = patch_.cloud;
      }
      if (target) {
        try {
          Pose start = init;
          const auto& caps = mode_ == TrackerMode::GroundtruthPatch ? config_.model_coarse_distances
                                                                    : std::vector<double>{};
          for (double cap : caps) {
            ICPParams coarse = config_.icp;
            coarse.max_correspondence_distance = cap;
            coarse.max_condition_number = std::max(coarse.max_condition_number, 1e12);
            try {
              start = icp_register(*cloud, *target, start, coarse).transform;
            } catch (const std::exception&) {
            }
          }
          const ICPResult r = icp_register(*cloud, *target, start, config_.icp);
          diag.im2patch = summarize(r);
          if (!r.converged) diag.warnings.push_back("im2patch registration did not converge");
          graph_.add(Im2PatchFactor{object_key(t), effector_key(t), r.transform, config_.im2pc});
          registered = true;
        } catch (const std::exception& e) {
          diag.warnings.push_back(std::string("im2patch factor omitted: ") + e.what());
        }
      }
    }

    // Without a registration factor o_1 would be unconstrained: tie it to o_0
    // with a zero-velocity term (the extrapolation used at t = 1).
    if (t == 1 && !registered) {
      graph_.add(ConstVelFactor{object_key(0), object_key(0), object_key(1), config_.vel});
    }

    const OptimizeResult opt = optimize(graph_, values_, config_.lm);
    values_ = opt.values;
    diag.lm_iterations = opt.stats.iterations;
    diag.initial_cost = opt.stats.initial_cost;
    diag.final_cost = opt.stats.final_cost;

    if (cloud && mode_ == TrackerMode::PatchGraph) {
      bool add = patch_.empty();
      if (!add) {
        if (std::holds_alternative<FixedInterval>(config_.keyframes)) {
          add = should_add_keyframe(config_.keyframes, t);
        } else {
          const PointCloud in_object = transformed(*cloud, s_estimate(t), Frame::Object);
          add = should_add_keyframe(config_.keyframes, t, overlap_fraction(in_object, patch_, config_.overlap_radius));
        }
      }
      if (add) {
        patch_ = fuse_keyframe(std::move(patch_), *cloud, s_estimate(t));
        diag.keyframe = true;
      }
    }
    diag.patch_points = patch_.cloud.size();

    if (cloud) {
      prev_cloud_ = std::move(cloud);
      prev_step_ = t;
    } else {
      prev_cloud_.reset();
    }
    online_objects_.push_back(values_.at(object_key(t)));
    diagnostics_.push_back(diag);
    ++next_;
    return {values_.at(object_key(t)), values_.at(effector_key(t)), std::move(diag)};
  }

  /// Errors of the final object estimate against the true final object pose.
  EpisodeResult finalize(const Pose& true_final_object) const {
    if (next_ == 0) throw std::logic_error("finalize: no steps processed");
    EpisodeResult res;
    res.mode = mode_;
    for (int t = 0; t < next_; ++t) {
      res.object_trajectory.push_back(values_.at(object_key(t)));
      res.effector_trajectory.push_back(values_.at(effector_key(t)));
    }
    res.online_objects = online_objects_;
    std::tie(res.rotation_error, res.translation_error) = pose_error(res.object_trajectory.back(), true_final_object);
    res.patch = mode_ == TrackerMode::GroundtruthPatch ? PointCloud{{}, {}, Frame::Object, -1} : patch_.cloud;
    res.diagnostics = diagnostics_;
    return res;
  }

 private:
  Tracker() = default;

  /// Current object-from-sensor estimate o_t^-1 e_t.
  Pose s_estimate(int t) const { return object_from_sensor(values_.at(object_key(t)), values_.at(effector_key(t))); }

  /// latest * (before^-1 * latest): one more step at the latest velocity.
  Pose extrapolate(const VariableKey& latest, const VariableKey& before) const {
    const Pose& a = values_.at(before);
    const Pose& b = values_.at(latest);
    return b * (a.inverse() * b);
  }

  PointCloud crop_model(const Vec3& centre) const {
    const double radius =
        config_.model_crop_scale * 0.5 * std::max(config_.gel.extent_x, config_.gel.extent_y);
    PointCloud out;
    out.frame = Frame::Object;
    for (std::size_t i = 0; i < model_.size(); ++i) {
      if ((model_.points[i] - centre).norm() <= radius) out.push_back(model_.points[i], model_.normals[i]);
    }
    return out;
  }

  TrackerMode mode_ = TrackerMode::ConstVel;
  TrackerConfig config_;
  FactorGraph graph_;
  Values values_;
  PatchMap patch_;
  PointCloud model_;
  std::optional<PointCloud> prev_cloud_;
  int prev_step_ = -1;
  int next_ = 0;
  std::vector<Pose> online_objects_;
  std::vector<StepDiagnostics> diagnostics_;
};

/// Runs a tracker over a whole episode.
inline EpisodeResult track_episode(TrackerMode mode, const TrackerConfig& config, const Episode& episode) {
  if (episode.steps.empty()) throw std::invalid_argument("track_episode: empty episode");
  Tracker tr = Tracker::init(mode, config, episode.vision_prior, episode.steps.front().effector_measured);
  for (const auto& st : episode.steps) tr.step(st.normals, st.effector_measured);
  return tr.finalize(episode.steps.back().object);
}

}  // namespace patchtrack
