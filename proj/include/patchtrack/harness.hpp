// Suite configuration, dataset generation, batch tracking and error reports.

#pragma once

#include "patchtrack/io.hpp"
#include "patchtrack/stats.hpp"
#include "patchtrack/tracker.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <thread>

namespace patchtrack {

// ---------------------------------------------------------------- config

/// How an object is pressed into the gel.
enum class ContactPose { Upright, Corner, Apex };

inline std::string to_string(ContactPose c) {
  switch (c) {
    case ContactPose::Upright:
      return "upright";
    case ContactPose::Corner:
      return "corner";
    case ContactPose::Apex:
      return "apex";
  }
  return "?";
}

inline ContactPose contact_pose_from_string(const std::string& s) {
  if (s == "upright") return ContactPose::Upright;
  if (s == "corner") return ContactPose::Corner;
  if (s == "apex") return ContactPose::Apex;
  throw ConfigError("unknown contact pose: " + s);
}

/// Box-like objects touch with a corner, the pyramid with its apex.
inline ContactPose default_contact_pose(const std::string& name) {
  if (name == "cube" || name == "toy_brick" || name == "toy_human") return ContactPose::Corner;
  if (name == "pyramid") return ContactPose::Apex;
  return ContactPose::Upright;
}

/// Object rotation that brings the contact feature to the bottom (-z).
inline Mat3 contact_orientation(ContactPose c) {
  switch (c) {
    case ContactPose::Corner:
      return Eigen::Quaterniond::FromTwoVectors(Vec3(-1, -1, -1).normalized(), Vec3(0, 0, -1)).toRotationMatrix();
    case ContactPose::Apex:
      return Pose::from_axis_angle(Vec3::UnitX(), std::numbers::pi).rotation();
    case ContactPose::Upright:
      break;
  }
  return Mat3::Identity();
}

struct ObjectSpec {
  std::string name;
  Json shape_spec;  ///< named shape string or {"name", "parts"}
  ShapeSDF shape;
  ContactPose contact = ContactPose::Upright;
  std::optional<double> indentation;  ///< overrides the suite indentation
};

/// Ranges from which each episode's trajectory is drawn.
struct TrajectoryRanges {
  int steps = 25;
  double dt = 0.1;
  double indentation = 1.4;
  std::vector<TrajectoryKind> kinds = {TrajectoryKind::Linear, TrajectoryKind::Arc, TrajectoryKind::Rotation,
                                       TrajectoryKind::Composite};
  double length = 6.0;         ///< mm
  double arc_radius = 4.0;     ///< mm
  double arc_sweep = 0.8;      ///< rad
  double rotation = 0.3;       ///< rad, sign drawn per episode
  double start_offset = 3.0;   ///< mm back along the slide direction
  double max_tilt = 0.1;       ///< rad, random tilt of the contact pose
  Mover mover = Mover::Object;
  int max_missing_contact = 2;
};

struct SuiteConfig {
  std::uint64_t master_seed = 1;
  int episodes_per_object = 20;
  std::vector<ObjectSpec> objects;
  std::vector<TrackerMode> modes = {TrackerMode::ConstVel, TrackerMode::ImageToImage, TrackerMode::PatchGraph,
                                    TrackerMode::GroundtruthPatch};
  GelConfig gel;
  TrajectoryRanges trajectory;
  NoiseSpec noise;
  TrackerConfig tracker;
  int workers = 1;  ///< 0 uses all hardware threads
  std::string output_dir;

  void validate() const {
    if (episodes_per_object < 1) throw ConfigError("episodes_per_object must be >= 1");
    if (episodes_per_object > 1000) throw ConfigError("episodes_per_object must be <= 1000");
    if (objects.empty()) throw ConfigError("suite needs at least one object");
    if (modes.empty()) throw ConfigError("suite needs at least one tracker mode");
    if (workers < 0) throw ConfigError("workers must be >= 0");
    std::set<std::string> names;
    for (const auto& o : objects) {
      if (!names.insert(o.name).second) throw ConfigError("duplicate object name: " + o.name);
    }
    const auto& t = trajectory;
    if (t.steps < 3 || !(t.dt > 0.0) || t.kinds.empty() || !(t.length >= 0.0) || !(t.arc_radius > 0.0) ||
        !(t.start_offset >= 0.0) || !(t.max_tilt >= 0.0) || t.max_missing_contact < 0) {
      throw ConfigError("invalid trajectory ranges");
    }
    gel.validate();
    for (const auto& o : objects) {
      const double d = o.indentation.value_or(t.indentation);
      if (!(d > 0.0) || !(d < gel.max_indentation)) {
        throw ConfigError("indentation of " + o.name + " must lie in (0, max indentation)");
      }
    }
    noise.validate();
    TrackerConfig tc = tracker;
    tc.gel = gel;
    tc.shape = objects.front().shape;
    tc.validate(TrackerMode::GroundtruthPatch);
  }
};


inline ObjectSpec object_from_json(const Json& j) {
  ObjectSpec o;
  if (j.is_string()) {
    o.name = j.get<std::string>();
    o.shape_spec = o.name;
  } else {
    detail::check_keys(j, {"name", "shape", "contact", "indentation_mm"}, "object");
    o.name = j.at("name").get<std::string>();
    o.shape_spec = j.contains("shape") ? j.at("shape") : Json(o.name);
  }
  o.shape = shape_from_json(o.shape_spec);
  o.contact = default_contact_pose(o.name);
  if (j.is_object() && j.contains("contact")) o.contact = contact_pose_from_string(j.at("contact").get<std::string>());
  if (j.is_object() && j.contains("indentation_mm")) o.indentation = j.at("indentation_mm").get<double>();
  return o;
}

inline ICPParams icp_from_json(const Json& j) {
  detail::check_keys(j,
                     {"max_iterations", "max_correspondence_distance_mm", "convergence_threshold",
                      "min_correspondences", "max_condition_number"},
                     "tracker.icp");
  ICPParams p;
  p.max_iterations = j.value("max_iterations", p.max_iterations);
  p.max_correspondence_distance = j.value("max_correspondence_distance_mm", p.max_correspondence_distance);
  p.convergence_threshold = j.value("convergence_threshold", p.convergence_threshold);
  p.min_correspondences = j.value("min_correspondences", p.min_correspondences);
  p.max_condition_number = j.value("max_condition_number", p.max_condition_number);
  p.validate();
  return p;
}

inline LMParams lm_from_json(const Json& j) {
  detail::check_keys(j, {"max_iterations", "lambda_init", "lambda_factor", "cost_tolerance"}, "tracker.lm");
  LMParams p;
  p.max_iterations = j.value("max_iterations", p.max_iterations);
  p.lambda_init = j.value("lambda_init", p.lambda_init);
  p.lambda_factor = j.value("lambda_factor", p.lambda_factor);
  p.cost_tolerance = j.value("cost_tolerance", p.cost_tolerance);
  if (p.max_iterations < 1 || !(p.lambda_init > 0.0) || !(p.lambda_factor > 1.0) || !(p.cost_tolerance >= 0.0)) {
    throw ConfigError("invalid optimizer parameters");
  }
  return p;
}

inline KeyframePolicy keyframes_from_json(const Json& j) {
  detail::check_keys(j, {"policy", "k", "fraction"}, "tracker.keyframes");
  const std::string policy = j.value("policy", std::string("interval"));
  KeyframePolicy p;
  if (policy == "interval") {
    p = FixedInterval{j.value("k", 5)};
  } else if (policy == "overlap") {
    p = OverlapThreshold{j.value("fraction", 0.6)};
  } else {
    throw ConfigError("unknown keyframe policy: " + policy);
  }
  try {
    validate(p);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return p;
}

/// Tracker section of a config file. The gel and object model come from the
/// episode being tracked.
inline TrackerConfig tracker_config_from_json(const Json& j) {
  detail::check_keys(j,
                     {"sigmas", "icp", "lm", "keyframes", "voxel_size_mm", "overlap_radius_mm", "patch_uses_im2im",
                      "model_crop_scale", "model_coarse_distances_mm"},
                     "tracker");
  TrackerConfig c;
  if (j.contains("sigmas")) {
    const Json& s = j.at("sigmas");
    detail::check_keys(s, {"eff", "vis", "im2im", "im2patch", "constvel"}, "tracker.sigmas");
    if (s.contains("eff")) c.eff = noise_from_json(s.at("eff"));
    if (s.contains("vis")) c.vis = noise_from_json(s.at("vis"));
    if (s.contains("im2im")) c.im2im = noise_from_json(s.at("im2im"));
    if (s.contains("im2patch")) c.im2pc = noise_from_json(s.at("im2patch"));
    if (s.contains("constvel")) c.vel = noise_from_json(s.at("constvel"));
  }
  if (j.contains("icp")) c.icp = icp_from_json(j.at("icp"));
  if (j.contains("lm")) c.lm = lm_from_json(j.at("lm"));
  if (j.contains("keyframes")) c.keyframes = keyframes_from_json(j.at("keyframes"));
  c.voxel_size = j.value("voxel_size_mm", c.voxel_size);
  c.overlap_radius = j.value("overlap_radius_mm", c.overlap_radius);
  c.patch_uses_im2im = j.value("patch_uses_im2im", c.patch_uses_im2im);
  c.model_crop_scale = j.value("model_crop_scale", c.model_crop_scale);
  c.model_coarse_distances = j.value("model_coarse_distances_mm", c.model_coarse_distances);
  return c;
}

inline TrajectoryRanges trajectory_ranges_from_json(const Json& j) {
  detail::check_keys(j,
                     {"steps", "dt", "indentation_mm", "kinds", "length_mm", "arc_radius_mm", "arc_sweep_rad",
                      "rotation_rad", "start_offset_mm", "max_tilt_rad", "mover", "max_missing_contact"},
                     "trajectory");
  TrajectoryRanges t;
  t.steps = j.value("steps", t.steps);
  t.dt = j.value("dt", t.dt);
  t.indentation = j.value("indentation_mm", t.indentation);
  if (j.contains("kinds")) {
    t.kinds.clear();
    for (const auto& k : j.at("kinds")) t.kinds.push_back(trajectory_kind_from_string(k.get<std::string>()));
  }
  t.length = j.value("length_mm", t.length);
  t.arc_radius = j.value("arc_radius_mm", t.arc_radius);
  t.arc_sweep = j.value("arc_sweep_rad", t.arc_sweep);
  t.rotation = j.value("rotation_rad", t.rotation);
  t.start_offset = j.value("start_offset_mm", t.start_offset);
  t.max_tilt = j.value("max_tilt_rad", t.max_tilt);
  t.mover = mover_from_string(j.value("mover", std::string("object")));
  t.max_missing_contact = j.value("max_missing_contact", t.max_missing_contact);
  return t;
}

inline SuiteConfig suite_config_from_json(const Json& j) {
  try {
    detail::check_keys(j,
                       {"master_seed", "episodes_per_object", "objects", "modes", "gel", "trajectory", "noise",
                        "tracker", "workers", "output_dir"},
                       "suite config");
    SuiteConfig c;
    c.master_seed = j.value("master_seed", c.master_seed);
    c.episodes_per_object = j.value("episodes_per_object", c.episodes_per_object);
    if (j.contains("objects")) {
      for (const auto& o : j.at("objects")) c.objects.push_back(object_from_json(o));
    } else {
      for (const char* name : {"sphere", "cube", "pyramid"}) c.objects.push_back(object_from_json(Json(name)));
    }
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j.at("modes")) c.modes.push_back(tracker_mode_from_string(m.get<std::string>()));
      std::sort(c.modes.begin(), c.modes.end());
      c.modes.erase(std::unique(c.modes.begin(), c.modes.end()), c.modes.end());
    }
    if (j.contains("gel")) {
      c.gel = gel_from_json(j.at("gel"));
    }
    if (j.contains("trajectory")) c.trajectory = trajectory_ranges_from_json(j.at("trajectory"));
    if (j.contains("noise")) {
      detail::check_keys(j.at("noise"), {"normal_sigma", "eff", "vis"}, "noise");
      c.noise = noise_spec_from_json(j.at("noise"));
    }
    if (j.contains("tracker")) c.tracker = tracker_config_from_json(j.at("tracker"));
    c.workers = j.value("workers", c.workers);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("suite config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("suite config: ") + e.what());
  }
}

inline SuiteConfig load_suite_config(const fs::path& path) { return suite_config_from_json(read_json(path)); }

/// Tracker configuration from a config file that is either a suite config
/// (its "tracker" section is used) or a bare tracker section.
inline TrackerConfig load_tracker_config(const fs::path& path) {
  const Json j = read_json(path);
  try {
    if (j.contains("tracker")) return tracker_config_from_json(j.at("tracker"));
    if (j.contains("master_seed") || j.contains("objects")) return {};
    return tracker_config_from_json(j);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("tracker config: ") + e.what());
  }
}

// ---------------------------------------------------------------- episodes

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t episode_seed(const SuiteConfig& c, int object_index, int episode) {
  return c.master_seed + static_cast<std::uint64_t>(object_index) * 1000 + static_cast<std::uint64_t>(episode);
}

/// Trajectory of one suite episode. Randomness comes from its own stream so
/// that it is independent of the sensor noise drawn from the episode seed.
inline TrajectorySpec episode_trajectory(const SuiteConfig& c, int object_index, int episode) {
  const auto& r = c.trajectory;
  const ObjectSpec& obj = c.objects.at(static_cast<std::size_t>(object_index));
  std::seed_seq seq{static_cast<std::uint32_t>(episode_seed(c, object_index, episode) & 0xFFFFFFFFu),
                    static_cast<std::uint32_t>(episode_seed(c, object_index, episode) >> 32), 0x74726aU};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double pi = std::numbers::pi;

  TrajectorySpec t;
  t.kind = r.kinds[static_cast<std::size_t>(episode) % r.kinds.size()];
  t.steps = r.steps;
  t.dt = r.dt;
  t.indentation = obj.indentation.value_or(r.indentation);
  const double yaw = pi * u(rng);
  Vec3 tilt_axis(u(rng), u(rng), 0.0);
  if (tilt_axis.norm() < 1e-9) tilt_axis = Vec3::UnitX();
  const double tilt = r.max_tilt * std::abs(u(rng));
  t.orientation = Pose::from_axis_angle(tilt_axis, tilt).rotation() *
                  Pose::from_axis_angle(Vec3::UnitZ(), yaw).rotation() * contact_orientation(obj.contact);
  t.direction = pi * u(rng);
  const bool slides = t.kind == TrajectoryKind::Linear || t.kind == TrajectoryKind::Composite;
  t.start = slides ? Eigen::Vector2d(-r.start_offset * std::cos(t.direction), -r.start_offset * std::sin(t.direction))
                   : Eigen::Vector2d::Zero();
  t.length = r.length;
  t.arc_radius = r.arc_radius;
  t.arc_sweep = r.arc_sweep;
  t.rotation = r.rotation * (u(rng) > 0.0 ? 1.0 : -1.0);
  t.mover = r.mover;
  t.max_missing_contact = r.max_missing_contact;
  return t;
}

/// Cache key of one episode: everything that determines its content.
inline std::string episode_hash(const SuiteConfig& c, int object_index, int episode) {
  const ObjectSpec& obj = c.objects.at(static_cast<std::size_t>(object_index));
  const Json key{{"format", "patchtrack-episode/1"},
                 {"shape", obj.shape_spec},
                 {"gel", gel_to_json(c.gel)},
                 {"trajectory", trajectory_to_json(episode_trajectory(c, object_index, episode))},
                 {"noise", noise_spec_to_json(c.noise)},
                 {"seed", episode_seed(c, object_index, episode)}};
  return hex64(fnv1a(key.dump()));
}

inline std::string episode_dir_name(const std::string& object, int episode) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%03d", episode);
  return object + buf;
}

/// Generates one suite episode. With a cache directory the episode is written
/// there (unless an episode with the same hash is already present) and read
/// back, so tracking always sees the stored representation.
inline Episode obtain_episode(const SuiteConfig& c, int object_index, int episode, const fs::path& cache_dir = {}) {
  const ObjectSpec& obj = c.objects.at(static_cast<std::size_t>(object_index));
  EpisodeLabel label{obj.name, object_index, episode, episode_hash(c, object_index, episode), obj.shape_spec};
  if (cache_dir.empty()) {
    return storage_round_trip(generate_episode(obj.shape, episode_trajectory(c, object_index, episode), c.gel, c.noise,
                                               episode_seed(c, object_index, episode)));
  }
  const fs::path dir = cache_dir / episode_dir_name(obj.name, episode);
  if (fs::exists(dir / "episode.json")) {
    try {
      if (read_json(dir / "episode.json").value("config_hash", std::string()) == label.config_hash) {
        return load_episode(dir);
      }
    } catch (const std::exception&) {
    }
    fs::remove_all(dir);
  }
  const Episode ep = generate_episode(obj.shape, episode_trajectory(c, object_index, episode), c.gel, c.noise,
                                     episode_seed(c, object_index, episode));
  save_episode(dir, ep, label);
  return load_episode(dir);
}

// ---------------------------------------------------------------- tracking outputs

struct TrackRun {
  EpisodeResult result;
  Json graph;  ///< final factor graph and values
};

/// Tracks an episode and keeps the final factor graph.
inline TrackRun run_tracker(TrackerMode mode, TrackerConfig config, const Episode& ep) {
  if (ep.steps.empty()) throw std::invalid_argument("run_tracker: empty episode");
  config.gel = ep.gel;
  if (mode == TrackerMode::GroundtruthPatch && !config.shape) config.shape = ep.shape;
  Tracker tr = Tracker::init(mode, config, ep.vision_prior, ep.steps.front().effector_measured);
  for (const auto& st : ep.steps) tr.step(st.normals, st.effector_measured);
  return {tr.finalize(ep.steps.back().object), graph_to_json(tr.graph(), tr.values())};
}

inline Json trajectory_json(const Episode& ep, const EpisodeResult& r) {
  Json steps = Json::array();
  for (std::size_t i = 0; i < r.object_trajectory.size(); ++i) {
    steps.push_back({{"index", ep.steps[i].index},
                     {"time", ep.steps[i].time},
                     {"object", pose_to_json(r.object_trajectory[i])},
                     {"effector", pose_to_json(r.effector_trajectory[i])},
                     {"object_online", pose_to_json(r.online_objects[i])},
                     {"object_true", pose_to_json(ep.steps[i].object)},
                     {"effector_true", pose_to_json(ep.steps[i].effector)}});
  }
  return {{"format", "patchtrack-trajectory/1"}, {"mode", to_string(r.mode)}, {"steps", steps}};
}

inline Json registration_json(const std::optional<RegistrationSummary>& r) {
  if (!r) return nullptr;
  return {{"converged", r->converged},
          {"iterations", r->iterations},
          {"rmse_mm", r->rmse},
          {"correspondences", r->correspondences},
          {"condition_number", std::isfinite(r->condition_number) ? Json(r->condition_number) : Json(nullptr)},
          {"transform", pose_to_json(r->transform)}};
}

inline Json diagnostics_json(const StepDiagnostics& d) {
  return {{"step", d.step},
          {"cloud_points", d.cloud_points},
          {"registration_skipped", d.registration_skipped},
          {"im2im", registration_json(d.im2im)},
          {"im2patch", registration_json(d.im2patch)},
          {"keyframe", d.keyframe},
          {"patch_points", d.patch_points},
          {"lm_iterations", d.lm_iterations},
          {"initial_cost", d.initial_cost},
          {"final_cost", d.final_cost},
          {"warnings", d.warnings}};
}

/// Identity of a run, copied into its metrics file.
struct RunLabel {
  std::string object;
  int object_index = 0;
  int episode = 0;
  std::uint64_t seed = 0;
  TrackerMode mode = TrackerMode::ConstVel;
};

inline Json metrics_json(const RunLabel& label, const EpisodeResult* r, const std::string& status,
                         const std::string& message) {
  Json j{{"format", "patchtrack-metrics/1"},
         {"object", label.object},
         {"object_index", label.object_index},
         {"episode", label.episode},
         {"seed", label.seed},
         {"mode", to_string(label.mode)},
         {"status", status},
         {"message", message}};
  if (r) {
    int warnings = 0;
    int keyframes = 0;
    Json diag = Json::array();
    for (const auto& d : r->diagnostics) {
      warnings += static_cast<int>(d.warnings.size());
      keyframes += d.keyframe ? 1 : 0;
      diag.push_back(diagnostics_json(d));
    }
    j["rotation_error_rad"] = r->rotation_error;
    j["translation_error_mm"] = r->translation_error;
    j["steps"] = r->diagnostics.size();
    j["warnings"] = warnings;
    j["keyframes"] = keyframes;
    j["patch_points"] = r->patch.size();
    j["diagnostics"] = diag;
  } else {
    j["rotation_error_rad"] = nullptr;
    j["translation_error_mm"] = nullptr;
  }
  return j;
}

/// Writes trajectory.json, metrics.json, patch.ply and graph.json.
inline void write_run(const fs::path& dir, const RunLabel& label, const Episode& ep, const TrackRun& run) {
  fs::create_directories(dir);
  write_json(dir / "trajectory.json", trajectory_json(ep, run.result));
  write_json(dir / "metrics.json", metrics_json(label, &run.result, "ok", ""));
  write_ply(dir / "patch.ply", run.result.patch);
  write_json(dir / "graph.json", run.graph);
}

// ---------------------------------------------------------------- report

struct EpisodeRecord {
  std::string object;
  int object_index = 0;
  int episode = 0;
  std::uint64_t seed = 0;
  TrackerMode mode = TrackerMode::ConstVel;
  std::string status = "ok";  ///< ok, generation_failed or tracking_failed
  std::string message;
  double rotation_error = std::numeric_limits<double>::quiet_NaN();
  double translation_error = std::numeric_limits<double>::quiet_NaN();
  int steps = 0;
  int warnings = 0;
  int keyframes = 0;

  bool ok() const { return status == "ok"; }
};

struct ModeSummary {
  std::string object;
  TrackerMode mode = TrackerMode::ConstVel;
  int count = 0;
  int failed = 0;
  std::optional<BoxplotStats> rotation;
  std::optional<BoxplotStats> translation;
};

struct SuiteReport {
  std::vector<EpisodeRecord> records;  ///< ordered by (object, episode, mode)
  std::vector<ModeSummary> summaries;  ///< ordered by (object, mode)

  /// Records of one (object, mode) cell, in episode order.
  std::vector<const EpisodeRecord*> cell(const std::string& object, TrackerMode mode) const {
    std::vector<const EpisodeRecord*> out;
    for (const auto& r : records) {
      if (r.object == object && r.mode == mode) out.push_back(&r);
    }
    return out;
  }

  const ModeSummary* summary(const std::string& object, TrackerMode mode) const {
    for (const auto& s : summaries) {
      if (s.object == object && s.mode == mode) return &s;
    }
    return nullptr;
  }

  bool all_failed() const {
    return std::none_of(records.begin(), records.end(), [](const EpisodeRecord& r) { return r.ok(); });
  }
};

/// Sorts records and recomputes the per-(object, mode) summaries.
inline SuiteReport make_report(std::vector<EpisodeRecord> records) {
  std::sort(records.begin(), records.end(), [](const EpisodeRecord& a, const EpisodeRecord& b) {
    return std::tie(a.object_index, a.object, a.episode, a.mode) < std::tie(b.object_index, b.object, b.episode, b.mode);
  });
  SuiteReport rep;
  for (const auto& r : records) {
    auto it = std::find_if(rep.summaries.begin(), rep.summaries.end(),
                           [&](const ModeSummary& s) { return s.object == r.object && s.mode == r.mode; });
    if (it == rep.summaries.end()) {
      rep.summaries.push_back({r.object, r.mode, 0, 0, {}, {}});
      it = rep.summaries.end() - 1;
    }
    ++it->count;
    if (!r.ok()) ++it->failed;
  }
  for (auto& s : rep.summaries) {
    std::vector<double> rot, trans;
    for (const auto& r : records) {
      if (r.object == s.object && r.mode == s.mode && r.ok()) {
        rot.push_back(r.rotation_error);
        trans.push_back(r.translation_error);
      }
    }
    if (!rot.empty()) {
      s.rotation = boxplot_stats(rot);
      s.translation = boxplot_stats(trans);
    }
  }
  std::vector<std::string> object_order;
  for (const auto& r : records) {
    if (std::find(object_order.begin(), object_order.end(), r.object) == object_order.end()) {
      object_order.push_back(r.object);
    }
  }
  std::sort(rep.summaries.begin(), rep.summaries.end(), [&](const ModeSummary& a, const ModeSummary& b) {
    const auto ia = std::find(object_order.begin(), object_order.end(), a.object) - object_order.begin();
    const auto ib = std::find(object_order.begin(), object_order.end(), b.object) - object_order.begin();
    return std::tie(ia, a.mode) < std::tie(ib, b.mode);
  });
  rep.records = std::move(records);
  return rep;
}

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json boxplot_json(const std::optional<BoxplotStats>& b) {
  if (!b) return nullptr;
  return {{"min", b->min}, {"q1", b->q1}, {"median", b->median}, {"q3", b->q3}, {"max", b->max}};
}

inline Json report_to_json(const SuiteReport& rep) {
  Json records = Json::array();
  for (const auto& r : rep.records) {
    records.push_back({{"object", r.object},
                       {"object_index", r.object_index},
                       {"episode", r.episode},
                       {"seed", r.seed},
                       {"mode", to_string(r.mode)},
                       {"status", r.status},
                       {"message", r.message},
                       {"rotation_error_rad", number_or_null(r.rotation_error)},
                       {"translation_error_mm", number_or_null(r.translation_error)},
                       {"steps", r.steps},
                       {"warnings", r.warnings},
                       {"keyframes", r.keyframes}});
  }
  Json summary = Json::array();
  for (const auto& s : rep.summaries) {
    summary.push_back({{"object", s.object},
                       {"mode", to_string(s.mode)},
                       {"count", s.count},
                       {"failed", s.failed},
                       {"rotation_error_rad", boxplot_json(s.rotation)},
                       {"translation_error_mm", boxplot_json(s.translation)}});
  }
  return {{"format", "patchtrack-suite-report/1"}, {"records", records}, {"summary", summary}};
}

/// One row per episode record followed by five rows (min, q1, median, q3,
/// max) per (object, mode). Failed episodes have empty error fields.
inline std::string report_to_csv(const SuiteReport& rep) {
  std::string out = "object,mode,record,episode,seed,status,rotation_error_rad,translation_error_mm\n";
  auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
  for (const auto& r : rep.records) {
    out += r.object + "," + to_string(r.mode) + ",episode," + std::to_string(r.episode) + "," + std::to_string(r.seed) +
           "," + r.status + "," + num(r.rotation_error) + "," + num(r.translation_error) + "\n";
  }
  for (const auto& s : rep.summaries) {
    if (!s.rotation) continue;
    const std::pair<const char*, double BoxplotStats::*> rows[] = {{"min", &BoxplotStats::min},
                                                                    {"q1", &BoxplotStats::q1},
                                                                    {"median", &BoxplotStats::median},
                                                                    {"q3", &BoxplotStats::q3},
                                                                    {"max", &BoxplotStats::max}};
    for (const auto& [name, field] : rows) {
      out += s.object + "," + to_string(s.mode) + "," + name + ",,," + "ok," + num((*s.rotation).*field) + "," +
             num((*s.translation).*field) + "\n";
    }
  }
  return out;
}

inline EpisodeRecord record_from_metrics(const Json& m) {
  EpisodeRecord r;
  r.object = m.at("object").get<std::string>();
  r.object_index = m.value("object_index", 0);
  r.episode = m.at("episode").get<int>();
  r.seed = m.value("seed", std::uint64_t{0});
  r.mode = tracker_mode_from_string(m.at("mode").get<std::string>());
  r.status = m.value("status", std::string("ok"));
  r.message = m.value("message", std::string());
  if (r.ok()) {
    r.rotation_error = m.at("rotation_error_rad").get<double>();
    r.translation_error = m.at("translation_error_mm").get<double>();
    r.steps = m.value("steps", 0);
    r.warnings = m.value("warnings", 0);
    r.keyframes = m.value("keyframes", 0);
  }
  return r;
}

/// Aggregates every metrics.json found below `runs_dir`.
inline SuiteReport evaluate_runs(const fs::path& runs_dir) {
  if (!fs::is_directory(runs_dir)) throw IoError("not a directory: " + runs_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(runs_dir)) {
    if (e.is_regular_file() && e.path().filename() == "metrics.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EpisodeRecord> records;
  for (const auto& f : files) {
    try {
      records.push_back(record_from_metrics(read_json(f)));
    } catch (const Json::exception& e) {
      throw IoError(f.string() + ": " + e.what());
    }
  }
  return make_report(std::move(records));
}

// ---------------------------------------------------------------- suite

inline std::string run_dir_name(const std::string& object, int episode, TrackerMode mode) {
  return episode_dir_name(object, episode) + "_" + to_string(mode);
}

/// Generates (or loads cached) episodes, runs every requested mode on each and
/// aggregates the errors. Failures are recorded per episode. Jobs run on
/// `workers` threads; the report does not depend on the thread count.
/// With an output directory, episodes go to <out>/episodes, per-run outputs
/// to <out>/runs, and report.json / report.csv to <out>.
inline SuiteReport run_suite(const SuiteConfig& config) {
  config.validate();
  const fs::path out = config.output_dir;
  const fs::path cache = out.empty() ? fs::path{} : out / "episodes";
  const fs::path runs = out.empty() ? fs::path{} : out / "runs";

  struct Job {
    int object_index;
    int episode;
  };
  std::vector<Job> jobs;
  for (int o = 0; o < static_cast<int>(config.objects.size()); ++o) {
    for (int e = 0; e < config.episodes_per_object; ++e) jobs.push_back({o, e});
  }
  std::vector<std::vector<EpisodeRecord>> results(jobs.size());

  auto run_job = [&](std::size_t ji) {
    const Job job = jobs[ji];
    const ObjectSpec& obj = config.objects[static_cast<std::size_t>(job.object_index)];
    const std::uint64_t seed = episode_seed(config, job.object_index, job.episode);
    std::vector<EpisodeRecord>& recs = results[ji];
    std::optional<Episode> ep;
    std::string gen_error;
    try {
      ep = obtain_episode(config, job.object_index, job.episode, cache);
    } catch (const std::exception& e) {
      gen_error = e.what();
    }
    for (TrackerMode mode : config.modes) {
      EpisodeRecord r;
      r.object = obj.name;
      r.object_index = job.object_index;
      r.episode = job.episode;
      r.seed = seed;
      r.mode = mode;
      const RunLabel label{obj.name, job.object_index, job.episode, seed, mode};
      const fs::path dir = runs.empty() ? fs::path{} : runs / run_dir_name(obj.name, job.episode, mode);
      if (!ep) {
        r.status = "generation_failed";
        r.message = gen_error;
      } else {
        try {
          TrackerConfig tc = config.tracker;
          tc.shape = obj.shape;
          const TrackRun run = run_tracker(mode, tc, *ep);
          r.rotation_error = run.result.rotation_error;
          r.translation_error = run.result.translation_error;
          r.steps = static_cast<int>(run.result.diagnostics.size());
          for (const auto& d : run.result.diagnostics) {
            r.warnings += static_cast<int>(d.warnings.size());
            r.keyframes += d.keyframe ? 1 : 0;
          }
          if (!dir.empty()) write_run(dir, label, *ep, run);
        } catch (const std::exception& e) {
          r.status = "tracking_failed";
          r.message = e.what();
        }
      }
      if (!r.ok() && !dir.empty()) {
        fs::create_directories(dir);
        write_json(dir / "metrics.json", metrics_json(label, nullptr, r.status, r.message));
      }
      recs.push_back(std::move(r));
    }
  };

  unsigned workers = config.workers == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                         : static_cast<unsigned>(config.workers);
  workers = std::min<unsigned>(workers, static_cast<unsigned>(jobs.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  std::vector<EpisodeRecord> records;
  for (auto& r : results) {
    for (auto& rec : r) records.push_back(std::move(rec));
  }
  SuiteReport rep = make_report(std::move(records));
  if (!out.empty()) {
    write_json(out / "report.json", report_to_json(rep));
    write_text(out / "report.csv", report_to_csv(rep));
  }
  return rep;
}

/// Writes episodes only, as `simulate` does. Returns the number generated;
/// failures are listed in `errors`.
inline int simulate_suite(const SuiteConfig& config, const fs::path& out, std::vector<std::string>* errors = nullptr) {
  config.validate();
  int ok = 0;
  for (int o = 0; o < static_cast<int>(config.objects.size()); ++o) {
    for (int e = 0; e < config.episodes_per_object; ++e) {
      try {
        obtain_episode(config, o, e, out);
        ++ok;
      } catch (const std::exception& ex) {
        if (errors) errors->push_back(episode_dir_name(config.objects[static_cast<std::size_t>(o)].name, e) + ": " +
                                      ex.what());
      }
    }
  }
  return ok;
}

// ---------------------------------------------------------------- comparisons

enum class OrderingOutcome { Better, Tie, Worse };

struct OrderingCheck {
  double median_a = 0.0;
  double median_b = 0.0;
  double p_value = 1.0;
  OrderingOutcome outcome = OrderingOutcome::Worse;
};

/// Whether errors `a` are smaller than `b`. "Better" when median_a <= (1 -
/// margin) median_b, or when a paired two-sided signed-rank test rejects at
/// `alpha` with median_a below median_b; "tie" when the test does not reject;
/// "worse" otherwise. Samples are paired by position.
inline OrderingCheck compare_errors(const std::vector<double>& a, const std::vector<double>& b, double margin = 0.1,
                                    double alpha = 0.05) {
  OrderingCheck c;
  c.median_a = median(a);
  c.median_b = median(b);
  c.p_value = wilcoxon_signed_rank(a, b).p_two_sided;
  if (c.median_a <= (1.0 - margin) * c.median_b) {
    c.outcome = OrderingOutcome::Better;
  } else if (c.p_value >= alpha) {
    c.outcome = OrderingOutcome::Tie;
  } else {
    c.outcome = c.median_a < c.median_b ? OrderingOutcome::Better : OrderingOutcome::Worse;
  }
  return c;
}

}  // namespace patchtrack
