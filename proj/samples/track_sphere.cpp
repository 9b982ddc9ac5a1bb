// Renders a short sphere slide, tracks it with the patch graph and prints the
// per-step estimate against ground truth.

#include "patchtrack/tracker.hpp"

#include <cstdio>

using namespace patchtrack;

int main() {
  const ShapeSDF sphere = make_named_shape("sphere");
  GelConfig gel;

  TrajectorySpec traj;
  traj.kind = TrajectoryKind::Linear;
  traj.steps = 15;
  traj.indentation = 1.2;
  traj.start = {-2.5, 0.0};
  traj.length = 5.0;

  const Episode ep = generate_episode(sphere, traj, gel, NoiseSpec{}, 7);

  TrackerConfig config;
  config.gel = gel;
  Tracker tracker = Tracker::init(TrackerMode::PatchGraph, config, ep.vision_prior, ep.steps.front().effector_measured);
  for (const auto& st : ep.steps) {
    const PoseEstimate est = tracker.step(st.normals, st.effector_measured);
    const auto [rot, trans] = pose_error(est.object, st.object);
    std::printf("step %2d  points %4zu  patch %5zu  rot %.3f rad  trans %.3f mm\n", est.diagnostics.step,
                est.diagnostics.cloud_points, est.diagnostics.patch_points, rot, trans);
  }
  const EpisodeResult res = tracker.finalize(ep.steps.back().object);
  std::printf("final: rot %.4f rad, trans %.4f mm\n", res.rotation_error, res.translation_error);
}
