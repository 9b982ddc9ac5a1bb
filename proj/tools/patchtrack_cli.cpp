// patchtrack command line: simulate, track, eval, reconstruct, suite.
//
// Exit codes: 0 success, 1 total failure, 2 bad configuration or arguments.

#include "patchtrack/harness.hpp"
#include "patchtrack/io.hpp"
#include "patchtrack/reconstruct.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace pt = patchtrack;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kBadConfig = 2;

pt::SuiteConfig load_suite(const std::string& path, std::optional<std::uint64_t> seed) {
  pt::SuiteConfig c = pt::load_suite_config(path);
  if (seed) c.master_seed = *seed;
  return c;
}

int cmd_simulate(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed) {
  const pt::SuiteConfig c = load_suite(config, seed);
  std::vector<std::string> errors;
  const int ok = pt::simulate_suite(c, out, &errors);
  for (const auto& e : errors) std::cerr << "warning: episode " << e << "\n";
  std::cout << "generated " << ok << " of " << c.objects.size() * c.episodes_per_object << " episodes in " << out
            << "\n";
  return ok > 0 ? kOk : kFailure;
}

int cmd_track(const std::string& episode_dir, const std::string& mode_name, const std::string& config,
              const std::string& out) {
  const pt::TrackerMode mode = pt::tracker_mode_from_string(mode_name);
  const pt::TrackerConfig tc = config.empty() ? pt::TrackerConfig{} : pt::load_tracker_config(config);
  pt::EpisodeLabel label;
  const pt::Episode ep = pt::load_episode(episode_dir, &label);
  const pt::RunLabel run_label{label.object, label.object_index, label.episode, ep.seed, mode};
  try {
    const pt::TrackRun run = pt::run_tracker(mode, tc, ep);
    pt::write_run(out, run_label, ep, run);
    std::printf("%s %s: rotation error %.4f rad, translation error %.4f mm\n", label.object.c_str(),
                pt::to_string(mode).c_str(), run.result.rotation_error, run.result.translation_error);
    return kOk;
  } catch (const pt::ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    pt::write_json(std::filesystem::path(out) / "metrics.json",
                   pt::metrics_json(run_label, nullptr, "tracking_failed", e.what()));
    std::cerr << "error: tracking failed: " << e.what() << "\n";
    return kFailure;
  }
}

int write_report(const pt::SuiteReport& rep, const std::string& json_out, const std::string& csv_out) {
  if (!json_out.empty()) pt::write_json(json_out, pt::report_to_json(rep));
  if (!csv_out.empty()) pt::write_text(csv_out, pt::report_to_csv(rep));
  for (const auto& s : rep.summaries) {
    if (s.translation) {
      std::printf("%-10s %-11s n=%d failed=%d median rot %.4f rad, trans %.4f mm\n", s.object.c_str(),
                  pt::to_string(s.mode).c_str(), s.count, s.failed, s.rotation->median, s.translation->median);
    } else {
      std::printf("%-10s %-11s n=%d failed=%d\n", s.object.c_str(), pt::to_string(s.mode).c_str(), s.count,
                  s.failed);
    }
  }
  return rep.records.empty() || rep.all_failed() ? kFailure : kOk;
}

int cmd_eval(const std::string& runs, const std::string& json_out, const std::string& csv_out) {
  const pt::SuiteReport rep = pt::evaluate_runs(runs);
  if (rep.records.empty()) std::cerr << "error: no metrics.json found below " << runs << "\n";
  return write_report(rep, json_out, csv_out);
}

int cmd_suite(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
              std::optional<int> workers) {
  pt::SuiteConfig c = load_suite(config, seed);
  if (!out.empty()) c.output_dir = out;
  if (workers) c.workers = *workers;
  if (c.output_dir.empty()) throw pt::ConfigError("suite: no output directory (--out or output_dir)");
  const pt::SuiteReport rep = pt::run_suite(c);
  return write_report(rep, "", "");
}

pt::GelConfig gel_for_image(const std::string& config, int width, int height) {
  pt::GelConfig gel;
  if (!config.empty()) {
    const pt::Json j = pt::read_json(config);
    bool suite = false;
    for (const char* k : {"gel", "master_seed", "episodes_per_object", "objects", "modes", "trajectory", "noise",
                          "tracker", "workers", "output_dir"}) {
      suite = suite || j.contains(k);
    }
    gel = suite ? pt::suite_config_from_json(j).gel : pt::gel_from_json(j);
  }
  if (gel.width != width || gel.height != height) {
    // Keep the pixel pitch and fit the gel to the image.
    const double px = gel.pitch_x();
    const double py = gel.pitch_y();
    gel.width = width;
    gel.height = height;
    gel.extent_x = px * width;
    gel.extent_y = py * height;
    if (gel.camera == pt::CameraModel::ClipProjection) {
      gel.clip = pt::GelConfig::make_clip_camera(gel, gel.clip.near_plane, gel.clip.far_plane, gel.clip.gel_distance());
    }
  }
  gel.validate();
  return gel;
}

int cmd_reconstruct(const std::string& normals_path, const std::string& mask_path, const std::string& config,
                    const std::string& depth_out, const std::string& ply_out) {
  const pt::NormalImage normals = pt::read_normal_image(normals_path, mask_path);
  const pt::GelConfig gel = gel_for_image(config, normals.width(), normals.height());
  const pt::DepthImage depth = pt::poisson_solve(pt::normals_to_gradients(normals), gel.pitch_x(), gel.pitch_y(), 0.0);
  const pt::PointCloud cloud = pt::depth_to_pointcloud(depth, normals, gel);
  if (!depth_out.empty()) pt::write_depth_pfm(depth_out, depth);
  if (!ply_out.empty()) pt::write_ply(ply_out, cloud);
  std::printf("%zu contact pixels, max depth %.4f mm\n", cloud.size(),
              depth.depth.data().empty() ? 0.0 : *std::max_element(depth.depth.data().begin(), depth.depth.data().end()));
  return cloud.empty() ? kFailure : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tactile object pose tracking with local patch maps"};
  app.require_subcommand(1);

  std::string config, out, episode, mode, runs, report_json, report_csv, normals, mask, depth_out, ply_out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;

  auto* sim = app.add_subcommand("simulate", "Generate the episodes of a suite config");
  sim->add_option("--config", config, "Suite config (JSON)")->required();
  sim->add_option("--out", out, "Output directory for episodes")->required();
  sim->add_option("--seed", seed, "Override the master seed");

  auto* track = app.add_subcommand("track", "Track one episode");
  track->add_option("--episode", episode, "Episode directory")->required();
  track->add_option("--mode", mode, "Tracker mode")
      ->required()
      ->check(CLI::IsMember({"constvel", "im2im", "patchgraph", "gtpatch"}));
  track->add_option("--config", config, "Tracker or suite config (JSON)");
  track->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Aggregate tracking runs into a report");
  eval->add_option("--runs", runs, "Directory searched for metrics.json files")->required();
  eval->add_option("--out", report_json, "Report JSON")->required();
  eval->add_option("--csv", report_csv, "Report CSV");

  auto* rec = app.add_subcommand("reconstruct", "Integrate a normal image into depth and a point cloud");
  rec->add_option("--normals", normals, "3-channel PFM normal image")->required();
  rec->add_option("--mask", mask, "P5 PGM contact mask")->required();
  rec->add_option("--config", config, "Gel config, or a suite config with a gel section (JSON)");
  rec->add_option("--depth-out", depth_out, "Depth PFM output");
  rec->add_option("--ply-out", ply_out, "ASCII PLY output (x y z nx ny nz)");

  auto* suite = app.add_subcommand("suite", "Simulate, track and evaluate a whole suite");
  suite->add_option("--config", config, "Suite config (JSON)")->required();
  suite->add_option("--out", out, "Output directory");
  suite->add_option("--seed", seed, "Override the master seed");
  suite->add_option("--workers", workers, "Worker threads (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadConfig;
  }

  try {
    if (*sim) return cmd_simulate(config, out, seed);
    if (*track) return cmd_track(episode, mode, config, out);
    if (*eval) return cmd_eval(runs, report_json, report_csv);
    if (*rec) return cmd_reconstruct(normals, mask, config, depth_out, ply_out);
    if (*suite) return cmd_suite(config, out, seed, workers);
  } catch (const pt::ConfigError& e) {
    std::cerr << "error: bad config: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
