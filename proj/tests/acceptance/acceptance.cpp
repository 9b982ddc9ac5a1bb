// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance --cli <patchtrack binary> --config <default suite config> --work <scratch dir>

#include "patchtrack/harness.hpp"
#include "patchtrack/reconstruct.hpp"
#include "patchtrack/registration.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include <sys/wait.h>

using namespace patchtrack;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double elapsed_ms(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- AC1

Verdict reconstruction_fidelity() {
  const GelConfig gel;
  const double r = 6.35, d = 1.0;
  const DepthImage rendered =
      render_depth(make_named_shape("sphere"), Pose::from_translation(Vec3(0, 0, r - d)), Pose{}, gel);
  const NormalImage normals = depth_to_normals(rendered, gel);

  double worst_ms = 0.0;
  DepthImage rec;
  for (int i = 0; i < 20; ++i) {
    const auto t0 = Clock::now();
    rec = poisson_solve(normals_to_gradients(normals), gel.pitch_x(), gel.pitch_y(), 0.0);
    worst_ms = std::max(worst_ms, elapsed_ms(t0));
  }
  // Closed-form cap depth over its own contact disc.
  double sq = 0.0;
  int n = 0;
  for (int y = 0; y < gel.height; ++y) {
    for (int x = 0; x < gel.width; ++x) {
      const double rho2 = std::pow(gel.pixel_x(x), 2) + std::pow(gel.pixel_y(y), 2);
      if (rho2 >= r * r) continue;
      const double cap = d - (r - std::sqrt(r * r - rho2));
      if (cap <= 0.0) continue;
      sq += std::pow(rec.depth(x, y) - cap, 2);
      ++n;
    }
  }
  const double rmse = std::sqrt(sq / n);
  return {rmse < 0.02 * d && worst_ms < 50.0,
          fmt("RMSE %.4f mm = %.2f%% of indentation (limit 2%%), slowest of 20 solves %.2f ms (limit 50)", rmse,
              100.0 * rmse / d, worst_ms)};
}

// ---------------------------------------------------------------- AC2

Verdict dst_round_trip() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> size(2, 128);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int rows = i == 0 ? 128 : size(rng);
    const int cols = i == 0 ? 128 : size(rng);
    MatX X(rows, cols);
    for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = u(rng);
    worst = std::max(worst, (idst2(dst2(X)) - X).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-10, fmt("worst |idst2(dst2(X)) - X| over 100 images up to 128x128: %.2e (limit 1e-10)", worst)};
}

// ---------------------------------------------------------------- AC3

PointCloud contact_cloud(const char* name, const Mat3& orientation, double indentation) {
  const GelConfig gel;
  TrajectorySpec t;
  t.indentation = indentation;
  t.length = 0.0;
  t.orientation = orientation;
  const ShapeSDF shape = make_named_shape(name);
  const DepthImage depth = render_depth(shape, trajectory_pose(shape, t, 0.0), Pose{}, gel);
  return depth_to_pointcloud(depth, depth_to_normals(depth, gel), gel);
}

Verdict icp_recovery() {
  struct Case {
    const char* name;
    PointCloud cloud;
  };
  const Case cases[] = {{"sphere-cap", contact_cloud("sphere", Mat3::Identity(), 1.0)},
                        {"pyramid-face", contact_cloud("pyramid", contact_orientation(ContactPose::Apex), 1.4)}};
  // The sphere cap's rotations about its centre are held only by the rim and
  // the pixel lattice, so it gets the iteration budget it needs to settle.
  ICPParams params;
  params.max_iterations = 100;

  bool pass = true;
  std::string detail;
  for (const auto& c : cases) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);
    int failures = 0, not_converged = 0;
    double worst_rot = 0.0, worst_trans = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
      const Vec3 dir = Vec3(u(rng), u(rng), u(rng)).normalized();
      const Pose G = exp(Twist{axis * (5.0 * std::numbers::pi / 180.0) * u01(rng), dir * u01(rng)});
      const ICPResult r = icp_register(transformed(c.cloud, G, Frame::Sensor), c.cloud, Pose{}, params);
      const Pose truth = inverse(G);
      const double rot = log(inverse(r.transform) * truth).rot.norm();
      const double trans = (r.transform.translation() - truth.translation()).norm();
      worst_rot = std::max(worst_rot, rot);
      worst_trans = std::max(worst_trans, trans);
      if (!r.converged) ++not_converged;
      if (!r.converged || rot >= 1e-3 || trans >= 1e-2) ++failures;
    }
    pass = pass && failures == 0;
    detail += fmt("%s %d/100 recovered (worst %.1e rad, %.1e mm, %d not converged); ", c.name, 100 - failures,
                  worst_rot, worst_trans, not_converged);
  }

  PointCloud plane;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) plane.push_back(Vec3(0.5 * i, 0.5 * j, 0.0), Vec3::UnitZ());
  }
  bool degenerate = false;
  try {
    icp_register(plane, transformed(plane, Pose::from_translation(Vec3(0.2, 0.1, 0.0)), Frame::Sensor), Pose{});
  } catch (const DegenerateGeometryError&) {
    degenerate = true;
  }
  detail += degenerate ? "in-plane slide raises the degeneracy error" : "in-plane slide did NOT raise";
  return {pass && degenerate, detail};
}

// ---------------------------------------------------------------- AC4

Verdict optimizer_oracles() {
  // Two translation priors with scalar sigmas: precision-weighted mean.
  const Vec3 mu1(1.0, 2.0, 3.0), mu2(2.0, 1.0, 1.0);
  const double s1 = 1.0, s2 = 0.5;
  FactorGraph fusion;
  fusion.add(VisPriorFactor{object_key(0), Pose::from_translation(mu1), NoiseModel::isotropic(0.1, s1)});
  fusion.add(VisPriorFactor{object_key(0), Pose::from_translation(mu2), NoiseModel::isotropic(0.1, s2)});
  const Pose fused = optimize(fusion, Values{{object_key(0), Pose{}}}).values.at(object_key(0));
  const double w1 = 1.0 / (s1 * s1), w2 = 1.0 / (s2 * s2);
  const Vec3 expected = (w1 * mu1 + w2 * mu2) / (w1 + w2);
  const double fusion_err = std::max((fused.translation() - expected).cwiseAbs().maxCoeff(), log(fused).rot.norm());

  // Ten-step chain with exact measurements of every factor type.
  const Pose step = exp(Twist{Vec3(0.01, -0.02, 0.03), Vec3(0.4, 0.1, -0.05)});
  const Pose offset(Pose::from_axis_angle(Vec3(1, 1, 0).normalized(), 0.2).rotation(), Vec3(0.5, -0.3, 6.0));
  std::vector<Pose> o, e;
  Pose cur(Pose::from_axis_angle(Vec3::UnitZ(), 0.4).rotation(), Vec3(10, -5, 2));
  for (int t = 0; t < 10; ++t) {
    o.push_back(cur);
    e.push_back(cur * offset);
    cur = cur * step;
  }
  FactorGraph chain;
  const NoiseModel n = NoiseModel::isotropic(0.02, 0.5);
  chain.add(VisPriorFactor{object_key(0), o[0], NoiseModel::isotropic(0.05, 2.0)});
  Values truth, init;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 10; ++t) {
    chain.add(EffPriorFactor{effector_key(t), e[t], NoiseModel::isotropic(0.01, 1.0)});
    chain.add(Im2PatchFactor{object_key(t), effector_key(t), object_from_sensor(o[t], e[t]), n});
    if (t >= 1) {
      chain.add(Im2ImFactor{object_key(t - 1), effector_key(t - 1), object_key(t), effector_key(t),
                            object_from_sensor(o[t - 1], e[t - 1]).inverse() * object_from_sensor(o[t], e[t]), n});
    }
    if (t >= 2) chain.add(ConstVelFactor{object_key(t - 2), object_key(t - 1), object_key(t), n});
    truth[object_key(t)] = o[t];
    truth[effector_key(t)] = e[t];
  }
  for (const auto& [k, p] : truth) {
    init[k] = oplus(p, Twist{Vec3(u(rng), u(rng), u(rng)) * 0.03, Vec3(u(rng), u(rng), u(rng)) * 0.5});
  }
  const Values solved = optimize(chain, init).values;
  double chain_err = 0.0;
  for (const auto& [k, p] : truth) {
    chain_err = std::max({chain_err, (solved.at(k).rotation() - p.rotation()).cwiseAbs().maxCoeff(),
                          (solved.at(k).translation() - p.translation()).cwiseAbs().maxCoeff()});
  }
  return {fusion_err < 1e-6 && chain_err < 1e-6,
          fmt("two-prior fusion off closed form by %.1e, exact 10-step chain off ground truth by %.1e (limit 1e-6)",
              fusion_err, chain_err)};
}

// ---------------------------------------------------------------- AC5, AC6

std::vector<double> translation_errors(const SuiteReport& rep, const std::string& object, TrackerMode mode) {
  std::vector<double> v;
  for (const auto* r : rep.cell(object, mode)) v.push_back(r->ok() ? r->translation_error : std::numeric_limits<double>::infinity());
  return v;
}

const ModeSummary* summary_of(const SuiteReport& rep, const std::string& object, TrackerMode mode) {
  for (const auto& s : rep.summaries) {
    if (s.object == object && s.mode == mode) return &s;
  }
  return nullptr;
}

Verdict mode_ordering(const SuiteReport& rep, double seconds) {
  const TrackerMode chain[] = {TrackerMode::GroundtruthPatch, TrackerMode::PatchGraph, TrackerMode::ImageToImage,
                               TrackerMode::ConstVel};
  bool pass = seconds < 600.0;
  std::string detail = fmt("suite %.0f s (limit 600); ", seconds);
  for (const char* object : {"sphere", "cube", "pyramid"}) {
    detail += std::string(object) + ":";
    for (int i = 0; i < 3; ++i) {
      const auto a = translation_errors(rep, object, chain[i]);
      const auto b = translation_errors(rep, object, chain[i + 1]);
      if (a.size() != 20 || b.size() != 20) {
        pass = false;
        detail += " missing episodes;";
        continue;
      }
      const OrderingCheck c = compare_errors(a, b, 0.1, 0.05);
      const char* outcome = c.outcome == OrderingOutcome::Better ? "<" : c.outcome == OrderingOutcome::Tie ? "~" : ">";
      detail += fmt(" %s %.2f %s %s %.2f (p=%.3f)%s", to_string(chain[i]).c_str(), c.median_a, outcome,
                    to_string(chain[i + 1]).c_str(), c.median_b, c.p_value,
                    c.outcome == OrderingOutcome::Tie ? " tie" : "");
      pass = pass && c.outcome != OrderingOutcome::Worse;
    }
    detail += "; ";
  }
  return {pass, detail};
}

Verdict quantitative_target(const SuiteReport& rep) {
  bool pass = true;
  std::string detail;
  for (const char* object : {"sphere", "cube", "pyramid"}) {
    const ModeSummary* s = summary_of(rep, object, TrackerMode::PatchGraph);
    if (!s || !s->translation || s->failed > 0) {
      pass = false;
      detail += std::string(object) + " has failed episodes; ";
      continue;
    }
    const bool rot_checked = std::string(object) != "sphere";
    const bool ok = s->translation->median <= 4.0 && (!rot_checked || s->rotation->median <= 0.2);
    pass = pass && ok;
    detail += fmt("%s median %.3f mm, %.3f rad%s; ", object, s->translation->median, s->rotation->median,
                  rot_checked ? "" : " (rotation exempt)");
  }
  return {pass, detail + "limits 4 mm / 0.2 rad"};
}

// ---------------------------------------------------------------- AC7

Verdict patch_consistency(const SuiteConfig& config) {
  bool pass = true;
  std::string detail;
  const double voxel = config.tracker.voxel_size;
  for (int o = 0; o < static_cast<int>(config.objects.size()); ++o) {
    const ObjectSpec& obj = config.objects[static_cast<std::size_t>(o)];
    double worst = 0.0;
    for (int ep_index = 0; ep_index < 5; ++ep_index) {
      const Episode ep = obtain_episode(config, o, ep_index);
      PatchMap map;
      map.voxel_size = voxel;
      for (const auto& st : ep.steps) {
        if (!should_add_keyframe(config.tracker.keyframes, st.index, 0.0)) continue;
        map = fuse_keyframe(map, reconstruct_cloud(st.normals, ep.gel, st.index), inverse(st.object) * st.effector);
      }
      std::vector<double> d;
      for (const auto& p : map.cloud.points) d.push_back(std::abs(obj.shape(p)));
      const double med = d.empty() ? std::numeric_limits<double>::infinity() : median(d);
      worst = std::max(worst, med);
    }
    pass = pass && worst < voxel;
    detail += fmt("%s worst median |sdf| %.3f mm; ", obj.name.c_str(), worst);
  }
  return {pass, detail + fmt("over 5 default-noise episodes each, limit %.1f mm", voxel)};
}

// ---------------------------------------------------------------- AC8

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Every regular file below a and b, compared byte for byte.
bool identical_trees(const fs::path& a, const fs::path& b, std::size_t& files) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  }
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb || fa.empty()) return false;
  files += fa.size();
  return std::all_of(fa.begin(), fa.end(), [&](const fs::path& f) { return slurp(a / f) == slurp(b / f); });
}

int run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

Verdict determinism(const std::string& cli, const fs::path& work) {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "suite.json";
  write_text(cfg, R"({"master_seed": 11, "episodes_per_object": 1, "objects": ["sphere", "cube", "pyramid"],
                      "trajectory": {"steps": 10, "length_mm": 3.0}})");

  bool pass = true;
  std::size_t files = 0;
  std::vector<std::string> bad;
  auto both = [&](const std::string& name, auto&& make_args) {
    const fs::path a = root / (name + "_a"), b = root / (name + "_b");
    const int ra = run_cli(cli, make_args(a)), rb = run_cli(cli, make_args(b));
    fs::create_directories(a);
    fs::create_directories(b);
    if (ra != 0 || rb != 0 || !identical_trees(a, b, files)) {
      pass = false;
      bad.push_back(name);
    }
  };

  both("simulate", [&](const fs::path& out) { return "simulate --config " + q(cfg) + " --out " + q(out); });
  const fs::path episodes = root / "simulate_a";
  for (const char* mode : {"constvel", "im2im", "patchgraph", "gtpatch"}) {
    both(std::string("track_") + mode, [&](const fs::path& out) {
      return "track --episode " + q(episodes / "cube_000") + " --mode " + mode + " --config " + q(cfg) + " --out " +
             q(out / "run");
    });
  }
  both("eval", [&](const fs::path& out) {
    fs::create_directories(out);
    return "eval --runs " + q(root) + "/track_patchgraph_a --out " + q(out / "report.json") + " --csv " +
           q(out / "report.csv");
  });
  both("reconstruct", [&](const fs::path& out) {
    fs::create_directories(out);
    return "reconstruct --normals " + q(episodes / "sphere_000" / "normals_0004.pfm") + " --mask " +
           q(episodes / "sphere_000" / "mask_0004.pgm") + " --config " + q(cfg) + " --depth-out " +
           q(out / "depth.pfm") + " --ply-out " + q(out / "cloud.ply");
  });
  both("suite", [&](const fs::path& out) { return "suite --config " + q(cfg) + " --out " + q(out); });

  std::string detail = fmt("simulate, track x4, eval, reconstruct, suite run twice: %zu file pairs compared", files);
  for (const auto& b : bad) detail += ", " + b + " differs or failed";
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string cli, config, work;
  app.add_option("--cli", cli, "patchtrack command line binary")->required();
  app.add_option("--config", config, "Default suite config")->required();
  app.add_option("--work", work, "Scratch directory")->required();
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  bool all = true;
  auto report = [&](const char* id, const char* name, const Verdict& v) {
    std::printf("%s %s: %s | %s\n", id, v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
    all = all && v.pass;
  };

  report("AC1", "reconstruction fidelity", reconstruction_fidelity());
  report("AC2", "DST round trip", dst_round_trip());
  report("AC3", "ICP recovery", icp_recovery());
  report("AC4", "optimizer oracles", optimizer_oracles());

  SuiteConfig suite = load_suite_config(config);
  suite.output_dir.clear();
  suite.workers = 1;
  const auto t0 = Clock::now();
  const SuiteReport rep = run_suite(suite);
  const double seconds = elapsed_ms(t0) / 1000.0;
  report("AC5", "qualitative mode ordering", mode_ordering(rep, seconds));
  report("AC6", "quantitative PatchGraph target", quantitative_target(rep));
  report("AC7", "patch consistency", patch_consistency(suite));
  report("AC8", "CLI determinism", determinism(cli, work));

  std::printf("%s\n", all ? "ALL ACCEPTANCE CRITERIA PASS" : "SOME ACCEPTANCE CRITERIA FAIL");
  return all ? 0 : 1;
}
