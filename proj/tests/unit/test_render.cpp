#include "helpers.hpp"
#include "patchtrack/episode.hpp"
#include "patchtrack/io.hpp"
#include "patchtrack/reconstruct.hpp"
#include "patchtrack/render.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

using namespace patchtrack;
using namespace testing;

namespace {

constexpr double kRadius = 6.35;

Pose sphere_at(double indentation, double x = 0.0, double y = 0.0) {
  return Pose::from_translation(Vec3(x, y, kRadius - indentation));
}

double cap_depth(double rho, double d) {
  const double r2 = kRadius * kRadius;
  if (rho * rho >= 2 * kRadius * d - d * d) return 0.0;
  return d - (kRadius - std::sqrt(r2 - rho * rho));
}

}  // namespace

TEST_CASE("shape SDF sign and unit gradient", "[render]") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (const char* name : {"sphere", "cube", "pyramid", "toy_brick", "toy_human"}) {
    const ShapeSDF s = make_named_shape(name);
    CHECK(s(Vec3(0, 0, 1)) < 0.0);  // every stand-in contains this point
    CHECK(s(Vec3(100, 0, 0)) > 0.0);
    int checked = 0;
    for (int i = 0; i < 4000 && checked < 200; ++i) {
      const Vec3 p(u(rng), u(rng), u(rng));
      // Finite differences only where the SDF is smooth: skip points whose
      // one-sided differences disagree (near edges, medial axes, seams).
      const double h = 1e-4;
      bool smooth = true;
      Vec3 g;
      for (int k = 0; k < 3; ++k) {
        Vec3 e = Vec3::Zero();
        e[k] = h;
        const double fwd = (s(p + e) - s(p)) / h;
        const double bwd = (s(p) - s(p - e)) / h;
        smooth = smooth && std::abs(fwd - bwd) < 1e-4;
        g[k] = 0.5 * (fwd + bwd);
      }
      if (!smooth || std::abs(s(p)) > 10.0) continue;
      if (s(p) < 0.0 && std::string(name) != "sphere") continue;  // box interiors are not exact distances
      ++checked;
      CHECK(std::abs(g.norm() - 1.0) < 1e-3);
    }
    CHECK(checked > 20);
  }
}

TEST_CASE("sphere far above the gel renders nothing", "[render]") {
  const GelConfig gel;
  const DepthImage d = render_depth(make_named_shape("sphere"), sphere_at(-5.0), Pose{}, gel);
  CHECK(mask_count(d.mask) == 0);
  for (double v : d.depth.data()) CHECK(v == 0.0);
}

TEST_CASE("sphere indentation matches the spherical cap", "[render]") {
  const GelConfig gel;
  const double d = 1.0;
  const DepthImage img = render_depth(make_named_shape("sphere"), sphere_at(d), Pose{}, gel);
  double max_err = 0.0;
  for (int y = 0; y < gel.height; ++y) {
    for (int x = 0; x < gel.width; ++x) {
      const double rho = std::hypot(gel.pixel_x(x), gel.pixel_y(y));
      const double expected = cap_depth(rho, d);
      max_err = std::max(max_err, std::abs(img.depth(x, y) - expected));
      CHECK(static_cast<bool>(img.mask(x, y)) == (expected > 0.0));
    }
  }
  CHECK(max_err < 1e-3);
}

TEST_CASE("box face parallel to the gel gives a flat rectangle", "[render]") {
  const GelConfig gel;
  const ShapeSDF box = ShapeSDF::box(Vec3(3.0, 2.0, 3.0));
  const double d = 0.7;
  const DepthImage img = render_depth(box, Pose::from_translation(Vec3(0, 0, 3.0 - d)), Pose{}, gel);
  for (int y = 0; y < gel.height; ++y) {
    for (int x = 0; x < gel.width; ++x) {
      const bool inside = std::abs(gel.pixel_x(x)) < 3.0 && std::abs(gel.pixel_y(y)) < 2.0;
      REQUIRE(static_cast<bool>(img.mask(x, y)) == inside);
      if (inside) CHECK(std::abs(img.depth(x, y) - d) < 1e-4);
    }
  }
}

TEST_CASE("depth is clamped at the maximum indentation", "[render]") {
  GelConfig gel;
  const DepthImage img = render_depth(make_named_shape("sphere"), sphere_at(3.0), Pose{}, gel);
  double deepest = 0.0;
  for (double v : img.depth.data()) deepest = std::max(deepest, v);
  CHECK(deepest == gel.max_indentation);
}

TEST_CASE("rendering depends only on the relative pose", "[render]") {
  std::mt19937_64 rng(2);
  const GelConfig gel;
  const ShapeSDF cube = make_named_shape("cube");
  const Pose rel(Pose::from_axis_angle(Vec3(1, 1, 0), 0.3).rotation(), Vec3(0.5, -0.3, 6.0));
  const Pose world = random_pose(rng);
  const DepthImage a = render_depth(cube, rel, Pose{}, gel);
  const DepthImage b = render_depth(cube, world * rel, world, gel);
  CHECK(a.mask == b.mask);
  for (std::size_t i = 0; i < a.depth.size(); ++i) CHECK(std::abs(a.depth.data()[i] - b.depth.data()[i]) < 1e-6);
}

TEST_CASE("zero depth gives upright normals", "[render]") {
  const GelConfig gel;
  const DepthImage flat{Grid<double>(gel.width, gel.height, 0.0), ContactMask(gel.width, gel.height, 0)};
  const NormalImage n = depth_to_normals(flat, gel);
  for (const auto& v : n.normals.data()) CHECK(v == Vec3::UnitZ());
}

TEST_CASE("planar ramp gives a constant normal", "[render]") {
  const GelConfig gel;
  const double a = 0.08;
  DepthImage ramp{Grid<double>(gel.width, gel.height, 0.0), ContactMask(gel.width, gel.height, 0)};
  for (int y = 10; y < 50; ++y) {
    for (int x = 8; x < 56; ++x) {
      ramp.depth(x, y) = 1.0 + a * gel.pixel_x(x);
      ramp.mask(x, y) = 1;
    }
  }
  const NormalImage n = depth_to_normals(ramp, gel);
  const Vec3 expected = Vec3(-a, 0, 1).normalized();
  for (int y = 10; y < 50; ++y) {
    for (int x = 8; x < 56; ++x) CHECK((n.normals(x, y) - expected).norm() < 1e-9);
  }
  CHECK(n.normals(0, 0) == Vec3::UnitZ());
}

TEST_CASE("sphere cap normals match the sphere away from the rim", "[render]") {
  const GelConfig gel;
  const double d = 1.0;
  const DepthImage img = render_depth(make_named_shape("sphere"), sphere_at(d), Pose{}, gel);
  const NormalImage n = depth_to_normals(img, gel);
  const double rim = std::sqrt(2 * kRadius * d - d * d);
  int checked = 0;
  for (int y = 0; y < gel.height; ++y) {
    for (int x = 0; x < gel.width; ++x) {
      if (!n.mask(x, y)) continue;
      CHECK(std::abs(n.normals(x, y).norm() - 1.0) < 1e-6);
      CHECK(n.normals(x, y).z() > 0.0);
      const double px = gel.pixel_x(x), py = gel.pixel_y(y);
      if (std::hypot(px, py) > rim - 2.0 * gel.pitch_x()) continue;
      const Vec3 expected = Vec3(px, py, std::sqrt(kRadius * kRadius - px * px - py * py)).normalized();
      const double angle = std::acos(std::clamp(n.normals(x, y).dot(expected), -1.0, 1.0));
      CHECK(angle < std::numbers::pi / 180.0);
      ++checked;
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("normal perturbation", "[render]") {
  NormalImage img{Grid<Vec3>(100, 100, Vec3::UnitZ()), ContactMask(100, 100, 1)};
  img.normals(3, 4) = Vec3(0.3, -0.2, 0.9).normalized();

  SECTION("sigma 0 is bit-exact") {
    const NormalImage out = perturb_normals(img, 0.0, 5);
    CHECK(out.normals == img.normals);
    CHECK(out.mask == img.mask);
  }
  SECTION("fixed seed is deterministic") {
    CHECK(perturb_normals(img, 0.05, 11).normals == perturb_normals(img, 0.05, 11).normals);
    CHECK_FALSE(perturb_normals(img, 0.05, 11).normals == perturb_normals(img, 0.05, 12).normals);
  }
  SECTION("mean angular deviation follows the half-normal mean") {
    const double sigma = 0.05;
    const NormalImage out = perturb_normals(img, sigma, 3);
    double sum = 0.0;
    for (std::size_t i = 0; i < out.normals.size(); ++i) {
      const Vec3& a = img.normals.data()[i];
      const Vec3& b = out.normals.data()[i];
      CHECK(std::abs(b.norm() - 1.0) < 1e-12);
      sum += std::acos(std::clamp(a.dot(b), -1.0, 1.0));
    }
    const double mean = sum / static_cast<double>(out.normals.size());
    const double expected = std::sqrt(2.0 / std::numbers::pi) * sigma;
    CHECK(std::abs(mean - expected) < 0.2 * expected);
  }
  SECTION("unmasked pixels are untouched") {
    NormalImage partial = img;
    partial.mask(0, 0) = 0;
    CHECK(perturb_normals(partial, 0.1, 1).normals(0, 0) == Vec3::UnitZ());
  }
  CHECK_THROWS_AS(perturb_normals(img, -0.1, 1), std::invalid_argument);
}

TEST_CASE("contact touching the image border", "[render]") {
  const GelConfig gel;
  CHECK_FALSE(contact_touches_border(ContactMask(gel.width, gel.height, 0)));
  const ShapeSDF sphere = make_named_shape("sphere");
  CHECK_FALSE(contact_touches_border(render_depth(sphere, sphere_at(1.0), Pose{}, gel).mask));
  CHECK(contact_touches_border(render_depth(sphere, sphere_at(1.0, 10.0, 0.0), Pose{}, gel).mask));
  ContactMask corner(8, 8, 0);
  corner(7, 7) = 1;
  CHECK(contact_touches_border(corner));
}

TEST_CASE("stationary zero-noise episode", "[render]") {
  TrajectorySpec traj;
  traj.steps = 3;
  traj.length = 0.0;
  const Episode ep = generate_episode(make_named_shape("sphere"), traj, GelConfig{}, NoiseSpec::none(), 4);
  REQUIRE(ep.steps.size() == 3);
  for (const auto& st : ep.steps) {
    CHECK(st.normals.normals == ep.steps[0].normals.normals);
    CHECK(st.normals.mask == ep.steps[0].normals.mask);
    CHECK(pose_near(st.object, ep.steps[0].object, 0.0));
    CHECK(pose_near(st.effector_measured, st.effector, 0.0));
  }
  CHECK(pose_near(ep.vision_prior, ep.steps[0].object, 0.0));
  CHECK(ep.dropped.empty());
}

TEST_CASE("linear slide moves the contact centroid monotonically", "[render]") {
  TrajectorySpec traj;
  traj.steps = 20;
  traj.start = {-5.0, 0.0};
  traj.length = 10.0;
  const GelConfig gel;
  const Episode ep = generate_episode(make_named_shape("sphere"), traj, gel, NoiseSpec{}, 9);
  REQUIRE(ep.steps.size() == 20);
  double prev = -1e9;
  for (const auto& st : ep.steps) {
    double sx = 0.0;
    int n = 0;
    for (int y = 0; y < gel.height; ++y) {
      for (int x = 0; x < gel.width; ++x) {
        if (st.normals.mask(x, y)) {
          sx += gel.pixel_x(x);
          ++n;
        }
      }
    }
    const double cx = sx / n;
    CHECK(cx > prev);
    prev = cx;
  }
  CHECK(std::abs(ep.steps.front().object.translation().x() + 5.0) < 1e-9);
  CHECK(std::abs(ep.steps.back().object.translation().x() - 5.0) < 1e-9);
}

TEST_CASE("episode ground truth chains through relative motions", "[render]") {
  TrajectorySpec traj;
  traj.kind = TrajectoryKind::Composite;
  traj.steps = 12;
  traj.start = {-2.0, 1.0};
  traj.length = 4.0;
  traj.mover = Mover::Sensor;
  const Episode ep = generate_episode(make_named_shape("cube"), traj, GelConfig{}, NoiseSpec{}, 2);
  Pose acc = ep.steps.front().effector;
  for (std::size_t i = 1; i < ep.steps.size(); ++i) {
    acc = acc * (ep.steps[i - 1].effector.inverse() * ep.steps[i].effector);
    CHECK(pose_near(ep.steps[i].object, Pose{}, 0.0));
  }
  CHECK(pose_near(acc, ep.steps.back().effector, 1e-9));
}

TEST_CASE("object and sensor movers see the same images", "[render]") {
  TrajectorySpec traj;
  traj.kind = TrajectoryKind::Arc;
  traj.steps = 6;
  const ShapeSDF s = make_named_shape("sphere");
  const Episode a = generate_episode(s, traj, GelConfig{}, NoiseSpec{}, 5);
  traj.mover = Mover::Sensor;
  const Episode b = generate_episode(s, traj, GelConfig{}, NoiseSpec{}, 5);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].normals.mask == b.steps[i].normals.mask);
    CHECK(pose_near(a.steps[i].object.inverse() * a.steps[i].effector,
                    b.steps[i].object.inverse() * b.steps[i].effector, 1e-9));
  }
}

TEST_CASE("episode generation is deterministic per seed", "[render]") {
  TrajectorySpec traj;
  traj.kind = TrajectoryKind::Rotation;
  traj.steps = 5;
  const ShapeSDF s = make_named_shape("pyramid");
  traj.orientation = Pose::from_axis_angle(Vec3::UnitX(), std::numbers::pi).rotation();
  const auto dir = std::filesystem::temp_directory_path() / "patchtrack_episode_determinism";
  std::filesystem::remove_all(dir);
  save_episode(dir / "a", generate_episode(s, traj, GelConfig{}, NoiseSpec{}, 77));
  save_episode(dir / "b", generate_episode(s, traj, GelConfig{}, NoiseSpec{}, 77));
  for (const auto& e : std::filesystem::directory_iterator(dir / "a")) {
    CHECK(read_text(e.path()) == read_text(dir / "b" / e.path().filename()));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("border frames are dropped and lost contact is an error", "[render]") {
  const ShapeSDF s = make_named_shape("sphere");
  TrajectorySpec traj;
  traj.steps = 15;
  traj.start = {0.0, 0.0};
  traj.length = 9.5;  // ends with the cap across the image edge
  const Episode ep = generate_episode(s, traj, GelConfig{}, NoiseSpec{}, 1);
  CHECK_FALSE(ep.dropped.empty());
  CHECK(ep.steps.size() + ep.dropped.size() == 15);
  for (const auto& st : ep.steps) CHECK_FALSE(contact_touches_border(st.normals.mask));

  traj.length = 40.0;  // slides off the gel entirely
  traj.max_missing_contact = 1;
  CHECK_THROWS_AS(generate_episode(s, traj, GelConfig{}, NoiseSpec{}, 1), EpisodeGenerationError);

  traj.length = 0.0;
  traj.indentation = 2.0;  // beyond the gel's maximum indentation
  CHECK_THROWS_AS(generate_episode(s, traj, GelConfig{}, NoiseSpec{}, 1), ConfigError);
}

namespace {

double closed_loop_relative_rmse(const char* name, const GelConfig& gel, double indentation) {
  TrajectorySpec traj;
  traj.indentation = indentation;
  if (std::string(name) == "cube") {
    traj.orientation =
        Eigen::Quaterniond::FromTwoVectors(Vec3(-1, -1, -1).normalized(), Vec3(0, 0, -1)).toRotationMatrix();
  }
  if (std::string(name) == "pyramid") traj.orientation = Pose::from_axis_angle(Vec3::UnitX(), std::numbers::pi).rotation();
  const ShapeSDF s = make_named_shape(name);
  const DepthImage truth = render_depth(s, trajectory_pose(s, traj, 0.0), Pose{}, gel);
  const DepthImage rec =
      poisson_solve(normals_to_gradients(depth_to_normals(truth, gel)), gel.pitch_x(), gel.pitch_y(), 0.0);
  double sq = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < truth.depth.size(); ++i) {
    if (!truth.mask.data()[i]) continue;
    sq += std::pow(rec.depth.data()[i] - truth.depth.data()[i], 2);
    ++n;
  }
  if (n == 0) return std::numeric_limits<double>::infinity();
  const double deepest = *std::max_element(truth.depth.data().begin(), truth.depth.data().end());
  return std::sqrt(sq / n) / deepest;
}

}  // namespace

TEST_CASE("render, normals and integration close the loop", "[render]") {
  // Smooth caps close the loop at the default resolution.
  for (double d : {0.6, 1.0, 1.2}) {
    INFO("sphere at " << d);
    CHECK(closed_loop_relative_rmse("sphere", GelConfig{}, d) < 0.02);
  }
  // Corners and apexes need finer pixels: the finite-difference stencils
  // smear the kinks over a contact only a few pixels wide.
  GelConfig fine;
  fine.width = fine.height = 256;
  for (const char* name : {"cube", "pyramid"}) {
    INFO(name);
    CHECK(closed_loop_relative_rmse(name, fine, 1.2) < 0.02);
  }
}
