#include "helpers.hpp"
#include "patchtrack/reconstruct.hpp"
#include "patchtrack/registration.hpp"
#include "patchtrack/render.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <numbers>

using namespace patchtrack;
using namespace testing;

namespace {

// Contact cloud of a rendered sphere cap, from the rendered depth itself.
PointCloud cap_cloud(double indentation = 1.0) {
  const GelConfig gel;
  const DepthImage depth =
      render_depth(make_named_shape("sphere"), Pose::from_translation(Vec3(0, 0, 6.35 - indentation)), Pose{}, gel);
  return depth_to_pointcloud(depth, depth_to_normals(depth, gel), gel);
}

PointCloud plane_cloud(int n, double spacing) {
  PointCloud c;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) c.push_back(Vec3(i * spacing, j * spacing, 0.0), Vec3::UnitZ());
  }
  return c;
}

double rotation_gap(const Pose& a, const Pose& b) { return log(inverse(a) * b).rot.norm(); }
double translation_gap(const Pose& a, const Pose& b) { return (a.translation() - b.translation()).norm(); }

}  // namespace

TEST_CASE("a cloud matches itself", "[registration]") {
  const PointCloud c = cap_cloud();
  const auto corr = nearest_neighbors(c, c, 0.5);
  REQUIRE(corr.size() == c.size());
  for (const auto& m : corr) {
    CHECK(m.source == m.target);
    CHECK(m.distance == 0.0);
  }
}

TEST_CASE("distance cap excludes far matches", "[registration]") {
  PointCloud a, b;
  a.push_back(Vec3(0, 0, 0), Vec3::UnitZ());
  b.push_back(Vec3(5, 0, 0), Vec3::UnitZ());
  CHECK(nearest_neighbors(a, b, 1.0).empty());
  CHECK(nearest_neighbors(a, PointCloud{}, 1.0).empty());
}

TEST_CASE("grid search equals brute force", "[registration]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  PointCloud a, b;
  for (int i = 0; i < 500; ++i) {
    a.push_back(Vec3(u(rng), u(rng), u(rng)), Vec3::UnitZ());
    b.push_back(Vec3(u(rng), u(rng), u(rng)), Vec3::UnitZ());
  }
  for (double cap : {0.5, 1.5, 40.0}) {
    const auto corr = nearest_neighbors(a, b, cap);
    std::size_t k = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < b.size(); ++j) {
        const double d = (a.points[i] - b.points[j]).norm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (best_d > cap) continue;
      REQUIRE(k < corr.size());
      CHECK(corr[k].source == i);
      CHECK(corr[k].target == best);
      CHECK(std::abs(corr[k].distance - best_d) < 1e-12);
      ++k;
    }
    CHECK(k == corr.size());
  }
}

TEST_CASE("zero residual gives a zero step", "[registration]") {
  const PointCloud c = cap_cloud();
  const Twist xi = point_to_plane_step(c, c, nearest_neighbors(c, c, 0.5));
  CHECK(xi.norm() < 1e-12);
}

TEST_CASE("plane shifted along its normal", "[registration]") {
  // A plane fixes only z, rx and ry, so the full step is rank deficient; the
  // minimum-norm solution over the observable directions recovers the shift.
  const PointCloud src = plane_cloud(10, 0.5);
  const PointCloud tgt = transformed(src, Pose::from_translation(Vec3(0, 0, 0.1)), Frame::Sensor);
  const auto corr = nearest_neighbors(src, tgt, 0.3);
  REQUIRE(corr.size() == src.size());
  const PointToPlaneSystem sys = point_to_plane_system(src, tgt, corr);
  const Twist xi = detail::twist_about_origin(detail::truncated_solve(sys, 1e8), sys.center);
  CHECK((xi.trans - Vec3(0, 0, 0.1)).norm() < 1e-6);
  CHECK(xi.rot.norm() < 1e-6);
  CHECK_THROWS_AS(point_to_plane_step(src, tgt, corr), DegenerateGeometryError);
}

TEST_CASE("in-plane sliding is degenerate", "[registration]") {
  const PointCloud src = plane_cloud(10, 0.5);
  const PointCloud tgt = transformed(src, Pose::from_translation(Vec3(0.2, 0.1, 0)), Frame::Sensor);
  try {
    point_to_plane_step(src, tgt, nearest_neighbors(src, tgt, 1.0));
    FAIL("expected a degenerate-geometry error");
  } catch (const DegenerateGeometryError& e) {
    CHECK(e.condition_number() > 1e8);
  }
  CHECK_THROWS_AS(icp_register(src, tgt, Pose{}), DegenerateGeometryError);
}

TEST_CASE("too few correspondences for a step", "[registration]") {
  const PointCloud c = plane_cloud(2, 1.0);
  CHECK_THROWS_AS(point_to_plane_step(c, c, nearest_neighbors(c, c, 0.1)), InsufficientOverlapError);
}

TEST_CASE("ICP of a cloud onto itself", "[registration]") {
  const PointCloud c = cap_cloud();
  const ICPResult r = icp_register(c, c, Pose{});
  CHECK(pose_near(r.transform, Pose{}, 1e-12));
  CHECK(r.rmse == 0.0);
  CHECK(r.iterations == 1);
  CHECK(r.converged);
  CHECK(r.correspondences == c.size());
}

TEST_CASE("ICP recovers a known transform", "[registration]") {
  const PointCloud tgt = cap_cloud();
  const Pose G(Pose::from_axis_angle(Vec3::UnitX(), 3.0 * std::numbers::pi / 180.0).rotation(),
               Vec3(0.3, -0.3, 0.2).normalized() * 0.5);
  const PointCloud src = transformed(tgt, inverse(G), Frame::Sensor);
  const ICPResult r = icp_register(src, tgt, Pose{});
  CHECK(r.converged);
  CHECK(rotation_gap(r.transform, G) < 1e-3);
  CHECK(translation_gap(r.transform, G) < 1e-2);
  CHECK(r.rmse_history.back() <= r.rmse_history.front());
  CHECK(r.condition_number < 1e8);

  const ICPResult warm = icp_register(src, tgt, G);
  CHECK(warm.converged);
  CHECK(warm.iterations <= 2);
}

TEST_CASE("ICP RMSE does not increase over random perturbations", "[registration]") {
  // Rotation about the sphere centre is held only by the contact rim, so
  // convergence is slow; allow more iterations than the default.
  std::mt19937_64 rng(8);
  const PointCloud tgt = cap_cloud();
  ICPParams params;
  params.max_iterations = 100;
  for (int i = 0; i < 20; ++i) {
    const Pose G = exp(random_twist(rng, 0.05, 0.5));
    const ICPResult r = icp_register(transformed(tgt, G, Frame::Sensor), tgt, Pose{}, params);
    CHECK(r.converged);
    CHECK(r.rmse_history.back() <= r.rmse_history.front());
    CHECK(translation_gap(r.transform, inverse(G)) < 1e-2);
  }
}

TEST_CASE("ICP is equivariant under a common rigid transform", "[registration]") {
  std::mt19937_64 rng(9);
  const PointCloud tgt = cap_cloud();
  const PointCloud src = transformed(tgt, exp(Twist{Vec3(0.02, -0.03, 0.01), Vec3(0.3, 0.2, -0.1)}), Frame::Sensor);
  const ICPResult base = icp_register(src, tgt, Pose{});
  for (int i = 0; i < 5; ++i) {
    const Pose G = random_pose(rng, 20.0);
    const ICPResult r =
        icp_register(transformed(src, G, Frame::Sensor), transformed(tgt, G, Frame::Sensor), Pose{});
    CHECK(pose_near(r.transform, G * base.transform * inverse(G), 1e-6));
  }
}

TEST_CASE("a cap is better conditioned than a plane of equal size", "[registration]") {
  const PointCloud cap = cap_cloud();
  PointCloud plane;
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cap.size()))));
  for (int i = 0; i < side && plane.size() < cap.size(); ++i) {
    for (int j = 0; j < side && plane.size() < cap.size(); ++j) {
      plane.push_back(Vec3(0.3 * i, 0.3 * j, 0.0), Vec3::UnitZ());
    }
  }
  REQUIRE(plane.size() == cap.size());
  const auto cc = nearest_neighbors(cap, cap, 0.1);
  const auto pc = nearest_neighbors(plane, plane, 0.1);
  CHECK(point_to_plane_system(cap, cap, cc).condition_number() <
        point_to_plane_system(plane, plane, pc).condition_number());
}

TEST_CASE("disjoint clouds report insufficient overlap", "[registration]") {
  const PointCloud c = cap_cloud();
  const PointCloud far = transformed(c, Pose::from_translation(Vec3(50, 0, 0)), Frame::Sensor);
  CHECK_THROWS_AS(icp_register(c, far, Pose{}), InsufficientOverlapError);
  ICPParams bad;
  bad.max_iterations = 0;
  CHECK_THROWS_AS(icp_register(c, c, Pose{}, bad), ConfigError);
}
