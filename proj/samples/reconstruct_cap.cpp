// Renders a sphere pressed into the gel, integrates its normals back to depth
// and reports the error against the rendered depth.

#include "patchtrack/reconstruct.hpp"
#include "patchtrack/render.hpp"

#include <cmath>
#include <cstdio>

using namespace patchtrack;

int main() {
  const ShapeSDF sphere = make_named_shape("sphere");
  const GelConfig gel;
  const double indentation = 1.0;
  const Pose object = Pose::from_translation(Vec3(0.0, 0.0, 6.35 - indentation));

  const DepthImage truth = render_depth(sphere, object, Pose{}, gel);
  const NormalImage normals = depth_to_normals(truth, gel);
  const DepthImage depth = poisson_solve(normals_to_gradients(normals), gel.pitch_x(), gel.pitch_y(), 0.0);

  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.depth.size(); ++i) {
    if (!truth.mask.data()[i]) continue;
    const double e = depth.depth.data()[i] - truth.depth.data()[i];
    sq += e * e;
    ++n;
  }
  std::printf("contact pixels %zu, depth RMSE %.4f mm (%.2f%% of indentation)\n", n, std::sqrt(sq / n),
              100.0 * std::sqrt(sq / n) / indentation);
  const PointCloud cloud = depth_to_pointcloud(depth, normals, gel);
  std::printf("cloud centroid (%.3f, %.3f, %.3f)\n", cloud.centroid().x(), cloud.centroid().y(), cloud.centroid().z());
}
