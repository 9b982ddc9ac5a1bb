// Analytic signed-distance shapes used as simulated contact objects.

#pragma once

#include "patchtrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

namespace patchtrack {

struct Sphere {
  double radius = 6.35;
};

struct Box {
  Vec3 half_extents = Vec3::Constant(10.0);
};

/// Square pyramid with its base on the shape-frame z = 0 plane and the apex at
/// (0, 0, height).
struct Pyramid {
  double base_half_length = 22.225;
  double height = 12.7;
};

struct Primitive {
  std::variant<Sphere, Box, Pyramid> geometry;
  Pose offset;  ///< object-from-shape transform
};

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    min = min.cwiseMin(b.min);
    max = max.cwiseMax(b.max);
  }
};

namespace detail {

inline double sdf_local(const Sphere& s, const Vec3& p) { return p.norm() - s.radius; }

inline double sdf_local(const Box& b, const Vec3& p) {
  Vec3 q = p.cwiseAbs() - b.half_extents;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

// Max of the five face-plane distances: exact inside and on faces, a lower
// bound of the true distance outside near edges (safe for sphere tracing).
inline double sdf_local(const Pyramid& py, const Vec3& p) {
  const double h = py.height;
  const double b = py.base_half_length;
  const double inv = 1.0 / std::hypot(h, b);
  double d = -p.z();
  d = std::max(d, (h * p.x() + b * p.z() - h * b) * inv);
  d = std::max(d, (-h * p.x() + b * p.z() - h * b) * inv);
  d = std::max(d, (h * p.y() + b * p.z() - h * b) * inv);
  d = std::max(d, (-h * p.y() + b * p.z() - h * b) * inv);
  return d;
}

inline std::vector<Vec3> local_vertices(const Box& b) {
  std::vector<Vec3> v;
  for (int i = 0; i < 8; ++i) {
    v.emplace_back((i & 1 ? 1.0 : -1.0) * b.half_extents.x(), (i & 2 ? 1.0 : -1.0) * b.half_extents.y(),
                   (i & 4 ? 1.0 : -1.0) * b.half_extents.z());
  }
  return v;
}

inline std::vector<Vec3> local_vertices(const Pyramid& py) {
  const double b = py.base_half_length;
  return {Vec3(0, 0, py.height), Vec3(b, b, 0), Vec3(-b, b, 0), Vec3(b, -b, 0), Vec3(-b, -b, 0)};
}

}  // namespace detail

/// Signed distance (mm): negative inside, positive outside. A single primitive
/// or a union of primitives, all placed in the object frame.
class ShapeSDF {
 public:
  ShapeSDF() = default;
  ShapeSDF(std::string name, std::vector<Primitive> parts) : name_(std::move(name)), parts_(std::move(parts)) {}

  static ShapeSDF sphere(double radius, const Pose& offset = {}) {
    return {"sphere", {{Sphere{radius}, offset}}};
  }
  static ShapeSDF box(const Vec3& half_extents, const Pose& offset = {}) {
    return {"box", {{Box{half_extents}, offset}}};
  }
  static ShapeSDF pyramid(double base_half_length, double height, const Pose& offset = {}) {
    return {"pyramid", {{Pyramid{base_half_length, height}, offset}}};
  }

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }
  const std::vector<Primitive>& parts() const { return parts_; }
  bool is_union() const { return parts_.size() > 1; }

  double operator()(const Vec3& p_object) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& part : parts_) {
      Vec3 local = part.offset.inverse().act(p_object);
      d = std::min(d, std::visit([&](const auto& g) { return detail::sdf_local(g, local); }, part.geometry));
    }
    return d;
  }

  /// Central-difference gradient.
  Vec3 gradient(const Vec3& p, double h = 1e-5) const {
    Vec3 g;
    for (int i = 0; i < 3; ++i) {
      Vec3 e = Vec3::Zero();
      e[i] = h;
      g[i] = ((*this)(p + e) - (*this)(p - e)) / (2.0 * h);
    }
    return g;
  }

  /// Object-frame point minimizing dir . p over the shape (ties resolved to the
  /// centroid of the supporting vertices / face).
  Vec3 support_min(const Vec3& dir) const {
    const Vec3 a = dir.normalized();
    double best = std::numeric_limits<double>::infinity();
    Vec3 best_point = Vec3::Zero();
    for (const auto& part : parts_) {
      Vec3 local_dir = part.offset.rotation().transpose() * a;
      Vec3 local = std::visit(
          [&](const auto& g) -> Vec3 {
            using G = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<G, Sphere>) {
              return -g.radius * local_dir;
            } else {
              auto verts = detail::local_vertices(g);
              double m = std::numeric_limits<double>::infinity();
              for (const auto& v : verts) m = std::min(m, local_dir.dot(v));
              Vec3 acc = Vec3::Zero();
              int n = 0;
              for (const auto& v : verts) {
                if (local_dir.dot(v) <= m + 1e-9) {
                  acc += v;
                  ++n;
                }
              }
              return acc / n;
            }
          },
          part.geometry);
      Vec3 p = part.offset.act(local);
      double value = a.dot(p);
      if (value < best - 1e-12) {
        best = value;
        best_point = p;
      }
    }
    return best_point;
  }

  Aabb bounds() const {
    Aabb box;
    for (const auto& part : parts_) {
      std::vector<Vec3> corners = std::visit(
          [](const auto& g) -> std::vector<Vec3> {
            using G = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<G, Sphere>) {
              return detail::local_vertices(Box{Vec3::Constant(g.radius)});
            } else {
              return detail::local_vertices(g);
            }
          },
          part.geometry);
      for (const auto& c : corners) box.extend(part.offset.act(c));
    }
    return box;
  }

 private:
  std::string name_;
  std::vector<Primitive> parts_;
};

/// Named objects used by the evaluation suites. The toy shapes are coarse
/// unions of primitives.
inline ShapeSDF make_named_shape(const std::string& name) {
  if (name == "sphere") return ShapeSDF::sphere(6.35);
  if (name == "cube") {
    auto s = ShapeSDF::box(Vec3::Constant(6.35));
    s.set_name("cube");
    return s;
  }
  if (name == "pyramid") return ShapeSDF::pyramid(22.225, 12.7);
  if (name == "toy_brick") {
    std::vector<Primitive> parts;
    parts.push_back({Box{Vec3(16.0, 8.0, 5.0)}, Pose{}});
    for (int i = -1; i <= 1; i += 2) {
      for (int j = -1; j <= 1; j += 2) {
        parts.push_back({Box{Vec3(2.5, 2.5, 1.5)}, Pose::from_translation(Vec3(8.0 * i, 4.0 * j, 6.5))});
      }
    }
    return {"toy_brick", std::move(parts)};
  }
  if (name == "toy_human") {
    std::vector<Primitive> parts;
    parts.push_back({Sphere{6.0}, Pose::from_translation(Vec3(0, 0, 22.0))});
    parts.push_back({Box{Vec3(7.0, 4.0, 9.0)}, Pose::from_translation(Vec3(0, 0, 6.0))});
    parts.push_back({Box{Vec3(2.5, 2.5, 7.0)}, Pose::from_translation(Vec3(3.5, 0, -10.0))});
    parts.push_back({Box{Vec3(2.5, 2.5, 7.0)}, Pose::from_translation(Vec3(-3.5, 0, -10.0))});
    return {"toy_human", std::move(parts)};
  }
  throw std::invalid_argument("unknown shape name: " + name);
}

}  // namespace patchtrack
