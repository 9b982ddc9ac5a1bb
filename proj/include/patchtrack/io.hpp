// File formats: PFM / PGM images, ASCII PLY clouds, JSON for poses, configs,
// episodes and factor graphs.

#pragma once

#include "patchtrack/episode.hpp"
#include "patchtrack/factors.hpp"
#include "patchtrack/tracker.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace patchtrack {

using Json = nlohmann::json;
namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

/// Rejects keys outside `allowed`, so that typos in config files fail loudly.
inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------- text files

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// ---------------------------------------------------------------- PFM / PGM

namespace detail {

inline void put_f32_le(std::string& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
}

inline float get_f32(const unsigned char* p, bool little_endian) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) {
    const int shift = little_endian ? 8 * b : 8 * (3 - b);
    u |= static_cast<std::uint32_t>(p[b]) << shift;
  }
  return std::bit_cast<float>(u);
}

struct PnmHeader {
  std::string magic;
  int width = 0;
  int height = 0;
  double scale = 0.0;
  std::size_t data_offset = 0;
};

// Reads magic, width, height and one more token, each separated by
// whitespace, followed by exactly one whitespace byte before the data.
inline PnmHeader parse_pnm_header(const std::string& bytes, const std::string& what) {
  PnmHeader h;
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw IoError(what + ": truncated header");
    return bytes.substr(start, pos - start);
  };
  try {
    h.magic = token();
    h.width = std::stoi(token());
    h.height = std::stoi(token());
    h.scale = std::stod(token());
  } catch (const std::logic_error&) {
    throw IoError(what + ": malformed header");
  }
  if (pos >= bytes.size()) throw IoError(what + ": missing image data");
  h.data_offset = pos + 1;
  if (h.width <= 0 || h.height <= 0) throw IoError(what + ": bad dimensions");
  return h;
}

}  // namespace detail

/// Little-endian PFM, rows stored bottom to top. 3 channels ("PF") or 1 ("Pf").
inline void write_pfm(const fs::path& path, int width, int height, int channels, const std::vector<float>& data) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("write_pfm: channels must be 1 or 3");
  std::string out = (channels == 3 ? "PF\n" : "Pf\n") + std::to_string(width) + " " + std::to_string(height) +
                    "\n-1.0\n";
  out.reserve(out.size() + data.size() * 4);
  for (int y = height - 1; y >= 0; --y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        detail::put_f32_le(out, data[(static_cast<std::size_t>(y) * width + x) * channels + c]);
      }
    }
  }
  write_text(path, out);
}

struct PfmImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;  ///< row-major, top row first
};

inline PfmImage read_pfm(const fs::path& path) {
  const std::string bytes = read_text(path);
  const auto h = detail::parse_pnm_header(bytes, path.string());
  PfmImage img;
  if (h.magic == "PF") {
    img.channels = 3;
  } else if (h.magic == "Pf") {
    img.channels = 1;
  } else {
    throw IoError(path.string() + ": not a PFM file");
  }
  img.width = h.width;
  img.height = h.height;
  const bool little = h.scale < 0.0;
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * img.channels;
  if (bytes.size() < h.data_offset + 4 * n) throw IoError(path.string() + ": truncated PFM data");
  img.data.resize(n);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  for (int y = h.height - 1, row = 0; y >= 0; --y, ++row) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const std::size_t src = (static_cast<std::size_t>(row) * h.width + x) * img.channels + c;
        img.data[(static_cast<std::size_t>(y) * h.width + x) * img.channels + c] = detail::get_f32(p + 4 * src, little);
      }
    }
  }
  return img;
}

/// Binary P5 PGM; contact pixels are written as 255.
inline void write_pgm(const fs::path& path, const ContactMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width()) + " " + std::to_string(mask.height()) + "\n255\n";
  for (auto v : mask.data()) out.push_back(static_cast<char>(v ? 255 : 0));
  write_text(path, out);
}

/// Any nonzero pixel counts as contact.
inline ContactMask read_pgm(const fs::path& path) {
  const std::string bytes = read_text(path);
  const auto h = detail::parse_pnm_header(bytes, path.string());
  if (h.magic != "P5") throw IoError(path.string() + ": not a binary PGM file");
  if (h.scale > 255) throw IoError(path.string() + ": 16-bit PGM not supported");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() < h.data_offset + n) throw IoError(path.string() + ": truncated PGM data");
  ContactMask mask(h.width, h.height, 0);
  for (std::size_t i = 0; i < n; ++i) mask.data()[i] = bytes[h.data_offset + i] != 0 ? 1 : 0;
  return mask;
}

namespace detail {

inline std::vector<float> normals_f32(const NormalImage& img) {
  std::vector<float> data;
  data.reserve(img.normals.size() * 3);
  for (const auto& n : img.normals.data()) {
    for (int c = 0; c < 3; ++c) data.push_back(static_cast<float>(n[c]));
  }
  return data;
}

inline Vec3 unit_from_f32(const float* f) { return Vec3(f[0], f[1], f[2]).normalized(); }

}  // namespace detail

inline void write_normals_pfm(const fs::path& path, const NormalImage& img) {
  write_pfm(path, img.width(), img.height(), 3, detail::normals_f32(img));
}

/// Normal image from a 3-channel PFM and a mask; masked normals are
/// renormalized after the float round trip, unmasked pixels set to (0, 0, 1).
inline NormalImage read_normal_image(const fs::path& pfm, const fs::path& pgm) {
  const PfmImage img = read_pfm(pfm);
  if (img.channels != 3) throw IoError(pfm.string() + ": expected a 3-channel PFM");
  ContactMask mask = read_pgm(pgm);
  if (mask.width() != img.width || mask.height() != img.height) {
    throw IoError("normal image and mask differ in size");
  }
  NormalImage out{Grid<Vec3>(img.width, img.height, Vec3::UnitZ()), mask};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!mask(x, y)) continue;
      const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * 3;
      const Vec3 n(img.data[i], img.data[i + 1], img.data[i + 2]);
      if (!n.allFinite() || n.norm() < 1e-12) throw IoError(pfm.string() + ": invalid normal in contact region");
      out.normals(x, y) = detail::unit_from_f32(&img.data[i]);
    }
  }
  return out;
}

inline void write_depth_pfm(const fs::path& path, const DepthImage& img) {
  std::vector<float> data;
  data.reserve(img.depth.size());
  for (double d : img.depth.data()) data.push_back(static_cast<float>(d));
  write_pfm(path, img.width(), img.height(), 1, data);
}

inline DepthImage read_depth_image(const fs::path& pfm, const fs::path& pgm) {
  const PfmImage img = read_pfm(pfm);
  if (img.channels != 1) throw IoError(pfm.string() + ": expected a 1-channel PFM");
  ContactMask mask = read_pgm(pgm);
  if (mask.width() != img.width || mask.height() != img.height) throw IoError("depth image and mask differ in size");
  DepthImage out{Grid<double>(img.width, img.height, 0.0), mask};
  for (std::size_t i = 0; i < img.data.size(); ++i) out.depth.data()[i] = mask.data()[i] ? img.data[i] : 0.0;
  return out;
}

// ---------------------------------------------------------------- PLY

/// ASCII PLY with vertex properties x y z nx ny nz.
inline std::string ply_string(const PointCloud& cloud) {
  std::string out = "ply\nformat ascii 1.0\ncomment frame " + to_string(cloud.frame) + "\nelement vertex " +
                    std::to_string(cloud.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n"
                    "property float nx\nproperty float ny\nproperty float nz\nend_header\n";
  char buf[160];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const Vec3& n = cloud.normals[i];
    std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f %.6f %.6f %.6f\n", p.x(), p.y(), p.z(), n.x(), n.y(), n.z());
    out += buf;
  }
  return out;
}

inline void write_ply(const fs::path& path, const PointCloud& cloud) { write_text(path, ply_string(cloud)); }

inline PointCloud read_ply(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t count = 0;
  PointCloud cloud;
  if (!std::getline(in, line) || line != "ply") throw IoError(path.string() + ": not a PLY file");
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) count = std::stoul(line.substr(15));
    if (line.rfind("comment frame ", 0) == 0) {
      const std::string f = line.substr(14);
      cloud.frame = f == "object" ? Frame::Object : f == "world" ? Frame::World : Frame::Sensor;
    }
    if (line == "end_header") break;
  }
  for (std::size_t i = 0; i < count; ++i) {
    Vec3 p, n;
    if (!(in >> p.x() >> p.y() >> p.z() >> n.x() >> n.y() >> n.z())) throw IoError(path.string() + ": truncated");
    cloud.push_back(p, n);
  }
  return cloud;
}

// ---------------------------------------------------------------- JSON helpers

inline Json pose_to_json(const Pose& p) {
  const auto a = p.to_array();
  return Json(std::vector<double>(a.begin(), a.end()));
}

inline Pose pose_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 7) throw ConfigError("pose must be [qw, qx, qy, qz, tx, ty, tz]");
  std::array<double, 7> a{};
  for (std::size_t i = 0; i < 7; ++i) a[i] = j.at(i).get<double>();
  return Pose::from_array(a);
}

inline Json vec_to_json(const auto& v) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Json noise_to_json(const NoiseModel& n) { return vec_to_json(n.sigmas); }

/// Either 6 sigmas or {"rot": r, "trans": t}. Factor noise must be strictly
/// positive; simulated noise may be zero.
inline NoiseModel noise_from_json(const Json& j, bool allow_zero = false) {
  NoiseModel n;
  if (j.is_array()) {
    if (j.size() != 6) throw ConfigError("noise sigmas need 6 entries");
    for (int i = 0; i < 6; ++i) n.sigmas[i] = j.at(i).get<double>();
  } else if (j.is_object()) {
    n.sigmas << Vec3::Constant(j.at("rot").get<double>()), Vec3::Constant(j.at("trans").get<double>());
  } else {
    throw ConfigError("noise model must be an array or {rot, trans}");
  }
  if (allow_zero) {
    n.validate_nonnegative();
  } else {
    n.validate();
  }
  return n;
}

inline Json gel_to_json(const GelConfig& g) {
  Json j{{"width", g.width},
         {"height", g.height},
         {"extent_mm", {g.extent_x, g.extent_y}},
         {"max_indentation_mm", g.max_indentation}};
  if (g.camera == CameraModel::Orthographic) {
    j["camera"] = "orthographic";
  } else {
    j["camera"] = "clip";
    j["clip"] = {{"near", g.clip.near_plane}, {"far", g.clip.far_plane}, {"distance", g.clip.gel_distance()}};
  }
  return j;
}

inline GelConfig gel_from_json(const Json& j) {
  detail::check_keys(j, {"width", "height", "extent_mm", "max_indentation_mm", "camera", "clip"}, "gel");
  GelConfig g;
  g.width = j.value("width", g.width);
  g.height = j.value("height", g.height);
  if (j.contains("extent_mm")) {
    g.extent_x = j.at("extent_mm").at(0).get<double>();
    g.extent_y = j.at("extent_mm").at(1).get<double>();
  }
  g.max_indentation = j.value("max_indentation_mm", g.max_indentation);
  const std::string cam = j.value("camera", std::string("orthographic"));
  if (cam == "clip") {
    g.camera = CameraModel::ClipProjection;
    const Json c = j.value("clip", Json::object());
    detail::check_keys(c, {"near", "far", "distance"}, "gel.clip");
    g.clip = GelConfig::make_clip_camera(g, c.value("near", 1.0), c.value("far", 50.0), c.value("distance", 30.0));
  } else if (cam != "orthographic") {
    throw ConfigError("unknown camera model: " + cam);
  }
  g.validate();
  return g;
}

inline Json shape_to_json(const ShapeSDF& s) {
  Json parts = Json::array();
  for (const auto& part : s.parts()) {
    Json p = std::visit(
        [](const auto& g) -> Json {
          using G = std::decay_t<decltype(g)>;
          if constexpr (std::is_same_v<G, Sphere>) return {{"type", "sphere"}, {"radius", g.radius}};
          if constexpr (std::is_same_v<G, Box>) return {{"type", "box"}, {"half_extents", vec_to_json(g.half_extents)}};
          if constexpr (std::is_same_v<G, Pyramid>) {
            return {{"type", "pyramid"}, {"base_half_length", g.base_half_length}, {"height", g.height}};
          }
        },
        part.geometry);
    p["offset"] = pose_to_json(part.offset);
    parts.push_back(p);
  }
  return {{"name", s.name()}, {"parts", parts}};
}

/// A shape is either a named object ("sphere", "cube", ...) or
/// {"name": ..., "parts": [...]}.
inline ShapeSDF shape_from_json(const Json& j) {
  try {
    if (j.is_string()) return make_named_shape(j.get<std::string>());
    if (!j.contains("parts")) return make_named_shape(j.at("name").get<std::string>());
    std::vector<Primitive> parts;
    detail::check_keys(j, {"name", "parts"}, "shape");
    for (const auto& p : j.at("parts")) {
      detail::check_keys(p, {"type", "radius", "half_extents", "base_half_length", "height", "offset"}, "shape part");
      const std::string type = p.at("type").get<std::string>();
      Primitive prim;
      if (p.contains("offset")) prim.offset = pose_from_json(p.at("offset"));
      if (type == "sphere") {
        prim.geometry = Sphere{p.at("radius").get<double>()};
      } else if (type == "box") {
        const auto& h = p.at("half_extents");
        prim.geometry = Box{Vec3(h.at(0).get<double>(), h.at(1).get<double>(), h.at(2).get<double>())};
      } else if (type == "pyramid") {
        prim.geometry = Pyramid{p.at("base_half_length").get<double>(), p.at("height").get<double>()};
      } else {
        throw ConfigError("unknown primitive type: " + type);
      }
      parts.push_back(prim);
    }
    if (parts.empty()) throw ConfigError("shape has no parts");
    return {j.value("name", std::string("custom")), std::move(parts)};
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline Json trajectory_to_json(const TrajectorySpec& t) {
  const Eigen::Quaterniond q(t.orientation);
  return {{"kind", to_string(t.kind)},
          {"steps", t.steps},
          {"dt", t.dt},
          {"indentation_mm", t.indentation},
          {"orientation", {q.w(), q.x(), q.y(), q.z()}},
          {"start_mm", {t.start.x(), t.start.y()}},
          {"direction_rad", t.direction},
          {"length_mm", t.length},
          {"arc_radius_mm", t.arc_radius},
          {"arc_sweep_rad", t.arc_sweep},
          {"rotation_rad", t.rotation},
          {"mover", to_string(t.mover)},
          {"max_missing_contact", t.max_missing_contact}};
}

inline TrajectorySpec trajectory_from_json(const Json& j) {
  detail::check_keys(j,
                     {"kind", "steps", "dt", "indentation_mm", "orientation", "start_mm", "direction_rad", "length_mm",
                      "arc_radius_mm", "arc_sweep_rad", "rotation_rad", "mover", "max_missing_contact"},
                     "trajectory");
  TrajectorySpec t;
  t.kind = trajectory_kind_from_string(j.value("kind", std::string("linear")));
  t.steps = j.value("steps", t.steps);
  t.dt = j.value("dt", t.dt);
  t.indentation = j.value("indentation_mm", t.indentation);
  if (j.contains("orientation")) {
    const auto& q = j.at("orientation");
    t.orientation = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                                       q.at(3).get<double>())
                        .normalized()
                        .toRotationMatrix();
  }
  if (j.contains("start_mm")) t.start = {j.at("start_mm").at(0).get<double>(), j.at("start_mm").at(1).get<double>()};
  t.direction = j.value("direction_rad", t.direction);
  t.length = j.value("length_mm", t.length);
  t.arc_radius = j.value("arc_radius_mm", t.arc_radius);
  t.arc_sweep = j.value("arc_sweep_rad", t.arc_sweep);
  t.rotation = j.value("rotation_rad", t.rotation);
  t.mover = mover_from_string(j.value("mover", std::string("object")));
  t.max_missing_contact = j.value("max_missing_contact", t.max_missing_contact);
  return t;
}

inline Json noise_spec_to_json(const NoiseSpec& n) {
  return {{"normal_sigma", n.normal_sigma}, {"eff", noise_to_json(n.eff)}, {"vis", noise_to_json(n.vis)}};
}

inline NoiseSpec noise_spec_from_json(const Json& j) {
  detail::check_keys(j, {"normal_sigma", "eff", "vis"}, "noise");
  NoiseSpec n;
  n.normal_sigma = j.value("normal_sigma", n.normal_sigma);
  if (j.contains("eff")) n.eff = noise_from_json(j.at("eff"), true);
  if (j.contains("vis")) n.vis = noise_from_json(j.at("vis"), true);
  n.validate();
  return n;
}

// ---------------------------------------------------------------- episodes

inline std::string frame_name(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.%s", prefix, i, ext);
  return buf;
}

/// Extra fields stored alongside an episode: object label, suite indices,
/// cache key and the shape description it was built from.
struct EpisodeLabel {
  std::string object;
  int object_index = 0;
  int episode = 0;
  std::string config_hash;
  Json shape_spec;  ///< written instead of the serialized shape when set
};

inline void save_episode(const fs::path& dir, const Episode& ep, const EpisodeLabel& label = {}) {
  fs::create_directories(dir);
  Json steps = Json::array();
  for (std::size_t i = 0; i < ep.steps.size(); ++i) {
    const auto& st = ep.steps[i];
    steps.push_back({{"index", st.index},
                     {"time", st.time},
                     {"object", pose_to_json(st.object)},
                     {"effector", pose_to_json(st.effector)},
                     {"effector_measured", pose_to_json(st.effector_measured)},
                     {"normals", frame_name("normals", i, "pfm")},
                     {"mask", frame_name("mask", i, "pgm")},
                     {"depth", frame_name("depth", i, "pfm")}});
    write_normals_pfm(dir / frame_name("normals", i, "pfm"), st.normals);
    write_pgm(dir / frame_name("mask", i, "pgm"), st.normals.mask);
    write_depth_pfm(dir / frame_name("depth", i, "pfm"), st.depth);
  }
  Json j{{"format", "patchtrack-episode/1"},
         {"object", label.object.empty() ? ep.shape.name() : label.object},
         {"object_index", label.object_index},
         {"episode", label.episode},
         {"config_hash", label.config_hash},
         {"seed", ep.seed},
         {"shape", label.shape_spec.is_null() ? shape_to_json(ep.shape) : label.shape_spec},
         {"gel", gel_to_json(ep.gel)},
         {"trajectory", trajectory_to_json(ep.trajectory)},
         {"noise", noise_spec_to_json(ep.noise)},
         {"vision_prior", pose_to_json(ep.vision_prior)},
         {"dropped_frames", ep.dropped},
         {"steps", steps}};
  write_json(dir / "episode.json", j);
}

inline Episode load_episode(const fs::path& dir, EpisodeLabel* label = nullptr) {
  const Json j = read_json(dir / "episode.json");
  if (j.value("format", std::string()) != "patchtrack-episode/1") {
    throw ConfigError((dir / "episode.json").string() + ": not a patchtrack-episode/1 file");
  }
  try {
    Episode ep;
    ep.seed = j.at("seed").get<std::uint64_t>();
    ep.shape = shape_from_json(j.at("shape"));
    ep.gel = gel_from_json(j.at("gel"));
    ep.trajectory = trajectory_from_json(j.at("trajectory"));
    ep.noise = noise_spec_from_json(j.at("noise"));
    ep.vision_prior = pose_from_json(j.at("vision_prior"));
    ep.dropped = j.value("dropped_frames", std::vector<int>{});
    for (const auto& s : j.at("steps")) {
      EpisodeStep st;
      st.index = s.at("index").get<int>();
      st.time = s.at("time").get<double>();
      st.object = pose_from_json(s.at("object"));
      st.effector = pose_from_json(s.at("effector"));
      st.effector_measured = pose_from_json(s.at("effector_measured"));
      const fs::path mask = dir / s.at("mask").get<std::string>();
      st.normals = read_normal_image(dir / s.at("normals").get<std::string>(), mask);
      if (s.contains("depth")) st.depth = read_depth_image(dir / s.at("depth").get<std::string>(), mask);
      ep.steps.push_back(std::move(st));
    }
    if (label) {
      label->object = j.value("object", ep.shape.name());
      label->object_index = j.value("object_index", 0);
      label->episode = j.value("episode", 0);
      label->config_hash = j.value("config_hash", std::string());
      label->shape_spec = j.at("shape");
    }
    return ep;
  } catch (const Json::exception& e) {
    throw ConfigError((dir / "episode.json").string() + ": " + e.what());
  }
}

/// The episode as load_episode would return it after save_episode: poses go
/// through the quaternion form, images through float32.
inline Episode storage_round_trip(Episode ep) {
  auto pose = [](const Pose& p) {
    const auto a = p.to_array();
    return Pose::from_array(a);
  };
  ep.vision_prior = pose(ep.vision_prior);
  for (auto& st : ep.steps) {
    st.object = pose(st.object);
    st.effector = pose(st.effector);
    st.effector_measured = pose(st.effector_measured);
    // Goes through a float buffer like the writer. Narrowing in place,
    // element by element, is miscompiled by GCC 11 at -O3 (the SLP
    // vectorizer drops the float truncation of x and y).
    const std::vector<float> nf = detail::normals_f32(st.normals);
    for (std::size_t i = 0; i < st.normals.normals.size(); ++i) {
      st.normals.normals.data()[i] = st.normals.mask.data()[i] ? detail::unit_from_f32(&nf[3 * i]) : Vec3::UnitZ();
    }
    std::vector<float> df(st.depth.depth.data().begin(), st.depth.depth.data().end());
    for (std::size_t i = 0; i < df.size(); ++i) {
      st.depth.depth.data()[i] = st.depth.mask.data()[i] ? static_cast<double>(df[i]) : 0.0;
    }
  }
  return ep;
}

// ---------------------------------------------------------------- graph dump

inline Json factor_to_json(const Factor& f) {
  Json keys = Json::array();
  for (const auto& k : factor_keys(f)) keys.push_back(k.str());
  Json j{{"type", factor_type(f)}, {"keys", keys}, {"sigmas", noise_to_json(factor_noise(f))}};
  std::visit(
      [&](const auto& x) {
        if constexpr (requires { x.measured; }) j["measured"] = pose_to_json(x.measured);
      },
      f);
  return j;
}

inline Json values_to_json(const Values& v) {
  Json j = Json::object();
  for (const auto& [k, p] : v) j[k.str()] = pose_to_json(p);
  return j;
}

inline Json graph_to_json(const FactorGraph& g, const Values& v) {
  Json factors = Json::array();
  for (const auto& f : g.factors) factors.push_back(factor_to_json(f));
  return {{"factors", factors}, {"values", values_to_json(v)}};
}

}  // namespace patchtrack
