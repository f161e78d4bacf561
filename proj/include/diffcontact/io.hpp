#pragma once

// File formats: sphere tables, XYZ point clouds, trajectory and action CSVs,
// JSON scene/scenario/MPC configs, parameter files, loss curves, dataset
// directories and run manifests. Doubles are written with %.17g so every
// text format round-trips bit for bit.

#include <cctype>
#include <cerrno>
#include <cinttypes>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "diffcontact/control.hpp"
#include "diffcontact/fit.hpp"
#include "diffcontact/scenario.hpp"

namespace diffcontact::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Accepts subnormal values (strtod flags them with ERANGE) but not overflow.
inline double parse_double(const std::string& s, const std::string& where) {
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  const bool overflow = errno == ERANGE && std::isinf(v);
  if (s.empty() || std::isspace(static_cast<unsigned char>(s[0])) || end != begin + s.size() || overflow)
    throw ValidationError(where + ": cannot parse number '" + s + "'");
  return v;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << text;
  if (!f) throw ValidationError("failed writing " + path.string());
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string tok; ss >> tok;) out.push_back(tok);
  return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Sphere tables and point clouds

/// First line: sphere count. Then one `cx cy cz s` row per sphere (meters).
inline std::string sphere_table_text(const SphereCloudd& cloud) {
  std::string out = std::to_string(cloud.size()) + "\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3d& c = cloud.centers[i];
    out += fmt(c.x) + " " + fmt(c.y) + " " + fmt(c.z) + " " + fmt(cloud.scales[i]) + "\n";
  }
  return out;
}

inline void write_sphere_table(const fs::path& path, const SphereCloudd& cloud) { write_text(path, sphere_table_text(cloud)); }

inline SphereCloudd parse_sphere_table(const std::string& text, const std::string& name = "sphere table") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> count;
  SphereCloudd cloud;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    const std::string where = name + ":" + std::to_string(lineno);
    if (!count) {
      if (tok.size() != 1) throw ValidationError(where + ": expected the sphere count");
      const double n = parse_double(tok[0], where);
      if (n < 1 || n != std::floor(n)) throw ValidationError(where + ": sphere count must be a positive integer");
      count = static_cast<std::size_t>(n);
      continue;
    }
    if (tok.size() != 4) throw ValidationError(where + ": expected 4 columns (cx cy cz s)");
    cloud.centers.push_back({parse_double(tok[0], where), parse_double(tok[1], where), parse_double(tok[2], where)});
    cloud.scales.push_back(parse_double(tok[3], where));
  }
  if (!count) throw ValidationError(name + ": missing sphere count");
  if (cloud.size() != *count)
    throw ValidationError(name + ": header declares " + std::to_string(*count) + " spheres but " +
                          std::to_string(cloud.size()) + " rows follow");
  validate(cloud);
  return cloud;
}

inline SphereCloudd read_sphere_table(const fs::path& path) { return parse_sphere_table(read_text(path), path.string()); }

/// Whitespace-separated x y z per line; blank lines and `#` comments skipped.
inline std::vector<Vec3d> read_xyz(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<Vec3d> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (tok.size() != 3) throw ValidationError(where + ": expected 3 floats");
    pts.push_back({parse_double(tok[0], where), parse_double(tok[1], where), parse_double(tok[2], where)});
  }
  if (pts.empty()) throw ValidationError(path.string() + ": no points");
  return pts;
}

inline void write_xyz(const fs::path& path, const std::vector<Vec3d>& pts) {
  std::string out;
  for (const auto& p : pts) out += fmt(p.x) + " " + fmt(p.y) + " " + fmt(p.z) + "\n";
  write_text(path, out);
}

/// Hash of everything that shapes contacts: spheres, ground, actuator points, SDF settings.
inline std::uint64_t geometry_hash(const SceneGeometry& g) {
  std::string s;
  for (const auto& b : g.bodies) s += "body " + std::to_string(b.material) + "\n" + sphere_table_text(b.cloud);
  if (g.ground)
    s += "ground " + fmt(g.ground->normal.x) + " " + fmt(g.ground->normal.y) + " " + fmt(g.ground->normal.z) + " " +
         fmt(g.ground->offset) + " " + std::to_string(g.ground_material) + "\n";
  for (const auto& a : g.actuators) {
    s += "actuator " + fmt(a.radius) + " " + std::to_string(a.material) + "\n";
    for (const auto& p : a.points) s += fmt(p.x) + " " + fmt(p.y) + " " + fmt(p.z) + "\n";
  }
  s += "sdf " + fmt(g.sdf.beta) + " " + fmt(g.sdf.gamma) + " " + fmt(g.sdf.delta) + " " + fmt(g.sdf.margin) + " " +
       std::to_string(g.sdf.max_contacts_per_pair) + " " + std::to_string(g.n_d) + "\n";
  return fnv1a(s);
}

// ---------------------------------------------------------------------------
// Trajectory CSV

inline constexpr const char* kTrajectoryColumns = "t,body,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz";

struct TrajectoryFile {
  double h = 0.005;
  std::size_t bodies = 0, actuators = 0;
  std::uint64_t geometry_hash = 0;
  std::vector<Camera> cameras;
  std::vector<SceneStated> states;  // T + 1 entries

  std::size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
};

inline std::string camera_header(const Camera& c) {
  const Posed& p = c.T_cw;
  return fmt(c.fx) + " " + fmt(c.fy) + " " + fmt(c.cx) + " " + fmt(c.cy) + " " + std::to_string(c.width) + " " +
         std::to_string(c.height) + " " + fmt(p.position.x) + " " + fmt(p.position.y) + " " + fmt(p.position.z) + " " +
         fmt(p.orientation.w) + " " + fmt(p.orientation.x) + " " + fmt(p.orientation.y) + " " + fmt(p.orientation.z);
}

/// Header lines start with `#`; one row per entity per saved state. Actuator
/// rows use body index B + k with the position in p, identity orientation,
/// the commanded velocity in v and zero angular velocity.
inline std::string trajectory_csv(const TrajectoryFile& tf) {
  std::string out;
  out += "# diffcontact trajectory v" + std::to_string(kFormatVersion) + "\n";
  out += "# bodies " + std::to_string(tf.bodies) + "\n";
  out += "# actuators " + std::to_string(tf.actuators) + "\n";
  out += "# h " + fmt(tf.h) + "\n";
  out += "# steps " + std::to_string(tf.steps()) + "\n";
  out += "# geometry_hash " + hex64(tf.geometry_hash) + "\n";
  for (std::size_t i = 0; i < tf.cameras.size(); ++i) out += "# camera " + std::to_string(i) + " " + camera_header(tf.cameras[i]) + "\n";
  out += kTrajectoryColumns;
  out += "\n";
  for (std::size_t t = 0; t < tf.states.size(); ++t) {
    const SceneStated& x = tf.states[t];
    if (x.bodies.size() != tf.bodies || x.actuators.size() != tf.actuators)
      throw ValidationError("trajectory: state " + std::to_string(t) + " has the wrong entity count");
    for (std::size_t b = 0; b < x.bodies.size(); ++b) {
      const auto& s = x.bodies[b];
      const auto& p = s.pose.position;
      const auto& q = s.pose.orientation;
      const auto& v = s.twist.linear;
      const auto& w = s.twist.angular;
      out += std::to_string(t) + "," + std::to_string(b) + "," + fmt(p.x) + "," + fmt(p.y) + "," + fmt(p.z) + "," + fmt(q.w) +
             "," + fmt(q.x) + "," + fmt(q.y) + "," + fmt(q.z) + "," + fmt(v.x) + "," + fmt(v.y) + "," + fmt(v.z) + "," + fmt(w.x) +
             "," + fmt(w.y) + "," + fmt(w.z) + "\n";
    }
    for (std::size_t k = 0; k < x.actuators.size(); ++k) {
      const auto& a = x.actuators[k];
      out += std::to_string(t) + "," + std::to_string(tf.bodies + k) + "," + fmt(a.position.x) + "," + fmt(a.position.y) + "," +
             fmt(a.position.z) + ",1,0,0,0," + fmt(a.velocity.x) + "," + fmt(a.velocity.y) + "," + fmt(a.velocity.z) + ",0,0,0\n";
    }
  }
  return out;
}

inline void write_trajectory(const fs::path& path, const TrajectoryFile& tf) { write_text(path, trajectory_csv(tf)); }

inline TrajectoryFile make_trajectory_file(const Scene& scene, const std::vector<SceneStated>& states, double h,
                                           const std::vector<Camera>& cameras = {}) {
  TrajectoryFile tf;
  tf.h = h;
  tf.bodies = scene.num_bodies();
  tf.actuators = scene.num_actuators();
  tf.geometry_hash = geometry_hash(scene.geometry);
  tf.cameras = cameras;
  tf.states = states;
  return tf;
}

inline TrajectoryFile parse_trajectory(const std::string& text, const std::string& name = "trajectory") {
  TrajectoryFile tf;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> steps;
  bool have_bodies = false, have_actuators = false, have_h = false, have_columns = false, have_version = false;
  std::map<std::size_t, Camera> cams;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto tok = split_ws(line.substr(1));
      if (tok.empty()) continue;
      if (tok[0] == "diffcontact") {
        if (tok.size() != 3 || tok[1] != "trajectory" || tok[2] != "v" + std::to_string(kFormatVersion))
          throw ValidationError(where + ": unsupported trajectory version");
        have_version = true;
      } else if (tok[0] == "bodies" && tok.size() == 2) {
        tf.bodies = static_cast<std::size_t>(parse_double(tok[1], where));
        have_bodies = true;
      } else if (tok[0] == "actuators" && tok.size() == 2) {
        tf.actuators = static_cast<std::size_t>(parse_double(tok[1], where));
        have_actuators = true;
      } else if (tok[0] == "h" && tok.size() == 2) {
        tf.h = parse_double(tok[1], where);
        have_h = true;
      } else if (tok[0] == "steps" && tok.size() == 2) {
        steps = static_cast<std::size_t>(parse_double(tok[1], where));
      } else if (tok[0] == "geometry_hash" && tok.size() == 2) {
        tf.geometry_hash = std::stoull(tok[1], nullptr, 16);
      } else if (tok[0] == "camera" && tok.size() == 15) {
        Camera c;
        c.fx = parse_double(tok[2], where);
        c.fy = parse_double(tok[3], where);
        c.cx = parse_double(tok[4], where);
        c.cy = parse_double(tok[5], where);
        c.width = static_cast<int>(parse_double(tok[6], where));
        c.height = static_cast<int>(parse_double(tok[7], where));
        c.T_cw.position = {parse_double(tok[8], where), parse_double(tok[9], where), parse_double(tok[10], where)};
        c.T_cw.orientation = {parse_double(tok[11], where), parse_double(tok[12], where), parse_double(tok[13], where),
                              parse_double(tok[14], where)};
        cams[static_cast<std::size_t>(parse_double(tok[1], where))] = c;
      }
      continue;
    }
    if (!have_columns) {
      if (line != kTrajectoryColumns) throw ValidationError(where + ": expected column header '" + std::string(kTrajectoryColumns) + "'");
      if (!have_version || !have_bodies || !have_actuators || !have_h || !steps)
        throw ValidationError(where + ": incomplete trajectory header");
      tf.states.assign(*steps + 1, SceneStated{});
      for (auto& x : tf.states) {
        x.bodies.resize(tf.bodies);
        x.actuators.resize(tf.actuators);
      }
      have_columns = true;
      continue;
    }
    const auto col = split_csv(line);
    if (col.size() != 15) throw ValidationError(where + ": expected 15 columns");
    double v[15];
    for (int i = 0; i < 15; ++i) v[i] = parse_double(col[static_cast<std::size_t>(i)], where);
    const auto t = static_cast<std::size_t>(v[0]);
    const auto e = static_cast<std::size_t>(v[1]);
    if (v[0] < 0 || t >= tf.states.size() || v[1] < 0 || e >= tf.bodies + tf.actuators)
      throw ValidationError(where + ": row index out of range");
    if (e < tf.bodies) {
      auto& s = tf.states[t].bodies[e];
      s.pose.position = {v[2], v[3], v[4]};
      s.pose.orientation = {v[5], v[6], v[7], v[8]};
      s.twist.linear = {v[9], v[10], v[11]};
      s.twist.angular = {v[12], v[13], v[14]};
    } else {
      auto& a = tf.states[t].actuators[e - tf.bodies];
      a.position = {v[2], v[3], v[4]};
      a.velocity = {v[9], v[10], v[11]};
    }
  }
  if (!have_columns) throw ValidationError(name + ": missing column header");
  for (std::size_t i = 0; i < cams.size(); ++i) {
    if (!cams.count(i)) throw ValidationError(name + ": camera indices are not contiguous");
    tf.cameras.push_back(cams[i]);
  }
  return tf;
}

inline TrajectoryFile read_trajectory(const fs::path& path) { return parse_trajectory(read_text(path), path.string()); }

/// Actuator commands: `t,actuator,vx,vy,vz`, one row per step and actuator.
inline std::string actions_csv(const std::vector<ActionInputd>& actions) {
  std::string out = "t,actuator,vx,vy,vz\n";
  for (std::size_t t = 0; t < actions.size(); ++t) {
    if (!actions[t].impedance.empty()) throw ValidationError("actions file: impedance targets are not serializable");
    for (std::size_t k = 0; k < actions[t].actuator_velocity.size(); ++k) {
      const Vec3d& v = actions[t].actuator_velocity[k];
      out += std::to_string(t) + "," + std::to_string(k) + "," + fmt(v.x) + "," + fmt(v.y) + "," + fmt(v.z) + "\n";
    }
  }
  return out;
}

inline std::vector<ActionInputd> read_actions(const fs::path& path, std::size_t steps, std::size_t actuators) {
  std::istringstream in(read_text(path));
  std::vector<ActionInputd> acts(steps);
  for (auto& a : acts) a.actuator_velocity.assign(actuators, Vec3d{0.0, 0.0, 0.0});
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto col = split_csv(line);
    if (col.size() != 5) throw ValidationError(where + ": expected 5 columns");
    const double t = parse_double(col[0], where), k = parse_double(col[1], where);
    if (t < 0 || t >= static_cast<double>(steps) || k < 0 || k >= static_cast<double>(actuators))
      throw ValidationError(where + ": index out of range");
    acts[static_cast<std::size_t>(t)].actuator_velocity[static_cast<std::size_t>(k)] = {
        parse_double(col[2], where), parse_double(col[3], where), parse_double(col[4], where)};
  }
  return acts;
}

// ---------------------------------------------------------------------------
// JSON helpers

inline Vec3d vec3_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(what + ": expected an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json to_json(const Vec3d& v) { return json::array({v.x, v.y, v.z}); }

inline json to_json(const Quatd& q) { return json::array({q.w, q.x, q.y, q.z}); }

inline Quatd quat_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 4) throw ValidationError(what + ": expected [w, x, y, z]");
  const Quatd q{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  // Stored unit quaternions are kept bit-exact; anything else is normalized.
  const double n = std::sqrt(dot(q, q));
  if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError(what + ": quaternion has zero norm");
  return std::abs(n - 1.0) < 1e-12 ? q : normalized(q);
}

inline std::pair<double, double> pair_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) throw ValidationError(what + ": expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

/// Rejects keys outside `allowed` so typos fail loudly.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw ValidationError(what + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ValidationError(what + ": unknown key '" + it.key() + "'");
  }
}

inline json to_json(const Camera& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
          {"position", to_json(c.T_cw.position)}, {"orientation", to_json(c.T_cw.orientation)}};
}

/// Either explicit intrinsics + world→camera pose, or a look-at description.
inline Camera camera_from(const json& j) {
  Camera c;
  if (j.contains("eye")) {
    check_keys(j, {"eye", "target", "up", "width", "height", "fov_deg"}, "camera");
    int w = 64, h = 64;
    double fov = 60.0;
    read_opt(j, "width", w);
    read_opt(j, "height", h);
    read_opt(j, "fov_deg", fov);
    const Vec3d up = j.contains("up") ? vec3_from(j["up"], "camera.up") : Vec3d{0, 0, 1};
    c = Camera::look_at(vec3_from(j.at("eye"), "camera.eye"), vec3_from(j.at("target"), "camera.target"), up, w, h, fov);
  } else {
    check_keys(j, {"fx", "fy", "cx", "cy", "width", "height", "position", "orientation"}, "camera");
    read_opt(j, "fx", c.fx);
    read_opt(j, "fy", c.fy);
    read_opt(j, "cx", c.cx);
    read_opt(j, "cy", c.cy);
    read_opt(j, "width", c.width);
    read_opt(j, "height", c.height);
    if (j.contains("position")) c.T_cw.position = vec3_from(j["position"], "camera.position");
    if (j.contains("orientation")) c.T_cw.orientation = quat_from(j["orientation"], "camera.orientation");
  }
  c.validate();
  return c;
}

inline json to_json(const SoftSdfParams& s) {
  return {{"beta", s.beta}, {"gamma", s.gamma}, {"delta", s.delta}, {"margin", s.margin},
          {"max_contacts_per_pair", s.max_contacts_per_pair}};
}

inline SoftSdfParams sdf_from(const json& j) {
  check_keys(j, {"beta", "gamma", "delta", "margin", "max_contacts_per_pair"}, "sdf");
  SoftSdfParams s;
  read_opt(j, "beta", s.beta);
  read_opt(j, "gamma", s.gamma);
  read_opt(j, "delta", s.delta);
  read_opt(j, "margin", s.margin);
  read_opt(j, "max_contacts_per_pair", s.max_contacts_per_pair);
  s.validate();
  return s;
}

inline json to_json(const PhysParamsd& p) {
  json inertia = json::array();
  for (const auto& i : p.inertia) inertia.push_back(to_json(i));
  return {{"mass", p.mass}, {"inertia", inertia}, {"mu", p.mu}, {"stiffness", p.stiffness}, {"damping", p.damping}};
}

inline PhysParamsd params_from(const json& j) {
  check_keys(j, {"mass", "inertia", "mu", "stiffness", "damping"}, "params");
  PhysParamsd p;
  p.mass = j.at("mass").get<std::vector<double>>();
  for (const auto& i : j.at("inertia")) p.inertia.push_back(vec3_from(i, "params.inertia"));
  p.mu = j.at("mu").get<std::vector<double>>();
  p.stiffness = j.at("stiffness").get<std::vector<double>>();
  p.damping = j.at("damping").get<std::vector<double>>();
  return p;
}

// ---------------------------------------------------------------------------
// Scene description (dataset.json)

/// Everything needed to rebuild a simulation: geometry, materials, true
/// parameters, timing and cameras. Sphere tables live next to the JSON.
struct SceneFile {
  Scene scene;
  PhysParamsd params;
  double h = 0.005;
  std::size_t steps_per_frame = 1;
  std::vector<Camera> cameras;
};

inline json scene_to_json(const SceneFile& sf, const std::vector<std::string>& sphere_files) {
  const SceneGeometry& g = sf.scene.geometry;
  json bodies = json::array();
  for (std::size_t b = 0; b < g.bodies.size(); ++b) bodies.push_back({{"spheres", sphere_files[b]}, {"material", g.bodies[b].material}});
  json acts = json::array();
  for (const auto& a : g.actuators) {
    json pts = json::array();
    for (const auto& p : a.points) pts.push_back(to_json(p));
    acts.push_back({{"points", pts}, {"radius", a.radius}, {"material", a.material}});
  }
  json pairs = json::array();
  for (const auto& [a, b] : sf.scene.material_pairs) pairs.push_back(json::array({a, b}));
  json cams = json::array();
  for (const auto& c : sf.cameras) cams.push_back(to_json(c));
  json ground = nullptr;
  if (g.ground) ground = {{"normal", to_json(g.ground->normal)}, {"offset", g.ground->offset}, {"material", g.ground_material}};
  return {{"version", kFormatVersion},
          {"h", sf.h},
          {"steps_per_frame", sf.steps_per_frame},
          {"gravity", to_json(sf.scene.gravity)},
          {"bodies", bodies},
          {"ground", ground},
          {"actuators", acts},
          {"material_pairs", pairs},
          {"sdf", to_json(g.sdf)},
          {"n_d", g.n_d},
          {"params", to_json(sf.params)},
          {"cameras", cams}};
}

inline SceneFile scene_from_json(const json& j, const fs::path& base) {
  if (j.value("version", 0) != kFormatVersion) throw ValidationError("scene file: unsupported version");
  SceneFile sf;
  sf.h = j.at("h").get<double>();
  sf.steps_per_frame = j.at("steps_per_frame").get<std::size_t>();
  sf.scene.gravity = vec3_from(j.at("gravity"), "gravity");
  SceneGeometry& g = sf.scene.geometry;
  for (const auto& b : j.at("bodies")) {
    BodyGeom bg;
    bg.cloud = read_sphere_table(base / b.at("spheres").get<std::string>());
    bg.material = b.value("material", 1);
    g.bodies.push_back(std::move(bg));
  }
  if (j.at("ground").is_null()) {
    g.ground.reset();
  } else {
    const json& gr = j["ground"];
    g.ground = PlaneGeom{vec3_from(gr.at("normal"), "ground.normal"), gr.at("offset").get<double>()};
    g.ground_material = gr.value("material", 0);
  }
  for (const auto& a : j.at("actuators")) {
    ActuatorGeom ag;
    for (const auto& p : a.at("points")) ag.points.push_back(vec3_from(p, "actuator point"));
    ag.radius = a.at("radius").get<double>();
    ag.material = a.value("material", 2);
    g.actuators.push_back(std::move(ag));
  }
  sf.scene.material_pairs.clear();
  for (const auto& p : j.at("material_pairs")) sf.scene.material_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  g.sdf = sdf_from(j.at("sdf"));
  g.n_d = j.at("n_d").get<int>();
  sf.params = params_from(j.at("params"));
  for (const auto& c : j.at("cameras")) sf.cameras.push_back(camera_from(c));
  sf.scene.validate();
  validate(sf.params, sf.scene);
  if (!(sf.h > 0.0) || sf.steps_per_frame == 0) throw ValidationError("scene file: bad timing");
  return sf;
}

// ---------------------------------------------------------------------------
// Scenario config

/// Geometry source: {"block": {...}}, {"spheres": file} or {"points": file, "count": N}.
inline SphereCloudd geometry_from(const json& j, const fs::path& base, std::uint64_t seed, Vec3d* box_size) {
  if (j.contains("block")) {
    const json& b = j["block"];
    check_keys(b, {"size", "grid"}, "geometry.block");
    const Vec3d size = vec3_from(b.at("size"), "geometry.block.size");
    const auto grid = b.value("grid", std::vector<int>{2, 2, 2});
    if (grid.size() != 3) throw ValidationError("geometry.block.grid: expected 3 integers");
    if (box_size) *box_size = size;
    return make_block_cloud(size, grid[0], grid[1], grid[2]);
  }
  if (j.contains("spheres")) return read_sphere_table(base / j["spheres"].get<std::string>());
  if (j.contains("points")) {
    check_keys(j, {"points", "count", "iterations"}, "geometry");
    const auto pts = read_xyz(base / j["points"].get<std::string>());
    return fit_sphere_cloud(pts, j.at("count").get<std::size_t>(), j.value("iterations", std::size_t{200}), seed);
  }
  throw ValidationError("geometry: expected one of block, spheres, points");
}

/// Diagonal inertia of the bounding box of the cloud (used when none is given).
inline Vec3d bounding_box_inertia(const SphereCloudd& c, double mass) {
  Vec3d lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double r = c.radius(i);
    const Vec3d& p = c.centers[i];
    lo = {std::min(lo.x, p.x - r), std::min(lo.y, p.y - r), std::min(lo.z, p.z - r)};
    hi = {std::max(hi.x, p.x + r), std::max(hi.y, p.y + r), std::max(hi.z, p.z + r)};
  }
  return box_inertia(mass, hi - lo);
}

inline Range range_from(const json& j, const std::string& what) {
  const auto [lo, hi] = pair_from(j, what);
  Range r{lo, hi};
  r.validate(what);
  return r;
}

inline ScenarioConfig scenario_from_json(const json& j, const fs::path& base) {
  check_keys(j,
             {"scenario", "seed", "geometry", "mass", "inertia", "params", "sdf", "h", "steps", "test_steps",
              "steps_per_frame", "train_sequences", "test_sequences", "ranges", "pusher", "cameras", "render"},
             "scenario config");
  if (!j.contains("seed")) throw ValidationError("scenario config: seed is mandatory");
  ScenarioConfig c;
  c.kind = parse_scenario_kind(j.at("scenario").get<std::string>());
  c.seed = j["seed"].get<std::uint64_t>();
  Vec3d box{0, 0, 0};
  c.cloud = geometry_from(j.at("geometry"), base, c.seed, &box);
  read_opt(j, "mass", c.mass);
  if (j.contains("inertia")) {
    c.inertia = vec3_from(j["inertia"], "inertia");
  } else {
    c.inertia = box.x > 0.0 ? box_inertia(c.mass, box) : bounding_box_inertia(c.cloud, c.mass);
  }
  if (j.contains("params")) {
    const json& p = j["params"];
    check_keys(p, {"mu", "stiffness", "damping"}, "params");
    read_opt(p, "mu", c.mu);
    read_opt(p, "stiffness", c.stiffness);
    read_opt(p, "damping", c.damping);
  }
  if (j.contains("sdf")) c.sdf = sdf_from(j["sdf"]);
  read_opt(j, "h", c.h);
  read_opt(j, "steps", c.steps);
  read_opt(j, "test_steps", c.test_steps);
  read_opt(j, "steps_per_frame", c.steps_per_frame);
  read_opt(j, "train_sequences", c.train_sequences);
  read_opt(j, "test_sequences", c.test_sequences);
  if (j.contains("ranges")) {
    const json& r = j["ranges"];
    check_keys(r, {"height", "xy", "tilt_deg", "yaw_deg", "speed_xy", "speed_z", "spin"}, "ranges");
    const std::pair<const char*, Range*> fields[] = {{"height", &c.height},     {"xy", &c.xy},           {"tilt_deg", &c.tilt_deg},
                                                     {"yaw_deg", &c.yaw_deg},   {"speed_xy", &c.speed_xy}, {"speed_z", &c.speed_z},
                                                     {"spin", &c.spin}};
    for (const auto& [key, dst] : fields) {
      if (r.contains(key)) *dst = range_from(r[key], std::string("ranges.") + key);
    }
  }
  if (j.contains("pusher")) {
    const json& p = j["pusher"];
    check_keys(p, {"speed", "points", "width", "radius", "gap", "push_fraction"}, "pusher");
    if (p.contains("speed")) c.pusher.speed = range_from(p["speed"], "pusher.speed");
    read_opt(p, "points", c.pusher.points);
    read_opt(p, "width", c.pusher.width);
    read_opt(p, "radius", c.pusher.radius);
    read_opt(p, "gap", c.pusher.gap);
    read_opt(p, "push_fraction", c.pusher.push_fraction);
  }
  if (j.contains("cameras")) {
    for (const auto& cam : j["cameras"]) c.cameras.push_back(camera_from(cam));
  }
  read_opt(j, "render", c.render);
  c.validate();
  return c;
}

inline ScenarioConfig read_scenario(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  try {
    return scenario_from_json(j, path.parent_path());
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// MPC config

struct MpcTask {
  std::uint64_t seed = 0;
  double distance = 0.1;
  std::size_t steps = 100;
  MpcConfig config;
};

inline MpcTask mpc_from_json(const json& j) {
  check_keys(j,
             {"seed", "distance", "steps", "horizon", "iterations", "learning_rate", "action_bound", "w_pos", "w_rot",
              "w_act", "terminal_weight", "replan_stride", "substeps", "h", "fallback_population"},
             "mpc config");
  if (!j.contains("seed")) throw ValidationError("mpc config: seed is mandatory");
  MpcTask t;
  t.seed = j["seed"].get<std::uint64_t>();
  read_opt(j, "distance", t.distance);
  read_opt(j, "steps", t.steps);
  MpcConfig& c = t.config;
  read_opt(j, "horizon", c.horizon);
  read_opt(j, "iterations", c.iterations);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "action_bound", c.action_bound);
  read_opt(j, "w_pos", c.w_pos);
  read_opt(j, "w_rot", c.w_rot);
  read_opt(j, "w_act", c.w_act);
  read_opt(j, "terminal_weight", c.terminal_weight);
  read_opt(j, "replan_stride", c.replan_stride);
  read_opt(j, "substeps", c.substeps);
  read_opt(j, "h", c.h);
  read_opt(j, "fallback_population", c.fallback_population);
  return t;
}

inline MpcTask read_mpc(const fs::path& path) {
  try {
    return mpc_from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Parameter files: `key = v0 v1 ...` in physical units

inline std::string theta_text(const PhysParamsd& p) {
  auto line = [](const std::string& k, const std::vector<double>& v) {
    std::string s = k + " =";
    for (double x : v) s += " " + fmt(x);
    return s + "\n";
  };
  std::vector<double> inertia;
  for (const auto& i : p.inertia) inertia.insert(inertia.end(), {i.x, i.y, i.z});
  return "# diffcontact parameters v" + std::to_string(kFormatVersion) + "\n" + line("mass", p.mass) + line("inertia", inertia) +
         line("mu", p.mu) + line("stiffness", p.stiffness) + line("damping", p.damping);
}

inline void write_theta(const fs::path& path, const PhysParamsd& p) { write_text(path, theta_text(p)); }

inline PhysParamsd parse_theta(const std::string& text, const std::string& name = "parameters") {
  std::map<std::string, std::vector<double>> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() < 2 || tok[1] != "=") throw ValidationError(where + ": expected 'key = values'");
    std::vector<double> v;
    for (std::size_t i = 2; i < tok.size(); ++i) v.push_back(parse_double(tok[i], where));
    if (!kv.emplace(tok[0], v).second) throw ValidationError(where + ": duplicate key " + tok[0]);
  }
  for (const char* k : {"mass", "inertia", "mu", "stiffness", "damping"}) {
    if (!kv.count(k)) throw ValidationError(name + ": missing key " + k);
  }
  if (kv.size() != 5) throw ValidationError(name + ": unknown keys present");
  PhysParamsd p;
  p.mass = kv["mass"];
  const auto& in3 = kv["inertia"];
  if (in3.size() % 3 != 0) throw ValidationError(name + ": inertia needs 3 values per body");
  for (std::size_t i = 0; i < in3.size(); i += 3) p.inertia.push_back({in3[i], in3[i + 1], in3[i + 2]});
  p.mu = kv["mu"];
  p.stiffness = kv["stiffness"];
  p.damping = kv["damping"];
  return p;
}

inline PhysParamsd read_theta(const fs::path& path) { return parse_theta(read_text(path), path.string()); }

/// CSV with an iteration column followed by the named series.
inline void write_series_csv(const fs::path& path, const std::vector<std::string>& names,
                             const std::vector<std::vector<double>>& series) {
  std::string out = "iteration";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  std::size_t n = 0;
  for (const auto& s : series) n = std::max(n, s.size());
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(i);
    for (const auto& s : series) out += "," + (i < s.size() ? fmt(s[i]) : std::string());
    out += "\n";
  }
  write_text(path, out);
}

// ---------------------------------------------------------------------------
// Dataset directories
//
//   dataset.json            scene description (SceneFile)
//   spheres_<b>.txt         body sphere tables
//   <split>/seq_NNN.csv     full-rate trajectory
//   <split>/seq_NNN.actions.csv
//   <split>/seq_NNN.cam<C>.f32   frames at the frame stride, when rendered

struct SequenceFiles {
  Trajectory trajectory;
  std::vector<std::vector<SilhouetteImage>> images;  // [frame][camera]
};

struct DatasetFiles {
  SceneFile scene;
  std::vector<SequenceFiles> train, test;

  /// Observations of one split for the identification routines.
  Dataset observations(bool test_split) const {
    Dataset d;
    d.scene = scene.scene;
    d.h = scene.h;
    d.steps_per_frame = scene.steps_per_frame;
    d.cameras = scene.cameras;
    for (const auto& s : test_split ? test : train) {
      Observation o;
      o.x0 = s.trajectory.states.front();
      o.actions = s.trajectory.actions;
      o.states = frame_states(s.trajectory, scene.steps_per_frame, s.trajectory.steps() / scene.steps_per_frame + 1);
      o.images = s.images;
      d.sequences.push_back(std::move(o));
    }
    return d;
  }
};

inline std::string seq_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "seq_%03zu", i);
  return buf;
}

inline void write_sequences(const fs::path& dir, const SceneFile& sf, const std::vector<SequenceFiles>& seqs) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = seqs[i];
    const std::string stem = seq_name(i);
    write_trajectory(dir / (stem + ".csv"), make_trajectory_file(sf.scene, s.trajectory.states, s.trajectory.h, sf.cameras));
    write_text(dir / (stem + ".actions.csv"), actions_csv(s.trajectory.actions));
    for (std::size_t c = 0; c < sf.cameras.size() && !s.images.empty(); ++c) {
      std::vector<SilhouetteImage> frames;
      for (const auto& f : s.images) frames.push_back(f[c]);
      write_f32_frames((dir / (stem + ".cam" + std::to_string(c) + ".f32")).string(), frames);
    }
  }
}

inline void write_dataset(const fs::path& dir, const DatasetFiles& ds) {
  fs::create_directories(dir);
  std::vector<std::string> files;
  for (std::size_t b = 0; b < ds.scene.scene.num_bodies(); ++b) {
    files.push_back("spheres_" + std::to_string(b) + ".txt");
    write_sphere_table(dir / files.back(), ds.scene.scene.geometry.bodies[b].cloud);
  }
  write_text(dir / "dataset.json", scene_to_json(ds.scene, files).dump(2) + "\n");
  write_sequences(dir / "train", ds.scene, ds.train);
  write_sequences(dir / "test", ds.scene, ds.test);
}

inline std::vector<SequenceFiles> read_sequences(const fs::path& dir, const SceneFile& sf) {
  std::vector<SequenceFiles> out;
  if (!fs::exists(dir)) return out;
  for (std::size_t i = 0;; ++i) {
    const fs::path csv = dir / (seq_name(i) + ".csv");
    if (!fs::exists(csv)) break;
    const TrajectoryFile tf = read_trajectory(csv);
    if (tf.bodies != sf.scene.num_bodies() || tf.actuators != sf.scene.num_actuators())
      throw ValidationError(csv.string() + ": entity counts do not match the scene");
    if (tf.geometry_hash != geometry_hash(sf.scene.geometry))
      throw ValidationError(csv.string() + ": geometry hash does not match the scene");
    SequenceFiles s;
    s.trajectory.h = tf.h;
    s.trajectory.states = tf.states;
    s.trajectory.actions = read_actions(dir / (seq_name(i) + ".actions.csv"), tf.steps(), tf.actuators);
    for (std::size_t c = 0; c < sf.cameras.size(); ++c) {
      const fs::path f32 = dir / (seq_name(i) + ".cam" + std::to_string(c) + ".f32");
      if (!fs::exists(f32)) break;
      const auto frames = read_f32_frames(f32.string(), sf.cameras[c].width, sf.cameras[c].height);
      if (s.images.empty()) s.images.resize(frames.size());
      if (frames.size() != s.images.size()) throw ValidationError(f32.string() + ": frame count differs between cameras");
      for (std::size_t t = 0; t < frames.size(); ++t) s.images[t].push_back(frames[t]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline DatasetFiles read_dataset(const fs::path& dir) {
  DatasetFiles ds;
  try {
    ds.scene = scene_from_json(json::parse(read_text(dir / "dataset.json")), dir);
  } catch (const json::exception& e) {
    throw ValidationError((dir / "dataset.json").string() + ": " + e.what());
  }
  ds.train = read_sequences(dir / "train", ds.scene);
  ds.test = read_sequences(dir / "test", ds.scene);
  if (ds.train.empty() && ds.test.empty()) throw ValidationError(dir.string() + ": dataset has no sequences");
  return ds;
}

/// Generated scenario as dataset files.
inline DatasetFiles dataset_files(const ScenarioConfig& cfg, const GeneratedDataset& g) {
  DatasetFiles ds;
  ds.scene.scene = g.scene;
  ds.scene.params = g.params;
  ds.scene.h = cfg.h;
  ds.scene.steps_per_frame = cfg.steps_per_frame;
  ds.scene.cameras = cfg.render ? cfg.cameras : std::vector<Camera>{};
  for (const auto& s : g.train) ds.train.push_back({s.trajectory, s.images});
  for (const auto& s : g.test) ds.test.push_back({s.trajectory, s.images});
  return ds;
}

// ---------------------------------------------------------------------------
// Run manifests

inline constexpr const char* kToolVersion = "0.1.0";

/// argv, seed, per-input content hashes, tool version and wall time.
inline json make_manifest(const std::string& command, const std::vector<std::string>& args,
                          const std::map<std::string, std::string>& inputs, std::optional<std::uint64_t> seed,
                          double wall_seconds, const std::vector<std::string>& outputs) {
  json in = json::object();
  for (const auto& [k, path] : inputs) {
    std::string hash;
    if (fs::is_regular_file(path)) {
      hash = hex64(fnv1a(read_text(path)));
    } else if (fs::is_directory(path)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (const auto& f : files) {
        h = fnv1a(fs::relative(f, path).generic_string(), h);
        h = fnv1a(read_text(f), h);
      }
      hash = hex64(h);
    }
    in[k] = {{"path", fs::absolute(path).lexically_normal().string()}, {"fnv1a", hash}};
  }
  json m = {{"tool", "diffcontact"},
            {"version", kToolVersion},
            {"format_version", kFormatVersion},
            {"command", command},
            {"args", args},
            {"inputs", in},
            {"outputs", outputs},
            {"wall_seconds", wall_seconds}};
  m["seed"] = seed ? json(*seed) : json(nullptr);
  return m;
}

}  // namespace diffcontact::io
