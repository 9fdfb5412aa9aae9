#include "selfcal/robot_io.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace selfcal {

using nlohmann::json;

namespace {

json pose_to_json(const Pose& p) {
  return {{"translation", {p.translation.x(), p.translation.y(), p.translation.z()}},
          {"rotation", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}}};
}

Vec3 vec3_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3)
    throw IoError(where + ": expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Pose pose_from_json(const json& j, const std::string& where) {
  Pose p;
  if (j.contains("translation"))
    p.translation = vec3_from_json(j.at("translation"), where + ".translation");
  if (j.contains("rotation")) {
    const auto& r = j.at("rotation");
    if (!r.is_array() || r.size() != 4)
      throw IoError(where + ".rotation: expected [w,x,y,z]");
    p.rotation = Quat(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(),
                      r[3].get<double>());
    if (std::abs(p.rotation.norm() - 1.0) > 1e-9)
      throw IoError(where + ".rotation: quaternion not unit length");
  }
  return p;
}

std::map<std::string, std::vector<Taxel>> load_taxel_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open taxel CSV: " + path.string());
  std::map<std::string, std::vector<Taxel>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string patch, tid, x, y, z;
    if (!std::getline(ss, patch, ',') || !std::getline(ss, tid, ',') ||
        !std::getline(ss, x, ',') || !std::getline(ss, y, ',') ||
        !std::getline(ss, z, ','))
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": expected patch_id,taxel_id,x,y,z");
    if (patch == "patch_id") continue;  // header
    out[patch].push_back({std::stoi(tid), {std::stod(x), std::stod(y), std::stod(z)}});
  }
  return out;
}

}  // namespace

std::string robot_to_json(const RobotModel& model) {
  json j;
  j["schema"] = 1;
  j["frames"] = json::array();
  for (const auto& f : model.frames) {
    json jf{{"id", f.id}, {"parent", f.parent}};
    if (f.is_dh()) {
      const DHLink& l = f.dh();
      jf["type"] = "dh";
      jf["a"] = l.a;
      jf["d"] = l.d;
      jf["alpha"] = l.alpha;
      jf["theta_offset"] = l.theta_offset;
      jf["joint"] = l.joint_kind == JointKind::Revolute ? "revolute" : "fixed";
      jf["limits"] = {l.limit_lo, l.limit_hi};
    } else {
      jf["type"] = "mount";
      jf.update(pose_to_json(f.mount().pose));
      jf["calibratable"] = f.mount().calibratable;
    }
    j["frames"].push_back(jf);
  }
  j["chains"] = json::object();
  for (const auto& [name, path] : model.named_chains) j["chains"][name] = path;

  // persist the mask as the exact list of free parameter names
  auto layout = parameter_layout(model);
  json mask = json::array();
  for (size_t i = 0; i < layout.size() && i < model.calibration_mask.size(); ++i)
    if (model.calibration_mask[i]) mask.push_back(layout[i].name);
  j["mask"] = mask;

  j["cameras"] = json::array();
  for (const auto& c : model.cameras) {
    json jc{{"id", c.id},   {"parent", c.parent}, {"fx", c.fx},
            {"fy", c.fy},   {"cx", c.cx},         {"cy", c.cy},
            {"width", c.width}, {"height", c.height},
            {"calibratable", c.mount.calibratable}};
    jc["mount"] = pose_to_json(c.mount.pose);
    j["cameras"].push_back(jc);
  }
  j["markers"] = json::array();
  for (const auto& m : model.markers) {
    json jm{{"id", m.id},
            {"parent", m.parent},
            {"position", {m.position.x(), m.position.y(), m.position.z()}},
            {"calibratable", m.calibratable}};
    jm["mount"] = pose_to_json(m.mount.pose);
    j["markers"].push_back(jm);
  }
  j["taxel_patches"] = json::array();
  for (const auto& p : model.taxel_patches) {
    json jp{{"id", p.id},
            {"parent", p.parent},
            {"calibratable", p.mount.calibratable}};
    jp["mount"] = pose_to_json(p.mount.pose);
    jp["taxels"] = json::array();
    for (const auto& t : p.taxels)
      jp["taxels"].push_back(
          {{"id", t.id}, {"position", {t.position.x(), t.position.y(), t.position.z()}}});
    j["taxel_patches"].push_back(jp);
  }
  j["planes"] = json::array();
  for (const auto& p : model.planes)
    j["planes"].push_back({{"id", p.id},
                           {"azimuth", p.normal_azimuth},
                           {"elevation", p.normal_elevation},
                           {"offset", p.offset},
                           {"calibratable", p.calibratable}});
  j["external_devices"] = json::array();
  for (const auto& d : model.external_devices) {
    json jd{{"id", d.id}, {"noise_sigma", d.noise_sigma}, {"calibratable", d.calibratable}};
    jd["pose"] = pose_to_json(d.pose);
    j["external_devices"].push_back(jd);
  }
  return j.dump(2);
}

RobotModel robot_from_json(const std::string& text,
                           const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("robot description is not valid JSON: ") + e.what());
  }
  if (j.value("schema", 1) != 1) throw IoError("unsupported robot schema version");

  RobotModel model;
  for (const auto& jf : j.value("frames", json::array())) {
    Frame f;
    f.id = jf.at("id").get<std::string>();
    f.parent = jf.value("parent", std::string("root"));
    std::string type = jf.value("type", std::string("dh"));
    if (type == "dh") {
      DHLink l;
      l.a = jf.value("a", 0.0);
      l.d = jf.value("d", 0.0);
      l.alpha = wrap_angle(jf.value("alpha", 0.0));
      l.theta_offset = wrap_angle(jf.value("theta_offset", 0.0));
      std::string joint = jf.value("joint", std::string("revolute"));
      if (joint != "revolute" && joint != "fixed")
        throw IoError("frame '" + f.id + "': unknown joint kind '" + joint + "'");
      l.joint_kind = joint == "revolute" ? JointKind::Revolute : JointKind::Fixed;
      if (jf.contains("limits")) {
        l.limit_lo = jf["limits"][0].get<double>();
        l.limit_hi = jf["limits"][1].get<double>();
      }
      f.local = l;
    } else if (type == "mount") {
      MountTransform m;
      m.pose = pose_from_json(jf, "frame '" + f.id + "'");
      m.calibratable = jf.value("calibratable", false);
      f.local = m;
    } else {
      throw IoError("frame '" + f.id + "': unknown type '" + type + "'");
    }
    model.frames.push_back(f);
  }
  const json chains = j.value("chains", json::object());
  for (const auto& [name, path] : chains.items())
    model.named_chains[name] = path.get<std::vector<std::string>>();

  for (const auto& jc : j.value("cameras", json::array())) {
    CameraModel c;
    c.id = jc.at("id").get<std::string>();
    c.parent = jc.at("parent").get<std::string>();
    c.fx = jc.at("fx").get<double>();
    c.fy = jc.at("fy").get<double>();
    c.cx = jc.at("cx").get<double>();
    c.cy = jc.at("cy").get<double>();
    c.width = jc.at("width").get<int>();
    c.height = jc.at("height").get<int>();
    if (jc.contains("mount"))
      c.mount.pose = pose_from_json(jc["mount"], "camera '" + c.id + "' mount");
    c.mount.calibratable = jc.value("calibratable", false);
    model.cameras.push_back(c);
  }
  for (const auto& jm : j.value("markers", json::array())) {
    MarkerPoint m;
    m.id = jm.at("id").get<std::string>();
    m.parent = jm.at("parent").get<std::string>();
    m.position = vec3_from_json(jm.at("position"), "marker '" + m.id + "' position");
    if (jm.contains("mount"))
      m.mount.pose = pose_from_json(jm["mount"], "marker '" + m.id + "' mount");
    m.calibratable = jm.value("calibratable", false);
    model.markers.push_back(m);
  }
  std::map<std::string, std::vector<Taxel>> csv_taxels;
  if (j.contains("taxel_csv"))
    csv_taxels = load_taxel_csv(base_dir / j["taxel_csv"].get<std::string>());
  for (const auto& jp : j.value("taxel_patches", json::array())) {
    TaxelPatch p;
    p.id = jp.at("id").get<std::string>();
    p.parent = jp.at("parent").get<std::string>();
    if (jp.contains("mount"))
      p.mount.pose = pose_from_json(jp["mount"], "patch '" + p.id + "' mount");
    p.mount.calibratable = jp.value("calibratable", false);
    for (const auto& jt : jp.value("taxels", json::array()))
      p.taxels.push_back({jt.at("id").get<int>(),
                          vec3_from_json(jt.at("position"), "taxel position")});
    if (auto it = csv_taxels.find(p.id); it != csv_taxels.end())
      p.taxels.insert(p.taxels.end(), it->second.begin(), it->second.end());
    model.taxel_patches.push_back(p);
  }
  for (const auto& jp : j.value("planes", json::array()))
    model.planes.push_back({jp.at("id").get<std::string>(), jp.value("azimuth", 0.0),
                            jp.value("elevation", 0.0), jp.value("offset", 0.0),
                            jp.value("calibratable", false)});
  for (const auto& jd : j.value("external_devices", json::array())) {
    ExternalDevice d;
    d.id = jd.at("id").get<std::string>();
    if (jd.contains("pose"))
      d.pose = pose_from_json(jd["pose"], "device '" + d.id + "' pose");
    d.noise_sigma = jd.value("noise_sigma", 0.0);
    d.calibratable = jd.value("calibratable", false);
    model.external_devices.push_back(d);
  }

  model.calibration_mask.assign(parameter_layout(model).size(), 0);
  for (const auto& pattern : j.value("mask", json::array()))
    set_mask(model, pattern.get<std::string>());

  validate_model(model);
  return model;
}

RobotModel load_robot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open robot file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return robot_from_json(buf.str(), path.parent_path());
}

void save_robot(const RobotModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write robot file: " + path.string());
  out << robot_to_json(model) << "\n";
}

}  // namespace selfcal
