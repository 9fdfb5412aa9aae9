#include "selfcal/measurements.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace selfcal {

using nlohmann::json;

std::string kind_name(MeasurementKind k) {
  switch (k) {
    case MeasurementKind::SelfContact: return "self_contact";
    case MeasurementKind::PlaneContact: return "plane_contact";
    case MeasurementKind::SelfObservation: return "self_observation";
    case MeasurementKind::External: return "external";
  }
  return "unknown";
}

std::optional<MeasurementKind> kind_from_name(const std::string& name) {
  if (name == "self_contact") return MeasurementKind::SelfContact;
  if (name == "plane_contact") return MeasurementKind::PlaneContact;
  if (name == "self_observation") return MeasurementKind::SelfObservation;
  if (name == "external") return MeasurementKind::External;
  return std::nullopt;
}

int Measurement::residual_dim() const {
  switch (kind) {
    case MeasurementKind::SelfContact: return 3;
    case MeasurementKind::PlaneContact: return 1;
    case MeasurementKind::SelfObservation: return 2;
    case MeasurementKind::External: return 3;
  }
  return 0;
}

namespace {

json measurement_to_json(const Measurement& m) {
  json j;
  j["kind"] = kind_name(m.kind);
  j["q"] = std::vector<double>(m.q.data(), m.q.data() + m.q.size());
  switch (m.kind) {
    case MeasurementKind::SelfContact: {
      const auto& p = std::get<SelfContactPayload>(m.payload);
      j["point_a"] = p.point_a;
      j["point_b"] = p.point_b;
      if (p.contact_offset != 0.0) j["contact_offset"] = p.contact_offset;
      break;
    }
    case MeasurementKind::PlaneContact: {
      const auto& p = std::get<PlaneContactPayload>(m.payload);
      j["point"] = p.point;
      j["plane"] = p.plane_id;
      break;
    }
    case MeasurementKind::SelfObservation: {
      const auto& p = std::get<SelfObservationPayload>(m.payload);
      j["camera"] = p.camera_id;
      j["marker"] = p.marker_id;
      j["pixel"] = {p.pixel.x(), p.pixel.y()};
      break;
    }
    case MeasurementKind::External: {
      const auto& p = std::get<ExternalPayload>(m.payload);
      j["point"] = p.point;
      j["device"] = p.device_id;
      j["measured"] = {p.measured.x(), p.measured.y(), p.measured.z()};
      break;
    }
  }
  return j;
}

Measurement measurement_from_json(const json& j, int record) {
  auto fail = [record](const std::string& field, const std::string& why) -> void {
    throw DatasetError("record " + std::to_string(record) + ", field '" + field +
                       "': " + why);
  };
  Measurement m;
  auto kind = kind_from_name(j.value("kind", std::string()));
  if (!kind) fail("kind", "unknown measurement kind '" + j.value("kind", std::string()) + "'");
  m.kind = *kind;
  if (!j.contains("q") || !j["q"].is_array()) fail("q", "missing joint vector");
  auto qv = j["q"].get<std::vector<double>>();
  m.q = Eigen::Map<Eigen::VectorXd>(qv.data(), qv.size());
  try {
    switch (m.kind) {
      case MeasurementKind::SelfContact: {
        SelfContactPayload p;
        p.point_a = j.at("point_a").get<std::string>();
        p.point_b = j.at("point_b").get<std::string>();
        p.contact_offset = j.value("contact_offset", 0.0);
        m.payload = p;
        break;
      }
      case MeasurementKind::PlaneContact: {
        PlaneContactPayload p;
        p.point = j.at("point").get<std::string>();
        p.plane_id = j.at("plane").get<std::string>();
        m.payload = p;
        break;
      }
      case MeasurementKind::SelfObservation: {
        SelfObservationPayload p;
        p.camera_id = j.at("camera").get<std::string>();
        p.marker_id = j.at("marker").get<std::string>();
        const auto& px = j.at("pixel");
        p.pixel = {px.at(0).get<double>(), px.at(1).get<double>()};
        m.payload = p;
        break;
      }
      case MeasurementKind::External: {
        ExternalPayload p;
        p.point = j.at("point").get<std::string>();
        p.device_id = j.at("device").get<std::string>();
        const auto& v = j.at("measured");
        p.measured = {v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()};
        m.payload = p;
        break;
      }
    }
  } catch (const json::exception& e) {
    fail("payload", e.what());
  }
  return m;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write dataset: " + path.string());
  json header;
  header["schema"] = 1;
  header["sigmas"] = json::object();
  for (const auto& [kind, sigma] : dataset.sigmas)
    header["sigmas"][kind_name(kind)] = sigma;
  header["provenance"] = {{"note", dataset.provenance.note},
                          {"seed", dataset.provenance.seed}};
  out << header.dump() << "\n";
  for (const auto& m : dataset.measurements) out << measurement_to_json(m).dump() << "\n";
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("dataset is empty: " + path.string());

  Dataset ds;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DatasetError(std::string("dataset header is not valid JSON: ") + e.what());
  }
  if (header.value("schema", -1) != 1)
    throw DatasetError("unsupported dataset schema version");
  const json sigmas = header.value("sigmas", json::object());
  for (const auto& [name, sigma] : sigmas.items()) {
    auto kind = kind_from_name(name);
    if (!kind) throw DatasetError("header names unknown kind '" + name + "'");
    ds.sigmas[*kind] = sigma.get<double>();
  }
  if (header.contains("provenance")) {
    ds.provenance.note = header["provenance"].value("note", std::string());
    ds.provenance.seed = header["provenance"].value("seed", std::uint64_t(0));
  }

  int record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DatasetError("record " + std::to_string(record) + ": invalid JSON: " + e.what());
    }
    ds.measurements.push_back(measurement_from_json(j, record));
    ++record;
  }
  if (ds.measurements.empty())
    throw DatasetError("dataset must be non-empty: " + path.string());
  return ds;
}

std::vector<std::string> validate_dataset(const Dataset& dataset,
                                          const RobotModel& model) {
  std::vector<std::string> errors;
  if (dataset.measurements.empty()) errors.push_back("dataset: non-empty measurement list required");
  for (const auto& [kind, sigma] : dataset.sigmas)
    if (!(sigma > 0.0))
      errors.push_back("sigma for kind '" + kind_name(kind) + "' must be positive");

  int nq = model.joint_count();
  for (size_t i = 0; i < dataset.measurements.size(); ++i) {
    const auto& m = dataset.measurements[i];
    auto err = [&](const std::string& field, const std::string& why) {
      errors.push_back("record " + std::to_string(i) + ", field '" + field + "': " + why);
    };
    if (m.q.size() != nq)
      err("q", "length " + std::to_string(m.q.size()) + " != joint count " + std::to_string(nq));
    if (!m.q.allFinite()) err("q", "non-finite value");
    if (!dataset.sigmas.count(m.kind))
      err("kind", "no sigma declared for kind '" + kind_name(m.kind) + "'");
    switch (m.kind) {
      case MeasurementKind::SelfContact: {
        const auto& p = std::get<SelfContactPayload>(m.payload);
        if (!point_exists(model, p.point_a)) err("point_a", "unresolvable id '" + p.point_a + "'");
        if (!point_exists(model, p.point_b)) err("point_b", "unresolvable id '" + p.point_b + "'");
        break;
      }
      case MeasurementKind::PlaneContact: {
        const auto& p = std::get<PlaneContactPayload>(m.payload);
        if (!point_exists(model, p.point)) err("point", "unresolvable id '" + p.point + "'");
        bool found = std::any_of(model.planes.begin(), model.planes.end(),
                                 [&](const PlaneParam& pl) { return pl.id == p.plane_id; });
        if (!found) err("plane", "unknown plane id '" + p.plane_id + "'");
        break;
      }
      case MeasurementKind::SelfObservation: {
        const auto& p = std::get<SelfObservationPayload>(m.payload);
        const CameraModel* cam = nullptr;
        for (const auto& c : model.cameras)
          if (c.id == p.camera_id) cam = &c;
        if (!cam) {
          err("camera", "unknown camera id '" + p.camera_id + "'");
        } else if (p.pixel.x() < 0 || p.pixel.x() > cam->width || p.pixel.y() < 0 ||
                   p.pixel.y() > cam->height) {
          err("pixel", "outside camera resolution");
        }
        bool found = std::any_of(model.markers.begin(), model.markers.end(),
                                 [&](const MarkerPoint& mk) { return mk.id == p.marker_id; });
        if (!found) err("marker", "unknown marker id '" + p.marker_id + "'");
        break;
      }
      case MeasurementKind::External: {
        const auto& p = std::get<ExternalPayload>(m.payload);
        if (!point_exists(model, p.point)) err("point", "unresolvable id '" + p.point + "'");
        bool found = std::any_of(model.external_devices.begin(), model.external_devices.end(),
                                 [&](const ExternalDevice& d) { return d.id == p.device_id; });
        if (!found) err("device", "unknown device id '" + p.device_id + "'");
        if (!p.measured.allFinite()) err("measured", "non-finite value");
        break;
      }
    }
  }
  return errors;
}

namespace {

std::pair<Dataset, Dataset> build_split(const Dataset& dataset,
                                        const std::vector<bool>& to_train) {
  Dataset train, test;
  train.sigmas = test.sigmas = dataset.sigmas;
  train.provenance = test.provenance = dataset.provenance;
  for (size_t i = 0; i < dataset.measurements.size(); ++i)
    (to_train[i] ? train : test).measurements.push_back(dataset.measurements[i]);
  return {train, test};
}

}  // namespace

std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction,
                                  std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw DatasetError("split fraction must lie in (0,1)");
  std::map<MeasurementKind, std::vector<size_t>> by_kind;
  for (size_t i = 0; i < dataset.measurements.size(); ++i)
    by_kind[dataset.measurements[i].kind].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<bool> to_train(dataset.measurements.size(), false);
  for (auto& [kind, indices] : by_kind) {
    std::shuffle(indices.begin(), indices.end(), rng);
    size_t n_train = static_cast<size_t>(std::floor(indices.size() * fraction));
    for (size_t k = 0; k < n_train; ++k) to_train[indices[k]] = true;
  }
  return build_split(dataset, to_train);
}

namespace {

// Representative workspace position of a record under the given model.
Vec3 record_position(const Measurement& m, const RobotModel& model) {
  switch (m.kind) {
    case MeasurementKind::SelfContact:
      return point_world(model, m.q, std::get<SelfContactPayload>(m.payload).point_a);
    case MeasurementKind::PlaneContact:
      return point_world(model, m.q, std::get<PlaneContactPayload>(m.payload).point);
    case MeasurementKind::SelfObservation:
      return marker_world(model, m.q,
                          model.marker(std::get<SelfObservationPayload>(m.payload).marker_id));
    case MeasurementKind::External:
      return point_world(model, m.q, std::get<ExternalPayload>(m.payload).point);
  }
  return Vec3::Zero();
}

}  // namespace

std::pair<Dataset, Dataset> split_workspace(const Dataset& dataset,
                                            const RobotModel& model, int axis) {
  if (axis < 0 || axis > 2) throw DatasetError("workspace split axis must be 0, 1 or 2");
  std::map<MeasurementKind, std::vector<std::pair<double, size_t>>> by_kind;
  for (size_t i = 0; i < dataset.measurements.size(); ++i) {
    double coord = record_position(dataset.measurements[i], model)(axis);
    by_kind[dataset.measurements[i].kind].push_back({coord, i});
  }
  std::vector<bool> to_train(dataset.measurements.size(), false);
  for (auto& [kind, coords] : by_kind) {
    std::sort(coords.begin(), coords.end());
    size_t half = coords.size() / 2;  // lower workspace half trains
    for (size_t k = 0; k < half; ++k) to_train[coords[k].second] = true;
  }
  return build_split(dataset, to_train);
}

Dataset import_external_csv(const std::filesystem::path& path, int joint_count,
                            const std::string& point_id,
                            const std::string& device_id, double sigma) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open CSV: " + path.string());
  Dataset ds;
  ds.sigmas[MeasurementKind::External] = sigma;
  ds.provenance.note = "imported from " + path.filename().string();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::vector<double> vals;
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        vals.push_back(std::stod(tok));
      } catch (const std::exception&) {
        if (lineno == 1) { vals.clear(); break; }  // header row
        throw DatasetError(path.string() + ":" + std::to_string(lineno) +
                           ": non-numeric field '" + tok + "'");
      }
    }
    if (vals.empty()) continue;
    if (static_cast<int>(vals.size()) != joint_count + 3)
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                         std::to_string(joint_count) + " joints + x,y,z");
    Measurement m;
    m.kind = MeasurementKind::External;
    m.q = Eigen::Map<Eigen::VectorXd>(vals.data(), joint_count);
    ExternalPayload p;
    p.point = point_id;
    p.device_id = device_id;
    p.measured = {vals[joint_count], vals[joint_count + 1], vals[joint_count + 2]};
    m.payload = p;
    ds.measurements.push_back(m);
  }
  if (ds.measurements.empty()) throw DatasetError("CSV contained no records");
  return ds;
}

Dataset filter_kinds(const Dataset& dataset,
                     const std::vector<MeasurementKind>& kinds) {
  Dataset out;
  out.provenance = dataset.provenance;
  for (auto k : kinds)
    if (auto it = dataset.sigmas.find(k); it != dataset.sigmas.end())
      out.sigmas[k] = it->second;
  for (const auto& m : dataset.measurements)
    if (std::find(kinds.begin(), kinds.end(), m.kind) != kinds.end())
      out.measurements.push_back(m);
  return out;
}

}  // namespace selfcal
