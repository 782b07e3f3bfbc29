#pragma once

// JSON and text file formats: sequence manifests, prediction files, scene
// recipes and evaluation reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "t4d/association.hpp"
#include "t4d/core.hpp"
#include "t4d/io/ply.hpp"
#include "t4d/metrics.hpp"
#include "t4d/synth.hpp"

namespace t4d {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Plumbing

/// Rounds to 6 significant digits so serialized floats are byte-stable.
inline double round6(double v) {
  if (!std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::strtod(buf, nullptr);
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::parse_failure, path.string() + ": " + e.what());
  }
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path.string());
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, dump_json(j)); }

namespace detail {

template <class T>
T get_field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorCode::parse_failure, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::parse_failure, where + ": field '" + key + "' has the wrong type");
  }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get_field<T>(j, key, where);
}

inline void check_schema(const Json& j, const std::string& where) {
  const int v = get_or<int>(j, "schema_version", kSchemaVersion, where);
  if (v != kSchemaVersion)
    throw Error(ErrorCode::unsupported_format, where + ": unsupported schema_version " + std::to_string(v));
}

inline std::vector<std::int64_t> read_int_column(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  std::vector<std::int64_t> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t used = 0;
    try {
      out.push_back(std::stoll(line, &used));
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != line.size())
      throw Error(ErrorCode::parse_failure, path.string() + ":" + std::to_string(row) + ": not an integer");
  }
  return out;
}

inline std::string int_column_text(const std::vector<std::int64_t>& v) {
  std::string s;
  for (auto x : v) {
    s += std::to_string(x);
    s += '\n';
  }
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Masks

/// (start, length) pairs over sorted indices.
inline std::vector<std::int64_t> rle_encode(const std::vector<PointIndex>& sorted) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[j - 1] + 1) ++j;
    out.push_back(sorted[i]);
    out.push_back(static_cast<std::int64_t>(j - i));
    i = j;
  }
  return out;
}

inline std::vector<PointIndex> rle_decode(const std::vector<std::int64_t>& runs) {
  if (runs.size() % 2 != 0) throw Error(ErrorCode::parse_failure, "RLE needs (start, length) pairs");
  std::vector<PointIndex> out;
  std::int64_t next_allowed = 0;
  for (std::size_t i = 0; i < runs.size(); i += 2) {
    const auto start = runs[i], len = runs[i + 1];
    if (start < next_allowed || len < 1 || start + len - 1 > std::numeric_limits<PointIndex>::max())
      throw Error(ErrorCode::parse_failure, "RLE does not decode to strictly increasing indices");
    for (std::int64_t k = 0; k < len; ++k) out.push_back(static_cast<PointIndex>(start + k));
    next_allowed = start + len;
  }
  return out;
}

/// Explicit lists and RLE objects are both accepted.
inline std::vector<PointIndex> mask_from_json(const Json& j, const std::string& where) {
  if (j.is_object()) {
    return rle_decode(detail::get_field<std::vector<std::int64_t>>(j, "rle", where));
  }
  if (!j.is_array()) throw Error(ErrorCode::parse_failure, where + ": mask must be a list or an RLE object");
  std::vector<PointIndex> out;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw Error(ErrorCode::parse_failure, where + ": mask indices must be non-negative integers");
    out.push_back(v.get<PointIndex>());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Predictions

struct PredictionFile {
  std::string sequence_id;
  std::vector<InstanceMask> instances;
  std::map<InstanceId, std::vector<double>> features;
  /// Stage of a single-stage prediction file, when declared.
  std::optional<StageIndex> stage;

  PredictionSet to_prediction_set() const { return {sequence_id, instances}; }

  /// The file as one stage's output of a single-scan method.
  StagePredictionSet to_stage_set() const {
    std::optional<StageIndex> t = stage;
    for (const auto& m : instances)
      for (const auto& [s, pts] : m.per_stage_points) {
        if (pts.empty()) continue;
        if (t && *t != s)
          throw Error(ErrorCode::invalid_argument, "prediction file covers more than one stage");
        t = s;
      }
    if (!t) throw Error(ErrorCode::invalid_argument, "cannot tell which stage the prediction file covers");
    StagePredictionSet out{*t, {}};
    for (const auto& m : instances) {
      StageMask sm{m.class_id, m.confidence, {}, std::nullopt};
      if (const auto* pts = m.points_at(*t)) sm.points = *pts;
      if (auto it = features.find(m.instance_id); it != features.end()) sm.feature = it->second;
      out.masks.push_back(std::move(sm));
    }
    return out;
  }
};

inline PredictionFile predictions_from_json(const Json& j) {
  const std::string where = "prediction file";
  detail::check_schema(j, where);
  PredictionFile f;
  f.sequence_id = detail::get_field<std::string>(j, "sequence_id", where);
  if (j.contains("stage")) f.stage = detail::get_field<StageIndex>(j, "stage", where);
  const auto& insts = j.contains("instances") ? j.at("instances") : Json::array();
  if (!insts.is_array()) throw Error(ErrorCode::parse_failure, where + ": instances must be a list");
  for (const auto& ij : insts) {
    InstanceMask m;
    m.instance_id = detail::get_field<InstanceId>(ij, "instance_id", where);
    const std::string w = where + " instance " + std::to_string(m.instance_id);
    m.class_id = detail::get_field<ClassId>(ij, "class_id", w);
    m.confidence = detail::get_or<double>(ij, "confidence", 1.0, w);
    if (ij.contains("masks")) {
      const auto& masks = ij.at("masks");
      if (!masks.is_object()) throw Error(ErrorCode::parse_failure, w + ": masks must map stage to indices");
      for (const auto& [key, val] : masks.items()) {
        StageIndex t = 0;
        try {
          std::size_t used = 0;
          t = std::stoi(key, &used);
          if (used != key.size()) throw std::invalid_argument(key);
        } catch (const std::logic_error&) {
          throw Error(ErrorCode::parse_failure, w + ": bad stage key '" + key + "'");
        }
        m.per_stage_points[t] = mask_from_json(val, w);
      }
    }
    if (ij.contains("feature")) f.features[m.instance_id] = detail::get_field<std::vector<double>>(ij, "feature", w);
    f.instances.push_back(std::move(m));
  }
  return f;
}

inline PredictionFile read_predictions(const std::filesystem::path& path) {
  return predictions_from_json(read_json(path));
}

inline Json predictions_to_json(const PredictionSet& preds, bool use_rle = true,
                                const std::map<InstanceId, std::vector<double>>& features = {}) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["sequence_id"] = preds.sequence_id;
  j["instances"] = Json::array();
  for (const auto& m : preds.instances) {
    Json ij;
    ij["instance_id"] = m.instance_id;
    ij["class_id"] = m.class_id;
    ij["confidence"] = round6(m.confidence);
    Json masks = Json::object();
    for (const auto& [t, pts] : m.per_stage_points) {
      if (use_rle) masks[std::to_string(t)] = Json{{"rle", rle_encode(pts)}};
      else masks[std::to_string(t)] = pts;
    }
    ij["masks"] = std::move(masks);
    if (auto it = features.find(m.instance_id); it != features.end()) {
      Json fv = Json::array();
      for (double v : it->second) fv.push_back(round6(v));
      ij["feature"] = std::move(fv);
    }
    j["instances"].push_back(std::move(ij));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Sequence manifests

struct StageFiles {
  StageIndex stage_index = 0;
  std::string point_file;
  std::string instance_file;
  std::string class_file;
};

struct LoadedSequence {
  SequencePointCloud sequence;
  GroundTruthAnnotation annotation;
};

inline Json annotation_to_json(const GroundTruthAnnotation& gt) {
  Json a;
  a["instances"] = Json::array();
  for (const auto& m : gt.instances) a["instances"].push_back({{"instance_id", m.instance_id}, {"class_id", m.class_id}});
  a["ambiguous_groups"] = Json::array();
  for (const auto& g : gt.ambiguous_groups)
    a["ambiguous_groups"].push_back({{"group_id", g.group_id}, {"members", g.member_instance_ids}});
  a["change_labels"] = Json::object();
  for (const auto& [id, c] : gt.change_labels) a["change_labels"][std::to_string(id)] = std::string(to_string(c));
  return a;
}

/// Loads a manifest and every file it references (paths relative to the
/// manifest). Ground-truth masks come from the per-point instance files.
inline LoadedSequence load_sequence(const std::filesystem::path& manifest_path) {
  const Json j = read_json(manifest_path);
  const std::string where = manifest_path.string();
  detail::check_schema(j, where);
  const auto base = manifest_path.parent_path();
  LoadedSequence out;
  out.sequence.sequence_id = detail::get_field<std::string>(j, "sequence_id", where);

  std::vector<StageFiles> files;
  for (const auto& sj : detail::get_field<Json>(j, "stages", where)) {
    files.push_back({detail::get_field<StageIndex>(sj, "stage_index", where),
                     detail::get_field<std::string>(sj, "point_file", where),
                     detail::get_or<std::string>(sj, "instance_file", "", where),
                     detail::get_or<std::string>(sj, "class_file", "", where)});
  }
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.stage_index < b.stage_index; });
  for (std::size_t t = 0; t < files.size(); ++t)
    if (files[t].stage_index != static_cast<StageIndex>(t))
      throw Error(ErrorCode::parse_failure, where + ": stage indices must be 0..T-1");

  const Json ann = j.contains("annotations") ? j.at("annotations") : Json::object();
  std::map<InstanceId, ClassId> declared;
  std::vector<InstanceId> order;
  if (ann.contains("instances"))
    for (const auto& ij : ann.at("instances")) {
      const auto id = detail::get_field<InstanceId>(ij, "instance_id", where);
      if (!declared.emplace(id, detail::get_field<ClassId>(ij, "class_id", where)).second)
        throw Error(ErrorCode::parse_failure, where + ": instance " + std::to_string(id) + " declared twice");
      order.push_back(id);
    }

  std::map<InstanceId, InstanceMask> masks;
  for (const auto& f : files) {
    auto cloud = read_ply(base / f.point_file);
    const auto n = cloud.point_count();
    if (!f.instance_file.empty()) {
      const auto ids = detail::read_int_column(base / f.instance_file);
      if (ids.size() != n)
        throw Error(ErrorCode::dimension_mismatch, f.instance_file + ": " + std::to_string(ids.size()) +
                                                       " rows for " + std::to_string(n) + " points");
      std::vector<std::int64_t> classes;
      if (!f.class_file.empty()) {
        classes = detail::read_int_column(base / f.class_file);
        if (classes.size() != n)
          throw Error(ErrorCode::dimension_mismatch, f.class_file + ": " + std::to_string(classes.size()) +
                                                         " rows for " + std::to_string(n) + " points");
      }
      for (std::size_t p = 0; p < n; ++p) {
        if (ids[p] == kNoInstance) continue;
        auto [it, fresh] = masks.try_emplace(ids[p]);
        auto& m = it->second;
        if (fresh) {
          m.instance_id = ids[p];
          if (auto d = declared.find(ids[p]); d != declared.end()) m.class_id = d->second;
          else if (!classes.empty()) m.class_id = static_cast<ClassId>(classes[p]);
          else throw Error(ErrorCode::parse_failure, where + ": class of instance " + std::to_string(ids[p]) + " unknown");
          if (!declared.count(ids[p])) {
            declared[ids[p]] = m.class_id;
            order.push_back(ids[p]);
          }
        }
        if (!classes.empty() && classes[p] != m.class_id)
          throw Error(ErrorCode::parse_failure, f.class_file + ": class of instance " + std::to_string(ids[p]) +
                                                    " disagrees with the annotation");
        m.per_stage_points[f.stage_index].push_back(static_cast<PointIndex>(p));
      }
    }
    out.sequence.stages.push_back(std::move(cloud));
  }
  for (auto id : order) {
    auto it = masks.find(id);
    if (it != masks.end()) out.annotation.instances.push_back(std::move(it->second));
    else out.annotation.instances.push_back({id, declared[id], {}, 1.0});
  }

  if (ann.contains("ambiguous_groups"))
    for (const auto& gj : ann.at("ambiguous_groups"))
      out.annotation.ambiguous_groups.push_back({detail::get_field<int>(gj, "group_id", where),
                                                 detail::get_field<std::vector<InstanceId>>(gj, "members", where)});
  if (ann.contains("change_labels"))
    for (const auto& [key, val] : ann.at("change_labels").items()) {
      InstanceId id = 0;
      try {
        id = std::stoll(key);
      } catch (const std::logic_error&) {
        throw Error(ErrorCode::parse_failure, where + ": bad change label key '" + key + "'");
      }
      try {
        out.annotation.change_labels[id] = change_type_from_string(val.get<std::string>());
      } catch (const Json::exception&) {
        throw Error(ErrorCode::parse_failure, where + ": change label must be a string");
      } catch (const Error&) {
        throw Error(ErrorCode::parse_failure, where + ": unknown change label '" + val.dump() + "'");
      }
    }
  return out;
}

/// Writes stage_<t>.ply, stage_<t>_instances.txt, stage_<t>_classes.txt and
/// manifest.json into `dir`. Returns the manifest path.
inline std::filesystem::path write_sequence(const std::filesystem::path& dir, const SequencePointCloud& seq,
                                            const GroundTruthAnnotation& gt, const PlyWriteOptions& ply = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io_failure, "cannot create " + dir.string() + ": " + ec.message());
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["sequence_id"] = seq.sequence_id;
  j["stages"] = Json::array();
  for (int t = 0; t < seq.stage_count(); ++t) {
    const auto& st = seq.stages[static_cast<std::size_t>(t)];
    std::vector<std::int64_t> ids(st.point_count(), kNoInstance), classes(st.point_count(), -1);
    for (const auto& m : gt.instances)
      if (const auto* pts = m.points_at(t))
        for (auto p : *pts) {
          if (p >= ids.size()) throw Error(ErrorCode::out_of_range, "mask point index out of range");
          ids[p] = m.instance_id;
          classes[p] = m.class_id;
        }
    const std::string stem = "stage_" + std::to_string(t);
    write_ply(dir / (stem + ".ply"), st, ply);
    write_text(dir / (stem + "_instances.txt"), detail::int_column_text(ids));
    write_text(dir / (stem + "_classes.txt"), detail::int_column_text(classes));
    j["stages"].push_back({{"stage_index", t},
                           {"point_file", stem + ".ply"},
                           {"instance_file", stem + "_instances.txt"},
                           {"class_file", stem + "_classes.txt"}});
  }
  j["annotations"] = annotation_to_json(gt);
  const auto path = dir / "manifest.json";
  write_json(path, j);
  return path;
}

// ---------------------------------------------------------------------------
// Recipes

inline Vec3 vec3_from_json(const Json& j, const std::string& where) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::parse_failure, where + ": expected a 3-vector");
  return {v[0], v[1], v[2]};
}

inline ChangeStep change_from_json(const Json& j, const std::string& where) {
  ChangeStep c;
  const auto type = detail::get_field<std::string>(j, "type", where);
  if (type == "static") c.kind = ChangeKind::static_object;
  else if (type == "rigid") c.kind = ChangeKind::rigid;
  else if (type == "non_rigid") c.kind = ChangeKind::non_rigid;
  else if (type == "swap") c.kind = ChangeKind::swap;
  else if (type == "add") c.kind = ChangeKind::add;
  else if (type == "remove") c.kind = ChangeKind::remove;
  else throw Error(ErrorCode::parse_failure, where + ": unknown change type '" + type + "'");
  if (j.contains("translation")) c.translation = vec3_from_json(j.at("translation"), where);
  c.yaw = detail::get_or<double>(j, "yaw", c.yaw, where);
  c.amplitude = detail::get_or<double>(j, "amplitude", c.amplitude, where);
  c.wavelength = detail::get_or<double>(j, "wavelength", c.wavelength, where);
  return c;
}

/// A recipe either lists its objects or asks for a random scene with
/// {"random": {"n_objects": N, ...}}.
inline SceneRecipe recipe_from_json(const Json& j) {
  const std::string where = "recipe";
  detail::check_schema(j, where);
  const auto seed = detail::get_or<std::uint64_t>(j, "seed", 0, where);
  const auto n_stages = detail::get_or<int>(j, "n_stages", 2, where);
  SceneRecipe r;
  if (j.contains("random")) {
    const auto& rj = j.at("random");
    RandomRecipeOptions o;
    o.min_points = detail::get_or<int>(rj, "min_points", o.min_points, where);
    o.max_points = detail::get_or<int>(rj, "max_points", o.max_points, where);
    o.n_classes = detail::get_or<int>(rj, "n_classes", o.n_classes, where);
    o.p_rigid = detail::get_or<double>(rj, "p_rigid", o.p_rigid, where);
    o.p_non_rigid = detail::get_or<double>(rj, "p_non_rigid", o.p_non_rigid, where);
    o.p_add_remove = detail::get_or<double>(rj, "p_add_remove", o.p_add_remove, where);
    o.n_ambiguous_pairs = detail::get_or<int>(rj, "n_ambiguous_pairs", o.n_ambiguous_pairs, where);
    o.background_points = detail::get_or<int>(rj, "background_points", o.background_points, where);
    if (o.min_points < 1 || o.max_points < o.min_points || o.n_classes < 1)
      throw Error(ErrorCode::invalid_argument, where + ": bad random point or class ranges");
    r = make_random_recipe(seed, detail::get_field<int>(rj, "n_objects", where), n_stages, o);
  }
  r.seed = seed;
  r.n_stages = n_stages;
  r.sequence_id = detail::get_or<std::string>(j, "sequence_id", r.sequence_id, where);
  r.background_points = detail::get_or<int>(j, "background_points", r.background_points, where);
  r.placement_retries = detail::get_or<int>(j, "placement_retries", r.placement_retries, where);
  if (j.contains("room")) {
    const auto room = j.at("room").get<std::vector<double>>();
    if (room.size() != 2) throw Error(ErrorCode::parse_failure, where + ": room must be [x, y]");
    r.room = {room[0], room[1]};
  }
  if (j.contains("objects"))
    for (const auto& oj : j.at("objects")) {
      ObjectSpec o;
      const auto shape = detail::get_or<std::string>(oj, "shape", "box", where);
      if (shape == "box") o.shape = Shape::box;
      else if (shape == "sphere") o.shape = Shape::sphere;
      else throw Error(ErrorCode::parse_failure, where + ": unknown shape '" + shape + "'");
      if (oj.contains("size")) {
        if (oj.at("size").is_number()) {
          const double s = oj.at("size").get<double>();
          o.size = {s, s, s};
        } else {
          o.size = vec3_from_json(oj.at("size"), where);
        }
      }
      o.class_id = detail::get_or<ClassId>(oj, "class_id", 0, where);
      o.points = detail::get_or<int>(oj, "points", o.points, where);
      if (oj.contains("position")) o.position = vec3_from_json(oj.at("position"), where);
      if (oj.contains("changes"))
        for (const auto& cj : oj.at("changes")) o.changes.push_back(change_from_json(cj, where));
      r.objects.push_back(std::move(o));
    }
  if (j.contains("ambiguous_groups"))
    for (const auto& gj : j.at("ambiguous_groups")) r.ambiguous_groups.push_back(gj.get<std::vector<std::size_t>>());
  return r;
}

// ---------------------------------------------------------------------------
// Reports

inline Json optional_number(const std::optional<double>& v) {
  return v ? Json(round6(*v)) : Json(nullptr);
}

inline Json report_to_json(const EvaluationReport& r, bool per_change_type = false) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["sequence_id"] = r.sequence_id;
  Json th = Json::array();
  for (double t : r.thresholds) th.push_back(round6(t));
  j["thresholds"] = th;
  j["t_map"] = optional_number(r.t_map);
  j["t_map50"] = optional_number(r.t_map50);
  j["t_map25"] = optional_number(r.t_map25);
  j["t_mprec"] = optional_number(r.t_mprec);
  j["t_mrec"] = optional_number(r.t_mrec);
  j["per_class"] = Json::array();
  for (const auto& c : r.classes) {
    Json cj;
    cj["class_id"] = c.class_id;
    cj["n_gt"] = c.n_gt;
    cj["n_pred"] = c.n_pred;
    cj["ap"] = optional_number(c.ap_sweep);
    cj["ap50"] = optional_number(c.ap50);
    cj["ap25"] = optional_number(c.ap25);
    cj["per_threshold"] = Json::array();
    for (const auto& t : c.per_threshold)
      cj["per_threshold"].push_back({{"threshold", round6(t.threshold)},
                                     {"ap", optional_number(t.ap)},
                                     {"tp", t.tp},
                                     {"fp", t.fp},
                                     {"fn", t.fn},
                                     {"precision", optional_number(t.precision)},
                                     {"recall", optional_number(t.recall)}});
    j["per_class"].push_back(std::move(cj));
  }
  if (per_change_type) {
    Json pc = Json::object();
    for (const auto& [ct, v] : r.per_change_recall) pc[std::string(to_string(ct))] = round6(v);
    j["per_change_recall"] = std::move(pc);
  }
  return j;
}

}  // namespace t4d
