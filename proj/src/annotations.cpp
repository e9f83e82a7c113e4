#include "stenoseg/annotations.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json_util.hpp"

namespace stenoseg::annotations {

using nlohmann::json;

const char* to_string(Provenance p) {
  return p == Provenance::human ? "human" : "pseudo";
}

double InstanceAnnotation::area() const {
  double total = 0.0;
  for (const auto& poly : polygons) total += geometry::polygon_area(poly);
  return total;
}

std::array<double, 4> InstanceAnnotation::bbox() const {
  double minx = std::numeric_limits<double>::infinity();
  double miny = std::numeric_limits<double>::infinity();
  double maxx = -std::numeric_limits<double>::infinity();
  double maxy = -std::numeric_limits<double>::infinity();
  for (const auto& poly : polygons)
    for (const auto& p : poly) {
      minx = std::min(minx, p.x);
      miny = std::min(miny, p.y);
      maxx = std::max(maxx, p.x);
      maxy = std::max(maxy, p.y);
    }
  if (polygons.empty()) return {0, 0, 0, 0};
  return {minx, miny, maxx - minx, maxy - miny};
}

std::string Violation::str() const {
  return entity + " " + std::to_string(id) + ": " + rule;
}

namespace detail {

std::int64_t require_int(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number_integer())
    throw ParseError(where + ": missing or non-integer field '" + key + "'");
  return obj[key].get<std::int64_t>();
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_string())
    throw ParseError(where + ": missing or non-string field '" + key + "'");
  return obj[key].get<std::string>();
}

double require_number(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number())
    throw ParseError(where + ": missing or non-numeric field '" + key + "'");
  return obj[key].get<double>();
}

Dataset dataset_from_json(const json& root) {
  if (!root.is_object()) throw ParseError("dataset root must be a JSON object");
  Dataset d;
  if (root.contains("images")) {
    if (!root["images"].is_array()) throw ParseError("'images' must be a list");
    for (const auto& jim : root["images"]) {
      if (!jim.is_object()) throw ParseError("image entry must be an object");
      ImageRecord im;
      im.id = require_int(jim, "id", "image");
      const std::string where = "image " + std::to_string(im.id);
      im.file_name = require_string(jim, "file_name", where);
      im.width = static_cast<int>(require_int(jim, "width", where));
      im.height = static_cast<int>(require_int(jim, "height", where));
      d.images.push_back(std::move(im));
    }
  }
  if (root.contains("annotations")) {
    if (!root["annotations"].is_array()) throw ParseError("'annotations' must be a list");
    for (const auto& ja : root["annotations"]) {
      if (!ja.is_object()) throw ParseError("annotation entry must be an object");
      InstanceAnnotation a;
      a.id = require_int(ja, "id", "annotation");
      const std::string where = "annotation " + std::to_string(a.id);
      a.image_id = require_int(ja, "image_id", where);
      a.category_id = require_int(ja, "category_id", where);
      if (!ja.contains("segmentation"))
        throw ParseError(where + ": missing field 'segmentation'");
      const auto& seg = ja["segmentation"];
      if (seg.is_object())
        throw ValidationError(where + ": RLE-encoded segmentation is not supported; "
                                      "polygon lists are required");
      if (!seg.is_array()) throw ParseError(where + ": 'segmentation' must be a list");
      for (const auto& part : seg) {
        if (!part.is_array())
          throw ParseError(where + ": segmentation parts must be flat coordinate lists");
        if (part.size() % 2 != 0)
          throw ParseError(where + ": segmentation list has odd length " +
                           std::to_string(part.size()));
        geometry::Polygon poly;
        poly.reserve(part.size() / 2);
        for (std::size_t i = 0; i + 1 < part.size(); i += 2) {
          if (!part[i].is_number() || !part[i + 1].is_number())
            throw ParseError(where + ": segmentation coordinates must be numbers");
          poly.push_back({part[i].get<double>(), part[i + 1].get<double>()});
        }
        a.polygons.push_back(std::move(poly));
      }
      if (ja.contains("score")) {
        if (!ja["score"].is_number()) throw ParseError(where + ": 'score' must be a number");
        a.score = ja["score"].get<double>();
      }
      if (ja.contains("provenance")) {
        if (!ja["provenance"].is_string())
          throw ParseError(where + ": 'provenance' must be a string");
        const std::string prov = ja["provenance"].get<std::string>();
        if (prov == "human") a.provenance = Provenance::human;
        else if (prov == "pseudo") a.provenance = Provenance::pseudo;
        else throw ParseError(where + ": unknown provenance '" + prov + "'");
      }
      d.annotations.push_back(std::move(a));
    }
  }
  if (root.contains("categories")) {
    if (!root["categories"].is_array()) throw ParseError("'categories' must be a list");
    for (const auto& jc : root["categories"]) {
      if (!jc.is_object()) throw ParseError("category entry must be an object");
      Category c;
      c.id = require_int(jc, "id", "category");
      c.name = require_string(jc, "name", "category " + std::to_string(c.id));
      d.categories.push_back(std::move(c));
    }
  }
  return d;
}

json dataset_to_json(const Dataset& d) {
  json root;
  root["images"] = json::array();
  for (const auto& im : d.images)
    root["images"].push_back({{"id", im.id},
                              {"file_name", im.file_name},
                              {"width", im.width},
                              {"height", im.height}});
  root["annotations"] = json::array();
  for (const auto& a : d.annotations) {
    json seg = json::array();
    for (const auto& poly : a.polygons) {
      json flat = json::array();
      for (const auto& p : poly) {
        flat.push_back(p.x);
        flat.push_back(p.y);
      }
      seg.push_back(std::move(flat));
    }
    json ja = {{"id", a.id},
               {"image_id", a.image_id},
               {"category_id", a.category_id},
               {"segmentation", std::move(seg)}};
    const auto bb = a.bbox();
    ja["bbox"] = {bb[0], bb[1], bb[2], bb[3]};
    ja["area"] = a.area();
    if (a.score) ja["score"] = *a.score;
    if (a.provenance == Provenance::pseudo) ja["provenance"] = "pseudo";
    root["annotations"].push_back(std::move(ja));
  }
  root["categories"] = json::array();
  for (const auto& c : d.categories)
    root["categories"].push_back({{"id", c.id}, {"name", c.name}});
  return root;
}

}  // namespace detail

Dataset parse_dataset_lenient(const std::string& bytes) {
  json root;
  try {
    root = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed dataset file: ") + e.what(), e.byte);
  }
  return detail::dataset_from_json(root);
}

Dataset parse_dataset(const std::string& bytes) {
  Dataset d = parse_dataset_lenient(bytes);
  const auto violations = validate_dataset(d);
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << "dataset violates " << violations.size() << " invariant(s): ";
    for (std::size_t i = 0; i < violations.size(); ++i) {
      if (i) msg << "; ";
      msg << violations[i].str();
    }
    throw ValidationError(msg.str());
  }
  return d;
}

std::string serialize_dataset(const Dataset& d) {
  return detail::dataset_to_json(d).dump(2) + "\n";
}

std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  std::unordered_set<std::int64_t> image_ids;
  for (const auto& im : d.images) {
    if (!image_ids.insert(im.id).second)
      out.push_back({"image", im.id, "duplicate id"});
    if (im.width <= 0) out.push_back({"image", im.id, "width must be > 0"});
    if (im.height <= 0) out.push_back({"image", im.id, "height must be > 0"});
  }
  std::unordered_set<std::int64_t> category_ids;
  for (const auto& c : d.categories)
    if (!category_ids.insert(c.id).second)
      out.push_back({"category", c.id, "duplicate id"});
  std::unordered_set<std::int64_t> annotation_ids;
  for (const auto& a : d.annotations) {
    if (!annotation_ids.insert(a.id).second)
      out.push_back({"annotation", a.id, "duplicate id"});
    if (!image_ids.count(a.image_id))
      out.push_back({"annotation", a.id,
                     "image_id " + std::to_string(a.image_id) + " does not resolve"});
    if (!category_ids.count(a.category_id))
      out.push_back({"annotation", a.id,
                     "category_id " + std::to_string(a.category_id) + " does not resolve"});
    if (a.polygons.empty())
      out.push_back({"annotation", a.id, "segmentation has no polygons"});
    for (const auto& poly : a.polygons)
      if (poly.size() < 3) {
        out.push_back({"annotation", a.id, "polygon has >=3 vertices rule broken (got " +
                                               std::to_string(poly.size()) + ")"});
        break;
      }
    if (a.score && (*a.score < 0.0 || *a.score > 1.0))
      out.push_back({"annotation", a.id, "score outside [0,1]"});
  }
  return out;
}

namespace {

template <typename T>
std::vector<T> sorted_by_id(std::vector<T> v) {
  std::sort(v.begin(), v.end(), [](const T& a, const T& b) { return a.id < b.id; });
  return v;
}

}  // namespace

bool datasets_equal(const Dataset& a, const Dataset& b) {
  return sorted_by_id(a.images) == sorted_by_id(b.images) &&
         sorted_by_id(a.annotations) == sorted_by_id(b.annotations) &&
         sorted_by_id(a.categories) == sorted_by_id(b.categories);
}

MergeResult merge_datasets(const Dataset& labeled, const Dataset& pseudo) {
  for (const auto* in : {&labeled, &pseudo}) {
    const auto v = validate_dataset(*in);
    if (!v.empty())
      throw MergeError(std::string("merge input '") +
                       (in == &labeled ? "labeled" : "pseudo") +
                       "' is invalid: " + v.front().str());
  }
  std::unordered_set<std::string> names;
  for (const auto& im : labeled.images) names.insert(im.file_name);
  for (const auto& im : pseudo.images)
    if (names.count(im.file_name))
      throw MergeError("duplicate file_name across inputs: " + im.file_name);

  MergeResult res;
  struct Source {
    const char* name;
    const Dataset* d;
  };
  const Source sources[2] = {{"labeled", &labeled}, {"pseudo", &pseudo}};

  // Categories unified by name, reindexed from 1 in first-seen order.
  std::map<std::string, std::int64_t> category_by_name;
  std::unordered_map<std::int64_t, std::int64_t> category_remap[2];
  std::int64_t next_category = 1;
  for (int s = 0; s < 2; ++s)
    for (const auto& c : sources[s].d->categories) {
      auto [it, inserted] = category_by_name.emplace(c.name, next_category);
      if (inserted) {
        res.dataset.categories.push_back({next_category, c.name});
        ++next_category;
      }
      category_remap[s][c.id] = it->second;
      res.id_map.push_back({sources[s].name, "category", c.id, it->second});
    }

  std::unordered_map<std::int64_t, std::int64_t> image_remap[2];
  std::int64_t next_image = 1;
  for (int s = 0; s < 2; ++s)
    for (const auto& im : sources[s].d->images) {
      image_remap[s][im.id] = next_image;
      res.id_map.push_back({sources[s].name, "image", im.id, next_image});
      res.dataset.images.push_back({next_image, im.file_name, im.width, im.height});
      ++next_image;
    }

  std::int64_t next_annotation = 1;
  for (int s = 0; s < 2; ++s)
    for (const auto& a : sources[s].d->annotations) {
      InstanceAnnotation copy = a;
      copy.id = next_annotation;
      copy.image_id = image_remap[s][a.image_id];
      copy.category_id = category_remap[s][a.category_id];
      res.id_map.push_back({sources[s].name, "annotation", a.id, next_annotation});
      res.dataset.annotations.push_back(std::move(copy));
      ++next_annotation;
    }
  return res;
}

std::string id_map_to_json(const std::vector<IdRemap>& map) {
  json root;
  for (const char* entity : {"image", "annotation", "category"}) {
    json arr = json::array();
    for (const auto& r : map)
      if (r.entity == entity)
        arr.push_back({{"source", r.source}, {"old_id", r.old_id}, {"new_id", r.new_id}});
    root[std::string(entity) + "s"] = std::move(arr);
  }
  return root.dump(2) + "\n";
}

Dataset load_dataset_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_dataset(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte_offset);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_dataset_file(const Dataset& d, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset file: " + path.string());
  out << serialize_dataset(d);
}

}  // namespace stenoseg::annotations
