#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stenoseg/errors.hpp"
#include "stenoseg/geometry.hpp"

namespace stenoseg::annotations {

enum class Provenance { human, pseudo };

const char* to_string(Provenance p);

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Category {
  std::int64_t id = 0;
  std::string name;
  friend bool operator==(const Category&, const Category&) = default;
};

// One stenosis instance. An instance may consist of several polygon parts;
// all geometry treats their union.
struct InstanceAnnotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  std::vector<geometry::Polygon> polygons;
  std::optional<double> score;  // present on predictions
  Provenance provenance = Provenance::human;
  friend bool operator==(const InstanceAnnotation&, const InstanceAnnotation&) = default;

  double area() const;                 // sum of part areas
  std::array<double, 4> bbox() const;  // [x, y, w, h] over all parts
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<InstanceAnnotation> annotations;
  std::vector<Category> categories;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Order-insensitive equality on collections keyed by id.
bool datasets_equal(const Dataset& a, const Dataset& b);

struct Violation {
  std::string entity;  // "image" | "annotation" | "category"
  std::int64_t id = 0;
  std::string rule;
  std::string str() const;
};

// Schema-level parse only: field types, polygon coordinate pairing, RLE
// rejection. Cross-reference invariants are left to validate_dataset, so a
// structurally readable but invalid file can still be inspected.
Dataset parse_dataset_lenient(const std::string& bytes);

// Full parse: schema plus invariants. Throws ParseError (with byte offset for
// syntax errors) or ValidationError naming the offending entity.
Dataset parse_dataset(const std::string& bytes);

// Inverse of parse_dataset on valid datasets. bbox and area are recomputed
// from the polygons; unknown keys from the input are not preserved.
std::string serialize_dataset(const Dataset& d);

// Empty result iff every type invariant holds.
std::vector<Violation> validate_dataset(const Dataset& d);

struct IdRemap {
  std::string source;  // "labeled" | "pseudo"
  std::string entity;  // "image" | "annotation" | "category"
  std::int64_t old_id = 0;
  std::int64_t new_id = 0;
};

struct MergeResult {
  Dataset dataset;
  std::vector<IdRemap> id_map;
};

// Concatenates two valid datasets: ids reindexed sequentially from 1 in
// (labeled, pseudo) order, category tables unified by name, provenance
// preserved. Duplicate file_name across the inputs is a MergeError.
MergeResult merge_datasets(const Dataset& labeled, const Dataset& pseudo);

std::string id_map_to_json(const std::vector<IdRemap>& map);

Dataset load_dataset_file(const std::filesystem::path& path);
void save_dataset_file(const Dataset& d, const std::filesystem::path& path);

}  // namespace stenoseg::annotations
