#include <doctest.h>

#include <random>
#include <set>

#include "stenoseg/annotations.hpp"
#include "support/fixtures.hpp"

using namespace stenoseg;
using namespace stenoseg::annotations;

namespace {

const char* kMinimalFile = R"({
  "images": [{"id": 1, "file_name": "a.png", "width": 512, "height": 512}],
  "annotations": [{"id": 1, "image_id": 1, "category_id": 1,
                   "segmentation": [[10.0, 10.0, 40.0, 12.0, 25.0, 30.0]],
                   "bbox": [10, 10, 30, 20], "area": 123.0}],
  "categories": [{"id": 1, "name": "stenosis"}]
})";

}  // namespace

TEST_CASE("parse_dataset: minimal well-formed file") {
  const auto d = parse_dataset(kMinimalFile);
  CHECK(d.images.size() == 1);
  CHECK(d.annotations.size() == 1);
  CHECK(d.images[0].id == 1);
  CHECK(d.images[0].width == 512);
  CHECK(d.images[0].height == 512);
  CHECK(d.annotations[0].polygons.size() == 1);
  CHECK(d.annotations[0].polygons[0].size() == 3);
}

TEST_CASE("parse_dataset: four-vertex polygon, no score, defaults to human provenance") {
  // Field-by-field against a manual reference parse of the fixture.
  const char* file = R"({
    "images": [{"id": 7, "file_name": "x.png", "width": 64, "height": 32}],
    "annotations": [{"id": 3, "image_id": 7, "category_id": 2,
                     "segmentation": [[1.5, 2.0, 10.0, 2.0, 10.0, 9.0, 1.5, 9.0]]}],
    "categories": [{"id": 2, "name": "stenosis"}]
  })";
  const auto d = parse_dataset(file);
  REQUIRE(d.annotations.size() == 1);
  const auto& a = d.annotations[0];
  CHECK(a.id == 3);
  CHECK(a.image_id == 7);
  CHECK(a.category_id == 2);
  REQUIRE(a.polygons.size() == 1);
  REQUIRE(a.polygons[0].size() == 4);
  CHECK(a.polygons[0][0] == geometry::Point{1.5, 2.0});
  CHECK(a.polygons[0][1] == geometry::Point{10.0, 2.0});
  CHECK(a.polygons[0][2] == geometry::Point{10.0, 9.0});
  CHECK(a.polygons[0][3] == geometry::Point{1.5, 9.0});
  CHECK(!a.score.has_value());
  CHECK(a.provenance == Provenance::human);
}

TEST_CASE("parse_dataset: dangling image reference names the annotation") {
  const char* file = R"({
    "images": [{"id": 1, "file_name": "a.png", "width": 8, "height": 8}],
    "annotations": [{"id": 5, "image_id": 99, "category_id": 1,
                     "segmentation": [[0,0, 4,0, 4,4]]}],
    "categories": [{"id": 1, "name": "stenosis"}]
  })";
  CHECK_THROWS_WITH_AS(parse_dataset(file),
                       doctest::Contains("annotation 5"), ValidationError);
}

TEST_CASE("parse_dataset: malformed syntax reports a byte offset") {
  try {
    parse_dataset("{\"images\": [}");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset > 0);
  }
}

TEST_CASE("parse_dataset: RLE segmentation is rejected, not skipped") {
  const char* file = R"({
    "images": [{"id": 1, "file_name": "a.png", "width": 8, "height": 8}],
    "annotations": [{"id": 2, "image_id": 1, "category_id": 1,
                     "segmentation": {"counts": "abc", "size": [8, 8]}}],
    "categories": [{"id": 1, "name": "stenosis"}]
  })";
  CHECK_THROWS_WITH_AS(parse_dataset(file), doctest::Contains("RLE"), ValidationError);
}

TEST_CASE("parse_dataset: odd-length flat list is a parse error") {
  const char* file = R"({
    "images": [{"id": 1, "file_name": "a.png", "width": 8, "height": 8}],
    "annotations": [{"id": 2, "image_id": 1, "category_id": 1,
                     "segmentation": [[0,0, 4,0, 4]]}],
    "categories": [{"id": 1, "name": "stenosis"}]
  })";
  CHECK_THROWS_AS(parse_dataset(file), ParseError);
}

TEST_CASE("parse_dataset: unknown top-level keys are ignored") {
  std::string file = kMinimalFile;
  file.insert(1, "\"info\": {\"year\": 2023}, \"licenses\": [],");
  const auto d = parse_dataset(file);
  CHECK(d.images.size() == 1);
}

TEST_CASE("serialize_dataset: empty dataset round-trips") {
  const Dataset empty;
  const auto d = parse_dataset(serialize_dataset(empty));
  CHECK(d == empty);
}

TEST_CASE("serialize_dataset: one-image round trip is the identity") {
  const auto d = parse_dataset(kMinimalFile);
  CHECK(datasets_equal(parse_dataset(serialize_dataset(d)), d));
}

TEST_CASE("serialize_dataset: recomputes bbox and area from polygons") {
  const auto d = parse_dataset(kMinimalFile);
  const auto text = serialize_dataset(d);
  // bbox of the triangle (10,10),(40,12),(25,30)
  CHECK(text.find("\"bbox\"") != std::string::npos);
  const auto bb = d.annotations[0].bbox();
  CHECK(bb[0] == 10.0);
  CHECK(bb[1] == 10.0);
  CHECK(bb[2] == 30.0);
  CHECK(bb[3] == 20.0);
}

TEST_CASE("round trip holds on random datasets") {
  std::mt19937_64 rng(37);
  for (int it = 0; it < 50; ++it) {
    const auto d = fixtures::random_dataset(rng, 1 + static_cast<int>(rng() % 100));
    CHECK(datasets_equal(parse_dataset(serialize_dataset(d)), d));
  }
}

TEST_CASE("validate_dataset: valid dataset yields no violations") {
  CHECK(validate_dataset(parse_dataset(kMinimalFile)).empty());
}

TEST_CASE("validate_dataset: two-vertex polygon is flagged") {
  auto d = parse_dataset(kMinimalFile);
  d.annotations[0].polygons[0].resize(2);
  const auto v = validate_dataset(d);
  REQUIRE(v.size() == 1);
  CHECK(v[0].entity == "annotation");
  CHECK(v[0].id == 1);
  CHECK(v[0].rule.find(">=3 vertices") != std::string::npos);
}

TEST_CASE("validate_dataset: duplicate image id is flagged once") {
  auto d = parse_dataset(kMinimalFile);
  auto im = d.images[0];
  im.file_name = "b.png";
  im.id = 7;
  d.images.push_back(im);
  d.images.push_back(im);
  const auto v = validate_dataset(d);
  REQUIRE(v.size() == 1);
  CHECK(v[0].entity == "image");
  CHECK(v[0].id == 7);
  CHECK(v[0].rule.find("duplicate") != std::string::npos);
}

TEST_CASE("validate_dataset: single-fault injection is detected") {
  std::mt19937_64 rng(41);
  for (int it = 0; it < 40; ++it) {
    auto d = fixtures::random_dataset(rng, 3);
    if (d.annotations.empty()) continue;
    REQUIRE(validate_dataset(d).empty());
    switch (rng() % 6) {
      case 0: d.images[0].width = 0; break;
      case 1: d.images[0].height = -3; break;
      case 2: d.annotations[0].image_id = 424242; break;
      case 3: d.annotations[0].category_id = 424242; break;
      case 4: d.annotations[0].polygons[0].resize(2); break;
      case 5: d.annotations[0].score = 1.5; break;
    }
    CHECK(!validate_dataset(d).empty());
  }
}

TEST_CASE("merge_datasets: image and annotation counts add up") {
  std::mt19937_64 rng(43);
  const auto a = fixtures::random_dataset(rng, 2);
  const auto b = fixtures::random_dataset(rng, 3, false, true);
  // distinct file names across inputs
  auto b2 = b;
  for (auto& im : b2.images) im.file_name = "other_" + im.file_name;
  const auto res = merge_datasets(a, b2);
  CHECK(res.dataset.images.size() == 5);
  CHECK(res.dataset.annotations.size() == a.annotations.size() + b2.annotations.size());
  CHECK(validate_dataset(res.dataset).empty());
}

TEST_CASE("merge_datasets: empty pseudo side is identity up to reindexing") {
  std::mt19937_64 rng(47);
  const auto a = fixtures::random_dataset(rng, 4);
  const auto res = merge_datasets(a, Dataset{});
  CHECK(res.dataset.images.size() == a.images.size());
  CHECK(res.dataset.annotations.size() == a.annotations.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(res.dataset.images[i].file_name == a.images[i].file_name);
    CHECK(res.dataset.images[i].width == a.images[i].width);
    CHECK(res.dataset.images[i].id == static_cast<std::int64_t>(i + 1));
  }
  for (std::size_t i = 0; i < a.annotations.size(); ++i)
    CHECK(res.dataset.annotations[i].polygons == a.annotations[i].polygons);
}

TEST_CASE("merge_datasets: duplicate file_name across inputs is an error") {
  std::mt19937_64 rng(53);
  const auto a = fixtures::random_dataset(rng, 2);
  auto b = fixtures::random_dataset(rng, 2);
  b.images[0].file_name = a.images[0].file_name;
  CHECK_THROWS_AS(merge_datasets(a, b), MergeError);
}

TEST_CASE("merge_datasets: invalid input is rejected") {
  std::mt19937_64 rng(59);
  const auto a = fixtures::random_dataset(rng, 2);
  auto bad = fixtures::random_dataset(rng, 2);
  bad.images[0].width = 0;
  CHECK_THROWS_AS(merge_datasets(a, bad), MergeError);
}

TEST_CASE("merge_datasets: no id collisions and pseudo annotations are recoverable") {
  std::mt19937_64 rng(61);
  for (int it = 0; it < 30; ++it) {
    const auto a = fixtures::random_dataset(rng, 1 + static_cast<int>(rng() % 5));
    auto b = fixtures::random_dataset(rng, 1 + static_cast<int>(rng() % 5), false, true);
    for (auto& im : b.images) im.file_name = "p_" + im.file_name;
    for (auto& ann : b.annotations) ann.provenance = Provenance::pseudo;
    for (auto& ann : const_cast<Dataset&>(a).annotations) ann.provenance = Provenance::human;
    const auto res = merge_datasets(a, b);

    std::set<std::int64_t> image_ids, ann_ids;
    for (const auto& im : res.dataset.images) CHECK(image_ids.insert(im.id).second);
    for (const auto& ann : res.dataset.annotations) CHECK(ann_ids.insert(ann.id).second);

    std::vector<InstanceAnnotation> recovered;
    for (const auto& ann : res.dataset.annotations)
      if (ann.provenance == Provenance::pseudo) recovered.push_back(ann);
    REQUIRE(recovered.size() == b.annotations.size());
    for (std::size_t i = 0; i < recovered.size(); ++i) {
      CHECK(recovered[i].polygons == b.annotations[i].polygons);
      CHECK(recovered[i].score == b.annotations[i].score);
    }
  }
}

TEST_CASE("merge_datasets: id map covers every entity and categories unify by name") {
  std::mt19937_64 rng(67);
  const auto a = fixtures::random_dataset(rng, 2);
  auto b = fixtures::random_dataset(rng, 2);
  for (auto& im : b.images) im.file_name = "p_" + im.file_name;
  const auto res = merge_datasets(a, b);
  std::size_t images = 0, anns = 0, cats = 0;
  for (const auto& r : res.id_map) {
    if (r.entity == "image") ++images;
    if (r.entity == "annotation") ++anns;
    if (r.entity == "category") ++cats;
  }
  CHECK(images == a.images.size() + b.images.size());
  CHECK(anns == a.annotations.size() + b.annotations.size());
  CHECK(cats == a.categories.size() + b.categories.size());
  // both inputs contain "stenosis"; the merged table holds it once
  std::size_t stenosis_count = 0;
  for (const auto& c : res.dataset.categories)
    if (c.name == "stenosis") ++stenosis_count;
  CHECK(stenosis_count == 1);
  CHECK(!id_map_to_json(res.id_map).empty());
}
