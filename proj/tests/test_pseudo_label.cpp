#include <doctest.h>

#include <random>
#include <set>

#include "stenoseg/evaluation.hpp"
#include "stenoseg/pseudo_label.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace stenoseg;
using namespace stenoseg::pseudo_label;
using stenoseg::annotations::InstanceAnnotation;
using stenoseg::annotations::Provenance;

namespace {

PredictionSet scored_set(std::initializer_list<double> scores) {
  PredictionSet ps;
  ps.images = {{1, "a.png", 32, 32}};
  std::int64_t id = 1;
  for (double s : scores) {
    InstanceAnnotation a;
    a.id = id++;
    a.image_id = 1;
    a.category_id = 1;
    a.polygons = {oracles::rect_polygon(1, 1, 4, 4)};
    a.score = s;
    ps.predictions.push_back(std::move(a));
  }
  ps.source_model = "test";
  ps.created_at = "2000-01-01T00:00:00Z";
  return ps;
}

}  // namespace

TEST_CASE("filter_predictions: tau 0 keeps everything") {
  const auto ps = scored_set({0.1, 0.5, 0.99});
  CHECK(filter_predictions(ps, 0.0).size() == 3);
}

TEST_CASE("filter_predictions: tau 1 keeps only perfect confidence") {
  const auto ps = scored_set({0.3, 1.0, 0.999});
  const auto kept = filter_predictions(ps, 1.0);
  REQUIRE(kept.size() == 1);
  CHECK(*kept[0].score == 1.0);
}

TEST_CASE("filter_predictions: tau outside [0,1] is rejected") {
  const auto ps = scored_set({0.5});
  CHECK_THROWS_AS(filter_predictions(ps, 1.0 + 1e-9), ConfigError);
  CHECK_THROWS_AS(filter_predictions(ps, -0.1), ConfigError);
}

TEST_CASE("filter_predictions: hand-enumerated example") {
  const auto ps = scored_set({0.2, 0.5, 0.9});
  const auto kept = filter_predictions(ps, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(*kept[0].score == 0.5);
  CHECK(*kept[1].score == 0.9);
  for (const auto& k : kept) CHECK(k.provenance == Provenance::pseudo);
}

TEST_CASE("filter_predictions: monotone in the threshold") {
  std::mt19937_64 rng(167);
  for (int it = 0; it < 30; ++it) {
    const auto ps = fixtures::random_prediction_set(rng, 4);
    const double t1 = oracles::runif(rng, 0.0, 1.0);
    const double t2 = oracles::runif(rng, t1, 1.0);
    const auto low = filter_predictions(ps, t1);
    const auto high = filter_predictions(ps, t2);
    std::set<std::int64_t> low_ids;
    for (const auto& a : low) low_ids.insert(a.id);
    for (const auto& a : high) CHECK(low_ids.count(a.id) == 1);
  }
}

TEST_CASE("sweep_threshold: perfect predictions survive only below their score") {
  // predictions identical to GT, all scores 0.9
  annotations::Dataset gt;
  gt.categories = {{1, "stenosis"}};
  gt.images = {{1, "a.png", 32, 32}};
  InstanceAnnotation g;
  g.id = 1;
  g.image_id = 1;
  g.category_id = 1;
  g.polygons = {oracles::rect_polygon(4, 4, 10, 8)};
  gt.annotations = {g};

  PredictionSet preds;
  preds.images = gt.images;
  auto p = g;
  p.score = 0.9;
  preds.predictions = {p};

  const auto res = sweep_threshold(preds, gt, {0.5, 0.95});
  REQUIRE(res.scores.size() == 2);
  CHECK(res.scores[0] == 1.0);
  CHECK(res.scores[1] == 0.0);
  CHECK(res.counts[0] == 1);
  CHECK(res.counts[1] == 0);
  CHECK(res.selected == 0.5);
}

TEST_CASE("sweep_threshold: single-element grid selects that element") {
  const auto ps = scored_set({0.6});
  annotations::Dataset gt;
  gt.categories = {{1, "stenosis"}};
  gt.images = ps.images;
  auto g = ps.predictions[0];
  g.score.reset();
  gt.annotations = {g};
  const auto res = sweep_threshold(ps, gt, {0.4});
  CHECK(res.selected == 0.4);
}

TEST_CASE("sweep_threshold: empty or unsorted grids are rejected") {
  const auto ps = scored_set({0.5});
  annotations::Dataset gt;
  gt.categories = {{1, "stenosis"}};
  gt.images = ps.images;
  CHECK_THROWS_AS(sweep_threshold(ps, gt, {}), ConfigError);
  CHECK_THROWS_AS(sweep_threshold(ps, gt, {0.5, 0.3}), ConfigError);
}

TEST_CASE("sweep_threshold: scores match an independent re-evaluation and the "
          "selection maximizes them") {
  // One true instance; a low threshold admits a wrong extra prediction.
  annotations::Dataset gt;
  gt.categories = {{1, "stenosis"}};
  gt.images = {{1, "a.png", 64, 64}};
  InstanceAnnotation g;
  g.id = 1;
  g.image_id = 1;
  g.category_id = 1;
  g.polygons = {oracles::rect_polygon(4, 4, 10, 8)};
  gt.annotations = {g};

  PredictionSet preds;
  preds.images = gt.images;
  auto good = g;
  good.id = 1;
  good.score = 0.9;
  auto wrong = g;
  wrong.id = 2;
  wrong.polygons = {oracles::rect_polygon(40, 40, 6, 6)};
  wrong.score = 0.3;
  preds.predictions = {good, wrong};

  const std::vector<double> grid{0.1, 0.5, 0.95};
  const auto res = sweep_threshold(preds, gt, grid);

  // independent recomputation: filter by hand, evaluate directly
  std::map<std::int64_t, double> zero{{1, 0.0}};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    PredictionSet manual;
    manual.images = preds.images;
    for (const auto& p : preds.predictions)
      if (*p.score >= grid[i]) manual.predictions.push_back(p);
    const auto rep = evaluation::evaluate_submission(gt, manual, zero, 5.0);
    CHECK(res.scores[i] == rep.mean_f1);
  }
  double best = -1.0;
  for (double s : res.scores) best = std::max(best, s);
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (res.grid[i] == res.selected) CHECK(res.scores[i] == best);
  CHECK(res.scores[0] == 0.5);  // pair 1.0 averaged with the spurious FP
  CHECK(res.scores[1] == 1.0);
  CHECK(res.scores[2] == 0.0);
  CHECK(res.selected == 0.5);
}

TEST_CASE("sweep_threshold: ties resolve toward the larger threshold") {
  // The same prediction set survives at both thresholds -> identical scores.
  annotations::Dataset gt;
  gt.categories = {{1, "stenosis"}};
  gt.images = {{1, "a.png", 32, 32}};
  InstanceAnnotation g;
  g.id = 1;
  g.image_id = 1;
  g.category_id = 1;
  g.polygons = {oracles::rect_polygon(4, 4, 10, 8)};
  gt.annotations = {g};
  PredictionSet preds;
  preds.images = gt.images;
  auto p = g;
  p.score = 0.9;
  preds.predictions = {p};
  const auto res = sweep_threshold(preds, gt, {0.2, 0.4, 0.6});
  CHECK(res.scores[0] == res.scores[2]);
  CHECK(res.selected == 0.6);
}

TEST_CASE("sweep_threshold: counts are non-increasing along the grid") {
  std::mt19937_64 rng(173);
  for (int it = 0; it < 10; ++it) {
    const auto ps = fixtures::random_prediction_set(rng, 3);
    annotations::Dataset gt;
    gt.categories = {{1, "stenosis"}};
    gt.images = ps.images;
    const auto res = sweep_threshold(ps, gt, default_threshold_grid());
    for (std::size_t i = 1; i < res.counts.size(); ++i)
      CHECK(res.counts[i] <= res.counts[i - 1]);
  }
}

TEST_CASE("build_pseudo_dataset: empty input gives an empty dataset") {
  const auto d = build_pseudo_dataset({{1, "a.png", 8, 8}}, {});
  CHECK(d.images.empty());
  CHECK(d.annotations.empty());
  REQUIRE(d.categories.size() == 1);
  CHECK(d.categories[0].name == "stenosis");
}

TEST_CASE("build_pseudo_dataset: keeps only images with surviving predictions") {
  std::vector<annotations::ImageRecord> images = {
      {1, "a.png", 8, 8}, {2, "b.png", 8, 8}, {3, "c.png", 8, 8}};
  InstanceAnnotation k1, k2;
  k1.id = 11;
  k1.image_id = 1;
  k1.category_id = 9;
  k1.polygons = {oracles::rect_polygon(0, 0, 2, 2)};
  k1.score = 0.7;
  k2 = k1;
  k2.id = 12;
  k2.image_id = 3;
  const auto d = build_pseudo_dataset(images, {k1, k2});
  REQUIRE(d.images.size() == 2);
  CHECK(d.images[0].id == 1);
  CHECK(d.images[1].id == 3);
  REQUIRE(d.annotations.size() == 2);
  for (const auto& a : d.annotations) {
    CHECK(a.provenance == Provenance::pseudo);
    CHECK(!a.score.has_value());  // hard labels
    CHECK(a.category_id == 1);
  }
  CHECK(annotations::validate_dataset(d).empty());
}

TEST_CASE("build_pseudo_dataset: dangling image reference is an error") {
  InstanceAnnotation k;
  k.id = 1;
  k.image_id = 77;
  k.category_id = 1;
  k.polygons = {oracles::rect_polygon(0, 0, 2, 2)};
  CHECK_THROWS_AS(build_pseudo_dataset({{1, "a.png", 8, 8}}, {k}), ValidationError);
}

TEST_CASE("build then merge then validate yields zero violations") {
  std::mt19937_64 rng(179);
  for (int it = 0; it < 20; ++it) {
    const auto labeled = fixtures::random_dataset(rng, 3);
    auto ps = fixtures::random_prediction_set(rng, 3);
    for (auto& im : ps.images) im.file_name = "vessel_" + im.file_name;
    const auto kept = filter_predictions(ps, 0.3);
    const auto pseudo = build_pseudo_dataset(ps.images, kept);
    const auto merged = annotations::merge_datasets(labeled, pseudo);
    CHECK(annotations::validate_dataset(merged.dataset).empty());
    CHECK(merged.dataset.annotations.size() ==
          labeled.annotations.size() + pseudo.annotations.size());
  }
}

TEST_CASE("prediction files require scores and round-trip") {
  std::mt19937_64 rng(181);
  const auto ps = fixtures::random_prediction_set(rng, 4);
  const auto text = serialize_prediction_set(ps);
  const auto back = parse_prediction_set(text);
  CHECK(back.images == ps.images);
  CHECK(back.predictions.size() == ps.predictions.size());
  for (std::size_t i = 0; i < back.predictions.size(); ++i) {
    CHECK(back.predictions[i].polygons == ps.predictions[i].polygons);
    CHECK(back.predictions[i].score == ps.predictions[i].score);
  }
  CHECK(back.source_model == ps.source_model);
  CHECK(back.created_at == ps.created_at);
}

TEST_CASE("prediction file with a score-less annotation is rejected") {
  const char* file = R"({
    "images": [{"id": 1, "file_name": "a.png", "width": 8, "height": 8}],
    "annotations": [{"id": 1, "image_id": 1, "category_id": 1,
                     "segmentation": [[0,0, 4,0, 4,4]]}],
    "source_model": "m", "created_at": "t"
  })";
  CHECK_THROWS_AS(parse_prediction_set(file), ValidationError);
}

TEST_CASE("prediction file referencing a missing image is rejected") {
  const char* file = R"({
    "images": [{"id": 1, "file_name": "a.png", "width": 8, "height": 8}],
    "annotations": [{"id": 1, "image_id": 2, "category_id": 1,
                     "segmentation": [[0,0, 4,0, 4,4]], "score": 0.5}],
    "source_model": "m", "created_at": "t"
  })";
  CHECK_THROWS_AS(parse_prediction_set(file), ValidationError);
}

TEST_CASE("default grid spans 0.05..0.95 in 0.05 steps") {
  const auto grid = default_threshold_grid();
  REQUIRE(grid.size() == 19);
  CHECK(grid.front() == doctest::Approx(0.05));
  CHECK(grid.back() == doctest::Approx(0.95));
}

TEST_CASE("sweep CSV lists one row per grid point") {
  ThresholdSweepResult r;
  r.grid = {0.1, 0.2};
  r.scores = {0.5, 0.75};
  r.counts = {10, 4};
  r.selected = 0.2;
  const auto csv = sweep_to_csv(r);
  CHECK(csv.find("threshold,mean_f1,surviving_count") != std::string::npos);
  CHECK(csv.find("0.2,0.75,4") != std::string::npos);
}
