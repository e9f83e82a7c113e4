#pragma once

// Shared fixture builders: random datasets for the property suites, synthetic
// images and prediction files for the pipeline tests, and a temp-dir guard.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "stenoseg/annotations.hpp"
#include "stenoseg/pseudo_label.hpp"

namespace fixtures {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "stenoseg_test_XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline void write_text(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Random valid dataset; every invariant holds by construction.
inline stenoseg::annotations::Dataset random_dataset(std::mt19937_64& rng, int n_images,
                                                     bool with_scores = false,
                                                     bool pseudo_provenance = false) {
  using namespace stenoseg::annotations;
  Dataset d;
  const int n_categories = 1 + static_cast<int>(rng() % 2);
  for (int c = 1; c <= n_categories; ++c)
    d.categories.push_back({c, c == 1 ? "stenosis" : "extra_" + std::to_string(c)});
  std::int64_t next_ann = 1;
  for (int i = 1; i <= n_images; ++i) {
    const int w = 16 + static_cast<int>(rng() % 113);
    const int h = 16 + static_cast<int>(rng() % 113);
    d.images.push_back({i, "img_" + std::to_string(i) + ".png", w, h});
    const int n_anns = static_cast<int>(rng() % 4);
    for (int a = 0; a < n_anns; ++a) {
      InstanceAnnotation ann;
      ann.id = next_ann++;
      ann.image_id = i;
      ann.category_id = 1 + static_cast<std::int64_t>(rng() % n_categories);
      const int parts = 1 + static_cast<int>(rng() % 2);
      for (int p = 0; p < parts; ++p) {
        const double cx = oracles::runif(rng, 4.0, w - 4.0);
        const double cy = oracles::runif(rng, 4.0, h - 4.0);
        ann.polygons.push_back(
            oracles::random_polygon(rng, cx, cy, 4.0, 3 + static_cast<int>(rng() % 6)));
      }
      if (with_scores || rng() % 3 == 0)
        ann.score = oracles::runif(rng, 0.0, 1.0);
      if (pseudo_provenance || (!with_scores && rng() % 4 == 0))
        ann.provenance = Provenance::pseudo;
      d.annotations.push_back(std::move(ann));
    }
  }
  return d;
}

inline stenoseg::pseudo_label::PredictionSet random_prediction_set(std::mt19937_64& rng,
                                                                   int n_images) {
  auto d = random_dataset(rng, n_images, /*with_scores=*/true);
  stenoseg::pseudo_label::PredictionSet ps;
  ps.images = d.images;
  ps.predictions = d.annotations;
  ps.source_model = "random";
  ps.created_at = "2000-01-01T00:00:00Z";
  return ps;
}

}  // namespace fixtures
