#include "stenoseg/pseudo_label.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json_util.hpp"
#include "stenoseg/evaluation.hpp"

namespace stenoseg::pseudo_label {

using nlohmann::json;

std::vector<std::int64_t> PredictionSet::image_ids() const {
  std::vector<std::int64_t> ids;
  ids.reserve(images.size());
  for (const auto& im : images) ids.push_back(im.id);
  return ids;
}

PredictionSet parse_prediction_set(const std::string& bytes) {
  json root;
  try {
    root = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed prediction file: ") + e.what(), e.byte);
  }
  PredictionSet ps;
  annotations::Dataset core = annotations::detail::dataset_from_json(root);
  ps.images = std::move(core.images);
  ps.predictions = std::move(core.annotations);
  if (root.contains("source_model") && root["source_model"].is_string())
    ps.source_model = root["source_model"].get<std::string>();
  if (root.contains("created_at") && root["created_at"].is_string())
    ps.created_at = root["created_at"].get<std::string>();

  std::set<std::int64_t> known;
  for (const auto& im : ps.images) known.insert(im.id);
  for (const auto& p : ps.predictions) {
    if (!p.score)
      throw ValidationError("prediction " + std::to_string(p.id) + " is missing a score");
    if (*p.score < 0.0 || *p.score > 1.0)
      throw ValidationError("prediction " + std::to_string(p.id) + " has score outside [0,1]");
    if (!known.count(p.image_id))
      throw ValidationError("prediction " + std::to_string(p.id) +
                            " references image " + std::to_string(p.image_id) +
                            " absent from the file's image list");
  }
  return ps;
}

std::string serialize_prediction_set(const PredictionSet& ps) {
  for (const auto& p : ps.predictions)
    if (!p.score)
      throw ValidationError("prediction " + std::to_string(p.id) +
                            " is missing a score; prediction files require one");
  annotations::Dataset core;
  core.images = ps.images;
  core.annotations = ps.predictions;
  json root = annotations::detail::dataset_to_json(core);
  root.erase("categories");
  root["source_model"] = ps.source_model;
  root["created_at"] = ps.created_at;
  return root.dump(2) + "\n";
}

std::vector<annotations::InstanceAnnotation> filter_predictions(const PredictionSet& preds,
                                                                double tau) {
  if (tau < 0.0 || tau > 1.0)
    throw ConfigError("confidence threshold must lie in [0,1], got " + std::to_string(tau));
  std::vector<annotations::InstanceAnnotation> kept;
  for (const auto& p : preds.predictions) {
    if (!p.score || *p.score < tau) continue;
    annotations::InstanceAnnotation a = p;
    a.provenance = annotations::Provenance::pseudo;
    kept.push_back(std::move(a));
  }
  return kept;
}

ThresholdSweepResult sweep_threshold(const PredictionSet& preds_on_val,
                                     const annotations::Dataset& val_gt,
                                     const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("threshold sweep requires a nonempty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i - 1] < grid[i]))
      throw ConfigError("threshold grid must be strictly ascending");

  // Zero timings for every validation image so no timeout can fire.
  std::map<std::int64_t, double> zero_timings;
  for (const auto& im : val_gt.images) zero_timings[im.id] = 0.0;

  ThresholdSweepResult res;
  res.grid = grid;
  double best = -1.0;
  for (double tau : grid) {
    PredictionSet filtered;
    filtered.images = preds_on_val.images;
    filtered.source_model = preds_on_val.source_model;
    filtered.predictions = filter_predictions(preds_on_val, tau);
    const auto report = evaluation::evaluate_submission(val_gt, filtered, zero_timings, 5.0);
    res.scores.push_back(report.mean_f1);
    res.counts.push_back(static_cast<long long>(filtered.predictions.size()));
    if (report.mean_f1 >= best) {  // ties resolve toward the larger tau
      best = report.mean_f1;
      res.selected = tau;
    }
  }
  return res;
}

annotations::Dataset build_pseudo_dataset(
    const std::vector<annotations::ImageRecord>& vessel_images,
    const std::vector<annotations::InstanceAnnotation>& kept,
    const std::string& category_name) {
  std::unordered_map<std::int64_t, const annotations::ImageRecord*> by_id;
  for (const auto& im : vessel_images) by_id[im.id] = &im;
  std::set<std::int64_t> used;
  for (const auto& k : kept) {
    if (!by_id.count(k.image_id))
      throw ValidationError("pseudo annotation " + std::to_string(k.id) +
                            " references unknown vessel image " + std::to_string(k.image_id));
    used.insert(k.image_id);
  }
  annotations::Dataset d;
  d.categories = {{1, category_name}};
  for (const auto& im : vessel_images)
    if (used.count(im.id)) d.images.push_back(im);
  std::int64_t next = 1;
  for (const auto& k : kept) {
    annotations::InstanceAnnotation a = k;
    a.id = next++;
    a.category_id = 1;
    a.provenance = annotations::Provenance::pseudo;
    a.score.reset();  // emitted pseudo-labels are hard labels
    d.annotations.push_back(std::move(a));
  }
  return d;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(i * 5 / 100.0);
  return grid;
}

std::string sweep_to_csv(const ThresholdSweepResult& r) {
  // shortest round-trip representation for the doubles
  const auto num = [](double v) { return nlohmann::json(v).dump(); };
  std::ostringstream ss;
  ss << "# objective: validation mean F1; ties broken toward larger threshold; selected="
     << num(r.selected) << "\n";
  ss << "threshold,mean_f1,surviving_count\n";
  for (std::size_t i = 0; i < r.grid.size(); ++i)
    ss << num(r.grid[i]) << "," << num(r.scores[i]) << "," << r.counts[i] << "\n";
  return ss.str();
}

}  // namespace stenoseg::pseudo_label
