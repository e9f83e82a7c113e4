#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stenoseg/annotations.hpp"

namespace stenoseg::pseudo_label {

// External-model predictions over a set of images. Every prediction carries a
// confidence score in [0,1].
struct PredictionSet {
  std::vector<annotations::ImageRecord> images;  // records of all referenced images
  std::vector<annotations::InstanceAnnotation> predictions;
  std::string source_model;
  std::string created_at;

  std::vector<std::int64_t> image_ids() const;
};

// Prediction files use the dataset schema plus required per-annotation `score`
// and top-level `source_model` / `created_at`.
PredictionSet parse_prediction_set(const std::string& bytes);
std::string serialize_prediction_set(const PredictionSet& ps);

// Keeps predictions with score >= tau in stable order, marked provenance=pseudo.
// tau outside [0,1] is a ConfigError.
std::vector<annotations::InstanceAnnotation> filter_predictions(const PredictionSet& preds,
                                                                double tau);

struct ThresholdSweepResult {
  std::vector<double> grid;
  std::vector<double> scores;     // validation mean F1 per grid point
  std::vector<long long> counts;  // surviving predictions per grid point
  double selected = 0.0;
};

// Evaluates each grid threshold against the validation ground truth and picks
// the arg max of mean F1; ties break toward the larger threshold (fewer,
// higher-precision pseudo-labels).
ThresholdSweepResult sweep_threshold(const PredictionSet& preds_on_val,
                                     const annotations::Dataset& val_gt,
                                     const std::vector<double>& grid);

// Assembles the pseudo-label dataset: only images with at least one kept
// prediction, hard labels (provenance=pseudo, score dropped), category table
// reduced to the stenosis category.
annotations::Dataset build_pseudo_dataset(
    const std::vector<annotations::ImageRecord>& vessel_images,
    const std::vector<annotations::InstanceAnnotation>& kept,
    const std::string& category_name = "stenosis");

// 0.05 steps over [0.05, 0.95].
std::vector<double> default_threshold_grid();

std::string sweep_to_csv(const ThresholdSweepResult& r);

}  // namespace stenoseg::pseudo_label
