#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stenoseg/annotations.hpp"
#include "stenoseg/geometry.hpp"
#include "stenoseg/pseudo_label.hpp"

namespace stenoseg::evaluation {

// Pixel-level F1 (the Dice coefficient) from overlap counts. A zero-denominator
// precision or recall collapses to 0. Throws when tp+fp+fn == 0.
double instance_f1(long long tp, long long fp, long long fn);

// One scored term of the per-image average: a matched (prediction, ground
// truth) pair, an unmatched prediction (FP), or an unmatched ground truth (FN).
struct InstanceMatch {
  std::optional<std::int64_t> pred_id;
  std::optional<std::int64_t> gt_id;
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  double f1 = 0.0;
};

struct InstanceMask {
  std::int64_t id = 0;
  geometry::Mask mask;
};

// Greedy one-to-one matching by descending pairwise F1; pairs with zero pixel
// intersection never match. Ties break toward the lower (pred_id, gt_id).
// Unmatched instances on either side become zero-score entries, so
// |result| = #pairs + #unmatched predictions + #unmatched ground truths.
std::vector<InstanceMatch> match_instances(const std::vector<InstanceMask>& preds,
                                           const std::vector<InstanceMask>& gts);

struct ImageEval {
  std::int64_t image_id = 0;
  std::vector<InstanceMatch> matches;
  int m_i = 0;  // number of scored terms
  double image_f1 = 0.0;
  double elapsed = 0.0;
  bool timed_out = false;
};

// Rasterizes instances, matches them, and averages per-instance F1. When
// elapsed exceeds the limit the image scores 0 regardless of its matches.
ImageEval evaluate_image(const std::vector<annotations::InstanceAnnotation>& preds,
                         const std::vector<annotations::InstanceAnnotation>& gts,
                         std::int64_t image_id, int width, int height,
                         double elapsed_seconds, double limit_seconds);

struct EvalReport {
  std::vector<ImageEval> per_image;
  int n = 0;
  double mean_f1 = 0.0;
  double total_inference_time = 0.0;
  std::vector<std::string> warnings;
};

// Mean of image_f1 over every ground-truth image; images without predictions
// contribute their all-FN score. Missing timings count as 0 with a warning.
// Predictions referencing unknown images are a ValidationError.
EvalReport evaluate_submission(const annotations::Dataset& gt,
                               const pseudo_label::PredictionSet& preds,
                               const std::map<std::int64_t, double>& timings,
                               double limit_seconds);

enum class LeaderboardOrder { first, second, equal };

// Higher mean F1 wins when the scores differ by more than 0.1% of the larger
// one; otherwise the shorter total inference time wins; full tie is equal.
LeaderboardOrder compare_leaderboard(const EvalReport& a, const EvalReport& b);

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& bytes);

// One-line machine-readable summary: mean_f1=<v> n=<count> total_time=<seconds>
std::string summary_line(const EvalReport& r);

}  // namespace stenoseg::evaluation
