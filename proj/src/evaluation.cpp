#include "stenoseg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "json_util.hpp"

namespace stenoseg::evaluation {

using nlohmann::json;

double instance_f1(long long tp, long long fp, long long fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw Error("instance_f1: negative pixel counts");
  if (tp + fp + fn == 0)
    throw Error("instance_f1: no pixels on either side is not a scorable instance");
  // Dice form; algebraically equal to 2PR/(P+R) with the zero-denominator
  // precision/recall cases collapsing to 0.
  return (2.0 * tp) / (2.0 * tp + fp + fn);
}

std::vector<InstanceMatch> match_instances(const std::vector<InstanceMask>& preds,
                                           const std::vector<InstanceMask>& gts) {
  for (const auto* group : {&preds, &gts})
    for (const auto& im : *group)
      if (!((*group)[0].mask.width == im.mask.width &&
            (*group)[0].mask.height == im.mask.height))
        throw GeometryError("match_instances: masks have mixed dimensions");
  if (!preds.empty() && !gts.empty() &&
      (preds[0].mask.width != gts[0].mask.width ||
       preds[0].mask.height != gts[0].mask.height))
    throw GeometryError("match_instances: prediction and ground-truth dimensions differ");

  struct Candidate {
    double f1;
    std::int64_t pred_id, gt_id;
    std::size_t pi, gi;
    long long tp, fp, fn;
  };
  std::vector<Candidate> candidates;
  for (std::size_t pi = 0; pi < preds.size(); ++pi)
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      const auto c = geometry::overlap_counts(preds[pi].mask, gts[gi].mask);
      if (c.tp == 0) continue;  // zero pixel intersection never matches
      candidates.push_back({instance_f1(c.tp, c.fp, c.fn), preds[pi].id, gts[gi].id,
                            pi, gi, c.tp, c.fp, c.fn});
    }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.f1 != b.f1) return a.f1 > b.f1;
    if (a.pred_id != b.pred_id) return a.pred_id < b.pred_id;
    return a.gt_id < b.gt_id;
  });

  std::vector<bool> pred_used(preds.size(), false), gt_used(gts.size(), false);
  std::vector<InstanceMatch> out;
  for (const auto& c : candidates) {
    if (pred_used[c.pi] || gt_used[c.gi]) continue;
    pred_used[c.pi] = gt_used[c.gi] = true;
    out.push_back({c.pred_id, c.gt_id, c.tp, c.fp, c.fn, c.f1});
  }
  for (std::size_t pi = 0; pi < preds.size(); ++pi)
    if (!pred_used[pi])
      out.push_back({preds[pi].id, std::nullopt, 0, preds[pi].mask.popcount(), 0, 0.0});
  for (std::size_t gi = 0; gi < gts.size(); ++gi)
    if (!gt_used[gi])
      out.push_back({std::nullopt, gts[gi].id, 0, 0, gts[gi].mask.popcount(), 0.0});
  return out;
}

ImageEval evaluate_image(const std::vector<annotations::InstanceAnnotation>& preds,
                         const std::vector<annotations::InstanceAnnotation>& gts,
                         std::int64_t image_id, int width, int height,
                         double elapsed_seconds, double limit_seconds) {
  std::vector<InstanceMask> pred_masks, gt_masks;
  pred_masks.reserve(preds.size());
  gt_masks.reserve(gts.size());
  for (const auto& a : preds)
    pred_masks.push_back({a.id, geometry::rasterize(a.polygons, width, height)});
  for (const auto& a : gts)
    gt_masks.push_back({a.id, geometry::rasterize(a.polygons, width, height)});

  ImageEval ev;
  ev.image_id = image_id;
  ev.matches = match_instances(pred_masks, gt_masks);
  ev.m_i = static_cast<int>(ev.matches.size());
  ev.elapsed = elapsed_seconds;
  ev.timed_out = elapsed_seconds > limit_seconds;
  double sum = 0.0;
  for (const auto& m : ev.matches) sum += m.f1;
  ev.image_f1 = (ev.timed_out || ev.m_i == 0) ? 0.0 : sum / ev.m_i;
  return ev;
}

EvalReport evaluate_submission(const annotations::Dataset& gt,
                               const pseudo_label::PredictionSet& preds,
                               const std::map<std::int64_t, double>& timings,
                               double limit_seconds) {
  std::unordered_map<std::int64_t, const annotations::ImageRecord*> images_by_id;
  for (const auto& im : gt.images) images_by_id[im.id] = &im;

  std::unordered_map<std::int64_t, std::vector<annotations::InstanceAnnotation>> preds_by_image;
  for (const auto& p : preds.predictions) {
    if (!images_by_id.count(p.image_id))
      throw ValidationError("prediction " + std::to_string(p.id) +
                            " references unknown image " + std::to_string(p.image_id));
    preds_by_image[p.image_id].push_back(p);
  }
  std::unordered_map<std::int64_t, std::vector<annotations::InstanceAnnotation>> gts_by_image;
  for (const auto& a : gt.annotations) gts_by_image[a.image_id].push_back(a);

  EvalReport report;
  double sum = 0.0;
  for (const auto& im : gt.images) {
    double elapsed = 0.0;
    if (auto it = timings.find(im.id); it != timings.end()) {
      elapsed = it->second;
    } else {
      report.warnings.push_back("no timing for image " + std::to_string(im.id) +
                                "; treated as 0");
    }
    static const std::vector<annotations::InstanceAnnotation> kEmpty;
    const auto& image_preds =
        preds_by_image.count(im.id) ? preds_by_image[im.id] : kEmpty;
    const auto& image_gts = gts_by_image.count(im.id) ? gts_by_image[im.id] : kEmpty;
    auto ev = evaluate_image(image_preds, image_gts, im.id, im.width, im.height,
                             elapsed, limit_seconds);
    sum += ev.image_f1;
    report.total_inference_time += ev.elapsed;
    report.per_image.push_back(std::move(ev));
  }
  report.n = static_cast<int>(report.per_image.size());
  report.mean_f1 = report.n == 0 ? 0.0 : sum / report.n;
  return report;
}

LeaderboardOrder compare_leaderboard(const EvalReport& a, const EvalReport& b) {
  const double band = 0.001 * std::max(a.mean_f1, b.mean_f1);
  if (std::abs(a.mean_f1 - b.mean_f1) > band)
    return a.mean_f1 > b.mean_f1 ? LeaderboardOrder::first : LeaderboardOrder::second;
  if (a.total_inference_time != b.total_inference_time)
    return a.total_inference_time < b.total_inference_time ? LeaderboardOrder::first
                                                           : LeaderboardOrder::second;
  return LeaderboardOrder::equal;
}

std::string report_to_json(const EvalReport& r) {
  json root;
  root["mean_f1"] = r.mean_f1;
  root["n"] = r.n;
  root["total_inference_time"] = r.total_inference_time;
  root["warnings"] = r.warnings;
  json per_image = json::array();
  for (const auto& ev : r.per_image) {
    json matches = json::array();
    for (const auto& m : ev.matches) {
      json jm = {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"f1", m.f1}};
      if (m.pred_id) jm["pred_id"] = *m.pred_id;
      if (m.gt_id) jm["gt_id"] = *m.gt_id;
      matches.push_back(std::move(jm));
    }
    per_image.push_back({{"image_id", ev.image_id},
                         {"m_i", ev.m_i},
                         {"image_f1", ev.image_f1},
                         {"elapsed", ev.elapsed},
                         {"timed_out", ev.timed_out},
                         {"matches", std::move(matches)}});
  }
  root["per_image"] = std::move(per_image);
  return root.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& bytes) {
  json root;
  try {
    root = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed report file: ") + e.what(), e.byte);
  }
  EvalReport r;
  r.mean_f1 = annotations::detail::require_number(root, "mean_f1", "report");
  r.n = static_cast<int>(annotations::detail::require_int(root, "n", "report"));
  r.total_inference_time =
      annotations::detail::require_number(root, "total_inference_time", "report");
  if (root.contains("warnings"))
    r.warnings = root["warnings"].get<std::vector<std::string>>();
  if (root.contains("per_image")) {
    for (const auto& jev : root["per_image"]) {
      ImageEval ev;
      ev.image_id = annotations::detail::require_int(jev, "image_id", "report image");
      ev.m_i = static_cast<int>(annotations::detail::require_int(jev, "m_i", "report image"));
      ev.image_f1 = annotations::detail::require_number(jev, "image_f1", "report image");
      ev.elapsed = annotations::detail::require_number(jev, "elapsed", "report image");
      ev.timed_out = jev.contains("timed_out") && jev["timed_out"].get<bool>();
      if (jev.contains("matches")) {
        for (const auto& jm : jev["matches"]) {
          InstanceMatch m;
          if (jm.contains("pred_id")) m.pred_id = jm["pred_id"].get<std::int64_t>();
          if (jm.contains("gt_id")) m.gt_id = jm["gt_id"].get<std::int64_t>();
          m.tp = jm.value("tp", 0LL);
          m.fp = jm.value("fp", 0LL);
          m.fn = jm.value("fn", 0LL);
          m.f1 = jm.value("f1", 0.0);
          ev.matches.push_back(m);
        }
      }
      r.per_image.push_back(std::move(ev));
    }
  }
  return r;
}

std::string summary_line(const EvalReport& r) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "mean_f1=" << r.mean_f1 << " n=" << r.n << " total_time=" << r.total_inference_time;
  return ss.str();
}

}  // namespace stenoseg::evaluation
