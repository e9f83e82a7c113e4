// stenoseg: dataset, pseudo-label, and evaluation toolkit for stenosis
// instance segmentation. Exit codes: 0 success, 1 validation/eval failure,
// 2 configuration error, 3 external-command failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "stenoseg/annotations.hpp"
#include "stenoseg/augmentation.hpp"
#include "stenoseg/evaluation.hpp"
#include "stenoseg/pipeline.hpp"
#include "stenoseg/png_io.hpp"
#include "stenoseg/pseudo_label.hpp"

namespace fs = std::filesystem;
using namespace stenoseg;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path.string());
  out << content;
}

void draw_polygon_outlines(augmentation::RasterImage& img,
                           const std::vector<geometry::Polygon>& polys,
                           std::uint8_t r, std::uint8_t g, std::uint8_t b,
                           int x_offset = 0) {
  for (const auto& poly : polys) {
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      const auto& a = poly[j];
      const auto& c = poly[i];
      const double len = std::hypot(c.x - a.x, c.y - a.y);
      const int steps = std::max(1, static_cast<int>(len * 2.0));
      for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const int px = static_cast<int>(a.x + t * (c.x - a.x)) + x_offset;
        const int py = static_cast<int>(a.y + t * (c.y - a.y));
        if (px < 0 || px >= img.width || py < 0 || py >= img.height) continue;
        img.at(px, py, 0) = r;
        img.at(px, py, 1) = g;
        img.at(px, py, 2) = b;
      }
    }
  }
}

int cmd_validate(const fs::path& dataset_path) {
  const auto d = annotations::parse_dataset_lenient(read_file(dataset_path));
  const auto violations = annotations::validate_dataset(d);
  if (violations.empty()) {
    std::cout << "OK: " << d.images.size() << " images, " << d.annotations.size()
              << " annotations, " << d.categories.size() << " categories\n";
    return 0;
  }
  for (const auto& v : violations) std::cout << v.str() << "\n";
  std::cout << violations.size() << " violation(s)\n";
  return 1;
}

int cmd_merge(const fs::path& a_path, const fs::path& b_path, const fs::path& out,
              fs::path id_map_path) {
  const auto a = annotations::parse_dataset(read_file(a_path));
  const auto b = annotations::parse_dataset(read_file(b_path));
  const auto merged = annotations::merge_datasets(a, b);
  annotations::save_dataset_file(merged.dataset, out);
  if (id_map_path.empty()) id_map_path = out.string() + ".idmap.json";
  write_file(id_map_path, annotations::id_map_to_json(merged.id_map));
  std::cout << "merged: " << merged.dataset.images.size() << " images, "
            << merged.dataset.annotations.size() << " annotations -> " << out.string()
            << "\nid map -> " << id_map_path.string() << "\n";
  return 0;
}

int cmd_augment(const fs::path& dataset_path, int copies, std::uint64_t seed, int resize,
                const fs::path& params_path, const fs::path& out) {
  const auto d = annotations::parse_dataset(read_file(dataset_path));
  augmentation::AugmentationParams params;
  if (!params_path.empty())
    params = pipeline::augmentation_params_from_json(read_file(params_path));
  const auto result = pipeline::offline_augment(d, dataset_path.parent_path(), params,
                                                copies, seed, resize, out);
  std::cout << "augmented: " << result.images.size() << " images, "
            << result.annotations.size() << " annotations -> " << out.string() << "\n";
  return 0;
}

int cmd_preview(const fs::path& dataset_path, std::size_t index, std::uint64_t seed,
                const fs::path& out) {
  const auto d = annotations::parse_dataset(read_file(dataset_path));
  if (index >= d.images.size())
    throw ConfigError("image index " + std::to_string(index) + " out of range (dataset has " +
                      std::to_string(d.images.size()) + " images)");
  const auto& im = d.images[index];
  auto raster = png_io::read_png(dataset_path.parent_path() / im.file_name);
  const auto rgb = raster.channels == 1 ? augmentation::gray_to_rgb(raster) : raster;

  std::vector<annotations::InstanceAnnotation> anns;
  for (const auto& a : d.annotations)
    if (a.image_id == im.id) anns.push_back(a);

  augmentation::AugmentationParams params;
  const auto spec = augmentation::sample_transform(params, seed, rgb.width, rgb.height);
  auto [augmented, aug_anns] =
      augmentation::augment_sample(rgb, anns, spec, params.min_instance_area);

  augmentation::RasterImage panel(rgb.width * 2, rgb.height, 3);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c) {
        panel.at(x, y, c) = rgb.at(x, y, c);
        panel.at(x + rgb.width, y, c) = augmented.at(x, y, c);
      }
  for (const auto& a : anns) draw_polygon_outlines(panel, a.polygons, 0, 255, 0);
  for (const auto& a : aug_anns)
    draw_polygon_outlines(panel, a.polygons, 0, 255, 0, rgb.width);
  png_io::write_png(panel, out);
  std::cout << "preview (original | augmented, seed " << seed << ") -> " << out.string()
            << "\n";
  return 0;
}

int cmd_pseudo_filter(const fs::path& preds_path, double tau, const fs::path& out) {
  const auto preds = pseudo_label::parse_prediction_set(read_file(preds_path));
  const auto kept = pseudo_label::filter_predictions(preds, tau);
  const auto dataset = pseudo_label::build_pseudo_dataset(preds.images, kept);
  annotations::save_dataset_file(dataset, out);
  std::cout << "kept " << kept.size() << " of " << preds.predictions.size()
            << " predictions across " << dataset.images.size() << " images -> "
            << out.string() << "\n";
  return 0;
}

int cmd_pseudo_sweep(const fs::path& preds_path, const fs::path& gt_path,
                     const std::vector<double>& grid, const fs::path& out) {
  const auto preds = pseudo_label::parse_prediction_set(read_file(preds_path));
  const auto gt = annotations::parse_dataset(read_file(gt_path));
  const auto effective = grid.empty() ? pseudo_label::default_threshold_grid() : grid;
  const auto result = pseudo_label::sweep_threshold(preds, gt, effective);
  write_file(out, pseudo_label::sweep_to_csv(result));
  std::cout << "selected threshold " << result.selected << " -> " << out.string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& gt_path, const fs::path& preds_path,
             const fs::path& timings_path, double limit, const fs::path& out) {
  const auto gt = annotations::parse_dataset(read_file(gt_path));
  const auto preds = pseudo_label::parse_prediction_set(read_file(preds_path));
  std::map<std::int64_t, double> timings;
  if (!timings_path.empty()) timings = pipeline::timings_from_json(read_file(timings_path));
  const auto report = evaluation::evaluate_submission(gt, preds, timings, limit);
  if (!out.empty()) write_file(out, evaluation::report_to_json(report));
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << evaluation::summary_line(report) << "\n";
  return 0;
}

int cmd_compare(const fs::path& a_path, const fs::path& b_path) {
  const auto a = evaluation::report_from_json(read_file(a_path));
  const auto b = evaluation::report_from_json(read_file(b_path));
  switch (evaluation::compare_leaderboard(a, b)) {
    case evaluation::LeaderboardOrder::first:
      std::cout << "first: " << a_path.string() << " wins\n";
      break;
    case evaluation::LeaderboardOrder::second:
      std::cout << "second: " << b_path.string() << " wins\n";
      break;
    case evaluation::LeaderboardOrder::equal:
      std::cout << "equal\n";
      break;
  }
  std::cout << "A: " << evaluation::summary_line(a) << "\nB: " << evaluation::summary_line(b)
            << "\n";
  return 0;
}

int cmd_run(const fs::path& config_path) {
  const auto cfg = pipeline::load_config(config_path);
  const auto manifest = pipeline::run_ssl_round(cfg);
  std::cout << "run complete; manifest -> "
            << (cfg.workdir / "manifest.json").string() << "\n";
  std::cout << "selected threshold: " << manifest.selected_tau << "\n";
  const auto report =
      evaluation::report_from_json(read_file(manifest.final_report_path));
  std::cout << evaluation::summary_line(report) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stenosis segmentation data, pseudo-label, and evaluation toolkit"};
  app.require_subcommand(1);

  fs::path dataset_path, a_path, b_path, out_path, id_map_path, params_path;
  fs::path preds_path, gt_path, timings_path, config_path;
  int copies = 1, resize = 0;
  std::uint64_t seed = 0;
  std::size_t index = 0;
  double tau = 0.5, limit = 5.0;
  std::vector<double> grid;

  auto* validate = app.add_subcommand("validate", "check a dataset file against the schema invariants");
  validate->add_option("dataset", dataset_path, "dataset file")->required();

  auto* merge = app.add_subcommand("merge", "merge two datasets with id reindexing");
  merge->add_option("a", a_path, "labeled dataset")->required();
  merge->add_option("b", b_path, "pseudo dataset")->required();
  merge->add_option("-o,--output", out_path, "merged dataset output")->required();
  merge->add_option("--id-map", id_map_path, "old->new id map output (default <out>.idmap.json)");

  auto* augment = app.add_subcommand("augment", "materialize augmented copies of a dataset");
  augment->add_option("dataset", dataset_path, "dataset file")->required();
  augment->add_option("--copies", copies, "augmented variants per image")->required();
  augment->add_option("--seed", seed, "random seed");
  augment->add_option("--resize", resize, "resize variants to this square size (0 = native)");
  augment->add_option("--params", params_path, "JSON file overriding augmentation parameters");
  augment->add_option("-o,--output", out_path, "output annotations file")->required();

  auto* preview = app.add_subcommand("preview", "write a side-by-side original/augmented panel");
  preview->add_option("dataset", dataset_path, "dataset file")->required();
  preview->add_option("--index", index, "image index within the dataset");
  preview->add_option("--seed", seed, "random seed");
  preview->add_option("-o,--output", out_path, "output PNG")->required();

  auto* pseudo = app.add_subcommand("pseudo", "pseudo-label operations");
  pseudo->require_subcommand(1);
  auto* pfilter = pseudo->add_subcommand("filter", "threshold predictions into a pseudo dataset");
  pfilter->add_option("predictions", preds_path, "prediction file")->required();
  pfilter->add_option("--tau", tau, "confidence threshold in [0,1]")->required();
  pfilter->add_option("-o,--output", out_path, "pseudo dataset output")->required();
  auto* psweep = pseudo->add_subcommand("sweep", "select a threshold against validation ground truth");
  psweep->add_option("predictions", preds_path, "prediction file on the validation set")->required();
  psweep->add_option("val_gt", gt_path, "validation ground-truth dataset")->required();
  psweep->add_option("--grid", grid, "ascending thresholds (default 0.05..0.95 step 0.05)");
  psweep->add_option("-o,--output", out_path, "CSV report output")->required();

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  eval->add_option("gt", gt_path, "ground-truth dataset")->required();
  eval->add_option("predictions", preds_path, "prediction file")->required();
  eval->add_option("--timings", timings_path, "JSON map image_id -> seconds");
  eval->add_option("--limit", limit, "per-image time limit in seconds");
  eval->add_option("-o,--output", out_path, "report output");

  auto* compare = app.add_subcommand("compare", "order two evaluation reports by the leaderboard rule");
  compare->add_option("a", a_path, "first report")->required();
  compare->add_option("b", b_path, "second report")->required();

  auto* run = app.add_subcommand("run", "execute the full semi-supervised round from a config");
  run->add_option("config", config_path, "pipeline config JSON")->required();

  try {
    app.parse(argc, argv);
    if (*validate) return cmd_validate(dataset_path);
    if (*merge) return cmd_merge(a_path, b_path, out_path, id_map_path);
    if (*augment) return cmd_augment(dataset_path, copies, seed, resize, params_path, out_path);
    if (*preview) return cmd_preview(dataset_path, index, seed, out_path);
    if (*pseudo) {
      if (*pfilter) return cmd_pseudo_filter(preds_path, tau, out_path);
      if (*psweep) return cmd_pseudo_sweep(preds_path, gt_path, grid, out_path);
    }
    if (*eval) return cmd_eval(gt_path, preds_path, timings_path, limit, out_path);
    if (*compare) return cmd_compare(a_path, b_path);
    if (*run) return cmd_run(config_path);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CommandError& e) {
    std::cerr << "external command failed: " << e.what() << "\n";
    if (!e.output.empty()) std::cerr << e.output << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
