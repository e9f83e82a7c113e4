#include "stenoseg/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "json_util.hpp"
#include "stenoseg/png_io.hpp"

namespace stenoseg::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

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

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  write_file(tmp, content);
  fs::rename(tmp, path);
}

std::string iso_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^
                    splitmix64(b ^ 0x517cc1b727220a95ULL));
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

json policy_to_json(const ThresholdPolicy& p) {
  if (p.kind == ThresholdPolicy::Kind::fixed) return json{{"fixed", p.fixed_tau}};
  if (p.grid.empty()) return json{{"sweep", "default"}};
  return json{{"sweep", p.grid}};
}

json augmentation_to_json(const augmentation::AugmentationParams& a) {
  return json{{"p_vflip", a.p_vflip},       {"p_hflip", a.p_hflip},
              {"translate", a.translate},   {"rotation", a.rotation},
              {"scale", a.scale},           {"shear", a.shear},
              {"perspective", a.perspective}, {"hue", a.hue},
              {"saturation", a.saturation}, {"value", a.value},
              {"min_instance_area", a.min_instance_area}};
}

// Rewrites image paths so they resolve from to_dir instead of from_dir.
annotations::Dataset rebase_image_paths(const annotations::Dataset& d,
                                        const fs::path& from_dir, const fs::path& to_dir) {
  annotations::Dataset out = d;
  const fs::path to_abs = fs::absolute(to_dir).lexically_normal();
  for (auto& im : out.images) {
    const fs::path abs = fs::absolute(from_dir / im.file_name).lexically_normal();
    const fs::path rel = abs.lexically_proximate(to_abs);
    im.file_name = rel.generic_string();
  }
  return out;
}

}  // namespace

PipelineConfig config_from_json_text(const std::string& bytes, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be a JSON object");

  PipelineConfig cfg;
  auto path_field = [&](const char* key) -> fs::path {
    if (!root.contains(key) || !root[key].is_string())
      throw ConfigError(std::string("config: missing or non-string field '") + key + "'");
    fs::path p = root[key].get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  };
  cfg.stenosis_train_path = path_field("stenosis_train_path");
  cfg.vessel_path = path_field("vessel_path");
  cfg.validation_path = path_field("validation_path");
  cfg.workdir = path_field("workdir");
  if (!root.contains("train_command") || !root["train_command"].is_string())
    throw ConfigError("config: missing 'train_command'");
  if (!root.contains("infer_command") || !root["infer_command"].is_string())
    throw ConfigError("config: missing 'infer_command'");
  cfg.train_command = root["train_command"].get<std::string>();
  cfg.infer_command = root["infer_command"].get<std::string>();

  if (root.contains("threshold_policy")) {
    const auto& tp = root["threshold_policy"];
    if (!tp.is_object()) throw ConfigError("config: threshold_policy must be an object");
    if (tp.contains("fixed")) {
      cfg.threshold_policy.kind = ThresholdPolicy::Kind::fixed;
      cfg.threshold_policy.fixed_tau = tp["fixed"].get<double>();
      if (cfg.threshold_policy.fixed_tau < 0 || cfg.threshold_policy.fixed_tau > 1)
        throw ConfigError("config: fixed threshold must lie in [0,1]");
    } else if (tp.contains("sweep")) {
      cfg.threshold_policy.kind = ThresholdPolicy::Kind::sweep;
      if (tp["sweep"].is_array())
        cfg.threshold_policy.grid = tp["sweep"].get<std::vector<double>>();
      else if (!(tp["sweep"].is_string() && tp["sweep"] == "default"))
        throw ConfigError("config: threshold_policy.sweep must be a grid or \"default\"");
    } else {
      throw ConfigError("config: threshold_policy needs 'fixed' or 'sweep'");
    }
  }
  if (root.contains("augmentation"))
    cfg.augmentation = augmentation_params_from_json(root["augmentation"].dump());
  cfg.augment_copies = root.value("augment_copies", 0);
  cfg.resize_to = root.value("resize_to", 640);
  cfg.seed = root.value("seed", std::uint64_t{0});
  cfg.time_limit = root.value("time_limit", 5.0);
  cfg.jobs = root.value("jobs", 1);

  if (const char* wd = std::getenv("STENOSEG_WORKDIR"); wd && *wd) cfg.workdir = wd;
  if (const char* sd = std::getenv("STENOSEG_SEED"); sd && *sd) {
    try {
      cfg.seed = std::stoull(sd);
    } catch (const std::exception&) {
      throw ConfigError(std::string("STENOSEG_SEED is not an integer: ") + sd);
    }
  }

  if (cfg.time_limit <= 0) throw ConfigError("config: time_limit must be > 0");
  if (cfg.augment_copies < 0) throw ConfigError("config: augment_copies must be >= 0");
  if (cfg.jobs < 1) throw ConfigError("config: jobs must be >= 1");
  for (const char* ph : {"{dataset}", "{output}"})
    if (cfg.train_command.find(ph) == std::string::npos)
      throw ConfigError(std::string("config: train_command lacks placeholder ") + ph);
  for (const char* ph : {"{image}", "{output}"})
    if (cfg.infer_command.find(ph) == std::string::npos)
      throw ConfigError(std::string("config: infer_command lacks placeholder ") + ph);
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  return config_from_json_text(read_file(path), path.parent_path());
}

augmentation::AugmentationParams augmentation_params_from_json(const std::string& bytes) {
  json ja;
  try {
    ja = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed augmentation parameters: ") + e.what());
  }
  if (!ja.is_object()) throw ConfigError("augmentation parameters must be a JSON object");
  augmentation::AugmentationParams a;
  auto get = [&](const char* key, double deflt) {
    if (!ja.contains(key)) return deflt;
    if (!ja[key].is_number())
      throw ConfigError(std::string("augmentation parameter '") + key + "' must be a number");
    return ja[key].get<double>();
  };
  a.p_vflip = get("p_vflip", a.p_vflip);
  a.p_hflip = get("p_hflip", a.p_hflip);
  a.translate = get("translate", a.translate);
  a.rotation = get("rotation", a.rotation);
  a.scale = get("scale", a.scale);
  a.shear = get("shear", a.shear);
  a.perspective = get("perspective", a.perspective);
  a.hue = get("hue", a.hue);
  a.saturation = get("saturation", a.saturation);
  a.value = get("value", a.value);
  a.min_instance_area = get("min_instance_area", a.min_instance_area);
  return a;
}

std::string config_hash(const PipelineConfig& cfg) {
  json root;
  root["stenosis_train_path"] = cfg.stenosis_train_path.string();
  root["vessel_path"] = cfg.vessel_path.string();
  root["validation_path"] = cfg.validation_path.string();
  root["train_command"] = cfg.train_command;
  root["infer_command"] = cfg.infer_command;
  root["threshold_policy"] = policy_to_json(cfg.threshold_policy);
  root["augmentation"] = augmentation_to_json(cfg.augmentation);
  root["augment_copies"] = cfg.augment_copies;
  root["resize_to"] = cfg.resize_to;
  root["seed"] = cfg.seed;
  root["time_limit"] = cfg.time_limit;
  root["workdir"] = cfg.workdir.string();
  root["jobs"] = cfg.jobs;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(root.dump())));
  return buf;
}

std::string manifest_to_json(const RunManifest& m) {
  json root;
  root["config_hash"] = m.config_hash;
  root["started_at"] = m.started_at;
  root["finished_at"] = m.finished_at;
  root["timing_protocol"] = m.timing_protocol;
  json stages = json::object();
  for (const auto& [name, rec] : m.stages)
    stages[name] = {{"completed", rec.completed}, {"outputs", rec.outputs}};
  root["stages"] = std::move(stages);
  root["stage1_model_ref"] = m.stage1_model_ref;
  root["stage2_model_ref"] = m.stage2_model_ref;
  root["vessel_predictions_path"] = m.vessel_predictions_path;
  root["vessel_timings_path"] = m.vessel_timings_path;
  root["sweep_report_path"] = m.sweep_report_path;
  root["selected_tau"] = m.selected_tau;
  root["pseudo_dataset_path"] = m.pseudo_dataset_path;
  root["merged_dataset_path"] = m.merged_dataset_path;
  root["id_map_path"] = m.id_map_path;
  root["val_predictions_path"] = m.val_predictions_path;
  root["val_timings_path"] = m.val_timings_path;
  root["final_report_path"] = m.final_report_path;
  root["counts"] = m.counts;
  root["failures"] = m.failures;
  return root.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& bytes) {
  json root;
  try {
    root = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what(), e.byte);
  }
  RunManifest m;
  m.config_hash = root.value("config_hash", "");
  m.started_at = root.value("started_at", "");
  m.finished_at = root.value("finished_at", "");
  m.timing_protocol = root.value("timing_protocol", "");
  if (root.contains("stages"))
    for (const auto& [name, rec] : root["stages"].items())
      m.stages[name] = {rec.value("completed", false),
                        rec.value("outputs", std::vector<std::string>{})};
  m.stage1_model_ref = root.value("stage1_model_ref", "");
  m.stage2_model_ref = root.value("stage2_model_ref", "");
  m.vessel_predictions_path = root.value("vessel_predictions_path", "");
  m.vessel_timings_path = root.value("vessel_timings_path", "");
  m.sweep_report_path = root.value("sweep_report_path", "");
  m.selected_tau = root.value("selected_tau", 0.0);
  m.pseudo_dataset_path = root.value("pseudo_dataset_path", "");
  m.merged_dataset_path = root.value("merged_dataset_path", "");
  m.id_map_path = root.value("id_map_path", "");
  m.val_predictions_path = root.value("val_predictions_path", "");
  m.val_timings_path = root.value("val_timings_path", "");
  m.final_report_path = root.value("final_report_path", "");
  if (root.contains("counts"))
    for (const auto& [k, v] : root["counts"].items()) m.counts[k] = v.get<long long>();
  if (root.contains("failures"))
    m.failures = root["failures"].get<std::vector<std::string>>();
  return m;
}

CommandResult run_command(const std::string& command) {
  CommandResult res;
  const auto t0 = std::chrono::steady_clock::now();
  std::FILE* pipe = popen((command + " 2>&1").c_str(), "r");
  if (!pipe) throw CommandError("failed to launch command: " + command, -1, "");
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) res.output.append(buf, got);
  const int status = pclose(pipe);
  const auto t1 = std::chrono::steady_clock::now();
  res.seconds = std::chrono::duration<double>(t1 - t0).count();
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string substitute_placeholders(std::string tmpl,
                                    const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string token = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = tmpl.find(token, pos)) != std::string::npos) {
      tmpl.replace(pos, token.size(), value);
      pos += value.size();
    }
  }
  return tmpl;
}

std::string timings_to_json(const std::map<std::int64_t, double>& timings) {
  json root = json::object();
  for (const auto& [id, sec] : timings) root[std::to_string(id)] = sec;
  return root.dump(2) + "\n";
}

std::map<std::int64_t, double> timings_from_json(const std::string& bytes) {
  json root;
  try {
    root = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed timings file: ") + e.what(), e.byte);
  }
  if (!root.is_object()) throw ParseError("timings file must map image ids to seconds");
  std::map<std::int64_t, double> out;
  for (const auto& [k, v] : root.items()) {
    try {
      out[std::stoll(k)] = v.get<double>();
    } catch (const std::exception&) {
      throw ParseError("timings file: bad entry for key '" + k + "'");
    }
  }
  return out;
}

TimedPredictions time_predictor(const std::string& infer_command,
                                const std::vector<annotations::ImageRecord>& images,
                                const fs::path& image_root, const fs::path& output_dir,
                                const std::string& model_ref, int jobs) {
  fs::create_directories(output_dir);

  struct PerImage {
    double seconds = 0.0;
    bool failed = false;
    std::string failure_note;
    std::vector<annotations::InstanceAnnotation> predictions;
    std::string ingest_error;
  };
  std::vector<PerImage> results(images.size());

  auto process = [&](std::size_t idx) {
    const auto& im = images[idx];
    const fs::path image_path = image_root / im.file_name;
    const fs::path out_path = output_dir / ("img_" + std::to_string(im.id) + ".json");
    const std::string cmd = substitute_placeholders(
        infer_command, {{"image", image_path.string()},
                        {"output", out_path.string()},
                        {"model", model_ref}});
    const CommandResult res = run_command(cmd);
    auto& slot = results[idx];
    slot.seconds = res.seconds;
    if (res.exit_code != 0) {
      slot.failed = true;
      slot.failure_note = "image " + std::to_string(im.id) + ": command failed with exit " +
                          std::to_string(res.exit_code) +
                          (res.output.empty() ? "" : ": " + res.output.substr(0, 500));
      return;
    }
    try {
      const auto ps = pseudo_label::parse_prediction_set(read_file(out_path));
      for (const auto& p : ps.predictions) {
        if (p.image_id != im.id)
          throw ValidationError("prediction references image " + std::to_string(p.image_id) +
                                ", expected " + std::to_string(im.id));
        slot.predictions.push_back(p);
      }
    } catch (const Error& e) {
      slot.ingest_error = "prediction file " + out_path.string() + ": " + e.what();
    }
  };

  if (jobs <= 1 || images.size() <= 1) {
    for (std::size_t i = 0; i < images.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min<int>(jobs, static_cast<int>(images.size()));
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < images.size();) process(i);
      });
    for (auto& t : pool) t.join();
  }

  TimedPredictions out;
  out.preds.images = images;
  out.preds.source_model = infer_command;
  out.preds.created_at = iso_now();
  std::int64_t next_id = 1;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& slot = results[i];
    if (!slot.ingest_error.empty()) throw Error(slot.ingest_error);
    out.timings[images[i].id] = slot.seconds;
    if (slot.failed) {
      out.failures.push_back(slot.failure_note);
      continue;
    }
    for (auto& p : slot.predictions) {
      p.id = next_id++;
      out.preds.predictions.push_back(std::move(p));
    }
  }
  return out;
}

annotations::Dataset offline_augment(const annotations::Dataset& dataset,
                                     const fs::path& image_root,
                                     const augmentation::AugmentationParams& params,
                                     int copies, std::uint64_t seed, int resize_to,
                                     const fs::path& out_annotations_path) {
  if (copies < 0) throw ConfigError("offline_augment: copies must be >= 0");
  if (copies == 0) {
    annotations::save_dataset_file(dataset, out_annotations_path);
    return dataset;
  }
  const fs::path out_dir = out_annotations_path.has_parent_path()
                               ? out_annotations_path.parent_path()
                               : fs::path(".");
  fs::create_directories(out_dir / "images");

  std::unordered_map<std::int64_t, std::vector<annotations::InstanceAnnotation>> by_image;
  for (const auto& a : dataset.annotations) by_image[a.image_id].push_back(a);

  annotations::Dataset out;
  out.categories = dataset.categories;
  std::int64_t next_image = 1;
  std::int64_t next_annotation = 1;
  for (std::size_t idx = 0; idx < dataset.images.size(); ++idx) {
    const auto& im = dataset.images[idx];
    const fs::path src = image_root / im.file_name;
    if (!fs::exists(src)) throw Error("cannot read image file: " + src.string());
    const std::string stem = src.stem().string();

    const std::string orig_name = "images/img" + std::to_string(im.id) + "_" + stem + ".png";
    augmentation::RasterImage raster;
    try {
      raster = png_io::read_png(src);
    } catch (const Error& e) {
      throw Error("cannot read image file: " + src.string() + " (" + e.what() + ")");
    }
    if (raster.width != im.width || raster.height != im.height)
      throw ValidationError("image " + std::to_string(im.id) + ": file " + src.string() +
                            " is " + std::to_string(raster.width) + "x" +
                            std::to_string(raster.height) + " but the record says " +
                            std::to_string(im.width) + "x" + std::to_string(im.height));
    fs::copy_file(src, out_dir / orig_name, fs::copy_options::overwrite_existing);
    const std::int64_t orig_id = next_image++;
    out.images.push_back({orig_id, orig_name, im.width, im.height});
    for (const auto& a : by_image[im.id]) {
      annotations::InstanceAnnotation copy = a;
      copy.id = next_annotation++;
      copy.image_id = orig_id;
      out.annotations.push_back(std::move(copy));
    }

    const augmentation::RasterImage rgb =
        raster.channels == 1 ? augmentation::gray_to_rgb(raster) : raster;
    for (int k = 1; k <= copies; ++k) {
      const auto spec = augmentation::sample_transform(
          params, derive_seed(seed, idx, static_cast<std::uint64_t>(k)), im.width, im.height);
      auto [aug, anns] =
          augmentation::augment_sample(rgb, by_image[im.id], spec, params.min_instance_area);
      int w = im.width, h = im.height;
      if (resize_to > 0 && (w != resize_to || h != resize_to)) {
        aug = augmentation::resize_image(aug, resize_to, resize_to);
        const double sx = static_cast<double>(resize_to) / w;
        const double sy = static_cast<double>(resize_to) / h;
        for (auto& a : anns)
          for (auto& poly : a.polygons)
            for (auto& p : poly) {
              p.x *= sx;
              p.y *= sy;
            }
        w = h = resize_to;
      }
      const std::string var_name = "images/img" + std::to_string(im.id) + "_aug" +
                                   std::to_string(k) + "_" + stem + ".png";
      png_io::write_png(aug, out_dir / var_name);
      const std::int64_t var_id = next_image++;
      out.images.push_back({var_id, var_name, w, h});
      for (auto& a : anns) {
        a.id = next_annotation++;
        a.image_id = var_id;
        out.annotations.push_back(a);
      }
    }
  }
  annotations::save_dataset_file(out, out_annotations_path);
  return out;
}

namespace {

void run_training(const std::string& train_command, const fs::path& dataset,
                  const fs::path& model_output) {
  const std::string cmd = substitute_placeholders(
      train_command, {{"dataset", dataset.string()}, {"output", model_output.string()}});
  const CommandResult res = run_command(cmd);
  if (res.exit_code != 0)
    throw CommandError("training command failed (exit " + std::to_string(res.exit_code) +
                           "): " + cmd,
                       res.exit_code, res.output);
  if (!fs::exists(model_output))
    throw CommandError("training command produced no model at " + model_output.string(), 0,
                       res.output);
}

}  // namespace

RunManifest run_ssl_round(const PipelineConfig& cfg) {
  for (const auto& p : {cfg.stenosis_train_path, cfg.vessel_path, cfg.validation_path})
    if (!fs::exists(p)) throw ConfigError("dataset path does not exist: " + p.string());
  fs::create_directories(cfg.workdir);

  const std::string hash = config_hash(cfg);
  const fs::path manifest_path = cfg.workdir / "manifest.json";
  RunManifest man;
  if (fs::exists(manifest_path)) {
    const RunManifest prev = manifest_from_json(read_file(manifest_path));
    if (prev.config_hash == hash) man = prev;  // resume; otherwise start fresh
  }
  man.config_hash = hash;
  if (man.started_at.empty()) man.started_at = iso_now();
  man.timing_protocol =
      cfg.jobs > 1 ? "per-image-parallel-approximate" : "per-image-sequential";

  const auto save = [&] { write_file_atomic(manifest_path, manifest_to_json(man)); };
  const auto stage_done = [&](const std::string& stage) {
    const auto it = man.stages.find(stage);
    if (it == man.stages.end() || !it->second.completed) return false;
    for (const auto& o : it->second.outputs)
      if (!fs::exists(o)) return false;
    return true;
  };
  const auto finish = [&](const std::string& stage, std::vector<std::string> outputs) {
    man.stages[stage] = {true, std::move(outputs)};
    save();
  };
  save();

  const annotations::Dataset stenosis = annotations::load_dataset_file(cfg.stenosis_train_path);
  const annotations::Dataset vessel = annotations::load_dataset_file(cfg.vessel_path);
  const annotations::Dataset val = annotations::load_dataset_file(cfg.validation_path);

  // Stage 1: train the first model on the stenosis set.
  fs::path stage1_input = cfg.stenosis_train_path;
  if (cfg.augment_copies > 0) {
    const fs::path aug_json = cfg.workdir / "stage1_train_set" / "annotations.json";
    if (!stage_done("stage1_augment")) {
      offline_augment(stenosis, cfg.stenosis_train_path.parent_path(), cfg.augmentation,
                      cfg.augment_copies, cfg.seed, cfg.resize_to, aug_json);
      finish("stage1_augment", {aug_json.string()});
    }
    stage1_input = aug_json;
  }
  const fs::path stage1_model = cfg.workdir / "stage1_model";
  if (!stage_done("stage1_train")) {
    run_training(cfg.train_command, stage1_input, stage1_model);
    finish("stage1_train", {stage1_model.string()});
  }
  man.stage1_model_ref = stage1_model.string();

  // Stage 2: timed per-image inference on the vessel set.
  const fs::path vessel_pred_path = cfg.workdir / "vessel_predictions.json";
  const fs::path vessel_timings_path = cfg.workdir / "vessel_timings.json";
  if (!stage_done("vessel_infer")) {
    auto tp = time_predictor(cfg.infer_command, vessel.images, cfg.vessel_path.parent_path(),
                             cfg.workdir / "vessel_preds", stage1_model.string(), cfg.jobs);
    write_file(vessel_pred_path, pseudo_label::serialize_prediction_set(tp.preds));
    write_file(vessel_timings_path, timings_to_json(tp.timings));
    for (auto& f : tp.failures) man.failures.push_back("vessel_infer: " + f);
    finish("vessel_infer", {vessel_pred_path.string(), vessel_timings_path.string()});
  }
  man.vessel_predictions_path = vessel_pred_path.string();
  man.vessel_timings_path = vessel_timings_path.string();
  const pseudo_label::PredictionSet vessel_preds =
      pseudo_label::parse_prediction_set(read_file(vessel_pred_path));

  // Stage 3: threshold selection per policy.
  if (cfg.threshold_policy.kind == ThresholdPolicy::Kind::fixed) {
    man.selected_tau = cfg.threshold_policy.fixed_tau;
    if (!stage_done("select_threshold")) finish("select_threshold", {});
  } else if (!stage_done("select_threshold")) {
    const fs::path val_pred1_path = cfg.workdir / "val_predictions_stage1.json";
    const fs::path val_timings1_path = cfg.workdir / "val_timings_stage1.json";
    const fs::path sweep_csv = cfg.workdir / "sweep_report.csv";
    auto tp = time_predictor(cfg.infer_command, val.images, cfg.validation_path.parent_path(),
                             cfg.workdir / "val_preds_stage1", stage1_model.string(), cfg.jobs);
    write_file(val_pred1_path, pseudo_label::serialize_prediction_set(tp.preds));
    write_file(val_timings1_path, timings_to_json(tp.timings));
    for (auto& f : tp.failures) man.failures.push_back("select_threshold: " + f);
    const auto grid = cfg.threshold_policy.grid.empty()
                          ? pseudo_label::default_threshold_grid()
                          : cfg.threshold_policy.grid;
    const auto sweep = pseudo_label::sweep_threshold(tp.preds, val, grid);
    write_file(sweep_csv, pseudo_label::sweep_to_csv(sweep));
    man.selected_tau = sweep.selected;
    man.sweep_report_path = sweep_csv.string();
    finish("select_threshold",
           {val_pred1_path.string(), val_timings1_path.string(), sweep_csv.string()});
  }
  const double tau = man.selected_tau;

  // Stage 4: pseudo-dataset assembly and merge with the stenosis set.
  const fs::path pseudo_path = cfg.workdir / "pseudo_dataset.json";
  const fs::path merged_path = cfg.workdir / "merged_dataset.json";
  const fs::path id_map_path = cfg.workdir / "merged_dataset.idmap.json";
  if (!stage_done("assemble")) {
    const auto kept = pseudo_label::filter_predictions(vessel_preds, tau);
    const annotations::Dataset vessel_rebased =
        rebase_image_paths(vessel, cfg.vessel_path.parent_path(), cfg.workdir);
    const annotations::Dataset pseudo =
        pseudo_label::build_pseudo_dataset(vessel_rebased.images, kept);
    annotations::save_dataset_file(pseudo, pseudo_path);
    const annotations::Dataset stenosis_rebased =
        rebase_image_paths(stenosis, cfg.stenosis_train_path.parent_path(), cfg.workdir);
    const auto merged = annotations::merge_datasets(stenosis_rebased, pseudo);
    annotations::save_dataset_file(merged.dataset, merged_path);
    write_file(id_map_path, annotations::id_map_to_json(merged.id_map));
    man.counts["stenosis_images"] = static_cast<long long>(stenosis.images.size());
    man.counts["stenosis_annotations"] = static_cast<long long>(stenosis.annotations.size());
    man.counts["vessel_images"] = static_cast<long long>(vessel.images.size());
    man.counts["kept_predictions"] = static_cast<long long>(kept.size());
    man.counts["pseudo_images"] = static_cast<long long>(pseudo.images.size());
    man.counts["pseudo_annotations"] = static_cast<long long>(pseudo.annotations.size());
    man.counts["merged_images"] = static_cast<long long>(merged.dataset.images.size());
    man.counts["merged_annotations"] =
        static_cast<long long>(merged.dataset.annotations.size());
    finish("assemble", {pseudo_path.string(), merged_path.string(), id_map_path.string()});
  }
  man.pseudo_dataset_path = pseudo_path.string();
  man.merged_dataset_path = merged_path.string();
  man.id_map_path = id_map_path.string();

  // Stage 5: train the final model on the merged set.
  fs::path stage2_input = merged_path;
  if (cfg.augment_copies > 0) {
    const fs::path aug_json = cfg.workdir / "stage2_train_set" / "annotations.json";
    if (!stage_done("stage2_augment")) {
      const annotations::Dataset merged = annotations::load_dataset_file(merged_path);
      offline_augment(merged, cfg.workdir, cfg.augmentation, cfg.augment_copies,
                      cfg.seed ^ 0x5ca1ab1eULL, cfg.resize_to, aug_json);
      finish("stage2_augment", {aug_json.string()});
    }
    stage2_input = aug_json;
  }
  const fs::path stage2_model = cfg.workdir / "stage2_model";
  if (!stage_done("stage2_train")) {
    run_training(cfg.train_command, stage2_input, stage2_model);
    finish("stage2_train", {stage2_model.string()});
  }
  man.stage2_model_ref = stage2_model.string();

  // Stage 6: timed inference on the validation set and final scoring.
  const fs::path val_pred_path = cfg.workdir / "val_predictions.json";
  const fs::path val_timings_path = cfg.workdir / "val_timings.json";
  const fs::path report_path = cfg.workdir / "final_report.json";
  if (!stage_done("evaluate")) {
    auto tp = time_predictor(cfg.infer_command, val.images, cfg.validation_path.parent_path(),
                             cfg.workdir / "val_preds", stage2_model.string(), cfg.jobs);
    write_file(val_pred_path, pseudo_label::serialize_prediction_set(tp.preds));
    write_file(val_timings_path, timings_to_json(tp.timings));
    for (auto& f : tp.failures) man.failures.push_back("evaluate: " + f);
    const auto report = evaluation::evaluate_submission(val, tp.preds, tp.timings,
                                                        cfg.time_limit);
    write_file(report_path, evaluation::report_to_json(report));
    finish("evaluate",
           {val_pred_path.string(), val_timings_path.string(), report_path.string()});
  }
  man.val_predictions_path = val_pred_path.string();
  man.val_timings_path = val_timings_path.string();
  man.final_report_path = report_path.string();

  man.finished_at = iso_now();
  for (const auto& [stage, rec] : man.stages)
    for (const auto& o : rec.outputs)
      if (!fs::exists(o))
        throw Error("manifest finalization: recorded output missing for stage " + stage +
                    ": " + o);
  save();
  return man;
}

}  // namespace stenoseg::pipeline
