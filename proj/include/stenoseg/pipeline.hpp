#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stenoseg/annotations.hpp"
#include "stenoseg/augmentation.hpp"
#include "stenoseg/errors.hpp"
#include "stenoseg/evaluation.hpp"
#include "stenoseg/pseudo_label.hpp"

namespace stenoseg::pipeline {

struct ThresholdPolicy {
  enum class Kind { fixed, sweep };
  Kind kind = Kind::sweep;
  double fixed_tau = 0.5;
  std::vector<double> grid;  // empty means the default grid
};

// Command templates run through /bin/sh. Placeholders: {dataset} and {output}
// are required in train_command; {image} and {output} in infer_command;
// {model} is substituted in infer_command when present so the stage-1/stage-2
// model artifact can be referenced.
struct PipelineConfig {
  std::filesystem::path stenosis_train_path;
  std::filesystem::path vessel_path;
  std::filesystem::path validation_path;
  std::string train_command;
  std::string infer_command;
  ThresholdPolicy threshold_policy;
  augmentation::AugmentationParams augmentation;
  int augment_copies = 0;  // 0 = hand the trainer the dataset as-is
  int resize_to = 640;     // applied to materialized augmented variants
  std::uint64_t seed = 0;
  double time_limit = 5.0;  // seconds per image
  std::filesystem::path workdir;
  int jobs = 1;  // >1 marks timings approximate
};

// JSON config file. Environment overrides: STENOSEG_WORKDIR, STENOSEG_SEED.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig config_from_json_text(const std::string& bytes,
                                     const std::filesystem::path& base_dir);

// Parses an AugmentationParams override object (any subset of keys).
augmentation::AugmentationParams augmentation_params_from_json(const std::string& bytes);

// FNV-1a 64 digest of the canonicalized (sorted-key, compact) config JSON.
std::string config_hash(const PipelineConfig& cfg);

struct StageRecord {
  bool completed = false;
  std::vector<std::string> outputs;
};

struct RunManifest {
  std::string config_hash;
  std::string started_at;
  std::string finished_at;
  std::string timing_protocol;
  std::map<std::string, StageRecord> stages;
  std::string stage1_model_ref;
  std::string stage2_model_ref;
  std::string vessel_predictions_path;
  std::string vessel_timings_path;
  std::string sweep_report_path;
  double selected_tau = 0.0;
  std::string pseudo_dataset_path;
  std::string merged_dataset_path;
  std::string id_map_path;
  std::string val_predictions_path;
  std::string val_timings_path;
  std::string final_report_path;
  std::map<std::string, long long> counts;
  std::vector<std::string> failures;  // per-image inference failure notes
};

std::string manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const std::string& bytes);

struct CommandResult {
  int exit_code = 0;
  std::string output;  // combined stdout+stderr
  double seconds = 0.0;
};

// Runs a shell command, capturing output and wall-clock time.
CommandResult run_command(const std::string& command);

std::string substitute_placeholders(std::string tmpl,
                                    const std::map<std::string, std::string>& values);

struct TimedPredictions {
  pseudo_label::PredictionSet preds;
  std::map<std::int64_t, double> timings;  // image id -> wall-clock seconds
  std::vector<std::string> failures;       // notes for images whose command failed
};

// Invokes infer_command once per image ({image} -> image_root/file_name,
// {output} -> per-image prediction file under output_dir, {model} ->
// model_ref), measuring wall-clock time per invocation. A failing command
// yields a zero-prediction image with a failure note rather than an abort; a
// malformed prediction file is an error naming the file.
TimedPredictions time_predictor(const std::string& infer_command,
                                const std::vector<annotations::ImageRecord>& images,
                                const std::filesystem::path& image_root,
                                const std::filesystem::path& output_dir,
                                const std::string& model_ref, int jobs = 1);

// Materializes `copies` augmented variants per image next to the originals,
// deterministic under seed; variants are resized to resize_to when it is
// positive. copies == 0 writes the input unchanged.
annotations::Dataset offline_augment(const annotations::Dataset& dataset,
                                     const std::filesystem::path& image_root,
                                     const augmentation::AugmentationParams& params,
                                     int copies, std::uint64_t seed, int resize_to,
                                     const std::filesystem::path& out_annotations_path);

// Executes the full semi-supervised round: stage-1 training, timed vessel
// inference, threshold selection, pseudo-dataset assembly and merge, stage-2
// training, and final evaluation. Every stage is resumable from the manifest;
// a completed manifest short-circuits all external commands.
RunManifest run_ssl_round(const PipelineConfig& cfg);

std::string timings_to_json(const std::map<std::int64_t, double>& timings);
std::map<std::int64_t, double> timings_from_json(const std::string& bytes);

}  // namespace stenoseg::pipeline
