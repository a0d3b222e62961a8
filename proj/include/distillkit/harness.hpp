#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "distillkit/dataset.hpp"
#include "distillkit/distill.hpp"
#include "distillkit/model.hpp"
#include "distillkit/teacher.hpp"
#include "distillkit/train_config.hpp"

namespace distillkit {

// ---- synthetic corpus ------------------------------------------------------

/// Procedural texture corpus. Class c draws pattern family c % 4 (stripes,
/// checkerboard, rings, dot lattice) at frequency band c / 4; orientation,
/// phase, colours and noise are random per image, so labels survive
/// rotation.
struct SyntheticCorpusSpec {
  int num_classes = 8;
  int per_class = 50;
  Resolution resolution{32, 32, 3};
  std::uint64_t generator_seed = 0;
  double noise = 0.08; // std of additive Gaussian pixel noise in [0,1] units

  void validate() const;
};

/// Writes `<out_root>/class_XX/img_YYYY.png` and returns the scanned index.
/// Identical specs produce byte-identical files. Throws CorpusWriteError.
DatasetIndex generate_synthetic_corpus(const SyntheticCorpusSpec &spec,
                                       const std::filesystem::path &out_root);

// ---- configuration -----------------------------------------------------------

enum class Phase { baseline, teacher, distill, pipeline };
std::string to_string(Phase p);
Phase parse_phase(std::string_view s);

struct BranchConfig {
  BackboneSpec spec;
  /// Phase I weights; when absent the branch is trained with the baseline
  /// recipe before being frozen.
  std::optional<std::filesystem::path> weights;
};

struct ExperimentConfig {
  // dataset
  std::filesystem::path dataset_root;
  Resolution resolution{32, 32, 3};
  double train_fraction = 0.2;
  std::optional<std::uint64_t> split_seed; // defaults to the run seed
  bool stratified = true;

  // model (the student / baseline network)
  BackboneSpec model;

  // phase recipes
  TrainConfig train;         // Phase I: kl + rotation_mixup
  TrainConfig teacher_train; // Phase II: entropy + rotation_only
  TrainConfig distill_train; // Phase III: distill + rotation_only

  std::vector<BranchConfig> branches;
  bool shared_weight = false;
  std::optional<std::filesystem::path> teacher_weights;
  std::optional<std::filesystem::path> cache_path;

  std::string name = "experiment";
  Phase phase = Phase::pipeline;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out_dir = "results";

  std::optional<SyntheticCorpusSpec> synth;

  /// Canonical, path-free form used for fingerprints.
  nlohmann::json to_json() const;
};

/// Parses the nested JSON config. Relative paths resolve against
/// `base_dir`. Unknown keys and ill-typed values raise ConfigError naming
/// the offending key path (e.g. "teacher.branches[1].spec").
ExperimentConfig parse_experiment_config(const nlohmann::json &j,
                                         const std::filesystem::path &base_dir = ".");
ExperimentConfig load_experiment_config(const std::filesystem::path &path);

std::string config_fingerprint(const ExperimentConfig &cfg);

// ---- phases --------------------------------------------------------------------

DatasetSplit split_for_seed(const ExperimentConfig &cfg, const DatasetIndex &index,
                            std::uint64_t seed);

/// Fresh student/baseline network (pruning already applied in cfg.model).
ModelHandle make_student(const ExperimentConfig &cfg, int num_classes, std::uint64_t seed);

/// Loads or trains (baseline recipe) every branch, then assembles a teacher
/// with a fresh head. Branch b uses seed `seed * 1000 + b + 1`.
TeacherModel prepare_teacher(const ExperimentConfig &cfg, const DatasetIndex &train,
                             std::uint64_t seed);

// ---- results ---------------------------------------------------------------------

struct ExperimentResult {
  std::string name;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0; // sample standard deviation (0 for one run)
  std::vector<double> runs;
  std::vector<std::uint64_t> seeds;
  double class_mean_accuracy = 0.0;
  std::int64_t trainable_params = 0;
  std::string config_fingerprint;
  std::string corpus_fingerprint;
  std::string cache_fingerprint; // empty when no cache was involved
  double wall_time_s = 0.0;
};

/// Fills mean and std from `runs`.
void summarize(ExperimentResult &result);

/// `include_timing` adds wall_time_s; result files omit it so reruns are
/// byte-identical.
nlohmann::json to_json(const ExperimentResult &r, bool include_timing = false);
ExperimentResult result_from_json(const nlohmann::json &j);

void write_results(const std::filesystem::path &path, const std::vector<ExperimentResult> &rs);
std::vector<ExperimentResult> read_results(const std::filesystem::path &path);

/// Throws InvalidStateError when results come from different corpora.
void require_same_corpus(const std::vector<ExperimentResult> &results);

/// Runs the configured phase over every seed, writes
/// `<out_dir>/<name>/{results.json, results.csv, manifest.json}` and
/// returns one result per arm (pipeline: teacher, distilled, baseline).
std::vector<ExperimentResult> run_experiment(const ExperimentConfig &cfg);

enum class ReportFormat { table, csv, json };
ReportFormat parse_report_format(std::string_view s);

/// Rows sorted by mean accuracy, descending.
std::string report(std::vector<ExperimentResult> results, ReportFormat format);

/// Inverse of the csv report (name, accuracy columns, params).
std::vector<ExperimentResult> parse_report_csv(std::string_view csv);

} // namespace distillkit
