// distillkit command-line front end.
//
// Every subcommand reads the same JSON config. Exit status: 0 success,
// 2 configuration or usage error, 3 runtime failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "distillkit/distill.hpp"
#include "distillkit/error.hpp"
#include "distillkit/evaluation.hpp"
#include "distillkit/harness.hpp"
#include "distillkit/teacher.hpp"

namespace fs = std::filesystem;
namespace dk = distillkit;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string weights;
  std::string cache;
  std::string format = "table";
  std::vector<std::string> inputs;
};

dk::ExperimentConfig config_of(const Options &o) {
  if (o.config.empty()) throw dk::ConfigError("--config is required for this command");
  return dk::load_experiment_config(o.config);
}

std::uint64_t seed_of(const Options &o, const dk::ExperimentConfig &cfg) {
  return o.seed.value_or(cfg.seeds.front());
}

fs::path out_or(const Options &o, const fs::path &fallback) {
  return o.out.empty() ? fallback : fs::path(o.out);
}

dk::DatasetIndex corpus_of(const dk::ExperimentConfig &cfg) {
  if (cfg.dataset_root.empty()) throw dk::ConfigError("dataset.root: required");
  return dk::scan_dataset(cfg.dataset_root, cfg.resolution);
}

void write_text(const fs::path &path, const std::string &text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw dk::IoError("cannot write " + path.string());
}

/// Single-seed result document written next to trained weights.
void write_run_result(const fs::path &dir, const std::string &name, const dk::ExperimentConfig &cfg,
                      const dk::DatasetIndex &corpus, std::uint64_t seed,
                      const dk::EvaluationReport &rep, std::int64_t params,
                      const std::string &cache_fp = "") {
  dk::ExperimentResult r;
  r.name = name;
  r.runs = {rep.accuracy};
  r.seeds = {seed};
  r.class_mean_accuracy = rep.class_mean_accuracy;
  r.trainable_params = params;
  r.config_fingerprint = dk::config_fingerprint(cfg);
  r.corpus_fingerprint = dk::dataset_fingerprint(corpus, true);
  r.cache_fingerprint = cache_fp;
  dk::summarize(r);
  dk::write_results(dir / "result.json", {r});
  std::cout << name << ": test accuracy " << rep.accuracy << " (" << rep.correct << "/"
            << rep.total << "), trainable params " << params << "\n";
}

std::string weight_format(const fs::path &path) {
  const auto file = dk::read_tensor_file(path);
  return nlohmann::json::parse(file.metadata).value("format", "");
}

int cmd_synth(const Options &o) {
  dk::SyntheticCorpusSpec spec;
  fs::path root = o.out;
  if (!o.config.empty()) {
    const auto cfg = config_of(o);
    if (cfg.synth) spec = *cfg.synth;
    spec.resolution = cfg.resolution;
    if (root.empty()) root = cfg.dataset_root;
  }
  if (o.seed) spec.generator_seed = *o.seed;
  if (root.empty()) throw dk::ConfigError("synth needs --out or dataset.root");
  const auto index = dk::generate_synthetic_corpus(spec, root);
  std::cout << "wrote " << index.size() << " images in " << index.num_classes() << " classes to "
            << root.string() << "\n";
  return 0;
}

int cmd_scan(const Options &o) {
  const auto cfg = config_of(o);
  const auto index = corpus_of(cfg);
  const auto path = out_or(o, "index.csv");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  dk::write_index_manifest(path, index, "all");
  std::cout << index.size() << " samples, " << index.num_classes() << " classes, fingerprint "
            << dk::dataset_fingerprint(index, true) << "\n";
  return 0;
}

int cmd_split(const Options &o) {
  const auto cfg = config_of(o);
  const auto split = dk::split_for_seed(cfg, corpus_of(cfg), seed_of(o, cfg));
  const auto path = out_or(o, "split.csv");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  dk::write_split_manifest(path, split);
  std::cout << "train " << split.train.size() << ", test " << split.test.size() << "\n";
  return 0;
}

int cmd_train_baseline(const Options &o) {
  const auto cfg = config_of(o);
  const auto seed = seed_of(o, cfg);
  const auto corpus = corpus_of(cfg);
  const auto split = dk::split_for_seed(cfg, corpus, seed);
  auto tc = cfg.train;
  tc.seed = seed;
  auto res = dk::train_baseline(dk::make_student(cfg, corpus.num_classes(), seed), split.train, tc,
                                &split.test);
  const auto dir = out_or(o, "baseline");
  fs::create_directories(dir);
  dk::save_model(dir / "model.dkwt", res.model);
  res.history.write_jsonl(dir / "history.jsonl");
  write_run_result(dir, "student", cfg, corpus, seed, dk::evaluate_detailed(res.model, split.test),
                   dk::count_trainable_params(res.model));
  return 0;
}

int cmd_train_teacher(const Options &o) {
  const auto cfg = config_of(o);
  const auto seed = seed_of(o, cfg);
  const auto corpus = corpus_of(cfg);
  const auto split = dk::split_for_seed(cfg, corpus, seed);
  auto tc = cfg.teacher_train;
  tc.seed = seed;
  auto res = dk::train_teacher(dk::prepare_teacher(cfg, split.train, seed), split.train, tc,
                               &split.test);
  const auto dir = out_or(o, "teacher");
  fs::create_directories(dir);
  dk::save_teacher(dir / "teacher.dkwt", res.teacher);
  res.history.write_jsonl(dir / "history.jsonl");
  write_run_result(dir, "teacher", cfg, corpus, seed,
                   dk::evaluate_detailed(res.teacher, split.test),
                   dk::count_trainable_params(res.teacher));
  return 0;
}

int cmd_extract_features(const Options &o) {
  const auto cfg = config_of(o);
  const auto seed = seed_of(o, cfg);
  fs::path weights = o.weights;
  if (weights.empty() && cfg.teacher_weights) weights = *cfg.teacher_weights;
  if (weights.empty()) throw dk::ConfigError("teacher.weights: required (or pass --weights)");
  const auto teacher = dk::load_teacher(weights);
  const auto split = dk::split_for_seed(cfg, corpus_of(cfg), seed);
  const auto cache = dk::extract_features(teacher, split.train, true);
  fs::path path = o.out;
  if (path.empty() && cfg.cache_path) path = *cfg.cache_path;
  if (path.empty()) path = "features.fch";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  dk::write_feature_cache(path, cache);
  std::cout << "cached " << cache.entries.size() << " feature vectors, fingerprint "
            << dk::to_hex(cache.fingerprint) << "\n";
  return 0;
}

int cmd_distill(const Options &o) {
  const auto cfg = config_of(o);
  const auto seed = seed_of(o, cfg);
  fs::path cache_path = o.cache;
  if (cache_path.empty() && cfg.cache_path) cache_path = *cfg.cache_path;
  if (cache_path.empty()) throw dk::ConfigError("distill.cache_path: required (or pass --cache)");
  const auto cache = dk::read_feature_cache(cache_path);
  const auto corpus = corpus_of(cfg);
  const auto split = dk::split_for_seed(cfg, corpus, seed);
  auto tc = cfg.distill_train;
  tc.seed = seed;
  auto res = dk::train_student(dk::make_student(cfg, corpus.num_classes(), seed), split.train,
                               cache, tc, &split.test);
  const auto dir = out_or(o, "distilled");
  fs::create_directories(dir);
  dk::save_model(dir / "model.dkwt", res.model);
  res.history.write_jsonl(dir / "history.jsonl");
  write_run_result(dir, "student+distill", cfg, corpus, seed,
                   dk::evaluate_detailed(res.model, split.test),
                   dk::count_trainable_params(res.model), dk::to_hex(cache.fingerprint));
  return 0;
}

int cmd_evaluate(const Options &o) {
  const auto cfg = config_of(o);
  if (o.weights.empty()) throw dk::ConfigError("evaluate needs --weights");
  const auto split = dk::split_for_seed(cfg, corpus_of(cfg), seed_of(o, cfg));
  dk::EvaluationReport rep;
  std::int64_t params = 0;
  if (weight_format(o.weights) == "distillkit.teacher") {
    const auto t = dk::load_teacher(o.weights);
    rep = dk::evaluate_detailed(t, split.test);
    params = dk::count_trainable_params(t);
  } else {
    const auto m = dk::load_model(o.weights);
    rep = dk::evaluate_detailed(m, split.test);
    params = dk::count_trainable_params(m);
  }
  const nlohmann::json j{{"accuracy", rep.accuracy},
                         {"class_mean_accuracy", rep.class_mean_accuracy},
                         {"correct", rep.correct},
                         {"total", rep.total},
                         {"trainable_params", params}};
  if (o.out.empty())
    std::cout << j.dump(2) << "\n";
  else
    write_text(o.out, j.dump(2) + "\n");
  return 0;
}

int cmd_report(const Options &o) {
  if (o.inputs.empty()) throw dk::ConfigError("report needs at least one results file");
  std::vector<dk::ExperimentResult> all;
  for (const auto &f : o.inputs) {
    auto rs = dk::read_results(f);
    all.insert(all.end(), rs.begin(), rs.end());
  }
  dk::require_same_corpus(all);
  const auto text = dk::report(all, dk::parse_report_format(o.format));
  if (o.out.empty())
    std::cout << text;
  else
    write_text(o.out, text);
  return 0;
}

int cmd_run(const Options &o) {
  auto cfg = config_of(o);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.out_dir = o.out;
  const auto results = dk::run_experiment(cfg);
  std::cout << dk::report(results, dk::ReportFormat::table);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"distillkit: teacher fusion and feature distillation toolkit"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App *sub, bool needs_config = true) {
    auto *c = sub->add_option("--config", o.config, "JSON experiment config");
    if (needs_config) c->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Run seed (defaults to the first configured seed)");
    sub->add_option("--out", o.out, "Output file or directory");
    return sub;
  };

  std::vector<std::pair<CLI::App *, int (*)(const Options &)>> commands;
  auto add = [&](const char *name, const char *help, int (*fn)(const Options &)) {
    auto *sub = common(app.add_subcommand(name, help));
    commands.emplace_back(sub, fn);
    return sub;
  };

  add("synth", "Generate the procedural texture corpus", cmd_synth);
  add("scan", "Catalog a class-per-directory corpus", cmd_scan);
  add("split", "Write the stratified train/test split", cmd_split);
  add("train-baseline", "Rotation+mixup, KL-loss training of the student spec", cmd_train_baseline);
  add("train-teacher", "Fuse frozen branches and train the combination head", cmd_train_teacher);
  add("extract-features", "Cache teacher features for the training split", cmd_extract_features)
      ->add_option("--weights", o.weights, "Teacher weight file");
  add("distill", "Train the student against cached teacher features", cmd_distill)
      ->add_option("--cache", o.cache, "Feature cache file");
  add("evaluate", "Test accuracy of a model or teacher weight file", cmd_evaluate)
      ->add_option("--weights", o.weights, "Weight file")->required();
  auto *rep = add("report", "Tabulate result files", cmd_report);
  rep->add_option("results", o.inputs, "results.json / result.json files")->required();
  rep->add_option("--format", o.format, "table, csv or json")
      ->check(CLI::IsMember({"table", "csv", "json"}));
  add("run", "Run the configured phase over every seed", cmd_run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (const auto &[sub, fn] : commands)
      if (sub->parsed()) return fn(o);
  } catch (const dk::ConfigError &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 3;
}
