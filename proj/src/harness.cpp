#include "distillkit/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "distillkit/error.hpp"
#include "distillkit/evaluation.hpp"
#include "distillkit/fingerprint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace distillkit {

std::string to_string(Phase p) {
  switch (p) {
  case Phase::baseline: return "baseline";
  case Phase::teacher: return "teacher";
  case Phase::distill: return "distill";
  case Phase::pipeline: return "pipeline";
  }
  return "?";
}

Phase parse_phase(std::string_view s) {
  if (s == "baseline") return Phase::baseline;
  if (s == "teacher") return Phase::teacher;
  if (s == "distill") return Phase::distill;
  if (s == "pipeline") return Phase::pipeline;
  throw ConfigError("unknown phase '" + std::string(s) + "'");
}

// ---- config parsing ----------------------------------------------------------

namespace {

/// Walks one JSON object, dispatching known keys and rejecting the rest.
class Section {
public:
  Section(const json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename F> void on(const std::string &key, F &&handler) {
    known_.push_back(key);
    if (!j_.contains(key)) return;
    const auto where = path_.empty() ? key : path_ + "." + key;
    try {
      handler(j_.at(key), where);
    } catch (const ConfigError &) {
      throw;
    } catch (const json::exception &e) {
      throw ConfigError(where + ": " + e.what());
    } catch (const Error &e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(known_.begin(), known_.end(), it.key()) == known_.end())
        throw ConfigError((path_.empty() ? "" : path_ + ".") + it.key() + ": unknown key");
  }

private:
  const json &j_;
  std::string path_;
  std::vector<std::string> known_;
};

Resolution parse_resolution(const json &v) {
  const auto r = v.get<std::vector<int>>();
  if (r.size() != 3 || r[2] != 3 || r[0] < 1 || r[1] < 1)
    throw InvalidArgumentError("resolution must be [height, width, 3]");
  return Resolution{r[0], r[1], r[2]};
}

json resolution_json(const Resolution &r) { return json::array({r.height, r.width, r.channels}); }

fs::path resolve(const fs::path &base, const json &v) {
  fs::path p(v.get<std::string>());
  return p.is_absolute() ? p : base / p;
}

/// A reference-backbone name, or {"name":..., "stage_widths":..., ...},
/// optionally with "blocks_kept".
BackboneSpec parse_model(const json &v, const std::string &path, Resolution res,
                         const fs::path &base) {
  if (v.is_string()) {
    try {
      return reference_backbone(v.get<std::string>(), res);
    } catch (const Error &e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  BackboneSpec spec;
  std::optional<int> blocks;
  Section s(v, path);
  s.on("reference", [&](const json &x, auto &) { spec = reference_backbone(x.get<std::string>(), res); });
  s.on("name", [&](const json &x, auto &) { spec.name = x.get<std::string>(); });
  s.on("stage_widths", [&](const json &x, auto &) { spec.stage_widths = x.get<std::vector<int>>(); });
  s.on("stage_depths", [&](const json &x, auto &) { spec.stage_depths = x.get<std::vector<int>>(); });
  s.on("blocks_kept", [&](const json &x, auto &) { blocks = x.get<int>(); });
  s.on("pretrained_weights", [&](const json &x, auto &) { spec.pretrained_weights = resolve(base, x); });
  s.finish();
  spec.input_resolution = res;
  try {
    spec.validate();
    if (blocks) spec = prune_variant(spec, *blocks);
  } catch (const Error &e) {
    throw ConfigError(path + ": " + e.what());
  }
  return spec;
}

} // namespace

json ExperimentConfig::to_json() const {
  json branches_json = json::array();
  for (const auto &b : branches) {
    json bj{{"spec", spec_to_json(b.spec)}};
    bj["spec"].erase("pretrained_weights");
    branches_json.push_back(bj);
  }
  json model_json = spec_to_json(model);
  model_json.erase("pretrained_weights");
  json j{
      {"dataset",
       {{"resolution", resolution_json(resolution)},
        {"train_fraction", train_fraction},
        {"stratified", stratified}}},
      {"model", model_json},
      {"train", distillkit::to_json(train)},
      {"teacher",
       {{"branches", branches_json},
        {"shared_weight", shared_weight},
        {"train", distillkit::to_json(teacher_train)}}},
      {"distill", {{"train", distillkit::to_json(distill_train)}}},
      {"experiment", {{"name", name}, {"phase", to_string(phase)}, {"seeds", seeds}}},
  };
  if (split_seed) j["dataset"]["split_seed"] = *split_seed;
  return j;
}

std::string config_fingerprint(const ExperimentConfig &cfg) {
  return to_hex(digest_of(cfg.to_json().dump()));
}

ExperimentConfig parse_experiment_config(const json &root, const fs::path &base) {
  ExperimentConfig cfg;
  Section top(root, "");

  json model_json = "ref-student";
  json teacher_json = json::object();
  json distill_json = json::object();
  json train_json = json::object();

  top.on("dataset", [&](const json &v, const std::string &p) {
    Section s(v, p);
    s.on("root", [&](const json &x, auto &) { cfg.dataset_root = resolve(base, x); });
    s.on("resolution", [&](const json &x, auto &) { cfg.resolution = parse_resolution(x); });
    s.on("train_fraction", [&](const json &x, auto &q) {
      cfg.train_fraction = x.get<double>();
      if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
        throw ConfigError(q + ": must be in (0,1)");
    });
    s.on("split_seed", [&](const json &x, auto &) { cfg.split_seed = x.get<std::uint64_t>(); });
    s.on("stratified", [&](const json &x, auto &) { cfg.stratified = x.get<bool>(); });
    s.finish();
  });
  top.on("model", [&](const json &v, auto &) { model_json = v; });
  top.on("train", [&](const json &v, auto &) { train_json = v; });
  top.on("teacher", [&](const json &v, auto &) { teacher_json = v; });
  top.on("distill", [&](const json &v, auto &) { distill_json = v; });
  top.on("experiment", [&](const json &v, const std::string &p) {
    Section s(v, p);
    s.on("name", [&](const json &x, auto &) { cfg.name = x.get<std::string>(); });
    s.on("phase", [&](const json &x, auto &) { cfg.phase = parse_phase(x.get<std::string>()); });
    s.on("seeds", [&](const json &x, auto &q) {
      cfg.seeds = x.get<std::vector<std::uint64_t>>();
      if (cfg.seeds.empty()) throw ConfigError(q + ": at least one seed is required");
    });
    s.on("out_dir", [&](const json &x, auto &) { cfg.out_dir = resolve(base, x); });
    s.finish();
  });
  top.on("synth", [&](const json &v, const std::string &p) {
    SyntheticCorpusSpec spec;
    Section s(v, p);
    s.on("num_classes", [&](const json &x, auto &) { spec.num_classes = x.get<int>(); });
    s.on("per_class", [&](const json &x, auto &) { spec.per_class = x.get<int>(); });
    s.on("resolution", [&](const json &x, auto &) { spec.resolution = parse_resolution(x); });
    s.on("generator_seed", [&](const json &x, auto &) { spec.generator_seed = x.get<std::uint64_t>(); });
    s.on("noise", [&](const json &x, auto &) { spec.noise = x.get<double>(); });
    s.finish();
    try {
      spec.validate();
    } catch (const Error &e) {
      throw ConfigError(p + ": " + e.what());
    }
    cfg.synth = spec;
  });
  top.finish();

  cfg.model = parse_model(model_json, "model", cfg.resolution, base);
  cfg.train = train_config_from_json(train_json, "train");

  TrainConfig teacher_base = cfg.train;
  teacher_base.loss = LossKind::entropy;
  teacher_base.augmentation = Augmentation::rotation_only;
  cfg.teacher_train = teacher_base;
  Section ts(teacher_json, "teacher");
  ts.on("branches", [&](const json &v, const std::string &p) {
    if (!v.is_array()) throw ConfigError(p + ": expected an array");
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto bp = p + "[" + std::to_string(i) + "]";
      BranchConfig b;
      if (v[i].is_string()) {
        b.spec = parse_model(v[i], bp, cfg.resolution, base);
      } else {
        Section bs(v[i], bp);
        bool has_spec = false;
        bs.on("spec", [&](const json &x, const std::string &q) {
          b.spec = parse_model(x, q, cfg.resolution, base);
          has_spec = true;
        });
        bs.on("weights", [&](const json &x, auto &) { b.weights = resolve(base, x); });
        bs.finish();
        if (!has_spec) throw ConfigError(bp + ".spec: required");
      }
      cfg.branches.push_back(std::move(b));
    }
  });
  ts.on("shared_weight", [&](const json &v, auto &) { cfg.shared_weight = v.get<bool>(); });
  ts.on("weights", [&](const json &v, auto &) { cfg.teacher_weights = resolve(base, v); });
  ts.on("train", [&](const json &v, auto &p) {
    cfg.teacher_train = train_config_from_json(v, p, teacher_base);
  });
  ts.finish();

  TrainConfig distill_base = cfg.train;
  distill_base.loss = LossKind::distill;
  distill_base.augmentation = Augmentation::rotation_only;
  std::optional<bool> per_variant;
  cfg.distill_train = distill_base;
  Section ds(distill_json, "distill");
  ds.on("cache_path", [&](const json &v, auto &) { cfg.cache_path = resolve(base, v); });
  ds.on("per_variant_targets", [&](const json &v, auto &) { per_variant = v.get<bool>(); });
  ds.on("train", [&](const json &v, auto &p) {
    cfg.distill_train = train_config_from_json(v, p, distill_base);
  });
  ds.finish();
  if (per_variant) cfg.distill_train.per_variant_targets = *per_variant;

  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

// ---- phases --------------------------------------------------------------------

DatasetSplit split_for_seed(const ExperimentConfig &cfg, const DatasetIndex &index,
                            std::uint64_t seed) {
  return split_dataset(index, SplitSpec{cfg.train_fraction, cfg.split_seed.value_or(seed),
                                        cfg.stratified});
}

ModelHandle make_student(const ExperimentConfig &cfg, int num_classes, std::uint64_t seed) {
  return build_model(cfg.model, num_classes, seed);
}

TeacherModel prepare_teacher(const ExperimentConfig &cfg, const DatasetIndex &train,
                             std::uint64_t seed) {
  if (cfg.branches.empty()) throw ConfigError("teacher.branches: at least one branch is required");
  std::vector<ModelHandle> branches;
  for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
    const auto &bc = cfg.branches[b];
    if (bc.weights) {
      branches.push_back(load_model(*bc.weights));
      continue;
    }
    TrainConfig tc = cfg.train;
    tc.seed = seed * 1000 + b + 1;
    auto model = build_model(bc.spec, train.num_classes(), tc.seed);
    branches.push_back(train_baseline(std::move(model), train, tc).model);
  }
  return build_teacher(std::move(branches), train.num_classes(), seed, cfg.shared_weight);
}

// ---- results -----------------------------------------------------------------------

void summarize(ExperimentResult &r) {
  const auto n = static_cast<double>(r.runs.size());
  r.accuracy_mean = r.runs.empty() ? 0.0 : std::accumulate(r.runs.begin(), r.runs.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : r.runs) ss += (a - r.accuracy_mean) * (a - r.accuracy_mean);
  r.accuracy_std = r.runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

json to_json(const ExperimentResult &r, bool include_timing) {
  json j{{"name", r.name},
         {"accuracy_mean", r.accuracy_mean},
         {"accuracy_std", r.accuracy_std},
         {"runs", r.runs},
         {"seeds", r.seeds},
         {"class_mean_accuracy", r.class_mean_accuracy},
         {"trainable_params", r.trainable_params},
         {"config_fingerprint", r.config_fingerprint},
         {"corpus_fingerprint", r.corpus_fingerprint},
         {"cache_fingerprint", r.cache_fingerprint}};
  if (include_timing) j["wall_time_s"] = r.wall_time_s;
  return j;
}

ExperimentResult result_from_json(const json &j) {
  ExperimentResult r;
  r.name = j.at("name").get<std::string>();
  r.accuracy_mean = j.at("accuracy_mean").get<double>();
  r.accuracy_std = j.at("accuracy_std").get<double>();
  r.runs = j.at("runs").get<std::vector<double>>();
  r.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  r.class_mean_accuracy = j.value("class_mean_accuracy", 0.0);
  r.trainable_params = j.at("trainable_params").get<std::int64_t>();
  r.config_fingerprint = j.value("config_fingerprint", "");
  r.corpus_fingerprint = j.value("corpus_fingerprint", "");
  r.cache_fingerprint = j.value("cache_fingerprint", "");
  r.wall_time_s = j.value("wall_time_s", 0.0);
  return r;
}

void write_results(const fs::path &path, const std::vector<ExperimentResult> &rs) {
  json arr = json::array();
  for (const auto &r : rs) arr.push_back(to_json(r));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << arr.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<ExperimentResult> read_results(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("results file not found: " + path.string());
  try {
    const auto j = json::parse(in);
    std::vector<ExperimentResult> rs;
    if (j.is_array())
      for (const auto &x : j) rs.push_back(result_from_json(x));
    else
      rs.push_back(result_from_json(j));
    return rs;
  } catch (const json::exception &e) {
    throw InvalidArgumentError(path.string() + ": " + e.what());
  }
}

void require_same_corpus(const std::vector<ExperimentResult> &results) {
  for (const auto &r : results)
    if (r.corpus_fingerprint != results.front().corpus_fingerprint)
      throw InvalidStateError("results '" + results.front().name + "' and '" + r.name +
                              "' come from different corpora; refusing to compare");
}

// ---- run_experiment ------------------------------------------------------------------

namespace {

struct Arm {
  ExperimentResult result;
  std::vector<double> class_means;
};

void record(Arm &arm, const EvaluationReport &rep, std::uint64_t seed) {
  arm.result.runs.push_back(rep.accuracy);
  arm.result.seeds.push_back(seed);
  arm.class_means.push_back(rep.class_mean_accuracy);
}

void write_history(const fs::path &dir, const std::string &arm, std::uint64_t seed,
                   const TrainHistory &h) {
  h.write_jsonl(dir / (arm + "_seed" + std::to_string(seed) + ".history.jsonl"));
}

DatasetIndex resolve_corpus(const ExperimentConfig &cfg) {
  if (cfg.dataset_root.empty()) throw ConfigError("dataset.root: required");
  if (cfg.synth && !fs::exists(cfg.dataset_root)) {
    auto spec = *cfg.synth;
    spec.resolution = cfg.resolution;
    return generate_synthetic_corpus(spec, cfg.dataset_root);
  }
  return scan_dataset(cfg.dataset_root, cfg.resolution);
}

} // namespace

std::vector<ExperimentResult> run_experiment(const ExperimentConfig &cfg) {
  const auto start = std::chrono::steady_clock::now();
  const DatasetIndex corpus = resolve_corpus(cfg);
  const auto corpus_fp = dataset_fingerprint(corpus, true);
  const auto cfg_fp = config_fingerprint(cfg);
  const auto out_dir = cfg.out_dir / cfg.name;
  fs::create_directories(out_dir);

  const auto results_path = out_dir / "results.json";
  if (fs::exists(results_path)) {
    const auto previous = read_results(results_path);
    if (!previous.empty() && previous.front().corpus_fingerprint != corpus_fp)
      throw InvalidStateError(results_path.string() +
                              " was produced on a different corpus; refusing to mix results");
  }

  std::optional<FeatureCache> fixed_cache;
  if (cfg.phase == Phase::distill) {
    if (!cfg.cache_path) throw ConfigError("distill.cache_path: required for phase 'distill'");
    fixed_cache = read_feature_cache(*cfg.cache_path);
  }

  const bool want_baseline = cfg.phase == Phase::baseline || cfg.phase == Phase::pipeline;
  const bool want_teacher = cfg.phase == Phase::teacher || cfg.phase == Phase::pipeline;
  const bool want_distill = cfg.phase == Phase::distill || cfg.phase == Phase::pipeline;

  Arm teacher_arm, distilled_arm, baseline_arm;
  teacher_arm.result.name = "teacher";
  distilled_arm.result.name = "student+distill";
  baseline_arm.result.name = "student";
  std::vector<std::string> cache_fps;

  for (const auto seed : cfg.seeds) {
    const auto split = split_for_seed(cfg, corpus, seed);
    const auto classes = corpus.num_classes();

    if (want_baseline) {
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      auto res = train_baseline(make_student(cfg, classes, seed), split.train, tc, &split.test);
      record(baseline_arm, evaluate_detailed(res.model, split.test), seed);
      baseline_arm.result.trainable_params = count_trainable_params(res.model);
      write_history(out_dir, "student", seed, res.history);
    }

    std::optional<FeatureCache> cache;
    if (want_teacher || (want_distill && !fixed_cache)) {
      TrainConfig tc = cfg.teacher_train;
      tc.seed = seed;
      auto res = train_teacher(prepare_teacher(cfg, split.train, seed), split.train, tc, &split.test);
      record(teacher_arm, evaluate_detailed(res.teacher, split.test), seed);
      teacher_arm.result.trainable_params = count_trainable_params(res.teacher);
      write_history(out_dir, "teacher", seed, res.history);
      if (want_distill) cache = extract_features(res.teacher, split.train, true);
    }

    if (want_distill) {
      const FeatureCache &c = fixed_cache ? *fixed_cache : *cache;
      cache_fps.push_back(to_hex(c.fingerprint));
      TrainConfig tc = cfg.distill_train;
      tc.seed = seed;
      auto res = train_student(make_student(cfg, classes, seed), split.train, c, tc, &split.test);
      record(distilled_arm, evaluate_detailed(res.model, split.test), seed);
      distilled_arm.result.trainable_params = count_trainable_params(res.model);
      write_history(out_dir, "student+distill", seed, res.history);
    }
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::vector<ExperimentResult> results;
  auto finish = [&](Arm &arm, bool wanted) {
    if (!wanted) return;
    auto &r = arm.result;
    summarize(r);
    r.class_mean_accuracy =
        std::accumulate(arm.class_means.begin(), arm.class_means.end(), 0.0) /
        static_cast<double>(arm.class_means.size());
    r.config_fingerprint = cfg_fp;
    r.corpus_fingerprint = corpus_fp;
    r.wall_time_s = wall;
    results.push_back(r);
  };
  finish(teacher_arm, want_teacher);
  if (want_distill) {
    Hasher h;
    for (const auto &fp : cache_fps) h.update(fp);
    distilled_arm.result.cache_fingerprint =
        cache_fps.size() == 1 ? cache_fps.front() : to_hex(h.finish());
  }
  finish(distilled_arm, want_distill);
  finish(baseline_arm, want_baseline);

  write_results(results_path, results);
  {
    std::ofstream csv(out_dir / "results.csv", std::ios::binary | std::ios::trunc);
    csv << report(results, ReportFormat::csv);
    if (!csv) throw IoError("cannot write " + (out_dir / "results.csv").string());
  }
  json manifest{{"config", cfg.to_json()},
                {"config_fingerprint", cfg_fp},
                {"corpus_fingerprint", corpus_fp},
                {"corpus_size", corpus.size()},
                {"cache_fingerprints", cache_fps},
                {"results", json::array()},
                {"timing", {{"wall_time_s", wall}, {"finished", utc_timestamp()}}}};
  for (const auto &r : results) manifest["results"].push_back(to_json(r));
  std::ofstream mf(out_dir / "manifest.json", std::ios::binary | std::ios::trunc);
  mf << manifest.dump(2) << '\n';
  if (!mf) throw IoError("cannot write manifest in " + out_dir.string());
  return results;
}

} // namespace distillkit
