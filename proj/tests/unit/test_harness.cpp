#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "distillkit/error.hpp"
#include "distillkit/evaluation.hpp"
#include "distillkit/harness.hpp"
#include "test_support.hpp"

using namespace distillkit;
using dktest::TempDir;
using nlohmann::json;

namespace {

ExperimentResult make_result(std::string name, std::vector<double> runs, std::string corpus = "c") {
  ExperimentResult r;
  r.name = std::move(name);
  r.runs = std::move(runs);
  for (std::size_t i = 0; i < r.runs.size(); ++i) r.seeds.push_back(i);
  r.corpus_fingerprint = std::move(corpus);
  r.trainable_params = 1234;
  r.class_mean_accuracy = 0.5;
  summarize(r);
  return r;
}

json tiny_config(const std::filesystem::path &root, const std::filesystem::path &out) {
  const json tiny = {{"name", "tiny"}, {"stage_widths", {4, 8}}, {"stage_depths", {1, 1}}};
  return json{
      {"dataset", {{"root", root.string()}, {"resolution", {16, 16, 3}}, {"train_fraction", 0.5}}},
      {"model", tiny},
      {"train", {{"epochs", 2}, {"batch_size", 8}, {"learning_rate", 1e-3}}},
      {"teacher", {{"branches", {{{"spec", tiny}}}}}},
      {"experiment", {{"name", "small"}, {"seeds", {1, 2}}, {"out_dir", out.string()}}},
      {"synth", {{"num_classes", 2}, {"per_class", 4}, {"resolution", {16, 16, 3}}}},
  };
}

int run_cli(const std::string &args) {
  const int status = std::system((std::string(DISTILLKIT_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

// ---- evaluation -----------------------------------------------------------------------

TEST(Evaluation, ConstantPredictorOnBalancedSet) {
  const auto index = dktest::synthetic_index(45, 2);
  std::vector<int> truth, predicted(index.size(), 0);
  for (const auto &s : index.samples()) truth.push_back(s.class_index);
  const auto rep = score_predictions(predicted, truth, 45);
  EXPECT_DOUBLE_EQ(rep.accuracy, 1.0 / 45.0);
  EXPECT_DOUBLE_EQ(rep.class_mean_accuracy, 1.0 / 45.0);
  EXPECT_EQ(rep.correct, 2);
  EXPECT_EQ(rep.total, 90);
}

TEST(Evaluation, PerfectPredictor) {
  const std::vector<int> truth{0, 1, 2, 2, 1};
  const auto rep = score_predictions(truth, truth, 3);
  EXPECT_EQ(rep.accuracy, 1.0);
  EXPECT_EQ(rep.class_mean_accuracy, 1.0);
}

TEST(Evaluation, ClassMeanWeighsClassesEqually) {
  // class 0: 3/4 right, class 1: 0/1 right
  const std::vector<int> truth{0, 0, 0, 0, 1}, pred{0, 0, 0, 1, 0};
  const auto rep = score_predictions(pred, truth, 2);
  EXPECT_DOUBLE_EQ(rep.accuracy, 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(rep.class_mean_accuracy, (0.75 + 0.0) / 2.0);
}

TEST(Evaluation, ArgmaxTiesGoToLowestIndex) {
  const std::vector<float> row{0.1f, 0.4f, 0.4f, 0.1f};
  EXPECT_EQ(argmax(row), 1);
}

TEST(Evaluation, EmptyTestSetRejected) {
  const auto index = dktest::synthetic_index(2, 1).with_samples({});
  EXPECT_THROW(evaluate_with([](const Tensor &t) { return t; }, index), InvalidArgumentError);
}

TEST(Evaluation, PredictorAgreesWithScoring) {
  TempDir dir("eval");
  const auto index = generate_synthetic_corpus({3, 4, {16, 16, 3}, 2, 0.0}, dir / "c");
  // Predicts class = sample position mod 3, independently of pixels.
  int calls = 0;
  std::int64_t offset = 0;
  const Predictor p = [&](const Tensor &images) {
    ++calls;
    Tensor out(Shape{images.dim(0), 3});
    for (std::int64_t i = 0; i < images.dim(0); ++i) out[i * 3 + (offset + i) % 3] = 1.0f;
    offset += images.dim(0);
    return out;
  };
  const auto rep = evaluate_with(p, index, 5);
  EXPECT_EQ(calls, 3);
  std::vector<int> expected_pred, truth;
  for (std::size_t i = 0; i < index.size(); ++i) {
    expected_pred.push_back(static_cast<int>(i % 3));
    truth.push_back(index.samples()[i].class_index);
  }
  EXPECT_EQ(rep.predictions, expected_pred);
  EXPECT_EQ(rep.accuracy, score_predictions(expected_pred, truth, 3).accuracy);
}

// ---- synthetic corpus ----------------------------------------------------------------

TEST(Synth, DefaultCorpusShape) {
  TempDir dir("synth");
  const auto index = generate_synthetic_corpus({}, dir / "c");
  EXPECT_EQ(index.size(), 400u);
  EXPECT_EQ(index.num_classes(), 8);
  for (auto n : index.class_counts()) EXPECT_EQ(n, 50u);
  const auto img = load_image(index.root() / index.samples()[0].relative_path, {32, 32, 3});
  EXPECT_EQ(img.shape(), (Shape{32, 32, 3}));
}

TEST(Synth, RerunsAreByteIdentical) {
  TempDir a("synth-a"), b("synth-b");
  const SyntheticCorpusSpec spec{3, 5, {16, 16, 3}, 9, 0.1};
  const auto ia = generate_synthetic_corpus(spec, a / "c");
  const auto ib = generate_synthetic_corpus(spec, b / "c");
  ASSERT_EQ(ia.size(), ib.size());
  for (std::size_t i = 0; i < ia.size(); ++i)
    EXPECT_EQ(dktest::file_bytes(ia.root() / ia.samples()[i].relative_path),
              dktest::file_bytes(ib.root() / ib.samples()[i].relative_path));
  EXPECT_EQ(dataset_fingerprint(ia), dataset_fingerprint(ib));
}

TEST(Synth, GeneratorSeedChangesPixels) {
  TempDir a("synth-s1"), b("synth-s2");
  const auto ia = generate_synthetic_corpus({2, 2, {16, 16, 3}, 1, 0.1}, a / "c");
  const auto ib = generate_synthetic_corpus({2, 2, {16, 16, 3}, 2, 0.1}, b / "c");
  EXPECT_NE(dataset_fingerprint(ia), dataset_fingerprint(ib));
}

TEST(Synth, InvalidSpecRejected) {
  TempDir dir("synth-bad");
  EXPECT_THROW(generate_synthetic_corpus({1, 5, {16, 16, 3}, 0, 0.1}, dir / "c"), InvalidArgumentError);
  EXPECT_THROW(generate_synthetic_corpus({2, 0, {16, 16, 3}, 0, 0.1}, dir / "c"), InvalidArgumentError);
}

// ---- configuration --------------------------------------------------------------------

TEST(Config, DefaultsAndPhaseRecipes) {
  const auto cfg = parse_experiment_config(json::object());
  EXPECT_EQ(cfg.train_fraction, 0.2);
  EXPECT_EQ(cfg.model.name, "ref-student");
  EXPECT_EQ(cfg.train.loss, LossKind::kl);
  EXPECT_EQ(cfg.train.augmentation, Augmentation::rotation_mixup);
  EXPECT_EQ(cfg.teacher_train.loss, LossKind::entropy);
  EXPECT_EQ(cfg.teacher_train.augmentation, Augmentation::rotation_only);
  EXPECT_EQ(cfg.distill_train.loss, LossKind::distill);
  EXPECT_EQ(cfg.distill_train.augmentation, Augmentation::rotation_only);
}

TEST(Config, NestedOverridesInherit) {
  const auto cfg = parse_experiment_config(json{
      {"train", {{"epochs", 7}, {"learning_rate", 0.01}}},
      {"distill", {{"train", {{"squared_distance", true}}}}},
      {"model", {{"reference", "ref-student"}, {"blocks_kept", 3}}},
  });
  EXPECT_EQ(cfg.distill_train.epochs, 7);
  EXPECT_EQ(cfg.distill_train.learning_rate, 0.01);
  EXPECT_TRUE(cfg.distill_train.squared_distance);
  EXPECT_FALSE(cfg.train.squared_distance);
  EXPECT_EQ(cfg.teacher_train.epochs, 7);
  EXPECT_EQ(cfg.model.stage_widths.size(), 3u);
}

TEST(Config, UnknownKeysNameTheirPath) {
  const std::vector<std::pair<json, std::string>> cases{
      {json{{"bogus", 1}}, "bogus"},
      {json{{"dataset", {{"roots", "x"}}}}, "dataset.roots"},
      {json{{"teacher", {{"branches", {"ref-small", {{"spec", "ref-small"}, {"weight", "w"}}}}}}},
       "teacher.branches[1].weight"},
      {json{{"distill", {{"train", {{"ratio", 0.5}}}}}}, "distill.train.ratio"},
  };
  for (const auto &[j, path] : cases) {
    try {
      parse_experiment_config(j);
      ADD_FAILURE() << "accepted " << j.dump();
    } catch (const ConfigError &e) {
      EXPECT_NE(std::string(e.what()).find(path), std::string::npos) << e.what();
    }
  }
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_THROW(parse_experiment_config(json{{"dataset", {{"train_fraction", 1.5}}}}), ConfigError);
  EXPECT_THROW(parse_experiment_config(json{{"dataset", {{"resolution", {16, 16}}}}}), ConfigError);
  EXPECT_THROW(parse_experiment_config(json{{"model", "no-such-net"}}), ConfigError);
  EXPECT_THROW(parse_experiment_config(json{{"experiment", {{"phase", "nope"}}}}), ConfigError);
  EXPECT_THROW(parse_experiment_config(json{{"train", {{"epochs", "ten"}}}}), ConfigError);
}

TEST(Config, FileWithCommentsAndRelativePaths) {
  TempDir dir("cfg");
  std::ofstream(dir / "c.json") << "{\n  // corpus\n  \"dataset\": {\"root\": \"data\"}\n}\n";
  const auto cfg = load_experiment_config(dir / "c.json");
  EXPECT_EQ(cfg.dataset_root, dir.path() / "data");
  EXPECT_THROW(load_experiment_config(dir / "missing.json"), ConfigError);
  std::ofstream(dir / "broken.json") << "{ \"dataset\": ";
  EXPECT_THROW(load_experiment_config(dir / "broken.json"), ConfigError);
}

TEST(Config, FingerprintTracksContentNotPaths) {
  const auto a = parse_experiment_config(json{{"train", {{"epochs", 3}}}});
  const auto b = parse_experiment_config(json{{"train", {{"epochs", 3}}}});
  const auto c = parse_experiment_config(json{{"train", {{"epochs", 4}}}});
  EXPECT_EQ(config_fingerprint(a), config_fingerprint(b));
  EXPECT_NE(config_fingerprint(a), config_fingerprint(c));
}

// ---- results and reports --------------------------------------------------------------

TEST(Results, SummarizeUsesSampleStd) {
  auto r = make_result("x", {0.9, 0.8, 0.7});
  EXPECT_NEAR(r.accuracy_mean, 0.8, 1e-15);
  EXPECT_NEAR(r.accuracy_std, 0.1, 1e-15);
  EXPECT_EQ(make_result("y", {0.5}).accuracy_std, 0.0);
}

TEST(Results, JsonRoundTripOmitsTimingByDefault) {
  auto r = make_result("x", {0.91, 0.93});
  r.wall_time_s = 12.5;
  EXPECT_FALSE(to_json(r).contains("wall_time_s"));
  EXPECT_TRUE(to_json(r, true).contains("wall_time_s"));
  const auto back = result_from_json(to_json(r));
  EXPECT_EQ(back.runs, r.runs);
  EXPECT_EQ(back.accuracy_mean, r.accuracy_mean);
  EXPECT_EQ(back.trainable_params, r.trainable_params);
}

TEST(Results, FileRoundTrip) {
  TempDir dir("res");
  const std::vector<ExperimentResult> rs{make_result("a", {0.5, 0.6}), make_result("b", {0.7})};
  write_results(dir / "r.json", rs);
  const auto back = read_results(dir / "r.json");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].name, "b");
  EXPECT_THROW(read_results(dir / "none.json"), NotFoundError);
}

TEST(Report, SortedDescendingOneRowPerExperiment) {
  const std::vector<ExperimentResult> rs{make_result("low", {0.2}), make_result("high", {0.9}),
                                         make_result("mid", {0.5})};
  const auto csv = report(rs, ReportFormat::csv);
  const auto parsed = parse_report_csv(csv);
  ASSERT_EQ(parsed.size(), 3u);
  EXPECT_EQ(parsed[0].name, "high");
  EXPECT_EQ(parsed[1].name, "mid");
  EXPECT_EQ(parsed[2].name, "low");
  const auto table = report(rs, ReportFormat::table);
  EXPECT_LT(table.find("high"), table.find("low"));
  EXPECT_EQ(json::parse(report(rs, ReportFormat::json)).size(), 3u);
}

TEST(Report, CsvRoundTripPreservesValues) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ExperimentResult> rs;
    for (int i = 0; i < 4; ++i) {
      auto r = make_result("exp" + std::to_string(i), {u(rng), u(rng), u(rng)});
      r.class_mean_accuracy = u(rng);
      r.trainable_params = static_cast<std::int64_t>(rng() % 100000);
      rs.push_back(r);
    }
    const auto back = parse_report_csv(report(rs, ReportFormat::csv));
    ASSERT_EQ(back.size(), rs.size());
    for (const auto &b : back) {
      const auto it = std::find_if(rs.begin(), rs.end(), [&](auto &r) { return r.name == b.name; });
      ASSERT_NE(it, rs.end());
      EXPECT_NEAR(b.accuracy_mean, it->accuracy_mean, 1e-9);
      EXPECT_NEAR(b.accuracy_std, it->accuracy_std, 1e-9);
      EXPECT_NEAR(b.class_mean_accuracy, it->class_mean_accuracy, 1e-9);
      EXPECT_EQ(b.trainable_params, it->trainable_params);
    }
  }
}

TEST(Report, FormatsParsed) {
  EXPECT_EQ(parse_report_format("csv"), ReportFormat::csv);
  EXPECT_THROW(parse_report_format("xml"), ConfigError);
}

TEST(Results, MixedCorporaRefused) {
  EXPECT_NO_THROW(require_same_corpus({make_result("a", {0.1}), make_result("b", {0.2})}));
  EXPECT_THROW(require_same_corpus({make_result("a", {0.1}, "c1"), make_result("b", {0.2}, "c2")}),
               InvalidStateError);
}

// ---- end to end ------------------------------------------------------------------------

TEST(RunExperiment, PipelineIsDeterministicAndWritesArtifacts) {
  TempDir dir("run");
  const auto cfg_a = parse_experiment_config(tiny_config(dir / "corpus", dir / "out_a"));
  const auto cfg_b = parse_experiment_config(tiny_config(dir / "corpus", dir / "out_b"));
  const auto a = run_experiment(cfg_a);
  const auto b = run_experiment(cfg_b);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].runs, b[i].runs);
    EXPECT_EQ(a[i].runs.size(), 2u);
  }
  EXPECT_EQ(dktest::file_bytes(dir / "out_a" / "small" / "results.json"),
            dktest::file_bytes(dir / "out_b" / "small" / "results.json"));
  for (const char *f : {"results.csv", "manifest.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "out_a" / "small" / f)) << f;
}

TEST(RunExperiment, RefusesToMixCorporaInOneResultsFile) {
  TempDir dir("mix");
  auto j = tiny_config(dir / "corpus1", dir / "out");
  j["experiment"]["seeds"] = {1};
  j["experiment"]["phase"] = "baseline";
  run_experiment(parse_experiment_config(j));
  j["dataset"]["root"] = (dir / "corpus2").string();
  j["synth"]["generator_seed"] = 99;
  EXPECT_THROW(run_experiment(parse_experiment_config(j)), InvalidStateError);
}

// ---- command line ------------------------------------------------------------------------

TEST(Cli, ExitCodes) {
  TempDir dir("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  std::ofstream(dir / "bad.json") << R"({"dataset": {"rooot": "x"}})";
  EXPECT_EQ(run_cli("scan --config " + (dir / "bad.json").string()), 2);
  std::ofstream(dir / "missing.json") << R"({"dataset": {"root": "/no/such/corpus"}})";
  EXPECT_EQ(run_cli("scan --config " + (dir / "missing.json").string()), 3);
  std::ofstream(dir / "ok.json") << json{{"synth", {{"num_classes", 2}, {"per_class", 2}}},
                                         {"dataset", {{"root", (dir / "c").string()}}}}
                                        .dump();
  EXPECT_EQ(run_cli("synth --config " + (dir / "ok.json").string()), 0);
  EXPECT_EQ(run_cli("scan --config " + (dir / "ok.json").string()), 0);
}
