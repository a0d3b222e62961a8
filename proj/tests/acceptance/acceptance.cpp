// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. Pass criterion numbers as arguments
// to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "distillkit/dataset.hpp"
#include "distillkit/error.hpp"
#include "distillkit/harness.hpp"
#include "distillkit/losses.hpp"
#include "distillkit/model.hpp"
#include "distillkit/teacher.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace distillkit;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

/// Collects failed checks for one criterion.
class Checks {
public:
  void expect(bool ok, const std::string &what) {
    ++count_;
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string &s) { notes_.push_back(s); }
  bool ok() const { return failures_.empty(); }
  int count() const { return count_; }
  const std::vector<std::string> &failures() const { return failures_; }
  const std::vector<std::string> &notes() const { return notes_; }

private:
  int count_ = 0;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

bool same_bytes(const fs::path &a, const fs::path &b) {
  return fs::exists(a) && fs::exists(b) && dktest::file_bytes(a) == dktest::file_bytes(b);
}

// ---- 1: pipeline arithmetic -------------------------------------------------------------

void pipeline_arithmetic(Checks &c) {
  const auto t0 = Clock::now();
  const auto index = dktest::synthetic_index(45, 700, {32, 32, 3});
  c.expect(index.size() == 31500, "index has 31,500 samples");

  const auto split = split_dataset(index, SplitSpec{0.2, 0, true});
  const auto train_counts = split.train.class_counts(), test_counts = split.test.class_counts();
  bool per_class = train_counts.size() == 45 && test_counts.size() == 45;
  for (std::size_t k = 0; per_class && k < 45; ++k)
    per_class = train_counts[k] == 140 && test_counts[k] == 560;
  c.expect(per_class, "split(0.2) gives 140 train / 560 test in every class");

  std::set<std::string> ids;
  for (const auto &s : split.train.samples()) ids.insert(s.sample_id);
  for (const auto &s : split.test.samples()) ids.insert(s.sample_id);
  c.expect(ids.size() == 31500, "split is a partition of the index");

  const auto augmented = augment_rotations(index);
  c.expect(augmented.size() == 126000, "augment_rotations yields 126,000 samples");

  SoftBatch base;
  base.images = dktest::random_tensor(Shape{60, 32, 32, 3}, 1, 0.0f, 1.0f);
  std::vector<int> ys(60);
  for (int i = 0; i < 60; ++i) ys[i] = i % 45;
  base.labels = dktest::one_hot(ys, 45);
  for (int i = 0; i < 60; ++i) base.sample_ids.push_back("row" + std::to_string(i));
  const auto mixed = make_mixup_batch(base, {MixupMode::uniform, 0.2, 11}, {MixupMode::beta, 0.2, 12});
  c.expect(mixed.size() == 180 && mixed.labels.dim(0) == 180, "mixup batch has 180 rows");
  c.expect(bit_equal(mixed.images.slice_rows(0, 60), base.images) &&
               bit_equal(mixed.labels.slice_rows(0, 60), base.labels),
           "mixup rows 0-59 are bit-equal to the input");

  const double secs = seconds_since(t0);
  c.note("runtime " + fmt(secs, 2) + " s");
  c.expect(secs < 10.0, "runtime under 10 s");
}

// ---- 2: loss correctness ------------------------------------------------------------------

Matrix random_rows(Eigen::Index b, Eigen::Index k, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix m(b, k);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) m(i, j) = u(rng);
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

void loss_correctness(Checks &c) {
  const auto t0 = Clock::now();
  LossConfig plain;
  plain.lambda_reg = 0.0;

  Matrix y2(1, 2), p2(1, 2);
  y2 << 0.5, 0.5;
  p2 << 0.25, 0.75;
  c.expect(std::abs(kl_loss(y2, p2, 0.0, plain) - 0.14384) < 1e-5 &&
               std::abs(kl_loss(y2, p2, 0.0, plain) -
                        (0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0))) < 1e-6,
           "KL two-class example");
  Matrix y45 = Matrix::Zero(1, 45), u45 = Matrix::Constant(1, 45, 1.0 / 45.0);
  y45(0, 3) = 1.0;
  c.expect(std::abs(entropy_loss(y45, u45, 0.0, plain) - std::log(45.0)) < 1e-6 &&
               std::abs(kl_loss(y45, u45, 0.0, plain) - std::log(45.0)) < 1e-6,
           "one-hot vs uniform-45 equals ln 45 for entropy and KL");
  Matrix s = Matrix::Zero(1, 512), t = Matrix::Zero(1, 512);
  s(0, 0) = 3.0;
  s(0, 1) = 4.0;
  c.expect(std::abs(feature_distance_loss(s, t) - 5.0) < 1e-6, "feature distance 3-4-5 example");
  c.expect(std::abs(distill_loss(2.0, 4.0, LossConfig{}) - 3.0) < 1e-12, "distill 0.5/0.5 mixture");

  std::mt19937_64 rng(2024);
  int decomposition_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix y = random_rows(4, 7, rng), p = random_rows(4, 7, rng);
    const double lhs = entropy_loss(y, p, 0.0, plain) - kl_loss(y, p, 0.0, plain);
    long double h = 0.0L;
    for (Eigen::Index i = 0; i < y.size(); ++i) h -= y(i) * std::log(static_cast<long double>(y(i)));
    if (std::abs(lhs - static_cast<double>(h)) > 1e-9) ++decomposition_failures;
  }
  c.expect(decomposition_failures == 0,
           "entropy - KL == H(y) on 1000 random inputs (" + std::to_string(decomposition_failures) +
               " failures)");

  const LossConfig reg; // lambda 1e-4
  auto as_m = [](const Vector &v, Eigen::Index r, Eigen::Index k) -> Matrix {
    return Eigen::Map<const Matrix>(v.data(), r, k);
  };
  auto as_v = [](const Matrix &m) -> Vector { return Eigen::Map<const Vector>(m.data(), m.size()); };
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix y = random_rows(3, 5, rng);
    Vector logits = Vector::Random(15) * 2.0;
    for (bool use_kl : {true, false}) {
      auto loss = [&](const Vector &z) {
        const Matrix p = softmax(as_m(z, 3, 5));
        return use_kl ? kl_loss(y, p, 0.0, reg) : entropy_loss(y, p, 0.0, reg);
      };
      auto grad = [&](const Vector &z) {
        const Matrix p = softmax(as_m(z, 3, 5));
        return Vector(as_v(softmax_backward(p, probability_loss_grad(y, p, reg))));
      };
      const auto r = grad_check(loss, grad, logits, 1e-4);
      worst = std::max(worst, r.max_rel_error);
      c.expect(r.passed, std::string(use_kl ? "KL" : "entropy") + " gradient check: " + r.text());
    }
    const Matrix target = Matrix::Random(2, 512);
    const Vector e0 = Vector::Random(1024);
    for (bool squared : {false, true}) {
      LossConfig fc;
      fc.squared_distance = squared;
      const auto r = grad_check(
          [&](const Vector &e) { return feature_distance_loss(as_m(e, 2, 512), target, fc); },
          [&](const Vector &e) {
            return Vector(as_v(feature_distance_grad(as_m(e, 2, 512), target, fc)));
          },
          e0, 1e-4, 1e-5, 1e-3);
      worst = std::max(worst, r.max_rel_error);
      c.expect(r.passed, std::string("feature distance gradient check: ") + r.text());
    }
  }
  c.note("worst gradient rel. error " + std::to_string(worst));
  const double secs = seconds_since(t0);
  c.note("runtime " + fmt(secs, 2) + " s");
  c.expect(secs < 60.0, "runtime under 60 s");
}

// ---- 3: combination block --------------------------------------------------------------------

void combination_block(Checks &c) {
  Tensor e1(Shape{1, 512}), e2(Shape{1, 512});
  e1[0] = 1.0f, e1[1] = 2.0f;
  e2[0] = 2.0f, e2[1] = 0.0f;
  CombinationParams hand{{Tensor(Shape{512}, 1.0f), Tensor(Shape{512}, 0.0f)}, Tensor(Shape{512})};
  hand.weights[1][0] = 0.5f, hand.weights[1][1] = 2.0f;
  hand.bias[0] = 1.0f;
  const std::vector<Tensor> pair{e1, e2};
  const auto f = combine_embeddings(pair, hand);
  c.expect(f[0] == 3.0f && f[1] == 2.0f, "hand-evaluated combination gives (3, 2)");

  std::mt19937_64 rng(77);
  int perm_bad = 0, identity_bad = 0, bias_bad = 0;
  for (std::uint64_t draw = 0; draw < 1000; ++draw) {
    const int n = 2 + static_cast<int>(draw % 4);
    std::vector<Tensor> e;
    CombinationParams combo;
    for (int i = 0; i < n; ++i) {
      e.push_back(dktest::random_tensor(Shape{2, 512}, draw * 31 + i));
      combo.weights.push_back(dktest::random_tensor(Shape{512}, draw * 31 + 10 + i));
    }
    combo.bias = dktest::random_tensor(Shape{512}, draw * 31 + 20);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Tensor> pe;
    CombinationParams pc{{}, combo.bias};
    for (int i : perm) {
      pe.push_back(e[i]);
      pc.weights.push_back(combo.weights[i]);
    }
    perm_bad += !bit_equal(combine_embeddings(e, combo), combine_embeddings(pe, pc));

    const std::vector<Tensor> single{e[0]};
    identity_bad +=
        !bit_equal(combine_embeddings(single, {{Tensor(Shape{512}, 1.0f)}, Tensor(Shape{512})}), e[0]);

    CombinationParams zero{std::vector<Tensor>(n, Tensor(Shape{512})), combo.bias};
    const auto out = combine_embeddings(e, zero);
    bool bias_ok = true;
    for (std::int64_t r = 0; r < 2; ++r)
      for (std::int64_t k = 0; k < 512; ++k) bias_ok &= out[r * 512 + k] == combo.bias[k];
    bias_bad += !bias_ok;
  }
  c.expect(perm_bad == 0, "permutation covariance on 1000 draws (" + std::to_string(perm_bad) + " bad)");
  c.expect(identity_bad == 0, "identity weighting on 1000 draws");
  c.expect(bias_bad == 0, "bias-only output on 1000 draws");

  for (auto [n, classes] : {std::pair{3, 45}, std::pair{2, 8}, std::pair{5, 10}}) {
    std::vector<ModelHandle> branches;
    for (int b = 0; b < n; ++b) {
      BackboneSpec spec;
      spec.name = "branch";
      spec.stage_widths = {4 + b, 8};
      spec.stage_depths = {1, 1};
      spec.input_resolution = {16, 16, 3};
      branches.push_back(build_model(spec, classes, b));
    }
    const auto teacher = build_teacher(std::move(branches), classes, 0);
    const std::int64_t expected = std::int64_t{n} * 512 + 512 + 512 * classes + classes;
    c.expect(count_trainable_params(teacher) == expected,
             "teacher count for N=" + std::to_string(n) + ", C=" + std::to_string(classes) +
                 " is " + std::to_string(expected));
  }
}

// ---- 4: freeze contract -----------------------------------------------------------------

void freeze_contract(Checks &c) {
  dktest::TempDir dir("accept-freeze");
  const auto corpus = generate_synthetic_corpus({}, dir / "corpus");
  std::vector<ModelHandle> branches{
      build_model(reference_backbone("ref-small", {32, 32, 3}), corpus.num_classes(), 1),
      build_model(reference_backbone("ref-medium", {32, 32, 3}), corpus.num_classes(), 2)};
  const auto initial = branches;
  TrainConfig cfg;
  cfg.loss = LossKind::entropy;
  cfg.augmentation = Augmentation::rotation_only;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 4; // 1600 rotated samples in batches of 60 -> 27 steps per epoch
  const auto res = train_teacher(build_teacher(std::move(branches), corpus.num_classes(), 3), corpus, cfg);
  c.note(std::to_string(res.history.steps.size()) + " teacher steps");
  c.expect(res.history.steps.size() >= 100, "at least 100 teacher training steps");

  bool identical = true;
  for (std::size_t b = 0; b < initial.size(); ++b) {
    const auto &now = res.teacher.branches()[b].parameters();
    const auto &then = initial[b].parameters();
    identical &= now.size() == then.size();
    for (std::size_t i = 0; identical && i < now.size(); ++i)
      identical &= now[i].name == then[i].name && bit_equal(now[i].value, then[i].value);
  }
  c.expect(identical, "every branch tensor bit-identical to initialization");

  const auto fresh = build_teacher(initial, corpus.num_classes(), 3);
  bool head_moved = false;
  for (std::size_t i = 0; i < fresh.head_parameters().size(); ++i)
    head_moved |= !bit_equal(fresh.head_parameters()[i].value, res.teacher.head_parameters()[i].value);
  c.expect(head_moved, "the combination head did train");
}

// ---- 5: pruning ladder ---------------------------------------------------------------------

void pruning_ladder(Checks &c) {
  const auto full = reference_backbone("ref-student", {32, 32, 3});
  c.expect(full.stage_widths.size() == 7, "reference student has 7 stages");
  std::int64_t previous = -1;
  std::string ladder;
  for (int k = 3; k <= 7; ++k) {
    const auto spec = k == 7 ? full : prune_variant(full, k);
    const auto n = count_trainable_params(build_model(spec, 45, 0));
    ladder += (ladder.empty() ? "" : " < ") + spec.name + "=" + std::to_string(n);
    c.expect(n > previous, "count strictly increases at blocks_kept=" + std::to_string(k));
    previous = n;
  }
  c.note(ladder);
}

// ---- 6: toy-scale ordering ------------------------------------------------------------------

void toy_ordering(Checks &c) {
  const auto t0 = Clock::now();
  dktest::TempDir dir("accept-toy");
  const json cfg_json{
      {"dataset", {{"root", (dir / "corpus").string()}, {"resolution", {32, 32, 3}}, {"train_fraction", 0.5}}},
      {"synth", {{"num_classes", 8}, {"per_class", 50}, {"resolution", {32, 32, 3}}, {"generator_seed", 7}}},
      {"model", {{"reference", "ref-student"}, {"blocks_kept", 3}}},
      {"train", {{"learning_rate", 0.002}, {"batch_size", 32}, {"epochs", 20}}},
      {"teacher", {{"branches", {"ref-small", "ref-medium"}}}},
      {"distill", {{"train", {{"squared_distance", true}}}}},
      {"experiment", {{"name", "toy"}, {"seeds", {1, 2, 3, 4, 5}}, {"out_dir", (dir / "out").string()}}},
  };
  const auto results = run_experiment(parse_experiment_config(cfg_json));
  const ExperimentResult *teacher = nullptr, *distilled = nullptr, *baseline = nullptr;
  for (const auto &r : results) {
    if (r.name == "teacher") teacher = &r;
    if (r.name == "student+distill") distilled = &r;
    if (r.name == "student") baseline = &r;
    std::ostringstream runs;
    for (double a : r.runs) runs << (runs.tellp() ? " " : "") << fmt(a, 3);
    c.note(r.name + ": mean " + fmt(r.accuracy_mean) + " std " + fmt(r.accuracy_std) + " [" +
           runs.str() + "]");
  }
  c.expect(teacher && distilled && baseline, "all three arms reported");
  if (!(teacher && distilled && baseline)) return;
  c.expect(teacher->runs.size() >= 5 && distilled->runs.size() >= 5 && baseline->runs.size() >= 5,
           "at least 5 seeds per arm");
  c.expect(teacher->accuracy_mean >= distilled->accuracy_mean, "teacher >= distilled student");
  c.expect(distilled->accuracy_mean >= baseline->accuracy_mean, "distilled student >= baseline student");
  const double secs = seconds_since(t0);
  c.note("runtime " + fmt(secs / 60.0, 1) + " min");
  c.expect(secs < 30.0 * 60.0, "runtime under 30 min");
}

// ---- 7: CLI determinism ------------------------------------------------------------------

int run_cli(const std::string &args, const fs::path &log) {
  const std::string cmd = std::string(DISTILLKIT_CLI) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void cli_determinism(Checks &c) {
  dktest::TempDir dir("accept-cli");
  const json tiny = {{"name", "tiny"}, {"stage_widths", {6, 12}}, {"stage_depths", {1, 1}}};
  const json cfg{
      {"dataset", {{"root", (dir / "corpus").string()}, {"resolution", {16, 16, 3}}, {"train_fraction", 0.5}}},
      {"synth", {{"num_classes", 4}, {"per_class", 8}, {"resolution", {16, 16, 3}}, {"generator_seed", 5}}},
      {"model", tiny},
      {"train", {{"epochs", 2}, {"batch_size", 8}, {"learning_rate", 1e-3}}},
      {"teacher", {{"branches", {{{"spec", tiny}}, {{"spec", {{"name", "tiny2"}, {"stage_widths", {8}}, {"stage_depths", {2}}}}}}}}},
      {"experiment", {{"seeds", {3}}}},
  };
  std::ofstream(dir / "cfg.json") << cfg.dump(2);
  const std::string conf = " --config " + (dir / "cfg.json").string();

  struct Output {
    std::string what;
    std::string rel; // relative to the run directory
  };
  const std::vector<Output> outputs{
      {"split manifest", "split.csv"},
      {"baseline weights", "baseline/model.dkwt"},
      {"baseline result", "baseline/result.json"},
      {"teacher weights", "teacher/teacher.dkwt"},
      {"teacher result", "teacher/result.json"},
      {"feature cache", "features.fch"},
      {"distilled weights", "distilled/model.dkwt"},
      {"distilled result", "distilled/result.json"},
      {"evaluation", "eval.json"},
      {"report", "report.csv"},
  };

  for (const char *run : {"run1", "run2"}) {
    const auto d = dir / run;
    fs::create_directories(d);
    const auto log = d / "log.txt";
    const std::vector<std::string> cmds{
        "synth" + conf + " --out " + (d / "corpus").string(),
        "split" + conf + " --out " + (d / "split.csv").string(),
        "train-baseline" + conf + " --out " + (d / "baseline").string(),
        "train-teacher" + conf + " --out " + (d / "teacher").string(),
        "extract-features" + conf + " --weights " + (d / "teacher/teacher.dkwt").string() +
            " --out " + (d / "features.fch").string(),
        "distill" + conf + " --cache " + (d / "features.fch").string() + " --out " +
            (d / "distilled").string(),
        "evaluate" + conf + " --weights " + (d / "distilled/model.dkwt").string() + " --out " +
            (d / "eval.json").string(),
        "report --format csv " + (d / "baseline/result.json").string() + " " +
            (d / "distilled/result.json").string() + " --out " + (d / "report.csv").string(),
    };
    // The configured corpus is shared by both runs; create it once.
    if (!fs::exists(dir / "corpus")) {
      const int rc = run_cli("synth" + conf, log);
      c.expect(rc == 0, "synth into dataset.root exits 0");
    }
    for (const auto &cmd : cmds) {
      const int rc = run_cli(cmd, log);
      c.expect(rc == 0, std::string(run) + ": `distillkit " + cmd.substr(0, cmd.find(' ')) +
                            "` exits 0 (got " + std::to_string(rc) + ")");
      if (rc != 0) return;
    }
  }

  bool corpus_same = true;
  for (const auto &entry : fs::recursive_directory_iterator(dir / "run1" / "corpus")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir / "run1" / "corpus");
    corpus_same &= same_bytes(entry.path(), dir / "run2" / "corpus" / rel);
  }
  c.expect(corpus_same, "synth corpus bit-identical");
  for (const auto &o : outputs)
    c.expect(same_bytes(dir / "run1" / o.rel, dir / "run2" / o.rel), o.what + " bit-identical");
}

// ---- 8: feature cache format -------------------------------------------------------------

void cache_format(Checks &c) {
  dktest::TempDir dir("accept-cache");
  FeatureCache cache;
  std::mt19937_64 rng(8);
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (int i = 0; i < 50; ++i) {
    std::vector<float> v(512);
    for (auto &x : v) x = n(rng);
    cache.entries["class_" + std::to_string(i % 5) + "/img_" + std::to_string(i) + (i % 4 ? "#r90" : "")] = v;
  }
  cache.entries["edge"] = std::vector<float>(512, -0.0f);
  cache.entries["edge"][1] = std::numeric_limits<float>::denorm_min();
  cache.entries["edge"][2] = std::numeric_limits<float>::max();
  cache.fingerprint = cache_digest("teacher", "corpus");
  write_feature_cache(dir / "a.fch", cache);
  const auto back = read_feature_cache(dir / "a.fch");
  bool bits = back.entries.size() == cache.entries.size() && back.fingerprint == cache.fingerprint;
  for (const auto &[id, v] : cache.entries) {
    const auto *w = back.find(id);
    bits &= w && w->size() == v.size() && std::memcmp(w->data(), v.data(), v.size() * 4) == 0;
  }
  c.expect(bits, "read(write(cache)) is bit-exact");
  write_feature_cache(dir / "b.fch", back);
  c.expect(same_bytes(dir / "a.fch", dir / "b.fch"), "rewriting a read cache gives identical bytes");

  auto bytes = dktest::file_bytes(dir / "a.fch");
  bytes[2] = 'X';
  std::ofstream(dir / "bad.fch", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  std::string kind = "no error";
  try {
    read_feature_cache(dir / "bad.fch");
  } catch (const CacheMagicError &) {
    kind = "magic";
  } catch (const Error &e) {
    kind = std::string("other: ") + e.what();
  }
  c.expect(kind == "magic", "corrupted magic raises the dedicated magic error (" + kind + ")");

  bytes = dktest::file_bytes(dir / "a.fch");
  bytes.resize(bytes.size() / 2);
  std::ofstream(dir / "short.fch", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  kind = "no error";
  try {
    read_feature_cache(dir / "short.fch");
  } catch (const CacheMagicError &) {
    kind = "magic";
  } catch (const CacheFormatError &) {
    kind = "format";
  }
  c.expect(kind == "format", "truncation is a format error distinct from bad magic (" + kind + ")");
}

struct Criterion {
  int id;
  std::string title;
  std::function<void(Checks &)> run;
};

} // namespace

int main(int argc, char **argv) {
  const std::vector<Criterion> criteria{
      {1, "pipeline arithmetic", pipeline_arithmetic},
      {2, "loss correctness", loss_correctness},
      {3, "combination block", combination_block},
      {4, "freeze contract", freeze_contract},
      {5, "pruning ladder", pruning_ladder},
      {6, "toy-scale ordering", toy_ordering},
      {7, "CLI determinism", cli_determinism},
      {8, "feature-cache format", cache_format},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto &cr : criteria) {
    if (!selected.empty() && !selected.count(cr.id)) continue;
    Checks checks;
    const auto t0 = Clock::now();
    try {
      cr.run(checks);
    } catch (const std::exception &e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const bool ok = checks.ok();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << cr.id << " (" << cr.title << "): "
              << checks.count() << " checks, " << fmt(seconds_since(t0), 1) << " s\n";
    for (const auto &n : checks.notes()) std::cout << "    " << n << "\n";
    for (const auto &f : checks.failures()) std::cout << "    failed: " << f << "\n";
    std::cout.flush();
  }
  return failed == 0 ? 0 : 1;
}
