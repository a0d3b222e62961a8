#include "distillkit/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "binary_io.hpp"
#include "convert.hpp"
#include "distillkit/error.hpp"

namespace fs = std::filesystem;

namespace distillkit {

// ---- combination block ------------------------------------------------------

Tensor combine_embeddings(std::span<const Tensor> embeddings, const CombinationParams &combo) {
  if (embeddings.empty()) throw InvalidArgumentError("combine_embeddings: no embeddings");
  const bool shared = combo.weights.size() == 1;
  if (!shared && combo.weights.size() != embeddings.size())
    throw InvalidArgumentError("combine_embeddings: " + std::to_string(embeddings.size()) +
                               " embeddings but " + std::to_string(combo.weights.size()) +
                               " weight vectors");
  const auto &first = embeddings.front();
  if (first.rank() != 2) throw InvalidArgumentError("combine_embeddings expects [B,D] inputs");
  const auto b = first.dim(0), d = first.dim(1);
  for (const auto &e : embeddings)
    if (e.shape() != first.shape())
      throw InvalidArgumentError("combine_embeddings: embedding shapes differ");
  for (const auto &w : combo.weights)
    if (w.size() != d) throw InvalidArgumentError("combine_embeddings: weight width mismatch");
  if (combo.bias.size() != d) throw InvalidArgumentError("combine_embeddings: bias width mismatch");

  // Products of two floats are exact in double; summing them in sorted
  // order makes the result independent of branch order.
  const auto n = embeddings.size();
  std::vector<double> terms(n);
  Tensor out(Shape{b, d});
  for (std::int64_t row = 0; row < b; ++row)
    for (std::int64_t k = 0; k < d; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto &w = combo.weights[shared ? 0 : i];
        terms[i] = static_cast<double>(embeddings[i][row * d + k]) * w[k];
      }
      std::sort(terms.begin(), terms.end());
      double sum = 0.0;
      for (double t : terms) sum += t;
      out[row * d + k] = static_cast<float>(sum + combo.bias[k]);
    }
  return out;
}

// ---- TeacherModel -------------------------------------------------------------

TeacherModel::TeacherModel(std::vector<ModelHandle> branches, int num_classes,
                           std::uint64_t seed, bool shared_weight)
    : branches_(std::move(branches)), num_classes_(num_classes), shared_weight_(shared_weight) {
  if (branches_.empty()) throw InvalidArgumentError("a teacher needs at least one branch");
  if (num_classes < 2) throw InvalidArgumentError("num_classes must be at least 2");
  for (auto &b : branches_) {
    if (b.embed_dim() != kEmbedDim)
      throw InvalidArgumentError("branch " + b.spec().name + " has embed_dim " +
                                 std::to_string(b.embed_dim()));
    if (!(b.spec().input_resolution == branches_.front().spec().input_resolution))
      throw InvalidArgumentError("teacher branches must share one input resolution");
    b.freeze(b.all_parameter_names());
  }
  const auto n = branches_.size();
  const float init = 1.0f / static_cast<float>(n);
  if (shared_weight_) {
    head_.push_back({"combo/w", Tensor(Shape{kEmbedDim}, init)});
  } else {
    for (std::size_t i = 0; i < n; ++i)
      head_.push_back({"combo/w" + std::to_string(i), Tensor(Shape{kEmbedDim}, init)});
  }
  head_.push_back({"combo/bias", Tensor(Shape{kEmbedDim})});
  std::mt19937_64 rng(seed);
  classifier_ = nn::make_dense(head_, "classifier", kEmbedDim, num_classes, rng);
}

const Resolution &TeacherModel::input_resolution() const {
  return branches_.front().spec().input_resolution;
}

CombinationParams TeacherModel::combination() const {
  CombinationParams c;
  const std::size_t nw = shared_weight_ ? 1 : branches_.size();
  for (std::size_t i = 0; i < nw; ++i) c.weights.push_back(head_[i].value);
  c.bias = head_[nw].value;
  return c;
}

std::vector<Tensor> TeacherModel::branch_embeddings(const Tensor &images) const {
  std::vector<Tensor> out;
  out.reserve(branches_.size());
  for (const auto &b : branches_) out.push_back(b.forward(images).embedding);
  return out;
}

ForwardOutput TeacherModel::forward(const Tensor &images) const {
  const auto e = branch_embeddings(images);
  return forward_from_embeddings(e);
}

ForwardOutput TeacherModel::forward_from_embeddings(std::span<const Tensor> embeddings,
                                                    Tape *tape) const {
  if (embeddings.size() != branches_.size())
    throw InvalidArgumentError("expected one embedding per branch");
  ForwardOutput out;
  out.embedding = combine_embeddings(embeddings, combination());
  out.logits = nn::forward(classifier_, head_, out.embedding,
                           tape ? &tape->classifier_cache : nullptr);
  out.probabilities = softmax_rows(out.logits);
  if (tape) {
    tape->branch_embeddings.assign(embeddings.begin(), embeddings.end());
    tape->combined = out.embedding;
  }
  return out;
}

std::vector<Tensor> TeacherModel::backward(const Tape &tape, const Tensor &d_logits) const {
  std::vector<Tensor> grads;
  for (const auto &p : head_) grads.emplace_back(p.value.shape());
  const Tensor d_combined =
      nn::backward(classifier_, head_, tape.classifier_cache, d_logits, grads, true);
  const auto b = d_combined.dim(0), d = d_combined.dim(1);
  const std::size_t nw = shared_weight_ ? 1 : branches_.size();
  for (std::size_t n = 0; n < tape.branch_embeddings.size(); ++n) {
    auto &gw = grads[shared_weight_ ? 0 : n];
    const auto &e = tape.branch_embeddings[n];
    for (std::int64_t row = 0; row < b; ++row)
      for (std::int64_t k = 0; k < d; ++k) gw[k] += e[row * d + k] * d_combined[row * d + k];
  }
  auto &gb = grads[nw];
  for (std::int64_t row = 0; row < b; ++row)
    for (std::int64_t k = 0; k < d; ++k) gb[k] += d_combined[row * d + k];
  return grads;
}

std::string TeacherModel::fingerprint() const {
  Hasher h;
  h.update(std::string_view("distillkit.teacher.v1"));
  h.update_pod(num_classes_).update_pod(shared_weight_);
  auto add = [&](const std::vector<Parameter> &params) {
    for (const auto &p : params) {
      h.update(p.name);
      h.update(std::string_view(reinterpret_cast<const char *>(p.value.data()),
                                static_cast<std::size_t>(p.value.size()) * sizeof(float)));
    }
  };
  for (const auto &b : branches_) {
    h.update(spec_to_json(b.spec()).dump());
    add(b.parameters());
  }
  add(head_);
  return to_hex(h.finish());
}

TeacherModel build_teacher(std::vector<ModelHandle> branches, int num_classes,
                           std::uint64_t seed, bool shared_weight) {
  return TeacherModel(std::move(branches), num_classes, seed, shared_weight);
}

std::int64_t count_trainable_params(const TeacherModel &teacher) {
  std::int64_t n = count_parameters(teacher.head_parameters());
  for (const auto &b : teacher.branches()) n += count_trainable_params(b);
  return n;
}

// ---- training -------------------------------------------------------------------

StepLosses teacher_training_step(TeacherModel &teacher, Adam &optimizer,
                                 std::span<const Tensor> branch_embeddings, const Tensor &labels,
                                 const TrainConfig &cfg, std::int64_t step_index) {
  TeacherModel::Tape tape;
  const auto out = teacher.forward_from_embeddings(branch_embeddings, &tape);
  const auto lc = cfg.loss_config();
  const Matrix y = detail::to_matrix(labels);
  const Matrix p = softmax(detail::to_matrix(out.logits));
  const std::set<std::string> none;
  const double theta_sq = detail::squared_norm(teacher.head_parameters(), none);
  const double loss = entropy_loss(y, p, theta_sq, lc);
  if (!std::isfinite(loss))
    throw NumericalError("non-finite teacher loss at step " + std::to_string(step_index));

  const Tensor d_logits = detail::to_tensor(softmax_backward(p, probability_loss_grad(y, p, lc)));
  auto grads = teacher.backward(tape, d_logits);
  detail::add_weight_decay(grads, teacher.head_parameters(), none, lc.lambda_reg);
  optimizer.step(teacher.mutable_head_parameters(), grads, none);
  return StepLosses{loss, loss, 0.0};
}

namespace {

/// Branch embeddings for every sample of `loader`, one [N,512] tensor per
/// branch, plus one-hot labels.
std::pair<std::vector<Tensor>, Tensor> embed_all(const TeacherModel &teacher,
                                                 const ImageLoader &loader) {
  const auto &samples = loader.index().samples();
  const auto n = static_cast<std::int64_t>(samples.size());
  std::vector<Tensor> emb(teacher.num_branches(), Tensor(Shape{n, kEmbedDim}));
  Tensor labels(Shape{n, loader.index().num_classes()});
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const auto end = std::min(samples.size(), begin + kChunk);
    auto batch = loader.batch(std::span<const Sample>(samples.data() + begin, end - begin));
    const auto e = teacher.branch_embeddings(batch.images);
    for (std::size_t k = 0; k < e.size(); ++k)
      std::copy(e[k].data(), e[k].data() + e[k].size(),
                emb[k].data() + static_cast<std::int64_t>(begin) * kEmbedDim);
    std::copy(batch.labels.data(), batch.labels.data() + batch.labels.size(),
              labels.data() + static_cast<std::int64_t>(begin) * labels.dim(1));
  }
  return {std::move(emb), std::move(labels)};
}

double head_accuracy(const TeacherModel &teacher, const std::vector<Tensor> &emb,
                     const DatasetIndex &index) {
  const auto out = teacher.forward_from_embeddings(emb);
  const auto c = out.probabilities.dim(1);
  std::vector<int> pred, truth;
  for (std::size_t i = 0; i < index.size(); ++i) {
    pred.push_back(argmax(std::span<const float>(
        out.probabilities.data() + static_cast<std::int64_t>(i) * c, static_cast<std::size_t>(c))));
    truth.push_back(index.samples()[i].class_index);
  }
  return score_predictions(pred, truth, index.num_classes()).accuracy;
}

} // namespace

TeacherTrainResult train_teacher(TeacherModel teacher, const DatasetIndex &train,
                                 const TrainConfig &cfg, const DatasetIndex *eval) {
  cfg.validate();
  if (train.empty()) throw InvalidArgumentError("train_teacher: empty training set");

  const ImageLoader loader(augment_rotations(train));
  // Branches are frozen and inference is deterministic, so their
  // embeddings are computed once.
  auto [emb, labels] = embed_all(teacher, loader);
  std::vector<Tensor> eval_emb;
  const bool track = eval && cfg.keep_best;
  if (track) {
    if (eval->empty()) throw InvalidArgumentError("train_teacher: empty evaluation set");
    eval_emb = embed_all(teacher, ImageLoader(*eval)).first;
  }

  std::mt19937_64 rng(cfg.seed);
  Adam optimizer(cfg.adam_config());
  TrainHistory history;
  std::vector<Parameter> best_head = teacher.head_parameters();
  double best_acc = -1.0;
  std::int64_t step = 0;
  const auto classes = labels.dim(1);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = detail::epoch_batches(loader.index().size(), cfg.batch_size, 1, rng);
    double loss_sum = 0.0;
    std::int64_t hits = 0, seen = 0;
    for (const auto &rows : batches) {
      std::vector<Tensor> e;
      for (const auto &full : emb) e.push_back(detail::gather_rows(full, rows));
      const Tensor y = detail::gather_rows(labels, rows);
      const auto losses = teacher_training_step(teacher, optimizer, e, y, cfg, step);
      ++step;
      history.steps.push_back(StepRecord{step, epoch, losses.total, losses.ce, losses.dist,
                                         cfg.learning_rate, utc_timestamp()});
      loss_sum += losses.total;
      const auto probs = teacher.forward_from_embeddings(e).probabilities;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto off = static_cast<std::int64_t>(i) * classes;
        const std::span<const float> pr(probs.data() + off, static_cast<std::size_t>(classes));
        const std::span<const float> lr(y.data() + off, static_cast<std::size_t>(classes));
        hits += argmax(pr) == argmax(lr);
        ++seen;
      }
    }
    EpochRecord rec{epoch, batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size()),
                    seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0,
                    std::nullopt};
    if (track) {
      rec.eval_accuracy = head_accuracy(teacher, eval_emb, *eval);
      if (*rec.eval_accuracy > best_acc) {
        best_acc = *rec.eval_accuracy;
        best_head = teacher.head_parameters();
        history.best_epoch = epoch;
      }
    }
    history.epochs.push_back(rec);
  }
  if (track) teacher.mutable_head_parameters() = best_head;
  return TeacherTrainResult{std::move(teacher), std::move(history)};
}

EvaluationReport evaluate_detailed(const TeacherModel &teacher, const DatasetIndex &test) {
  return evaluate_with([&](const Tensor &x) { return teacher.forward(x).probabilities; }, test);
}

double evaluate(const TeacherModel &teacher, const DatasetIndex &test) {
  return evaluate_detailed(teacher, test).accuracy;
}

// ---- persistence ------------------------------------------------------------------

void save_teacher(const fs::path &path, const TeacherModel &teacher) {
  nlohmann::json meta;
  meta["format"] = "distillkit.teacher";
  meta["num_classes"] = teacher.num_classes();
  meta["shared_weight"] = teacher.shared_weight();
  meta["branches"] = nlohmann::json::array();
  std::vector<Parameter> tensors;
  for (std::size_t n = 0; n < teacher.num_branches(); ++n) {
    const auto &b = teacher.branches()[n];
    meta["branches"].push_back({{"spec", spec_to_json(b.spec())}, {"num_classes", b.num_classes()}});
    for (const auto &p : b.parameters())
      tensors.push_back({"branch" + std::to_string(n) + "/" + p.name, p.value});
  }
  for (const auto &p : teacher.head_parameters()) tensors.push_back(p);
  write_tensor_file(path, tensors, meta.dump());
}

TeacherModel load_teacher(const fs::path &path) {
  const auto file = read_tensor_file(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(file.metadata);
  } catch (const nlohmann::json::exception &e) {
    throw WeightFormatError(path.string() + ": bad metadata: " + e.what());
  }
  if (meta.value("format", "") != "distillkit.teacher")
    throw WeightFormatError(path.string() + ": not a teacher weight file");

  std::vector<std::string> bad;
  auto fill = [&](std::vector<Parameter> &params, const std::string &prefix) {
    for (auto &p : params) {
      const Tensor *t = file.find(prefix + p.name);
      if (!t || t->shape() != p.value.shape())
        bad.push_back(prefix + p.name);
      else
        p.value = *t;
    }
  };
  std::vector<ModelHandle> branches;
  for (std::size_t n = 0; n < meta.at("branches").size(); ++n) {
    const auto &bj = meta.at("branches")[n];
    auto spec = spec_from_json(bj.at("spec"));
    spec.pretrained_weights.reset();
    ModelHandle m(spec, bj.at("num_classes").get<int>(), 0);
    fill(m.mutable_parameters(), "branch" + std::to_string(n) + "/");
    branches.push_back(std::move(m));
  }
  TeacherModel teacher(std::move(branches), meta.at("num_classes").get<int>(), 0,
                       meta.at("shared_weight").get<bool>());
  fill(teacher.mutable_head_parameters(), "");
  if (!bad.empty()) {
    std::string msg = path.string() + ": missing or mis-shaped tensors:";
    for (const auto &b : bad) msg += " " + b;
    throw WeightShapeError(msg);
  }
  return teacher;
}

// ---- feature cache ------------------------------------------------------------------

namespace {
constexpr char kCacheMagic[4] = {'F', 'C', 'H', '1'};
constexpr std::size_t kCacheHeaderSize = 16;
} // namespace

const std::vector<float> *FeatureCache::find(const std::string &sample_id) const {
  auto it = entries.find(sample_id);
  return it == entries.end() ? nullptr : &it->second;
}

Digest cache_digest(const std::string &teacher_fingerprint, const std::string &dataset_fingerprint) {
  return Hasher()
      .update(std::string_view("distillkit.cache.v1"))
      .update(teacher_fingerprint)
      .update(dataset_fingerprint)
      .finish();
}

FeatureCache extract_features(const TeacherModel &teacher, const DatasetIndex &data,
                              bool include_rotations) {
  if (data.empty()) throw InvalidArgumentError("extract_features: empty dataset");
  std::vector<Sample> originals;
  for (const auto &s : data.samples())
    if (s.rotation == Rotation::none || !include_rotations) originals.push_back(s);
  auto base = data.with_samples(std::move(originals));
  const ImageLoader loader(include_rotations ? augment_rotations(base) : base);

  FeatureCache cache;
  const auto &samples = loader.index().samples();
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const auto end = std::min(samples.size(), begin + kChunk);
    auto batch = loader.batch(std::span<const Sample>(samples.data() + begin, end - begin));
    const auto feat = teacher.forward(batch.images).embedding;
    for (std::size_t i = 0; i < end - begin; ++i) {
      const float *row = feat.data() + static_cast<std::int64_t>(i) * kEmbedDim;
      cache.entries[samples[begin + i].sample_id] = std::vector<float>(row, row + kEmbedDim);
    }
  }
  cache.teacher_fingerprint = teacher.fingerprint();
  cache.dataset_fingerprint = dataset_fingerprint(loader.index(), false);
  cache.fingerprint = cache_digest(cache.teacher_fingerprint, cache.dataset_fingerprint);
  cache.created = utc_timestamp();
  return cache;
}

void write_feature_cache(const fs::path &path, const FeatureCache &cache) {
  const auto n = cache.entries.size();
  const std::uint64_t table_offset =
      kCacheHeaderSize + static_cast<std::uint64_t>(n) * cache.dim * sizeof(float);
  if (n > UINT32_MAX || table_offset > UINT32_MAX)
    throw CacheWriteError("feature cache too large for the FCH1 format");

  detail::ByteWriter w;
  w.put_bytes(kCacheMagic, 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n));
  w.put<std::uint32_t>(cache.dim);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table_offset));
  for (const auto &[id, vec] : cache.entries) {
    if (vec.size() != cache.dim)
      throw InvalidArgumentError("feature vector for " + id + " has length " +
                                 std::to_string(vec.size()));
    w.put_bytes(vec.data(), vec.size() * sizeof(float));
  }
  std::uint32_t index = 0;
  for (const auto &[id, vec] : cache.entries) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(id.size()));
    w.put_string(id);
    w.put<std::uint32_t>(index++);
  }
  w.put_bytes(cache.fingerprint.data(), cache.fingerprint.size());
  detail::write_file_bytes<CacheWriteError>(path, w.bytes());
}

FeatureCache read_feature_cache(const fs::path &path) {
  if (!fs::exists(path)) throw NotFoundError("feature cache not found: " + path.string());
  const auto bytes = detail::read_file_bytes<IoError>(path);
  if (bytes.size() < 4 || std::string(bytes.data(), 4) != std::string(kCacheMagic, 4))
    throw CacheMagicError(path.string() + ": bad magic, not an FCH1 feature cache");

  detail::ByteReader<CacheFormatError> r(bytes, path.string());
  r.seek(4);
  const auto n = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  const auto table_offset = r.get<std::uint32_t>();
  if (dim == 0) throw CacheFormatError(path.string() + ": zero feature dimension");
  if (table_offset != kCacheHeaderSize + static_cast<std::uint64_t>(n) * dim * sizeof(float))
    throw CacheFormatError(path.string() + ": id table offset inconsistent with header");
  r.require(static_cast<std::size_t>(table_offset) - kCacheHeaderSize);

  FeatureCache cache;
  cache.dim = dim;
  r.seek(table_offset);
  std::vector<bool> used(n, false);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto id = r.get_string(r.get<std::uint32_t>());
    const auto index = r.get<std::uint32_t>();
    if (index >= n || used[index])
      throw CacheFormatError(path.string() + ": bad vector index for " + id);
    used[index] = true;
    const char *src = r.at(kCacheHeaderSize + static_cast<std::size_t>(index) * dim * sizeof(float));
    std::vector<float> vec(dim);
    std::memcpy(vec.data(), src, dim * sizeof(float));
    if (!cache.entries.emplace(std::move(id), std::move(vec)).second)
      throw CacheFormatError(path.string() + ": duplicate sample id");
  }
  r.require(cache.fingerprint.size());
  std::memcpy(cache.fingerprint.data(), r.at(r.pos()), cache.fingerprint.size());
  if (r.pos() + cache.fingerprint.size() != bytes.size())
    throw CacheFormatError(path.string() + ": trailing bytes after digest");
  return cache;
}

} // namespace distillkit
