#include "distillkit/distill.hpp"

#include <cmath>
#include <random>

#include "convert.hpp"
#include "distillkit/error.hpp"
#include "distillkit/evaluation.hpp"

namespace distillkit {

StepLosses training_step(ModelHandle &model, Adam &optimizer, const SoftBatch &batch,
                         const Tensor *targets, const TrainConfig &cfg, std::int64_t step_index,
                         Tensor *probabilities) {
  const bool distill = cfg.loss == LossKind::distill;
  if (distill != (targets != nullptr))
    throw InvalidArgumentError(distill ? "distill loss needs teacher targets"
                                       : "teacher targets given for a non-distill loss");
  if (batch.size() == 0) throw InvalidArgumentError("training_step: empty batch");
  if (batch.labels.rank() != 2 || batch.labels.dim(1) != model.num_classes())
    throw InvalidArgumentError("training_step: labels do not match the model's class count");
  if (targets && (targets->rank() != 2 || targets->dim(0) != batch.images.dim(0) ||
                  targets->dim(1) != model.embed_dim()))
    throw InvalidArgumentError("training_step: targets must be [B," +
                               std::to_string(model.embed_dim()) + "]");

  const auto lc = cfg.loss_config();
  ModelHandle::Tape tape;
  const auto out = model.forward(batch.images, &tape);
  const Matrix y = detail::to_matrix(batch.labels);
  const Matrix p = softmax(detail::to_matrix(out.logits));
  const double theta_sq = detail::squared_norm(model.parameters(), model.frozen_names());

  StepLosses losses;
  losses.ce = cfg.loss == LossKind::kl ? kl_loss(y, p, theta_sq, lc)
                                       : entropy_loss(y, p, theta_sq, lc);
  double ce_weight = 1.0;
  Matrix e_s, e_t;
  if (distill) {
    e_s = detail::to_matrix(out.embedding);
    e_t = detail::to_matrix(*targets);
    losses.dist = feature_distance_loss(e_s, e_t, lc);
    ce_weight = lc.distill_ratio;
    losses.total = distill_loss(losses.ce, losses.dist, lc);
  } else {
    losses.total = losses.ce;
  }
  if (!std::isfinite(losses.total))
    throw NumericalError("non-finite loss at step " + std::to_string(step_index));

  const Matrix d_logits = ce_weight * softmax_backward(p, probability_loss_grad(y, p, lc));
  std::vector<Tensor> grads;
  if (distill) {
    const Tensor d_emb =
        detail::to_tensor((1.0 - lc.distill_ratio) * feature_distance_grad(e_s, e_t, lc));
    grads = model.backward(tape, detail::to_tensor(d_logits), &d_emb);
  } else {
    grads = model.backward(tape, detail::to_tensor(d_logits));
  }
  detail::add_weight_decay(grads, model.parameters(), model.frozen_names(),
                           ce_weight * lc.lambda_reg);
  optimizer.step(model.mutable_parameters(), grads, model.frozen_names());
  if (probabilities) *probabilities = out.probabilities;
  return losses;
}

std::string target_key(const Sample &sample, bool per_variant_targets) {
  return per_variant_targets ? sample.sample_id : sample.parent_id();
}

namespace {

Tensor gather_targets(const FeatureCache &cache, const std::vector<std::string> &ids,
                      const DatasetIndex &index, bool per_variant) {
  std::map<std::string, const Sample *> by_id;
  for (const auto &s : index.samples()) by_id.emplace(s.sample_id, &s);
  Tensor out(Shape{static_cast<std::int64_t>(ids.size()), static_cast<std::int64_t>(cache.dim)});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto key = target_key(*by_id.at(ids[i]), per_variant);
    const auto *vec = cache.find(key);
    if (!vec) throw MissingFeatureError("no cached teacher feature for sample " + key);
    std::copy(vec->begin(), vec->end(), out.data() + static_cast<std::int64_t>(i) * cache.dim);
  }
  return out;
}

} // namespace

TrainResult train_model(ModelHandle model, const DatasetIndex &train, const TrainConfig &cfg,
                        const FeatureCache *cache, const DatasetIndex *eval) {
  cfg.validate();
  if (train.empty()) throw InvalidArgumentError("training set is empty");
  if (train.num_classes() != model.num_classes())
    throw InvalidArgumentError("model has " + std::to_string(model.num_classes()) +
                               " classes, training set has " +
                               std::to_string(train.num_classes()));
  const bool distill = cfg.loss == LossKind::distill;
  const bool mixup = cfg.augmentation == Augmentation::rotation_mixup;
  if (distill && !cache) throw InvalidArgumentError("distill loss needs a feature cache");
  if (distill && mixup)
    throw InvalidArgumentError("mixup is not defined for feature-distillation targets");
  if (cache && cache->dim != static_cast<std::uint32_t>(model.embed_dim()))
    throw InvalidArgumentError("feature cache dimension does not match the model embedding");

  const DatasetIndex augmented = augment_rotations(train);
  const ImageLoader loader(augmented);
  std::optional<ImageLoader> eval_loader;
  const bool track = eval && cfg.keep_best;
  if (track) eval_loader.emplace(*eval);

  std::mt19937_64 rng(cfg.seed);
  Adam optimizer(cfg.adam_config());
  TrainHistory history;
  std::vector<Parameter> best = model.parameters();
  double best_acc = -1.0;
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches =
        detail::epoch_batches(augmented.size(), cfg.batch_size, mixup ? 2 : 1, rng);
    double loss_sum = 0.0;
    std::int64_t hits = 0, seen = 0;
    for (const auto &rows : batches) {
      SoftBatch batch = loader.batch(rows);
      if (mixup) {
        const MixupPolicy uniform{MixupMode::uniform, cfg.beta_alpha, rng()};
        const MixupPolicy beta{MixupMode::beta, cfg.beta_alpha, rng()};
        batch = make_mixup_batch(batch, uniform, beta);
      }
      Tensor targets;
      if (distill)
        targets = gather_targets(*cache, batch.sample_ids, augmented, cfg.per_variant_targets);
      Tensor probs;
      const auto losses =
          training_step(model, optimizer, batch, distill ? &targets : nullptr, cfg, step, &probs);
      ++step;
      history.steps.push_back(StepRecord{step, epoch, losses.total, losses.ce, losses.dist,
                                         cfg.learning_rate, utc_timestamp()});
      loss_sum += losses.total;

      const auto c = static_cast<std::size_t>(probs.dim(1));
      for (std::size_t i = 0; i < static_cast<std::size_t>(batch.size()); ++i) {
        const std::span<const float> pr(probs.data() + i * c, c);
        const std::span<const float> lr(batch.labels.data() + i * c, c);
        hits += argmax(pr) == argmax(lr);
        ++seen;
      }
    }
    EpochRecord rec{epoch, batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size()),
                    seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0,
                    std::nullopt};
    if (track) {
      rec.eval_accuracy =
          evaluate_with([&](const Tensor &x) { return model.forward(x).probabilities; },
                        *eval_loader)
              .accuracy;
      if (*rec.eval_accuracy > best_acc) {
        best_acc = *rec.eval_accuracy;
        best = model.parameters();
        history.best_epoch = epoch;
      }
    }
    history.epochs.push_back(rec);
  }
  if (track) model.mutable_parameters() = best;
  return TrainResult{std::move(model), std::move(history)};
}

TrainResult train_baseline(ModelHandle model, const DatasetIndex &train, const TrainConfig &cfg,
                           const DatasetIndex *eval) {
  if (cfg.loss != LossKind::kl || cfg.augmentation != Augmentation::rotation_mixup)
    throw InvalidArgumentError("train_baseline requires loss=kl and augmentation=rotation_mixup");
  if (!model.frozen_names().empty())
    throw InvalidStateError("baseline training forbids frozen parameters (" +
                            *model.frozen_names().begin() + " is frozen)");
  return train_model(std::move(model), train, cfg, nullptr, eval);
}

TrainResult train_student(ModelHandle student, const DatasetIndex &train,
                          const FeatureCache &cache, const TrainConfig &cfg,
                          const DatasetIndex *eval) {
  if (cfg.loss != LossKind::distill || cfg.augmentation != Augmentation::rotation_only)
    throw InvalidArgumentError(
        "train_student requires loss=distill and augmentation=rotation_only");
  if (!student.frozen_names().empty())
    throw InvalidStateError("student training forbids frozen parameters (" +
                            *student.frozen_names().begin() + " is frozen)");
  const auto augmented = augment_rotations(train);
  for (const auto &s : augmented.samples()) {
    const auto key = target_key(s, cfg.per_variant_targets);
    if (!cache.find(key)) throw MissingFeatureError("no cached teacher feature for sample " + key);
  }
  return train_model(std::move(student), train, cfg, &cache, eval);
}

} // namespace distillkit
