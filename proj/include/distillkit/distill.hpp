#pragma once

#include <cstdint>

#include "distillkit/dataset.hpp"
#include "distillkit/model.hpp"
#include "distillkit/optimizer.hpp"
#include "distillkit/teacher.hpp"
#include "distillkit/train_config.hpp"

namespace distillkit {

/// One optimizer update on `batch`. `targets` ([B,512] teacher features)
/// must be given exactly when cfg.loss is distill.
///
/// For the distill loss the returned total is ratio*ce + (1-ratio)*dist,
/// where ce already includes the weight penalty.
/// Throws NumericalError naming `step_index` when the loss is not finite.
/// `probabilities`, when given, receives the pre-update predictions.
StepLosses training_step(ModelHandle &model, Adam &optimizer, const SoftBatch &batch,
                         const Tensor *targets, const TrainConfig &cfg, std::int64_t step_index,
                         Tensor *probabilities = nullptr);

struct TrainResult {
  ModelHandle model;
  TrainHistory history;
};

/// Loop shared by every phase: rotation-expanded data, optional mixup,
/// seeded shuffling. With `eval` and cfg.keep_best the best epoch's
/// weights are returned.
TrainResult train_model(ModelHandle model, const DatasetIndex &train, const TrainConfig &cfg,
                        const FeatureCache *cache = nullptr, const DatasetIndex *eval = nullptr);

/// Requires kl + rotation_mixup and no frozen tensors.
TrainResult train_baseline(ModelHandle model, const DatasetIndex &train, const TrainConfig &cfg,
                           const DatasetIndex *eval = nullptr);

/// Requires distill + rotation_only. Every training sample (and, with
/// per-variant targets, every rotation of it) must be present in `cache`;
/// the first missing id raises MissingFeatureError.
TrainResult train_student(ModelHandle student, const DatasetIndex &train,
                          const FeatureCache &cache, const TrainConfig &cfg,
                          const DatasetIndex *eval = nullptr);

/// Cache key the student is matched against for `sample`.
std::string target_key(const Sample &sample, bool per_variant_targets);

} // namespace distillkit
