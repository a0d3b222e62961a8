#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "distillkit/losses.hpp"
#include "distillkit/optimizer.hpp"

namespace distillkit {

enum class Augmentation { rotation_mixup, rotation_only };
enum class LossKind { kl, entropy, distill };

std::string to_string(Augmentation a);
std::string to_string(LossKind k);
Augmentation parse_augmentation(std::string_view s);
LossKind parse_loss_kind(std::string_view s);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 60; // before mixup
  int epochs = 100;
  std::uint64_t seed = 0;
  Augmentation augmentation = Augmentation::rotation_mixup;
  LossKind loss = LossKind::kl;
  double lambda_reg = 1e-4;
  double distill_ratio = 0.5;
  double beta_alpha = 0.2;
  bool squared_distance = false;
  /// Match rotated samples against the teacher feature of the same
  /// rotation (true) or of the unrotated original (false).
  bool per_variant_targets = true;
  /// Keep the epoch with the best evaluation accuracy when an evaluation
  /// set is supplied.
  bool keep_best = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;

  void validate() const;
  LossConfig loss_config() const;
  AdamConfig adam_config() const;
};

nlohmann::json to_json(const TrainConfig &cfg);
/// Starts from `base` and overrides keys present in `j`; unknown keys raise
/// ConfigError naming `path`.
TrainConfig train_config_from_json(const nlohmann::json &j, const std::string &path = "train",
                                   TrainConfig base = {});
/// Hex digest of the canonical JSON form.
std::string fingerprint(const TrainConfig &cfg);

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_dist = 0.0;
  double lr = 0.0;
  std::string timestamp;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> eval_accuracy;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;

  /// One JSON object per step: step, epoch, loss_total, loss_ce,
  /// loss_dist, lr, timestamp.
  void write_jsonl(const std::filesystem::path &path) const;
};

std::string utc_timestamp();

} // namespace distillkit
