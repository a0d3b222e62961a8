#include "distillkit/train_config.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "distillkit/error.hpp"
#include "distillkit/fingerprint.hpp"

namespace distillkit {

std::string to_string(Augmentation a) {
  return a == Augmentation::rotation_mixup ? "rotation_mixup" : "rotation_only";
}

std::string to_string(LossKind k) {
  switch (k) {
  case LossKind::kl: return "kl";
  case LossKind::entropy: return "entropy";
  case LossKind::distill: return "distill";
  }
  return "?";
}

Augmentation parse_augmentation(std::string_view s) {
  if (s == "rotation_mixup") return Augmentation::rotation_mixup;
  if (s == "rotation_only") return Augmentation::rotation_only;
  throw ConfigError("unknown augmentation '" + std::string(s) + "'");
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "kl") return LossKind::kl;
  if (s == "entropy") return LossKind::entropy;
  if (s == "distill") return LossKind::distill;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw InvalidArgumentError("learning_rate must be >= 0");
  if (epochs < 1) throw InvalidArgumentError("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgumentError("batch_size must be >= 1");
  if (augmentation == Augmentation::rotation_mixup && batch_size < 2)
    throw InvalidArgumentError("mixup needs batch_size >= 2");
  if (!(beta_alpha > 0.0)) throw InvalidArgumentError("beta_alpha must be > 0");
  loss_config().validate();
}

LossConfig TrainConfig::loss_config() const {
  LossConfig c;
  c.lambda_reg = lambda_reg;
  c.distill_ratio = distill_ratio;
  c.squared_distance = squared_distance;
  return c;
}

AdamConfig TrainConfig::adam_config() const {
  return AdamConfig{learning_rate, adam_beta1, adam_beta2, adam_epsilon};
}

nlohmann::json to_json(const TrainConfig &cfg) {
  return nlohmann::json{
      {"learning_rate", cfg.learning_rate},
      {"batch_size", cfg.batch_size},
      {"epochs", cfg.epochs},
      {"seed", cfg.seed},
      {"augmentation", to_string(cfg.augmentation)},
      {"loss", to_string(cfg.loss)},
      {"lambda_reg", cfg.lambda_reg},
      {"distill_ratio", cfg.distill_ratio},
      {"beta_alpha", cfg.beta_alpha},
      {"squared_distance", cfg.squared_distance},
      {"per_variant_targets", cfg.per_variant_targets},
      {"keep_best", cfg.keep_best},
      {"adam_beta1", cfg.adam_beta1},
      {"adam_beta2", cfg.adam_beta2},
      {"adam_epsilon", cfg.adam_epsilon},
      {"activation", "silu"},
  };
}

TrainConfig train_config_from_json(const nlohmann::json &j, const std::string &path,
                                   TrainConfig cfg) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto &key = it.key();
    const auto &v = it.value();
    const auto where = path + "." + key;
    try {
      if (key == "learning_rate") cfg.learning_rate = v.get<double>();
      else if (key == "batch_size") cfg.batch_size = v.get<int>();
      else if (key == "epochs") cfg.epochs = v.get<int>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "augmentation") cfg.augmentation = parse_augmentation(v.get<std::string>());
      else if (key == "loss") cfg.loss = parse_loss_kind(v.get<std::string>());
      else if (key == "lambda_reg") cfg.lambda_reg = v.get<double>();
      else if (key == "distill_ratio") cfg.distill_ratio = v.get<double>();
      else if (key == "beta_alpha") cfg.beta_alpha = v.get<double>();
      else if (key == "squared_distance") cfg.squared_distance = v.get<bool>();
      else if (key == "per_variant_targets") cfg.per_variant_targets = v.get<bool>();
      else if (key == "keep_best") cfg.keep_best = v.get<bool>();
      else if (key == "adam_beta1") cfg.adam_beta1 = v.get<double>();
      else if (key == "adam_beta2") cfg.adam_beta2 = v.get<double>();
      else if (key == "adam_epsilon") cfg.adam_epsilon = v.get<double>();
      else if (key == "activation") {
        if (v.get<std::string>() != "silu")
          throw ConfigError(where + ": only 'silu' is supported");
      } else
        throw ConfigError(where + ": unknown key");
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError(where + ": " + e.what());
    } catch (const ConfigError &) {
      throw;
    } catch (const Error &e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const InvalidArgumentError &e) {
    throw ConfigError(path + ": " + e.what());
  }
  return cfg;
}

std::string fingerprint(const TrainConfig &cfg) {
  return to_hex(digest_of(to_json(cfg).dump()));
}

void TrainHistory::write_jsonl(const std::filesystem::path &path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write history " + path.string());
  for (const auto &s : steps) {
    nlohmann::json j{{"step", s.step},           {"epoch", s.epoch},
                     {"loss_total", s.loss_total}, {"loss_ce", s.loss_ce},
                     {"loss_dist", s.loss_dist}, {"lr", s.lr},
                     {"timestamp", s.timestamp}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing history " + path.string());
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

} // namespace distillkit
