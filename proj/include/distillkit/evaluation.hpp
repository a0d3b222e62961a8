#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "distillkit/dataset.hpp"
#include "distillkit/model.hpp"

namespace distillkit {

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const float> row);

struct EvaluationReport {
  double accuracy = 0.0;            // overall
  double class_mean_accuracy = 0.0; // mean of per-class recall over present classes
  std::int64_t correct = 0;
  std::int64_t total = 0;
  std::vector<int> predictions;
};

EvaluationReport score_predictions(std::span<const int> predicted, std::span<const int> truth,
                                   int num_classes);

/// Maps a [B,H,W,3] batch to [B,C] class probabilities.
using Predictor = std::function<Tensor(const Tensor &)>;

/// Runs unaugmented test images through `predict` in chunks of
/// `batch_size`. Throws InvalidArgumentError on an empty set.
EvaluationReport evaluate_with(const Predictor &predict, const DatasetIndex &test,
                               int batch_size = 64);
EvaluationReport evaluate_with(const Predictor &predict, const ImageLoader &loader,
                               int batch_size = 64);

EvaluationReport evaluate_detailed(const ModelHandle &model, const DatasetIndex &test);
double evaluate(const ModelHandle &model, const DatasetIndex &test);

} // namespace distillkit
