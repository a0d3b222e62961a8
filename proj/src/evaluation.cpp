#include "distillkit/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include "distillkit/error.hpp"

namespace distillkit {

int argmax(std::span<const float> row) {
  int best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

EvaluationReport score_predictions(std::span<const int> predicted, std::span<const int> truth,
                                   int num_classes) {
  if (predicted.size() != truth.size())
    throw InvalidArgumentError("prediction and label counts differ");
  if (truth.empty()) throw InvalidArgumentError("cannot score an empty test set");
  EvaluationReport r;
  r.total = static_cast<std::int64_t>(truth.size());
  std::vector<std::int64_t> hits(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::int64_t> seen(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    ++seen.at(t);
    if (predicted[i] == truth[i]) {
      ++r.correct;
      ++hits[t];
    }
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < seen.size(); ++c)
    if (seen[c]) {
      sum += static_cast<double>(hits[c]) / static_cast<double>(seen[c]);
      ++present;
    }
  r.class_mean_accuracy = present ? sum / present : 0.0;
  r.predictions.assign(predicted.begin(), predicted.end());
  return r;
}

EvaluationReport evaluate_with(const Predictor &predict, const ImageLoader &loader,
                               int batch_size) {
  const auto &test = loader.index();
  if (test.empty()) throw InvalidArgumentError("evaluate: test set is empty");
  std::vector<int> predicted, truth;
  predicted.reserve(test.size());
  const auto &samples = test.samples();
  for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
    auto batch = loader.batch(std::span<const Sample>(samples.data() + begin, end - begin));
    const Tensor probs = predict(batch.images);
    const auto c = probs.dim(1);
    for (std::size_t i = 0; i < end - begin; ++i) {
      predicted.push_back(argmax(std::span<const float>(
          probs.data() + static_cast<std::int64_t>(i) * c, static_cast<std::size_t>(c))));
      truth.push_back(samples[begin + i].class_index);
    }
  }
  return score_predictions(predicted, truth, test.num_classes());
}

EvaluationReport evaluate_with(const Predictor &predict, const DatasetIndex &test,
                               int batch_size) {
  if (test.empty()) throw InvalidArgumentError("evaluate: test set is empty");
  ImageLoader loader(test, false);
  return evaluate_with(predict, loader, batch_size);
}

EvaluationReport evaluate_detailed(const ModelHandle &model, const DatasetIndex &test) {
  return evaluate_with([&](const Tensor &x) { return model.forward(x).probabilities; }, test);
}

double evaluate(const ModelHandle &model, const DatasetIndex &test) {
  return evaluate_detailed(model, test).accuracy;
}

} // namespace distillkit
