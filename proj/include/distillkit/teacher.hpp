#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "distillkit/dataset.hpp"
#include "distillkit/evaluation.hpp"
#include "distillkit/fingerprint.hpp"
#include "distillkit/model.hpp"
#include "distillkit/optimizer.hpp"
#include "distillkit/train_config.hpp"

namespace distillkit {

/// Element-wise fusion weights: one [512] vector per branch (or a single
/// shared one) plus a [512] bias.
struct CombinationParams {
  std::vector<Tensor> weights;
  Tensor bias;
};

/// sum_n e_n (.) w_n + b for embeddings e_n of shape [B,512]. With a single
/// weight vector and several embeddings, that vector is shared.
Tensor combine_embeddings(std::span<const Tensor> embeddings, const CombinationParams &combo);

/// N frozen branches -> combination block -> Dense(512 -> C) -> softmax.
class TeacherModel {
public:
  struct Tape {
    std::vector<Tensor> branch_embeddings;
    Tensor combined;
    nn::LayerCache classifier_cache;
  };

  TeacherModel(std::vector<ModelHandle> branches, int num_classes, std::uint64_t seed,
               bool shared_weight = false);

  const std::vector<ModelHandle> &branches() const { return branches_; }
  std::size_t num_branches() const { return branches_.size(); }
  int num_classes() const { return num_classes_; }
  bool shared_weight() const { return shared_weight_; }
  const Resolution &input_resolution() const;

  /// combo/w{n} (or combo/w), combo/bias, classifier/kernel, classifier/bias.
  const std::vector<Parameter> &head_parameters() const { return head_; }
  std::vector<Parameter> &mutable_head_parameters() { return head_; }
  CombinationParams combination() const;

  /// Dense Layer 01 output of every branch for a batch of images.
  std::vector<Tensor> branch_embeddings(const Tensor &images) const;

  /// `embedding` is the fused high-level feature.
  ForwardOutput forward(const Tensor &images) const;
  ForwardOutput forward_from_embeddings(std::span<const Tensor> embeddings,
                                        Tape *tape = nullptr) const;
  /// Gradients aligned with head_parameters().
  std::vector<Tensor> backward(const Tape &tape, const Tensor &d_logits) const;

  /// Digest over architecture and every tensor value.
  std::string fingerprint() const;

private:
  std::vector<ModelHandle> branches_;
  int num_classes_;
  bool shared_weight_;
  std::vector<Parameter> head_;
  nn::Dense classifier_;
};

/// Freezes every branch tensor; combination weights start at 1/N and bias
/// at 0; the classifier is seeded-random.
TeacherModel build_teacher(std::vector<ModelHandle> branches, int num_classes,
                           std::uint64_t seed, bool shared_weight = false);

/// Branches contribute nothing (fully frozen): N*512 + 512 + 512*C + C.
std::int64_t count_trainable_params(const TeacherModel &teacher);

struct StepLosses {
  double total = 0.0;
  double ce = 0.0;
  double dist = 0.0;
};

/// One entropy-loss update of the combination block and classifier from
/// precomputed branch embeddings.
StepLosses teacher_training_step(TeacherModel &teacher, Adam &optimizer,
                                 std::span<const Tensor> branch_embeddings, const Tensor &labels,
                                 const TrainConfig &cfg, std::int64_t step_index);

struct TeacherTrainResult {
  TeacherModel teacher;
  TrainHistory history;
};

/// Rotation-augmented, one-hot, entropy loss; only the head is updated.
TeacherTrainResult train_teacher(TeacherModel teacher, const DatasetIndex &train,
                                 const TrainConfig &cfg, const DatasetIndex *eval = nullptr);

EvaluationReport evaluate_detailed(const TeacherModel &teacher, const DatasetIndex &test);
double evaluate(const TeacherModel &teacher, const DatasetIndex &test);

void save_teacher(const std::filesystem::path &path, const TeacherModel &teacher);
TeacherModel load_teacher(const std::filesystem::path &path);

// ---- feature cache ---------------------------------------------------------

struct FeatureCache {
  std::uint32_t dim = kEmbedDim;
  std::map<std::string, std::vector<float>> entries;
  Digest fingerprint{};
  // Not persisted in the binary file.
  std::string teacher_fingerprint;
  std::string dataset_fingerprint;
  std::string created;

  const std::vector<float> *find(const std::string &sample_id) const;
};

Digest cache_digest(const std::string &teacher_fingerprint, const std::string &dataset_fingerprint);

/// Fused teacher features for every sample of `data`, unaugmented; with
/// `include_rotations` also for the #r90/#r180/#r270 variants.
FeatureCache extract_features(const TeacherModel &teacher, const DatasetIndex &data,
                              bool include_rotations = true);

/// FCH1 layout, little-endian:
///   "FCH1" | u32 entry_count | u32 dim | u32 id_table_offset
///   | entry_count*dim float32 (sample_id-sorted)
///   | entry_count * (u32 id_length, id bytes, u32 vector_index)
///   | 16-byte fingerprint digest
void write_feature_cache(const std::filesystem::path &path, const FeatureCache &cache);
FeatureCache read_feature_cache(const std::filesystem::path &path);

} // namespace distillkit
