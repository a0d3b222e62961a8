#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "distillkit/dataset.hpp"
#include "distillkit/nn.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit {

/// Width of Dense Layer 01, the "high-level feature" every model exposes.
inline constexpr int kEmbedDim = 512;

/// Parametric convolutional backbone: one stage per entry, each stage is
/// `depth` conv-norm-SiLU blocks of `width` channels. The first conv of a
/// stage downsamples by 2 while the feature map is larger than 1x1.
struct BackboneSpec {
  std::string name;
  std::vector<int> stage_widths;
  std::vector<int> stage_depths;
  Resolution input_resolution{32, 32, 3};
  std::optional<std::filesystem::path> pretrained_weights;

  void validate() const;
  bool operator==(const BackboneSpec &) const = default;
};

nlohmann::json spec_to_json(const BackboneSpec &spec);
BackboneSpec spec_from_json(const nlohmann::json &j);

/// Names accepted by `reference_backbone`.
std::vector<std::string> reference_backbone_names();

/// Desk-scale reference family. `ref-student` has seven stages so the
/// block-pruning ladder (-6B ... -3B) is expressible.
BackboneSpec reference_backbone(std::string_view name, Resolution resolution);

/// Truncates to the first `blocks_kept` stages; name gets a `-{k}B` suffix.
BackboneSpec prune_variant(const BackboneSpec &spec, int blocks_kept);

struct ForwardOutput {
  Tensor logits;        // [B,C]
  Tensor probabilities; // [B,C]
  Tensor embedding;     // [B,512]
};

/// backbone -> global average pool -> Dense Layer 01 (512, SiLU) -> Dense(C).
class ModelHandle {
public:
  struct Tape {
    std::vector<nn::LayerCache> caches;
    Tensor logits;
  };

  ModelHandle(BackboneSpec spec, int num_classes, std::uint64_t seed);

  const BackboneSpec &spec() const { return spec_; }
  int embed_dim() const { return kEmbedDim; }
  int num_classes() const { return num_classes_; }

  const std::vector<Parameter> &parameters() const { return params_; }
  std::vector<Parameter> &mutable_parameters() { return params_; }
  const Parameter &parameter(std::string_view name) const;
  Parameter &parameter(std::string_view name);

  const std::set<std::string> &frozen_names() const { return frozen_; }
  /// Replaces the frozen set; every name must exist.
  void freeze(const std::set<std::string> &names);
  bool is_frozen(std::size_t param_index) const;

  /// Parameter names of everything up to and including Dense Layer 01.
  std::set<std::string> feature_parameter_names() const;
  std::set<std::string> backbone_parameter_names() const;
  std::set<std::string> all_parameter_names() const;

  /// Inference pass; with a tape, records what `backward` needs.
  ForwardOutput forward(const Tensor &images, Tape *tape = nullptr) const;

  /// Backpropagates d(loss)/d(logits) and an optional extra gradient on the
  /// embedding. Returns gradients aligned with `parameters()`; frozen
  /// tensors receive zeros and layers below the lowest trainable one are
  /// skipped.
  std::vector<Tensor> backward(const Tape &tape, const Tensor &d_logits,
                               const Tensor *d_embedding = nullptr) const;

  std::vector<Tensor> zero_grads() const;

private:
  BackboneSpec spec_;
  int num_classes_;
  std::vector<Parameter> params_;
  std::vector<nn::Layer> layers_;
  std::size_t backbone_end_ = 0;  // layers [0, backbone_end_) produce pooled features
  std::size_t embedding_end_ = 0; // layers [0, embedding_end_) produce the embedding
  std::set<std::string> frozen_;
};

/// Seeded random initialisation; when `spec.pretrained_weights` is set the
/// backbone tensors are loaded from that weight file and the head stays
/// random.
ModelHandle build_model(const BackboneSpec &spec, int num_classes, std::uint64_t seed);

ForwardOutput forward(const ModelHandle &model, const Tensor &images);

ModelHandle set_frozen(ModelHandle model, const std::set<std::string> &names);

std::int64_t count_parameters(const std::vector<Parameter> &params);
std::int64_t count_trainable_params(const std::vector<Parameter> &params,
                                    const std::set<std::string> &frozen);
std::int64_t count_trainable_params(const ModelHandle &model);

/// Row-wise softmax computed in double precision.
Tensor softmax_rows(const Tensor &logits);

// ---- weight files ---------------------------------------------------------

struct TensorFile {
  std::string metadata; // UTF-8 JSON
  std::vector<Parameter> tensors;

  const Tensor *find(std::string_view name) const;
};

/// Writes the DKWT container (layout in docs/formats.md).
void write_tensor_file(const std::filesystem::path &path, const std::vector<Parameter> &tensors,
                       const std::string &metadata);
TensorFile read_tensor_file(const std::filesystem::path &path);

void save_model(const std::filesystem::path &path, const ModelHandle &model);
ModelHandle load_model(const std::filesystem::path &path);

/// Overwrites backbone tensors from a weight file (shapes must match).
void load_backbone_weights(ModelHandle &model, const std::filesystem::path &path);

} // namespace distillkit
