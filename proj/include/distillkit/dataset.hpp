#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "distillkit/tensor.hpp"

namespace distillkit {

struct Resolution {
  int height = 0;
  int width = 0;
  int channels = 3;

  bool operator==(const Resolution &) const = default;
};

/// Counterclockwise quarter turns applied to a sample at load time.
enum class Rotation : int { none = 0, r90 = 90, r180 = 180, r270 = 270 };

Rotation rotation_from_degrees(int degrees);
std::string rotation_suffix(Rotation r);

struct Sample {
  std::string sample_id;
  std::string relative_path;
  int class_index = 0;
  Rotation rotation = Rotation::none;

  /// sample_id of the unrotated original this sample was derived from.
  std::string parent_id() const;

  bool operator==(const Sample &) const = default;
};

/// Immutable catalog of labeled images. Construction validates the
/// invariants: sorted unique class names, unique sample ids, class indices
/// in range.
class DatasetIndex {
public:
  DatasetIndex(std::filesystem::path root, std::vector<std::string> classes,
               std::vector<Sample> samples, Resolution resolution);

  const std::filesystem::path &root() const { return root_; }
  const std::vector<std::string> &classes() const { return classes_; }
  const std::vector<Sample> &samples() const { return samples_; }
  const Resolution &resolution() const { return resolution_; }
  int num_classes() const { return static_cast<int>(classes_.size()); }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  std::vector<std::size_t> class_counts() const;

  /// Same root/classes/resolution, different sample list.
  DatasetIndex with_samples(std::vector<Sample> samples) const;

private:
  std::filesystem::path root_;
  std::vector<std::string> classes_;
  std::vector<Sample> samples_;
  Resolution resolution_;
};

struct SplitSpec {
  double train_fraction = 0.2;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct DatasetSplit {
  DatasetIndex train;
  DatasetIndex test;
};

/// Catalogs `<root>/<class_name>/<image>` for PNG, JPEG and BMP files.
/// Classes and files are sorted lexicographically; sample ids are the
/// generic relative paths.
DatasetIndex scan_dataset(const std::filesystem::path &root, Resolution resolution);

/// Stratified split: per class, round-half-up(count * fraction) samples,
/// chosen by a seeded shuffle, go to train.
DatasetSplit split_dataset(const DatasetIndex &index, const SplitSpec &spec);

void write_split_manifest(const std::filesystem::path &path, const DatasetSplit &split);
/// Manifest of a single index; every row is tagged with `split_name`.
void write_index_manifest(const std::filesystem::path &path, const DatasetIndex &index,
                          const std::string &split_name);
DatasetSplit read_split_manifest(const std::filesystem::path &path,
                                 const std::filesystem::path &root,
                                 std::vector<std::string> classes, Resolution resolution);

/// Counterclockwise rotation of a square [H,W,C] image.
Tensor rotate_image(const Tensor &image, Rotation angle);

/// Appends the 90/180/270 degree variants of every sample (ids suffixed
/// `#r90`, `#r180`, `#r270`), quadrupling the index.
DatasetIndex augment_rotations(const DatasetIndex &index);

/// Hash over class vocabulary, sample list and (optionally) file bytes.
std::string dataset_fingerprint(const DatasetIndex &index, bool include_content = true);

/// Decodes an image, resizes it to `resolution` and scales pixels to [0,1].
Tensor load_image(const std::filesystem::path &path, Resolution resolution);

struct SoftBatch {
  Tensor images; // [B,H,W,3]
  Tensor labels; // [B,C]
  std::vector<std::string> sample_ids;

  std::int64_t size() const { return images.rank() ? images.dim(0) : 0; }
};

/// Loads samples from disk with rotation applied, caching decoded
/// originals. Thread-safe.
class ImageLoader {
public:
  explicit ImageLoader(const DatasetIndex &index, bool cache = true);

  Tensor load(const Sample &sample) const;
  /// One-hot labelled batch of the given sample positions.
  SoftBatch batch(std::span<const std::size_t> positions) const;
  SoftBatch batch(std::span<const Sample> samples) const;

  const DatasetIndex &index() const { return index_; }

private:
  DatasetIndex index_;
  bool cache_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, Tensor> originals_;
};

enum class MixupMode { uniform, beta };

struct MixupPolicy {
  MixupMode mode = MixupMode::uniform;
  double beta_alpha = 0.2;
  std::uint64_t rng_seed = 0;
};

struct MixPair {
  std::size_t first = 0;
  std::size_t partner = 0;
  double ratio = 1.0;
};

/// One pair per base sample i: partner j != i uniform over the batch,
/// ratio from the policy's distribution.
std::vector<MixPair> draw_mix_pairs(std::size_t batch_size, const MixupPolicy &policy);

/// r*x_i + (1-r)*x_j for images and labels alike.
SoftBatch mix_samples(const SoftBatch &base, std::span<const MixPair> pairs);

/// base ++ uniform-ratio mixes ++ beta-ratio mixes (B -> 3B rows).
SoftBatch make_mixup_batch(const SoftBatch &base, const MixupPolicy &uniform_policy,
                           const MixupPolicy &beta_policy);

SoftBatch concat_batches(std::span<const SoftBatch> parts);

} // namespace distillkit
