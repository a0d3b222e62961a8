#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "distillkit/dataset.hpp"
#include "distillkit/tensor.hpp"

namespace dktest {

/// Fresh, empty directory under the system temp dir; removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag);
  ~TempDir();
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

/// Writes `count` small solid-colour PNGs into `<root>/<class_name>/`.
void write_images(const std::filesystem::path &root, const std::string &class_name, int count,
                  int size = 8, int shade = 0);

/// In-memory index: `classes` classes named c00.., `per_class` samples each.
distillkit::DatasetIndex synthetic_index(int classes, int per_class,
                                         distillkit::Resolution res = {8, 8, 3});

distillkit::Tensor random_tensor(const distillkit::Shape &shape, std::uint64_t seed,
                                 float lo = -1.0f, float hi = 1.0f);

/// Random probability rows [B,C] (strictly positive).
distillkit::Tensor random_probabilities(std::int64_t b, std::int64_t c, std::uint64_t seed);

/// One-hot rows for the given classes.
distillkit::Tensor one_hot(const std::vector<int> &classes, int num_classes);

std::vector<char> file_bytes(const std::filesystem::path &path);

} // namespace dktest
