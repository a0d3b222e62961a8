#include "distillkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "distillkit/error.hpp"
#include "distillkit/fingerprint.hpp"

namespace fs = std::filesystem;

namespace distillkit {

Rotation rotation_from_degrees(int degrees) {
  switch (degrees) {
  case 0: return Rotation::none;
  case 90: return Rotation::r90;
  case 180: return Rotation::r180;
  case 270: return Rotation::r270;
  default:
    throw InvalidArgumentError("rotation must be 0, 90, 180 or 270 degrees, got " +
                               std::to_string(degrees));
  }
}

std::string rotation_suffix(Rotation r) {
  return r == Rotation::none ? std::string{} : "#r" + std::to_string(static_cast<int>(r));
}

std::string Sample::parent_id() const {
  if (rotation == Rotation::none) return sample_id;
  const auto suffix = rotation_suffix(rotation);
  if (sample_id.size() >= suffix.size() &&
      sample_id.compare(sample_id.size() - suffix.size(), suffix.size(), suffix) == 0)
    return sample_id.substr(0, sample_id.size() - suffix.size());
  return sample_id;
}

DatasetIndex::DatasetIndex(fs::path root, std::vector<std::string> classes,
                           std::vector<Sample> samples, Resolution resolution)
    : root_(std::move(root)), classes_(std::move(classes)), samples_(std::move(samples)),
      resolution_(resolution) {
  if (resolution_.height <= 0 || resolution_.width <= 0 || resolution_.channels != 3)
    throw InvalidArgumentError("resolution must be positive with 3 channels");
  for (std::size_t i = 1; i < classes_.size(); ++i)
    if (!(classes_[i - 1] < classes_[i]))
      throw InvalidArgumentError("class names must be unique and sorted");
  std::set<std::string_view> ids;
  for (const auto &s : samples_) {
    if (s.class_index < 0 || s.class_index >= num_classes())
      throw InvalidArgumentError("sample " + s.sample_id + " has class index " +
                                 std::to_string(s.class_index) + " outside [0," +
                                 std::to_string(num_classes()) + ")");
    if (!ids.insert(s.sample_id).second)
      throw InvalidArgumentError("duplicate sample id " + s.sample_id);
  }
}

std::vector<std::size_t> DatasetIndex::class_counts() const {
  std::vector<std::size_t> counts(classes_.size(), 0);
  for (const auto &s : samples_) ++counts[static_cast<std::size_t>(s.class_index)];
  return counts;
}

DatasetIndex DatasetIndex::with_samples(std::vector<Sample> samples) const {
  return DatasetIndex(root_, classes_, std::move(samples), resolution_);
}

namespace {

bool is_image_file(const fs::path &p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::string csv_escape(const std::string &field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string &line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

void write_rows(std::ostream &out, const DatasetIndex &index, const std::string &split) {
  for (const auto &s : index.samples())
    out << csv_escape(s.sample_id) << ',' << csv_escape(s.relative_path) << ','
        << s.class_index << ',' << split << '\n';
}

} // namespace

DatasetIndex scan_dataset(const fs::path &root, Resolution resolution) {
  if (!fs::is_directory(root))
    throw NotFoundError("dataset root not found: " + root.string());

  std::vector<std::string> classes;
  for (const auto &entry : fs::directory_iterator(root))
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  std::sort(classes.begin(), classes.end());
  if (classes.empty())
    throw InvalidCorpusError("no class directories under " + root.string());

  std::vector<Sample> samples;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<std::string> files;
    for (const auto &entry : fs::directory_iterator(root / classes[c]))
      if (entry.is_regular_file() && is_image_file(entry.path()))
        files.push_back(entry.path().filename().string());
    if (files.empty()) throw InvalidCorpusError("class directory is empty: " + classes[c]);
    std::sort(files.begin(), files.end());
    for (const auto &f : files) {
      auto rel = (fs::path(classes[c]) / f).generic_string();
      samples.push_back(Sample{rel, rel, static_cast<int>(c), Rotation::none});
    }
  }
  return DatasetIndex(root, std::move(classes), std::move(samples), resolution);
}

DatasetSplit split_dataset(const DatasetIndex &index, const SplitSpec &spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw InvalidArgumentError("train_fraction must lie in (0,1)");
  if (!spec.stratified)
    throw InvalidArgumentError("only stratified splits are supported");

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(index.num_classes()));
  for (std::size_t i = 0; i < index.size(); ++i)
    by_class[static_cast<std::size_t>(index.samples()[i].class_index)].push_back(i);

  std::mt19937_64 rng(spec.seed);
  std::vector<bool> in_train(index.size(), false);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto &members = by_class[c];
    if (members.empty()) continue;
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(members.size()) * spec.train_fraction + 0.5));
    if (n_train < 1)
      throw InvalidArgumentError("class " + index.classes()[c] + " has " +
                                 std::to_string(members.size()) +
                                 " samples; too few for train_fraction " +
                                 std::to_string(spec.train_fraction));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < n_train; ++k) in_train[members[k]] = true;
  }

  std::vector<Sample> train, test;
  for (std::size_t i = 0; i < index.size(); ++i)
    (in_train[i] ? train : test).push_back(index.samples()[i]);
  return DatasetSplit{index.with_samples(std::move(train)), index.with_samples(std::move(test))};
}

void write_split_manifest(const fs::path &path, const DatasetSplit &split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "sample_id,relative_path,class_index,split\n";
  write_rows(out, split.train, "train");
  write_rows(out, split.test, "test");
  if (!out) throw IoError("failed writing manifest " + path.string());
}

void write_index_manifest(const fs::path &path, const DatasetIndex &index,
                          const std::string &split_name) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "sample_id,relative_path,class_index,split\n";
  write_rows(out, index, split_name);
  if (!out) throw IoError("failed writing manifest " + path.string());
}

DatasetSplit read_split_manifest(const fs::path &path, const fs::path &root,
                                 std::vector<std::string> classes, Resolution resolution) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("manifest not found: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "sample_id,relative_path,class_index,split")
    throw InvalidCorpusError("unexpected manifest header in " + path.string());
  std::vector<Sample> train, test;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = csv_split(line);
    if (fields.size() != 4) throw InvalidCorpusError("malformed manifest row: " + line);
    Sample s{fields[0], fields[1], std::stoi(fields[2]), Rotation::none};
    if (fields[3] == "train")
      train.push_back(std::move(s));
    else if (fields[3] == "test")
      test.push_back(std::move(s));
    else
      throw InvalidCorpusError("unknown split tag " + fields[3]);
  }
  DatasetIndex tr(root, classes, std::move(train), resolution);
  DatasetIndex te(root, std::move(classes), std::move(test), resolution);
  return DatasetSplit{std::move(tr), std::move(te)};
}

Tensor rotate_image(const Tensor &image, Rotation angle) {
  if (image.rank() != 2 && image.rank() != 3)
    throw InvalidArgumentError("rotate_image expects [H,W] or [H,W,C]");
  const auto h = image.dim(0), w = image.dim(1);
  const auto ch = image.rank() == 3 ? image.dim(2) : 1;
  if (h != w)
    throw InvalidArgumentError("rotate_image requires a square image, got " +
                               shape_to_string(image.shape()));
  if (angle == Rotation::none) return image;

  Tensor out(image.shape());
  const auto n = h;
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = 0; c < n; ++c) {
      std::int64_t sr = 0, sc = 0;
      switch (angle) {
      case Rotation::r90: sr = c; sc = n - 1 - r; break;
      case Rotation::r180: sr = n - 1 - r; sc = n - 1 - c; break;
      case Rotation::r270: sr = n - 1 - c; sc = r; break;
      case Rotation::none: break;
      }
      const float *src = image.data() + (sr * n + sc) * ch;
      std::copy(src, src + ch, out.data() + (r * n + c) * ch);
    }
  }
  return out;
}

DatasetIndex augment_rotations(const DatasetIndex &index) {
  std::vector<Sample> out;
  out.reserve(index.size() * 4);
  out.insert(out.end(), index.samples().begin(), index.samples().end());
  for (auto rot : {Rotation::r90, Rotation::r180, Rotation::r270}) {
    for (const auto &s : index.samples()) {
      Sample v = s;
      v.sample_id = s.parent_id() + rotation_suffix(rot);
      v.rotation = rot;
      out.push_back(std::move(v));
    }
  }
  return index.with_samples(std::move(out));
}

std::string dataset_fingerprint(const DatasetIndex &index, bool include_content) {
  Hasher h;
  h.update(std::string_view("distillkit.dataset.v1"));
  h.update_pod(index.resolution().height).update_pod(index.resolution().width);
  for (const auto &c : index.classes()) h.update(c);
  std::set<std::string> paths;
  for (const auto &s : index.samples()) {
    h.update(s.sample_id).update(s.relative_path).update_pod(s.class_index);
    paths.insert(s.relative_path);
  }
  if (include_content) {
    std::vector<char> buf;
    for (const auto &p : paths) {
      std::ifstream in(index.root() / p, std::ios::binary);
      if (!in) throw NotFoundError("missing corpus file " + (index.root() / p).string());
      buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
      h.update(std::string_view(buf.data(), buf.size()));
    }
  }
  return to_hex(h.finish());
}

Tensor load_image(const fs::path &path, Resolution resolution) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  if (bgr.rows != resolution.height || bgr.cols != resolution.width)
    cv::resize(bgr, bgr, cv::Size(resolution.width, resolution.height), 0, 0, cv::INTER_AREA);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Tensor out(Shape{resolution.height, resolution.width, 3});
  const auto n = static_cast<std::size_t>(out.size());
  const std::uint8_t *px = rgb.ptr<std::uint8_t>(0);
  for (std::size_t i = 0; i < n; ++i) out[static_cast<std::int64_t>(i)] = px[i] / 255.0f;
  return out;
}

ImageLoader::ImageLoader(const DatasetIndex &index, bool cache) : index_(index), cache_(cache) {}

Tensor ImageLoader::load(const Sample &sample) const {
  Tensor original;
  {
    std::lock_guard lock(mutex_);
    if (auto it = originals_.find(sample.relative_path); it != originals_.end())
      original = it->second;
  }
  if (original.empty()) {
    original = load_image(index_.root() / sample.relative_path, index_.resolution());
    if (cache_) {
      std::lock_guard lock(mutex_);
      originals_.emplace(sample.relative_path, original);
    }
  }
  return rotate_image(original, sample.rotation);
}

SoftBatch ImageLoader::batch(std::span<const std::size_t> positions) const {
  std::vector<Sample> samples;
  samples.reserve(positions.size());
  for (auto p : positions) samples.push_back(index_.samples().at(p));
  return batch(std::span<const Sample>(samples));
}

SoftBatch ImageLoader::batch(std::span<const Sample> samples) const {
  const auto &res = index_.resolution();
  const auto n = static_cast<std::int64_t>(samples.size());
  const auto classes = index_.num_classes();
  SoftBatch out;
  out.images = Tensor(Shape{n, res.height, res.width, 3});
  out.labels = Tensor(Shape{n, classes});
  const auto stride = static_cast<std::int64_t>(res.height) * res.width * 3;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto &s = samples[static_cast<std::size_t>(i)];
    Tensor img = load(s);
    std::copy(img.data(), img.data() + stride, out.images.data() + i * stride);
    out.labels[i * classes + s.class_index] = 1.0f;
    out.sample_ids.push_back(s.sample_id);
  }
  return out;
}

std::vector<MixPair> draw_mix_pairs(std::size_t batch_size, const MixupPolicy &policy) {
  if (batch_size < 2) throw InvalidArgumentError("mixup needs at least 2 samples per batch");
  if (policy.mode == MixupMode::beta && !(policy.beta_alpha > 0.0))
    throw InvalidArgumentError("beta_alpha must be positive");

  std::mt19937_64 rng(policy.rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, batch_size - 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::gamma_distribution<double> gamma(policy.beta_alpha, 1.0);

  std::vector<MixPair> pairs;
  pairs.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::size_t j = pick(rng);
    if (j >= i) ++j;
    double r = 0.0;
    if (policy.mode == MixupMode::uniform) {
      r = unit(rng);
    } else {
      double a = 0.0, b = 0.0;
      do {
        a = gamma(rng);
        b = gamma(rng);
      } while (!(a + b > 0.0));
      r = a / (a + b);
    }
    pairs.push_back(MixPair{i, j, std::clamp(r, 0.0, 1.0)});
  }
  return pairs;
}

SoftBatch mix_samples(const SoftBatch &base, std::span<const MixPair> pairs) {
  const auto n = base.size();
  const auto img_stride = n ? base.images.size() / n : 0;
  const auto lbl_stride = n ? base.labels.size() / n : 0;
  Shape img_shape = base.images.shape();
  Shape lbl_shape = base.labels.shape();
  img_shape[0] = lbl_shape[0] = static_cast<std::int64_t>(pairs.size());

  SoftBatch out;
  out.images = Tensor(img_shape);
  out.labels = Tensor(lbl_shape);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto &p = pairs[k];
    if (static_cast<std::int64_t>(p.first) >= n || static_cast<std::int64_t>(p.partner) >= n)
      throw InvalidArgumentError("mix pair index out of range");
    const auto r = static_cast<float>(p.ratio);
    const auto q = static_cast<float>(1.0 - p.ratio);
    auto blend = [&](const Tensor &src, Tensor &dst, std::int64_t stride) {
      const float *a = src.data() + static_cast<std::int64_t>(p.first) * stride;
      const float *b = src.data() + static_cast<std::int64_t>(p.partner) * stride;
      float *o = dst.data() + static_cast<std::int64_t>(k) * stride;
      for (std::int64_t t = 0; t < stride; ++t) o[t] = r * a[t] + q * b[t];
    };
    blend(base.images, out.images, img_stride);
    blend(base.labels, out.labels, lbl_stride);
    out.sample_ids.push_back(base.sample_ids.at(p.first) + "+" +
                             base.sample_ids.at(p.partner));
  }
  return out;
}

SoftBatch make_mixup_batch(const SoftBatch &base, const MixupPolicy &uniform_policy,
                           const MixupPolicy &beta_policy) {
  if (uniform_policy.mode != MixupMode::uniform || beta_policy.mode != MixupMode::beta)
    throw InvalidArgumentError("make_mixup_batch expects a uniform and a beta policy");
  const auto n = base.size();
  if (n < 2) throw InvalidArgumentError("mixup needs at least 2 samples per batch");
  const auto c = base.labels.dim(1);
  for (std::int64_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::int64_t k = 0; k < c; ++k) {
      const float v = base.labels[i * c + k];
      if (!(v >= 0.0f)) throw InvalidArgumentError("label row has a negative entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw InvalidArgumentError("label row " + std::to_string(i) + " does not sum to 1");
  }

  const auto un = static_cast<std::size_t>(n);
  auto uniform_pairs = draw_mix_pairs(un, uniform_policy);
  auto beta_pairs = draw_mix_pairs(un, beta_policy);
  const SoftBatch parts[] = {base, mix_samples(base, uniform_pairs),
                             mix_samples(base, beta_pairs)};
  return concat_batches(parts);
}

SoftBatch concat_batches(std::span<const SoftBatch> parts) {
  if (parts.empty()) return {};
  Shape img_shape = parts.front().images.shape();
  Shape lbl_shape = parts.front().labels.shape();
  std::vector<float> images, labels;
  std::vector<std::string> ids;
  img_shape[0] = lbl_shape[0] = 0;
  for (const auto &p : parts) {
    img_shape[0] += p.size();
    lbl_shape[0] += p.size();
    images.insert(images.end(), p.images.values().begin(), p.images.values().end());
    labels.insert(labels.end(), p.labels.values().begin(), p.labels.values().end());
    ids.insert(ids.end(), p.sample_ids.begin(), p.sample_ids.end());
  }
  return SoftBatch{Tensor(img_shape, std::move(images)), Tensor(lbl_shape, std::move(labels)),
                   std::move(ids)};
}

} // namespace distillkit
