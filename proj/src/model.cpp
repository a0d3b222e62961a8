#include "distillkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "binary_io.hpp"
#include "distillkit/error.hpp"

namespace fs = std::filesystem;

namespace distillkit {

// ---- BackboneSpec -----------------------------------------------------------

void BackboneSpec::validate() const {
  if (stage_widths.empty() || stage_widths.size() != stage_depths.size())
    throw InvalidArgumentError("backbone '" + name +
                               "': stage_widths and stage_depths must be non-empty and equal "
                               "length");
  for (std::size_t i = 0; i < stage_widths.size(); ++i)
    if (stage_widths[i] <= 0 || stage_depths[i] <= 0)
      throw InvalidArgumentError("backbone '" + name + "': stage " + std::to_string(i) +
                                 " has a non-positive width or depth");
  if (input_resolution.height <= 0 || input_resolution.width <= 0 ||
      input_resolution.channels != 3)
    throw InvalidArgumentError("backbone '" + name + "': invalid input resolution");
}

nlohmann::json spec_to_json(const BackboneSpec &spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["stage_widths"] = spec.stage_widths;
  j["stage_depths"] = spec.stage_depths;
  j["input_resolution"] = {spec.input_resolution.height, spec.input_resolution.width,
                           spec.input_resolution.channels};
  if (spec.pretrained_weights) j["pretrained_weights"] = spec.pretrained_weights->string();
  return j;
}

BackboneSpec spec_from_json(const nlohmann::json &j) {
  BackboneSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.stage_widths = j.at("stage_widths").get<std::vector<int>>();
  spec.stage_depths = j.at("stage_depths").get<std::vector<int>>();
  const auto res = j.at("input_resolution").get<std::vector<int>>();
  if (res.size() != 3) throw InvalidArgumentError("input_resolution needs 3 entries");
  spec.input_resolution = Resolution{res[0], res[1], res[2]};
  if (j.contains("pretrained_weights"))
    spec.pretrained_weights = fs::path(j.at("pretrained_weights").get<std::string>());
  spec.validate();
  return spec;
}

std::vector<std::string> reference_backbone_names() {
  return {"ref-student", "ref-small", "ref-medium", "ref-large"};
}

BackboneSpec reference_backbone(std::string_view name, Resolution resolution) {
  BackboneSpec spec;
  spec.name = std::string(name);
  spec.input_resolution = resolution;
  if (name == "ref-student") {
    spec.stage_widths = {8, 16, 24, 32, 48, 64, 96};
    spec.stage_depths = {1, 1, 1, 1, 1, 1, 1};
  } else if (name == "ref-small") {
    spec.stage_widths = {16, 32, 48, 64};
    spec.stage_depths = {1, 1, 1, 1};
  } else if (name == "ref-medium") {
    spec.stage_widths = {16, 32, 64, 96};
    spec.stage_depths = {1, 2, 2, 1};
  } else if (name == "ref-large") {
    spec.stage_widths = {24, 48, 96, 128};
    spec.stage_depths = {2, 2, 2, 1};
  } else {
    throw InvalidArgumentError("unknown reference backbone '" + std::string(name) + "'");
  }
  return spec;
}

BackboneSpec prune_variant(const BackboneSpec &spec, int blocks_kept) {
  spec.validate();
  const auto stages = static_cast<int>(spec.stage_widths.size());
  if (blocks_kept < 1 || blocks_kept > stages)
    throw InvalidArgumentError("blocks_kept must be in [1," + std::to_string(stages) + "], got " +
                               std::to_string(blocks_kept));
  BackboneSpec out = spec;
  out.stage_widths.resize(static_cast<std::size_t>(blocks_kept));
  out.stage_depths.resize(static_cast<std::size_t>(blocks_kept));
  out.name = spec.name + "-" + std::to_string(blocks_kept) + "B";
  return out;
}

// ---- ModelHandle --------------------------------------------------------------

namespace {

std::vector<std::size_t> owned_params(const nn::Layer &layer) {
  if (auto *c = std::get_if<nn::Conv2d>(&layer)) return {c->kernel, c->bias};
  if (auto *n = std::get_if<nn::LayerNorm>(&layer)) return {n->gamma, n->beta};
  if (auto *d = std::get_if<nn::Dense>(&layer)) return {d->kernel, d->bias};
  return {};
}

} // namespace

ModelHandle::ModelHandle(BackboneSpec spec, int num_classes, std::uint64_t seed)
    : spec_(std::move(spec)), num_classes_(num_classes) {
  spec_.validate();
  if (num_classes < 2) throw InvalidArgumentError("num_classes must be at least 2");

  std::mt19937_64 rng(seed);
  int channels = 3;
  int h = spec_.input_resolution.height, w = spec_.input_resolution.width;
  for (std::size_t s = 0; s < spec_.stage_widths.size(); ++s) {
    const int width = spec_.stage_widths[s];
    for (int d = 0; d < spec_.stage_depths[s]; ++d) {
      const int stride = (d == 0 && std::min(h, w) > 1) ? 2 : 1;
      const std::string prefix =
          "backbone/stage" + std::to_string(s + 1) + "/block" + std::to_string(d + 1);
      layers_.push_back(nn::make_conv(params_, prefix + "/conv", channels, width, stride, rng));
      layers_.push_back(nn::make_layer_norm(params_, prefix + "/norm", width));
      layers_.push_back(nn::Silu{});
      channels = width;
      h = nn::conv_output_size(h, 3, stride, 1);
      w = nn::conv_output_size(w, 3, stride, 1);
    }
  }
  layers_.push_back(nn::GlobalAvgPool{});
  backbone_end_ = layers_.size();
  layers_.push_back(nn::make_dense(params_, "head/dense01", channels, kEmbedDim, rng));
  layers_.push_back(nn::Silu{});
  embedding_end_ = layers_.size();
  layers_.push_back(nn::make_dense(params_, "head/classifier", kEmbedDim, num_classes, rng));
}

const Parameter &ModelHandle::parameter(std::string_view name) const {
  for (const auto &p : params_)
    if (p.name == name) return p;
  throw InvalidArgumentError("no parameter named " + std::string(name));
}

Parameter &ModelHandle::parameter(std::string_view name) {
  return const_cast<Parameter &>(std::as_const(*this).parameter(name));
}

void ModelHandle::freeze(const std::set<std::string> &names) {
  const auto all = all_parameter_names();
  for (const auto &n : names)
    if (!all.contains(n)) throw InvalidArgumentError("cannot freeze unknown parameter " + n);
  frozen_ = names;
}

bool ModelHandle::is_frozen(std::size_t param_index) const {
  return frozen_.contains(params_.at(param_index).name);
}

std::set<std::string> ModelHandle::all_parameter_names() const {
  std::set<std::string> out;
  for (const auto &p : params_) out.insert(p.name);
  return out;
}

std::set<std::string> ModelHandle::backbone_parameter_names() const {
  std::set<std::string> out;
  for (const auto &p : params_)
    if (p.name.starts_with("backbone/")) out.insert(p.name);
  return out;
}

std::set<std::string> ModelHandle::feature_parameter_names() const {
  auto out = backbone_parameter_names();
  for (const auto &p : params_)
    if (p.name.starts_with("head/dense01/")) out.insert(p.name);
  return out;
}

ForwardOutput ModelHandle::forward(const Tensor &images, Tape *tape) const {
  const auto &res = spec_.input_resolution;
  if (images.rank() != 4 || images.dim(1) != res.height || images.dim(2) != res.width ||
      images.dim(3) != 3)
    throw InvalidArgumentError("input " + shape_to_string(images.shape()) +
                               " does not match model resolution [B," +
                               std::to_string(res.height) + "," + std::to_string(res.width) +
                               ",3]");
  if (tape) tape->caches.assign(layers_.size(), {});

  ForwardOutput out;
  Tensor x = images;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = nn::forward(layers_[i], params_, x, tape ? &tape->caches[i] : nullptr);
    if (i + 1 == embedding_end_) out.embedding = x;
  }
  out.logits = std::move(x);
  out.probabilities = softmax_rows(out.logits);
  return out;
}

std::vector<Tensor> ModelHandle::zero_grads() const {
  std::vector<Tensor> grads;
  grads.reserve(params_.size());
  for (const auto &p : params_) grads.emplace_back(p.value.shape());
  return grads;
}

std::vector<Tensor> ModelHandle::backward(const Tape &tape, const Tensor &d_logits,
                                          const Tensor *d_embedding) const {
  if (tape.caches.size() != layers_.size())
    throw InvalidStateError("backward called without a recorded forward tape");
  auto grads = zero_grads();

  std::size_t lowest = layers_.size();
  for (std::size_t i = 0; i < layers_.size() && lowest == layers_.size(); ++i)
    for (auto p : owned_params(layers_[i]))
      if (!is_frozen(p)) {
        lowest = i;
        break;
      }
  if (lowest == layers_.size()) return grads;

  Tensor d = d_logits;
  for (std::size_t i = layers_.size(); i-- > lowest;) {
    if (i + 1 == embedding_end_ && d_embedding) {
      if (d_embedding->shape() != d.shape())
        throw InvalidArgumentError("embedding gradient shape mismatch");
      for (std::int64_t k = 0; k < d.size(); ++k) d[k] += (*d_embedding)[k];
    }
    d = nn::backward(layers_[i], params_, tape.caches[i], d, grads, i != lowest);
  }
  for (std::size_t p = 0; p < params_.size(); ++p)
    if (is_frozen(p)) grads[p].fill(0.0f);
  return grads;
}

ModelHandle build_model(const BackboneSpec &spec, int num_classes, std::uint64_t seed) {
  ModelHandle model(spec, num_classes, seed);
  if (spec.pretrained_weights) load_backbone_weights(model, *spec.pretrained_weights);
  return model;
}

ForwardOutput forward(const ModelHandle &model, const Tensor &images) {
  return model.forward(images);
}

ModelHandle set_frozen(ModelHandle model, const std::set<std::string> &names) {
  model.freeze(names);
  return model;
}

std::int64_t count_parameters(const std::vector<Parameter> &params) {
  std::int64_t n = 0;
  for (const auto &p : params) n += p.value.size();
  return n;
}

std::int64_t count_trainable_params(const std::vector<Parameter> &params,
                                    const std::set<std::string> &frozen) {
  std::int64_t n = 0;
  for (const auto &p : params)
    if (!frozen.contains(p.name)) n += p.value.size();
  return n;
}

std::int64_t count_trainable_params(const ModelHandle &model) {
  return count_trainable_params(model.parameters(), model.frozen_names());
}

Tensor softmax_rows(const Tensor &logits) {
  if (logits.rank() != 2) throw InvalidArgumentError("softmax_rows expects [B,C]");
  const auto b = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  std::vector<double> e(static_cast<std::size_t>(c));
  for (std::int64_t i = 0; i < b; ++i) {
    const float *z = logits.data() + i * c;
    const double m = *std::max_element(z, z + c);
    double sum = 0.0;
    for (std::int64_t k = 0; k < c; ++k) sum += (e[static_cast<std::size_t>(k)] = std::exp(z[k] - m));
    for (std::int64_t k = 0; k < c; ++k)
      out[i * c + k] = static_cast<float>(e[static_cast<std::size_t>(k)] / sum);
  }
  return out;
}

// ---- weight files -------------------------------------------------------------

namespace {

constexpr char kWeightMagic[4] = {'D', 'K', 'W', 'T'};
constexpr std::uint32_t kWeightVersion = 1;
constexpr std::uint8_t kDtypeFloat32 = 0;
constexpr std::size_t kPayloadAlignment = 16;

} // namespace

const Tensor *TensorFile::find(std::string_view name) const {
  for (const auto &t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

void write_tensor_file(const fs::path &path, const std::vector<Parameter> &tensors,
                       const std::string &metadata) {
  detail::ByteWriter w;
  w.put_bytes(kWeightMagic, 4);
  w.put<std::uint32_t>(kWeightVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(metadata.size()));
  const std::size_t data_offset_pos = w.size();
  w.put<std::uint64_t>(0);
  w.put_string(metadata);

  std::uint64_t offset = 0;
  for (const auto &t : tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.put_string(t.name);
    w.put<std::uint8_t>(kDtypeFloat32);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.value.rank()));
    w.put<std::uint16_t>(0);
    for (auto d : t.value.shape()) w.put<std::int64_t>(d);
    const auto length = static_cast<std::uint64_t>(t.value.size()) * sizeof(float);
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(length);
    offset += length;
  }
  const std::size_t data_offset =
      (w.size() + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment;
  w.pad_to(data_offset);
  w.patch<std::uint64_t>(data_offset_pos, data_offset);
  for (const auto &t : tensors)
    w.put_bytes(t.value.data(), static_cast<std::size_t>(t.value.size()) * sizeof(float));
  detail::write_file_bytes<IoError>(path, w.bytes());
}

TensorFile read_tensor_file(const fs::path &path) {
  if (!fs::exists(path)) throw NotFoundError("weight file not found: " + path.string());
  const auto bytes = detail::read_file_bytes<IoError>(path);
  detail::ByteReader<WeightFormatError> r(bytes, path.string());
  if (r.get_string(4) != std::string(kWeightMagic, 4))
    throw WeightFormatError(path.string() + ": not a DKWT weight file");
  if (r.get<std::uint32_t>() != kWeightVersion)
    throw WeightFormatError(path.string() + ": unsupported weight file version");
  const auto count = r.get<std::uint32_t>();
  const auto meta_len = r.get<std::uint32_t>();
  const auto data_offset = r.get<std::uint64_t>();

  TensorFile file;
  file.metadata = r.get_string(meta_len);
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset, length;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.get_string(r.get<std::uint32_t>());
    if (r.get<std::uint8_t>() != kDtypeFloat32)
      throw WeightFormatError(path.string() + ": tensor " + e.name + " is not float32");
    const auto rank = r.get<std::uint8_t>();
    r.get<std::uint16_t>();
    for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::int64_t>());
    e.offset = r.get<std::uint64_t>();
    e.length = r.get<std::uint64_t>();
    if (e.length != static_cast<std::uint64_t>(shape_size(e.shape)) * sizeof(float))
      throw WeightFormatError(path.string() + ": tensor " + e.name + " length/shape mismatch");
    entries.push_back(std::move(e));
  }
  for (auto &e : entries) {
    r.seek(static_cast<std::size_t>(data_offset + e.offset));
    r.require(static_cast<std::size_t>(e.length));
    std::vector<float> values(static_cast<std::size_t>(e.length / sizeof(float)));
    std::memcpy(values.data(), r.at(r.pos()), static_cast<std::size_t>(e.length));
    file.tensors.push_back({std::move(e.name), Tensor(std::move(e.shape), std::move(values))});
  }
  return file;
}

void save_model(const fs::path &path, const ModelHandle &model) {
  nlohmann::json meta;
  meta["format"] = "distillkit.model";
  meta["spec"] = spec_to_json(model.spec());
  meta["num_classes"] = model.num_classes();
  meta["embed_dim"] = model.embed_dim();
  meta["frozen"] = model.frozen_names();
  write_tensor_file(path, model.parameters(), meta.dump());
}

ModelHandle load_model(const fs::path &path) {
  auto file = read_tensor_file(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(file.metadata);
  } catch (const nlohmann::json::exception &e) {
    throw WeightFormatError(path.string() + ": bad metadata: " + e.what());
  }
  if (meta.value("format", "") != "distillkit.model")
    throw WeightFormatError(path.string() + ": not a model weight file");
  auto spec = spec_from_json(meta.at("spec"));
  spec.pretrained_weights.reset();
  ModelHandle model(spec, meta.at("num_classes").get<int>(), 0);
  std::vector<std::string> bad;
  for (auto &p : model.mutable_parameters()) {
    const Tensor *t = file.find(p.name);
    if (!t || t->shape() != p.value.shape()) {
      bad.push_back(p.name);
      continue;
    }
    p.value = *t;
  }
  if (!bad.empty()) {
    std::string msg = path.string() + ": missing or mis-shaped tensors:";
    for (const auto &b : bad) msg += " " + b;
    throw WeightShapeError(msg);
  }
  model.freeze(meta.at("frozen").get<std::set<std::string>>());
  return model;
}

void load_backbone_weights(ModelHandle &model, const fs::path &path) {
  const auto file = read_tensor_file(path);
  std::vector<std::string> bad;
  for (auto &p : model.mutable_parameters()) {
    if (!p.name.starts_with("backbone/")) continue;
    const Tensor *t = file.find(p.name);
    if (!t) {
      bad.push_back(p.name + " (missing)");
    } else if (t->shape() != p.value.shape()) {
      bad.push_back(p.name + " (file " + shape_to_string(t->shape()) + ", model " +
                    shape_to_string(p.value.shape()) + ")");
    } else {
      p.value = *t;
    }
  }
  if (!bad.empty()) {
    std::string msg = "weight file " + path.string() + " does not fit the backbone:";
    for (const auto &b : bad) msg += "\n  " + b;
    throw WeightShapeError(msg);
  }
}

} // namespace distillkit
