#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "distillkit/error.hpp"
#include "distillkit/harness.hpp"

namespace fs = std::filesystem;

namespace distillkit {

void SyntheticCorpusSpec::validate() const {
  if (num_classes < 2) throw InvalidArgumentError("synthetic corpus needs at least 2 classes");
  if (per_class < 1) throw InvalidArgumentError("per_class must be at least 1");
  if (resolution.height < 8 || resolution.width < 8 || resolution.channels != 3)
    throw InvalidArgumentError("synthetic images must be at least 8x8 with 3 channels");
  if (!(noise >= 0.0) || noise > 1.0) throw InvalidArgumentError("noise must be in [0,1]");
}

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

enum class Family { stripes, checker, rings, dots };

struct Texture {
  Family family;
  double freq;   // cycles per image width
  double angle;  // radians
  double phase;
  double cx, cy; // ring centre
};

double intensity(const Texture &t, double u, double v) {
  const double ru = u * std::cos(t.angle) + v * std::sin(t.angle);
  const double rv = -u * std::sin(t.angle) + v * std::cos(t.angle);
  switch (t.family) {
  case Family::stripes:
    return 0.5 + 0.5 * std::sin(kTau * t.freq * ru + t.phase);
  case Family::checker:
    return 0.5 + 0.5 * std::tanh(4.0 * std::sin(kTau * t.freq * ru + t.phase) *
                                 std::sin(kTau * t.freq * rv + t.phase));
  case Family::rings:
    return 0.5 + 0.5 * std::sin(kTau * t.freq * std::hypot(u - t.cx, v - t.cy) + t.phase);
  case Family::dots: {
    const double a = t.freq * ru + t.phase / kTau, b = t.freq * rv + t.phase / kTau;
    const double du = a - std::round(a), dv = b - std::round(b);
    return std::exp(-(du * du + dv * dv) / 0.045);
  }
  }
  return 0.0;
}

/// Frequency band k maps to roughly 2.5, 5, 7.5, ... cycles per image.
double band_frequency(int band) { return 2.5 * (band + 1); }

} // namespace

DatasetIndex generate_synthetic_corpus(const SyntheticCorpusSpec &spec, const fs::path &out_root) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec) throw CorpusWriteError("cannot create " + out_root.string() + ": " + ec.message());

  std::mt19937_64 rng(spec.generator_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int h = spec.resolution.height, w = spec.resolution.width;

  for (int c = 0; c < spec.num_classes; ++c) {
    const auto dir = out_root / ("class_" + std::string(c < 10 ? "0" : "") + std::to_string(c));
    fs::create_directories(dir, ec);
    if (ec) throw CorpusWriteError("cannot create " + dir.string() + ": " + ec.message());
    for (int i = 0; i < spec.per_class; ++i) {
      Texture t{static_cast<Family>(c % 4), band_frequency(c / 4) * (0.9 + 0.2 * unit(rng)),
                kTau * unit(rng), kTau * unit(rng), 0.3 + 0.4 * unit(rng), 0.3 + 0.4 * unit(rng)};
      double lo[3], hi[3];
      for (int k = 0; k < 3; ++k) {
        lo[k] = 0.45 * unit(rng);
        hi[k] = 0.55 + 0.45 * unit(rng);
      }
      cv::Mat img(h, w, CV_8UC3);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double s = intensity(t, (x + 0.5) / w, (y + 0.5) / h);
          auto &px = img.at<cv::Vec3b>(y, x);
          for (int k = 0; k < 3; ++k) {
            const double v = lo[k] + s * (hi[k] - lo[k]) + spec.noise * gauss(rng);
            // OpenCV stores BGR.
            px[2 - k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
          }
        }
      std::string name = std::to_string(i);
      name = "img_" + std::string(4 - std::min<std::size_t>(4, name.size()), '0') + name + ".png";
      const auto file = dir / name;
      bool ok = false;
      try {
        ok = cv::imwrite(file.string(), img);
      } catch (const cv::Exception &e) {
        throw CorpusWriteError("cannot write " + file.string() + ": " + e.what());
      }
      if (!ok) throw CorpusWriteError("cannot write " + file.string());
    }
  }
  return scan_dataset(out_root, spec.resolution);
}

} // namespace distillkit
