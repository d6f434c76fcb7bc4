#pragma once

// Seeded synthetic scenes and simulated model outputs. A simulated output is
// a token trace whose per-token probabilities track how far each field is
// from the truth, so the scoring and evaluation stack can be exercised
// end-to-end without a trained model.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "locseq/codec.hpp"
#include "locseq/error.hpp"
#include "locseq/metrics.hpp"
#include "locseq/random.hpp"
#include "locseq/scoring.hpp"

namespace locseq::synth {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t images = 100;
  std::size_t min_objects = 1;
  std::size_t max_objects = 8;
  std::size_t categories = 5;
  double box_noise = 0.05;   // sigma, as a fraction of box width/height
  double drop_rate = 0.1;
  double spurious_rate = 0.3;
  double calibration_slope = 1.0;
  int min_image_size = 320;
  int max_image_size = 640;

  void validate() const {
    auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (images < 1 || categories < 1 || min_objects < 1) {
      throw ValidationError("synth counts must be >= 1");
    }
    if (max_objects < min_objects) throw ValidationError("max_objects < min_objects");
    if (!(box_noise >= 0.0)) throw ValidationError("box noise must be >= 0");
    if (!rate(drop_rate) || !rate(spurious_rate)) throw ValidationError("rates must be in [0,1]");
    if (!(calibration_slope >= 0.0)) throw ValidationError("calibration slope must be >= 0");
    if (min_image_size < 200 || max_image_size < min_image_size) {
      throw ValidationError("image size range must satisfy 200 <= min <= max");
    }
  }
};

inline std::string category_name(std::size_t index) {
  static const std::array<const char*, 12> kNames = {
      "person",   "traffic light", "fire hydrant", "t-shirt", "dog",        "bicycle",
      "car",      "stop sign",     "potted plant", "cup",     "teddy bear", "hair drier"};
  if (index < kNames.size()) return kNames[index];
  return "category-" + std::to_string(index);
}

inline std::string image_id_for(std::size_t index) {
  std::string digits = std::to_string(index);
  return "synth-" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

namespace detail {

// Integer box of the given area bucket, placed uniformly inside the image.
inline PixelBox random_box(Rng& rng, AreaBucket bucket, int width, int height) {
  long long lo = 8, hi = 30;
  if (bucket == AreaBucket::Medium) lo = 34, hi = 94;
  if (bucket == AreaBucket::Large) lo = 100, hi = std::min(width, height) - 1;
  const long long w = rng.between(lo, hi);
  const long long h = rng.between(lo, hi);
  const long long x = rng.between(0, width - w);
  const long long y = rng.between(0, height - h);
  return PixelBox{static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + w),
                  static_cast<double>(y + h)};
}

inline AreaBucket bucket_for(Rng& rng, std::size_t object_index) {
  static constexpr std::array<AreaBucket, 3> kOrder = {AreaBucket::Small, AreaBucket::Medium,
                                                       AreaBucket::Large};
  return object_index < 3 ? kOrder[object_index] : kOrder[rng.below(3)];
}

}  // namespace detail

// Scene `index` of the run; the same (seed, index) always yields the same
// scene. Scenes with >= 3 objects hold at least one small, one medium and
// one large box. Box corners lie on the quantized coordinate grid.
inline GroundTruthImage generate_scene(const SynthConfig& config, std::size_t index) {
  config.validate();
  Rng rng(derive_seed(derive_seed(config.seed, "scene"), index));
  GroundTruthImage img;
  img.image_id = image_id_for(index);
  const int width = static_cast<int>(rng.between(config.min_image_size, config.max_image_size));
  const int height = static_cast<int>(rng.between(config.min_image_size, config.max_image_size));
  img.width = width;
  img.height = height;
  const auto count = static_cast<std::size_t>(rng.between(
      static_cast<long long>(config.min_objects), static_cast<long long>(config.max_objects)));
  for (std::size_t j = 0; j < count; ++j) {
    const AreaBucket bucket = detail::bucket_for(rng, j);
    const PixelBox raw = detail::random_box(rng, bucket, width, height);
    // Snap to the 0.001 grid so a noiseless prediction reproduces the box exactly.
    const PixelBox box = denormalize(NormBox::from_normalized(raw.x1 / width, raw.y1 / height,
                                                              raw.x2 / width, raw.y2 / height),
                                     width, height);
    img.annotations.push_back({category_name(rng.below(config.categories)), box, std::nullopt});
  }
  return img;
}

// Probability assigned to a field token with normalized error `error`:
// 2 / (1 + exp(gain * slope * error)). Equals 1 at zero error or zero slope
// and decreases monotonically with the error.
inline constexpr double kCalibrationGain = 8.0;
inline constexpr double kTokenJitter = 0.02;

inline double calibrated_prob(double error, double slope) {
  return std::max(2.0 / (1.0 + std::exp(kCalibrationGain * slope * error)), 1e-30);
}

struct SimulatedDetection {
  Detection detection;
  bool spurious = false;
  std::optional<std::size_t> source_gt;  // index into the scene's annotations
};

struct SimulatedOutput {
  std::string image_id;
  TokenTrace trace;
  std::vector<SimulatedDetection> detections;  // in sequence order
};

namespace detail {

struct Piece {
  std::string text;
  double error = 0;  // field error driving the token probability
  bool delimiter = false;
};

// Splits `text` into chunks of 1..max_len characters.
inline void chunk(Rng& rng, std::vector<Piece>& out, const std::string& text, double error,
                  long long max_len) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto len = std::min<std::size_t>(static_cast<std::size_t>(rng.between(1, max_len)),
                                           text.size() - pos);
    out.push_back({text.substr(pos, len), error, false});
    pos += len;
  }
}

}  // namespace detail

inline SimulatedOutput simulate_predictions(const GroundTruthImage& scene, const SynthConfig& config,
                                            std::size_t index) {
  config.validate();
  Rng rng(derive_seed(derive_seed(config.seed, "predictions"), index));
  const double width = scene.width, height = scene.height;

  struct Draft {
    SimulatedDetection det;
    std::array<double, 4> coord_error{};
    double label_error = 0;
  };
  std::vector<Draft> drafts;

  for (std::size_t g = 0; g < scene.annotations.size(); ++g) {
    const Annotation& a = scene.annotations[g];
    if (!rng.bernoulli(config.drop_rate)) {
      const PixelBox& b = a.box;
      const double bw = std::max(b.width(), 1.0), bh = std::max(b.height(), 1.0);
      std::array<double, 4> c = {b.x1 + rng.normal() * config.box_noise * bw,
                                 b.y1 + rng.normal() * config.box_noise * bh,
                                 b.x2 + rng.normal() * config.box_noise * bw,
                                 b.y2 + rng.normal() * config.box_noise * bh};
      c[0] = std::clamp(c[0], 0.0, width);
      c[2] = std::clamp(c[2], 0.0, width);
      c[1] = std::clamp(c[1], 0.0, height);
      c[3] = std::clamp(c[3], 0.0, height);
      if (c[0] > c[2]) std::swap(c[0], c[2]);
      if (c[1] > c[3]) std::swap(c[1], c[3]);
      Draft d;
      d.det.detection = {a.label,
                         NormBox::from_normalized(c[0] / width, c[1] / height, c[2] / width,
                                                  c[3] / height),
                         std::nullopt};
      d.det.source_gt = g;
      const std::array<double, 4> truth = {b.x1, b.y1, b.x2, b.y2};
      for (std::size_t k = 0; k < 4; ++k) {
        d.coord_error[k] = std::abs(c[k] - truth[k]) / (k % 2 == 0 ? bw : bh);
      }
      drafts.push_back(std::move(d));
    }
    if (rng.bernoulli(config.spurious_rate)) {
      const AreaBucket bucket = detail::bucket_for(rng, 3);
      const PixelBox b = detail::random_box(rng, bucket, static_cast<int>(width),
                                            static_cast<int>(height));
      Draft d;
      d.det.detection = {category_name(rng.below(config.categories)),
                         NormBox::from_normalized(b.x1 / width, b.y1 / height, b.x2 / width,
                                                  b.y2 / height),
                         std::nullopt};
      d.det.spurious = true;
      // Hallucinated boxes get plausible-looking coordinates but an unsure label.
      for (auto& e : d.coord_error) e = rng.uniform(0.0, 0.3);
      d.label_error = 1.0;
      drafts.push_back(std::move(d));
    }
  }
  rng.shuffle(std::span<Draft>(drafts));

  SimulatedOutput out;
  out.image_id = scene.image_id;
  std::vector<detail::Piece> pieces;
  if (drafts.empty()) {
    pieces.push_back({std::string(kNoneText), 0.0, false});
  }
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    const Draft& d = drafts[i];
    out.detections.push_back(d.det);
    if (i) pieces.push_back({"&", 0.0, true});
    detail::chunk(rng, pieces, d.det.detection.label, d.label_error, 4);
    pieces.push_back({"-[", 0.0, true});
    // Coordinate numerals exactly as serialize() prints them.
    const std::string block = serialize(PredictionSet::objects({d.det.detection}),
                                        SequenceOrder::LabelFirst);
    const std::string coords = block.substr(block.rfind("-[") + 2);
    for (std::size_t k = 0; k < 4; ++k) {
      detail::chunk(rng, pieces, coords.substr(k * 6, 5), d.coord_error[k], 3);
      pieces.push_back({k < 3 ? "," : "]", 0.0, true});
    }
  }

  // Occasionally glue a delimiter onto a neighbouring token so some tokens
  // straddle field boundaries, as sub-word tokenizers do.
  std::vector<Token> tokens;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const double jitter = std::abs(rng.normal()) * kTokenJitter;
    const double p = calibrated_prob(pieces[i].error + jitter, config.calibration_slope);
    if (pieces[i].delimiter && !tokens.empty() && rng.bernoulli(0.25)) {
      tokens.back().text += pieces[i].text;
      tokens.back().prob = std::min(tokens.back().prob, p);
      continue;
    }
    tokens.push_back({pieces[i].text, p});
  }

  std::string instruction = "Identify and locate all the objects from the category set in the image.";
  out.trace = TokenTrace(std::move(tokens), PromptContext{scene.image_id, std::move(instruction)});
  return out;
}

}  // namespace locseq::synth
