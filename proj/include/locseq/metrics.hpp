#pragma once

// Evaluation protocols: IoU, referring-expression accuracy, COCO-style
// detection AP/AR, and the ANY-BOX / MERGED-BOXES phrase grounding recalls.
// Geometry is continuous (no +1 pixel convention).

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "locseq/codec.hpp"
#include "locseq/error.hpp"
#include "locseq/parallel.hpp"

namespace locseq {

inline constexpr double kDefaultScore = 0.99;
inline constexpr double kSmallAreaLimit = 32.0 * 32.0;
inline constexpr double kMediumAreaLimit = 96.0 * 96.0;

struct PixelBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

inline PixelBox denormalize(const NormBox& box, double width, double height) {
  if (!(width >= 1.0 && height >= 1.0)) throw DomainError("image size must be at least 1x1");
  const auto& m = box.thousandths();
  auto scale = [](int milli, double extent) {
    return std::clamp(milli * extent / kCoordScale, 0.0, extent);
  };
  return PixelBox{scale(m[0], width), scale(m[1], height), scale(m[2], width), scale(m[3], height)};
}

inline double iou(const PixelBox& a, const PixelBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

enum class AreaBucket { Small, Medium, Large };

inline AreaBucket area_bucket(double area) {
  if (area < kSmallAreaLimit) return AreaBucket::Small;
  if (area < kMediumAreaLimit) return AreaBucket::Medium;
  return AreaBucket::Large;
}

struct Annotation {
  std::string label;
  PixelBox box;
  std::optional<double> area;  // annotation (e.g. mask) area; box area if absent

  double effective_area() const { return area.value_or(box.area()); }
};

struct PhraseGroup {
  std::string phrase;
  std::vector<PixelBox> boxes;
};

struct GroundTruthImage {
  std::string image_id;
  double width = 1, height = 1;
  std::vector<Annotation> annotations;
  std::vector<PhraseGroup> phrases;
};

struct CategoryResult {
  std::string category;
  std::size_t ground_truth_count = 0;
  std::optional<double> ap, ap50, ap75;
};

// Each field is a fraction in [0,1]; nullopt means the metric was not
// computed or is undefined (e.g. AP_L with no large ground truth).
struct EvalReport {
  std::optional<double> map, ap50, ap75, ap_small, ap_medium, ap_large, ar100;
  std::optional<double> rec_accuracy;
  std::optional<double> grounding_any_recall, grounding_merged_recall;
  std::vector<CategoryResult> per_category;
};

// ---------------------------------------------------------------------------
// REC accuracy

struct RecSample {
  PredictionSet prediction;
  PixelBox ground_truth;
  double width = 1, height = 1;
};

// Highest-scoring detection (absent scores count as `default_score`);
// earliest wins ties. nullopt for None or an empty list.
inline std::optional<Detection> best_detection(const PredictionSet& preds,
                                               double default_score = kDefaultScore) {
  const Detection* best = nullptr;
  for (const Detection& d : preds.detections()) {
    if (!best || d.score.value_or(default_score) > best->score.value_or(default_score)) best = &d;
  }
  if (!best) return std::nullopt;
  return *best;
}

inline double rec_accuracy(std::span<const RecSample> samples, double threshold = 0.5,
                           double default_score = kDefaultScore) {
  if (samples.empty()) throw DomainError("REC accuracy over zero samples");
  std::size_t correct = 0;
  for (const RecSample& s : samples) {
    auto best = best_detection(s.prediction, default_score);
    if (!best) continue;
    if (iou(denormalize(best->box, s.width, s.height), s.ground_truth) >= threshold) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// COCO-style detection evaluation

struct ImagePredictions {
  std::string image_id;
  std::vector<Detection> detections;
};

struct DetectionEvalOptions {
  double default_score = kDefaultScore;
  std::size_t max_detections = 100;  // per image and category
  unsigned workers = 1;
};

struct DetectionEvalResult {
  EvalReport report;
  std::vector<std::string> diagnostics;
};

inline constexpr std::size_t kIouThresholdCount = 10;
inline constexpr std::size_t kRecallPointCount = 101;

// 0.50, 0.55, ..., 0.95
inline double iou_threshold(std::size_t i) { return static_cast<double>(50 + 5 * i) / 100.0; }

namespace detail {

enum AreaRange : std::size_t { kAreaAll = 0, kAreaSmall, kAreaMedium, kAreaLarge, kAreaRangeCount };

inline bool in_area_range(double area, std::size_t range) {
  switch (range) {
    case kAreaSmall: return area < kSmallAreaLimit;
    case kAreaMedium: return area >= kSmallAreaLimit && area < kMediumAreaLimit;
    case kAreaLarge: return area >= kMediumAreaLimit;
    default: return true;
  }
}

struct ScoredBox {
  PixelBox box;
  double score;
};

// Outcome of matching one image's detections of one category.
struct MatchedDetection {
  double score = 0;
  std::array<bool, kIouThresholdCount> true_positive{};
  std::array<bool, kIouThresholdCount> ignored{};
};

struct ImageCategoryEval {
  std::size_t category = 0;
  std::array<std::size_t, kAreaRangeCount> counted_gt{};
  std::array<std::vector<MatchedDetection>, kAreaRangeCount> detections;
};

inline ImageCategoryEval evaluate_image_category(std::size_t category,
                                                 const std::vector<ScoredBox>& dets,
                                                 const std::vector<const Annotation*>& gts) {
  ImageCategoryEval out;
  out.category = category;
  std::vector<std::vector<double>> ious(dets.size(), std::vector<double>(gts.size()));
  for (std::size_t d = 0; d < dets.size(); ++d) {
    for (std::size_t g = 0; g < gts.size(); ++g) ious[d][g] = iou(dets[d].box, gts[g]->box);
  }
  for (std::size_t range = 0; range < kAreaRangeCount; ++range) {
    std::vector<bool> gt_ignored(gts.size());
    std::vector<std::size_t> gt_order(gts.size());
    std::iota(gt_order.begin(), gt_order.end(), 0);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      gt_ignored[g] = !in_area_range(gts[g]->effective_area(), range);
      if (!gt_ignored[g]) ++out.counted_gt[range];
    }
    std::stable_sort(gt_order.begin(), gt_order.end(),
                     [&](std::size_t a, std::size_t b) { return !gt_ignored[a] && gt_ignored[b]; });

    auto& matched = out.detections[range];
    matched.assign(dets.size(), MatchedDetection{});
    for (std::size_t d = 0; d < dets.size(); ++d) matched[d].score = dets[d].score;

    for (std::size_t t = 0; t < kIouThresholdCount; ++t) {
      const double threshold = iou_threshold(t);
      std::vector<bool> gt_taken(gts.size(), false);
      for (std::size_t d = 0; d < dets.size(); ++d) {
        std::optional<std::size_t> best;
        double best_iou = threshold;
        for (std::size_t g : gt_order) {
          if (gt_taken[g]) continue;
          // Once a counted GT matched, never fall back to an ignored one.
          if (best && !gt_ignored[*best] && gt_ignored[g]) break;
          const double v = ious[d][g];
          if (best ? v > best_iou : v >= threshold) {
            best = g;
            best_iou = v;
          }
        }
        if (best) {
          gt_taken[*best] = true;
          matched[d].true_positive[t] = !gt_ignored[*best];
          matched[d].ignored[t] = gt_ignored[*best];
        } else {
          matched[d].ignored[t] = !in_area_range(dets[d].box.area(), range);
        }
      }
    }
  }
  return out;
}

struct CurveSummary {
  std::optional<double> ap;  // nullopt when there is no counted ground truth
  std::optional<double> recall;
};

// `dets` must already be in score order (stable w.r.t. insertion order).
inline CurveSummary summarize_curve(const std::vector<const MatchedDetection*>& dets,
                                    std::size_t counted_gt, std::size_t threshold) {
  if (counted_gt == 0) return {};
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const MatchedDetection* d : dets) {
    if (d->ignored[threshold]) continue;
    if (d->true_positive[threshold]) ++tp;
    else ++fp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(counted_gt));
  }
  // Precision envelope: make it non-increasing from the right.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0.0;
  std::size_t idx = 0;
  for (std::size_t r = 0; r < kRecallPointCount; ++r) {
    const double level = static_cast<double>(r) / 100.0;
    while (idx < recall.size() && recall[idx] < level) ++idx;
    if (idx < recall.size()) sum += precision[idx];
  }
  return CurveSummary{sum / static_cast<double>(kRecallPointCount),
                      recall.empty() ? 0.0 : recall.back()};
}

inline std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace detail

inline DetectionEvalResult detection_eval(std::span<const ImagePredictions> predictions,
                                          std::span<const GroundTruthImage> ground_truth,
                                          const DetectionEvalOptions& options = {}) {
  DetectionEvalResult result;

  std::map<std::string, std::size_t> category_index;
  for (const auto& img : ground_truth) {
    for (const auto& a : img.annotations) category_index.emplace(a.label, 0);
  }
  std::vector<std::string> categories;
  for (auto& [name, idx] : category_index) {
    idx = categories.size();
    categories.push_back(name);
  }

  std::unordered_map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    if (!image_index.emplace(ground_truth[i].image_id, i).second) {
      throw InputError("duplicate ground-truth image id " + ground_truth[i].image_id);
    }
  }

  // Per image, per category: scored pixel boxes in insertion order.
  using PerCategory = std::vector<std::vector<detail::ScoredBox>>;
  std::vector<PerCategory> dets_by_image(ground_truth.size(), PerCategory(categories.size()));
  for (const auto& ip : predictions) {
    auto it = image_index.find(ip.image_id);
    if (it == image_index.end()) throw InputError("prediction for unknown image id " + ip.image_id);
    const GroundTruthImage& img = ground_truth[it->second];
    for (const Detection& d : ip.detections) {
      auto cat = category_index.find(d.label);
      if (cat == category_index.end()) {
        result.diagnostics.push_back("image " + ip.image_id + ": category \"" + d.label +
                                     "\" not in ground truth; ignored");
        continue;
      }
      dets_by_image[it->second][cat->second].push_back(
          {denormalize(d.box, img.width, img.height), d.score.value_or(options.default_score)});
    }
  }

  std::vector<std::vector<detail::ImageCategoryEval>> evals(ground_truth.size());
  parallel_for(ground_truth.size(), options.workers, [&](std::size_t i) {
    const GroundTruthImage& img = ground_truth[i];
    std::vector<std::vector<const Annotation*>> gts(categories.size());
    for (const auto& a : img.annotations) gts[category_index.at(a.label)].push_back(&a);
    for (std::size_t c = 0; c < categories.size(); ++c) {
      auto dets = dets_by_image[i][c];
      if (dets.empty() && gts[c].empty()) continue;
      std::stable_sort(dets.begin(), dets.end(),
                       [](const auto& a, const auto& b) { return a.score > b.score; });
      if (dets.size() > options.max_detections) dets.resize(options.max_detections);
      evals[i].push_back(detail::evaluate_image_category(c, dets, gts[c]));
    }
  });

  // Deterministic reduction: image order, then score order (stable).
  const std::size_t k_count = categories.size();
  using Grid = std::vector<std::array<detail::CurveSummary, kIouThresholdCount>>;
  std::array<Grid, detail::kAreaRangeCount> grid;
  for (auto& g : grid) g.resize(k_count);
  for (std::size_t range = 0; range < detail::kAreaRangeCount; ++range) {
    std::vector<std::vector<const detail::MatchedDetection*>> merged(k_count);
    std::vector<std::size_t> counted(k_count, 0);
    for (const auto& per_image : evals) {
      for (const auto& e : per_image) {
        counted[e.category] += e.counted_gt[range];
        for (const auto& d : e.detections[range]) merged[e.category].push_back(&d);
      }
    }
    for (std::size_t c = 0; c < k_count; ++c) {
      std::stable_sort(merged[c].begin(), merged[c].end(),
                       [](const auto* a, const auto* b) { return a->score > b->score; });
      for (std::size_t t = 0; t < kIouThresholdCount; ++t) {
        grid[range][c][t] = detail::summarize_curve(merged[c], counted[c], t);
      }
    }
  }

  auto average_ap = [&](std::size_t range, std::optional<std::size_t> only_t) {
    std::vector<double> values;
    for (std::size_t c = 0; c < k_count; ++c) {
      for (std::size_t t = 0; t < kIouThresholdCount; ++t) {
        if (only_t && t != *only_t) continue;
        if (grid[range][c][t].ap) values.push_back(*grid[range][c][t].ap);
      }
    }
    return detail::mean_of(values);
  };

  EvalReport& report = result.report;
  report.map = average_ap(detail::kAreaAll, std::nullopt);
  report.ap50 = average_ap(detail::kAreaAll, 0);
  report.ap75 = average_ap(detail::kAreaAll, 5);
  report.ap_small = average_ap(detail::kAreaSmall, std::nullopt);
  report.ap_medium = average_ap(detail::kAreaMedium, std::nullopt);
  report.ap_large = average_ap(detail::kAreaLarge, std::nullopt);
  {
    std::vector<double> recalls;
    for (std::size_t c = 0; c < k_count; ++c) {
      for (const auto& cell : grid[detail::kAreaAll][c]) {
        if (cell.recall) recalls.push_back(*cell.recall);
      }
    }
    report.ar100 = detail::mean_of(recalls);
  }
  for (std::size_t c = 0; c < k_count; ++c) {
    CategoryResult cr;
    cr.category = categories[c];
    for (const auto& img : ground_truth) {
      for (const auto& a : img.annotations) cr.ground_truth_count += (a.label == categories[c]);
    }
    std::vector<double> aps;
    for (const auto& cell : grid[detail::kAreaAll][c]) {
      if (cell.ap) aps.push_back(*cell.ap);
    }
    cr.ap = detail::mean_of(aps);
    cr.ap50 = grid[detail::kAreaAll][c][0].ap;
    cr.ap75 = grid[detail::kAreaAll][c][5].ap;
    report.per_category.push_back(std::move(cr));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Phrase grounding

struct ScoredPixelBox {
  PixelBox box;
  double score = kDefaultScore;
};

struct PhraseCase {
  std::string phrase;
  std::vector<ScoredPixelBox> predictions;
  std::vector<PixelBox> ground_truth;
};

struct GroundingResult {
  double any_recall = 0;
  double merged_recall = 0;
  std::size_t instances = 0, recalled_instances = 0;
  std::size_t phrases = 0, correct_phrases = 0;
};

inline PixelBox enclosing_box(std::span<const PixelBox> boxes) {
  if (boxes.empty()) throw DomainError("enclosing box of nothing");
  PixelBox out = boxes.front();
  for (const auto& b : boxes) {
    out.x1 = std::min(out.x1, b.x1);
    out.y1 = std::min(out.y1, b.y1);
    out.x2 = std::max(out.x2, b.x2);
    out.y2 = std::max(out.y2, b.y2);
  }
  return out;
}

// ANY-BOX: a GT instance counts if any prediction of its phrase overlaps it
// at IoU >= threshold. MERGED-BOXES: a phrase counts if its top-scoring
// prediction overlaps the box enclosing all of its GT boxes.
inline GroundingResult grounding_eval(std::span<const PhraseCase> cases, double threshold = 0.5) {
  GroundingResult r;
  for (const PhraseCase& pc : cases) {
    if (pc.ground_truth.empty()) {
      throw DomainError("phrase \"" + pc.phrase + "\" has no ground-truth boxes");
    }
    ++r.phrases;
    for (const PixelBox& gt : pc.ground_truth) {
      ++r.instances;
      for (const auto& p : pc.predictions) {
        if (iou(p.box, gt) >= threshold) {
          ++r.recalled_instances;
          break;
        }
      }
    }
    const ScoredPixelBox* top = nullptr;
    for (const auto& p : pc.predictions) {
      if (!top || p.score > top->score) top = &p;
    }
    if (top && iou(top->box, enclosing_box(pc.ground_truth)) >= threshold) ++r.correct_phrases;
  }
  if (r.phrases == 0) throw DomainError("grounding evaluation over zero phrases");
  r.any_recall = static_cast<double>(r.recalled_instances) / static_cast<double>(r.instances);
  r.merged_recall = static_cast<double>(r.correct_phrases) / static_cast<double>(r.phrases);
  return r;
}

}  // namespace locseq
