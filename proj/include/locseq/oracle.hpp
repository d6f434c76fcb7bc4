#pragma once

// Brute-force reference for detection_eval. It shares only the plain data
// types with metrics.hpp; geometry, matching, thresholds and interpolation
// are written out again here, as directly as possible, so the two can be
// checked against each other. Refuses inputs larger than a small instance.

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "locseq/metrics.hpp"

namespace locseq::oracle {

inline constexpr std::size_t kMaxPredictions = 15;
inline constexpr std::size_t kMaxGroundTruth = 10;

struct OracleReport {
  std::optional<double> map, ap50, ap75, ap_small, ap_medium, ap_large, ar100;
};

namespace detail {

struct Box {
  double x1, y1, x2, y2;
};

struct Det {
  std::size_t image;
  std::size_t order;  // position among the image's detections, in input order
  std::string label;
  Box box;
  double score;
};

struct Gt {
  std::size_t image;
  std::string label;
  Box box;
  double area;
};

inline double overlap(const Box& a, const Box& b) {
  const double left = a.x1 > b.x1 ? a.x1 : b.x1;
  const double right = a.x2 < b.x2 ? a.x2 : b.x2;
  const double top = a.y1 > b.y1 ? a.y1 : b.y1;
  const double bottom = a.y2 < b.y2 ? a.y2 : b.y2;
  double inter = 0.0;
  if (right > left && bottom > top) inter = (right - left) * (bottom - top);
  const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

// Bucket 0 = all, 1 = small (< 32^2), 2 = medium, 3 = large (>= 96^2).
inline bool in_bucket(double area, int bucket) {
  if (bucket == 1) return area < 1024.0;
  if (bucket == 2) return area >= 1024.0 && area < 9216.0;
  if (bucket == 3) return area >= 9216.0;
  return true;
}

struct Cell {
  bool valid = false;  // category has counted ground truth in this bucket
  double ap = 0.0;
  double recall = 0.0;
};

// One (category, bucket, threshold) evaluation.
inline Cell evaluate(const std::vector<Det>& all_dets, const std::vector<Gt>& all_gts,
                     const std::string& label, int bucket, double threshold,
                     std::size_t image_count) {
  Cell cell;
  std::size_t counted = 0;
  for (const Gt& g : all_gts) {
    if (g.label == label && in_bucket(g.area, bucket)) ++counted;
  }
  if (counted == 0) return cell;
  cell.valid = true;

  struct Outcome {
    double score;
    std::size_t image, order;
    bool tp;
  };
  std::vector<Outcome> kept;  // non-ignored detections

  for (std::size_t img = 0; img < image_count; ++img) {
    std::vector<Det> dets;
    for (const Det& d : all_dets) {
      if (d.image == img && d.label == label) dets.push_back(d);
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Det& a, const Det& b) { return a.score > b.score; });
    std::vector<Gt> gts;
    for (const Gt& g : all_gts) {
      if (g.image == img && g.label == label) gts.push_back(g);
    }
    std::vector<bool> used(gts.size(), false);
    for (const Det& d : dets) {
      // Prefer counted ground truth; fall back to ignored ground truth.
      int pick = -1;
      for (int pass = 0; pass < 2 && pick < 0; ++pass) {
        double best = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (used[g]) continue;
          const bool counts = in_bucket(gts[g].area, bucket);
          if ((pass == 0) != counts) continue;
          const double v = overlap(d.box, gts[g].box);
          if (v >= threshold && v > best) {
            best = v;
            pick = static_cast<int>(g);
          }
        }
        if (pick >= 0) {
          used[static_cast<std::size_t>(pick)] = true;
          if (pass == 0) kept.push_back({d.score, d.image, d.order, true});
        }
      }
      if (pick < 0) {
        const double area = (d.box.x2 - d.box.x1) * (d.box.y2 - d.box.y1);
        if (in_bucket(area, bucket)) kept.push_back({d.score, d.image, d.order, false});
      }
    }
  }

  std::sort(kept.begin(), kept.end(), [](const Outcome& a, const Outcome& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.order < b.order;
  });

  std::vector<std::size_t> tp_at, seen_at;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i].tp) ++tp;
    tp_at.push_back(tp);
    seen_at.push_back(i + 1);
  }
  double total = 0.0;
  for (std::size_t r = 0; r <= 100; ++r) {
    double best = 0.0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      // recall_i >= r/100, compared exactly on integers.
      if (tp_at[i] * 100 >= r * counted) {
        const double precision = static_cast<double>(tp_at[i]) / static_cast<double>(seen_at[i]);
        if (precision > best) best = precision;
      }
    }
    total += best;
  }
  cell.ap = total / 101.0;
  cell.recall = static_cast<double>(tp) / static_cast<double>(counted);
  return cell;
}

inline std::optional<double> average(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

inline OracleReport brute_force_ap(std::span<const ImagePredictions> predictions,
                                   std::span<const GroundTruthImage> ground_truth,
                                   double default_score = 0.99) {
  std::size_t n_pred = 0, n_gt = 0;
  for (const auto& p : predictions) n_pred += p.detections.size();
  for (const auto& g : ground_truth) n_gt += g.annotations.size();
  if (n_pred > kMaxPredictions || n_gt > kMaxGroundTruth) {
    throw std::length_error("brute_force_ap is limited to 15 predictions and 10 ground-truth boxes");
  }

  std::vector<detail::Gt> gts;
  std::set<std::string> labels;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    for (const auto& a : ground_truth[i].annotations) {
      const detail::Box b{a.box.x1, a.box.y1, a.box.x2, a.box.y2};
      const double area = a.area ? *a.area : (b.x2 - b.x1) * (b.y2 - b.y1);
      gts.push_back({i, a.label, b, area});
      labels.insert(a.label);
    }
  }

  std::vector<detail::Det> dets;
  std::vector<std::size_t> next_order(ground_truth.size(), 0);
  for (const auto& p : predictions) {
    std::size_t img = ground_truth.size();
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
      if (ground_truth[i].image_id == p.image_id) img = i;
    }
    if (img == ground_truth.size()) throw std::invalid_argument("unknown image " + p.image_id);
    const double w = ground_truth[img].width, h = ground_truth[img].height;
    for (const Detection& d : p.detections) {
      if (!labels.count(d.label)) continue;
      const auto& m = d.box.thousandths();
      auto px = [](int milli, double extent) {
        double v = static_cast<double>(milli) * extent / 1000.0;
        return v < 0 ? 0.0 : (v > extent ? extent : v);
      };
      dets.push_back({img, next_order[img]++, d.label,
                      detail::Box{px(m[0], w), px(m[1], h), px(m[2], w), px(m[3], h)},
                      d.score ? *d.score : default_score});
    }
  }

  static constexpr std::array<double, 10> kThresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                                         0.75, 0.80, 0.85, 0.90, 0.95};
  OracleReport out;
  for (int bucket = 0; bucket < 4; ++bucket) {
    std::vector<double> all_aps, aps50, aps75, recalls;
    for (const std::string& label : labels) {
      for (std::size_t t = 0; t < kThresholds.size(); ++t) {
        const detail::Cell c =
            detail::evaluate(dets, gts, label, bucket, kThresholds[t], ground_truth.size());
        if (!c.valid) continue;
        all_aps.push_back(c.ap);
        recalls.push_back(c.recall);
        if (t == 0) aps50.push_back(c.ap);
        if (t == 5) aps75.push_back(c.ap);
      }
    }
    switch (bucket) {
      case 0:
        out.map = detail::average(all_aps);
        out.ap50 = detail::average(aps50);
        out.ap75 = detail::average(aps75);
        out.ar100 = detail::average(recalls);
        break;
      case 1: out.ap_small = detail::average(all_aps); break;
      case 2: out.ap_medium = detail::average(all_aps); break;
      default: out.ap_large = detail::average(all_aps); break;
    }
  }
  return out;
}

}  // namespace locseq::oracle
