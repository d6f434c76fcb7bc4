#include <gtest/gtest.h>

#include <cmath>

#include "generators.hpp"
#include "locseq/metrics.hpp"
#include "locseq/oracle.hpp"

using namespace locseq;

namespace {

// Area of overlap counted cell by cell on a grid of pitch 1/n.
double raster_iou(const PixelBox& a, const PixelBox& b, int n) {
  const double lo = std::min(a.x1, b.x1), hi = std::max(a.x2, b.x2);
  const double top = std::min(a.y1, b.y1), bottom = std::max(a.y2, b.y2);
  long long inter = 0, uni = 0;
  for (double x = lo + 0.5 / n; x < hi; x += 1.0 / n) {
    for (double y = top + 0.5 / n; y < bottom; y += 1.0 / n) {
      const bool in_a = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
      const bool in_b = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

Detection norm_det(std::string label, int x1, int y1, int x2, int y2, std::optional<double> score) {
  return {std::move(label), NormBox::from_thousandths(x1, y1, x2, y2), score};
}

GroundTruthImage one_box_image(std::string label, PixelBox box) {
  return {"img", 1000, 1000, {{std::move(label), box, std::nullopt}}, {}};
}

void expect_same(const std::optional<double>& a, const std::optional<double>& b, const char* field) {
  ASSERT_EQ(a.has_value(), b.has_value()) << field;
  if (a) { ASSERT_NEAR(*a, *b, 1e-9) << field; }
}

}  // namespace

TEST(Denormalize, Examples) {
  const PixelBox a = denormalize(NormBox::from_thousandths(0, 0, 1000, 1000), 448, 448);
  EXPECT_EQ(a.x2, 448.0);
  EXPECT_EQ(a.y2, 448.0);
  const PixelBox b = denormalize(NormBox::from_thousandths(500, 500, 500, 500), 100, 200);
  EXPECT_EQ(b.x1, 50.0);
  EXPECT_EQ(b.y1, 100.0);
  EXPECT_THROW(denormalize(NormBox{}, 0, 10), DomainError);
}

TEST(Iou, Examples) {
  EXPECT_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_EQ(iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
  EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-15);
  EXPECT_NEAR(raster_iou({0, 0, 2, 2}, {1, 1, 3, 3}, 200), 1.0 / 7.0, 1e-12);
  EXPECT_EQ(iou({1, 1, 1, 1}, {1, 1, 1, 1}), 0.0);
}

TEST(Iou, AgreesWithRasterOracle) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    // Quarter-pixel corners are exact on a grid of pitch 1/4.
    auto corner = [&] { return static_cast<double>(rng.between(0, 40)) / 4.0; };
    PixelBox a{corner(), corner(), corner(), corner()}, b{corner(), corner(), corner(), corner()};
    if (a.x1 > a.x2) std::swap(a.x1, a.x2);
    if (a.y1 > a.y2) std::swap(a.y1, a.y2);
    if (b.x1 > b.x2) std::swap(b.x1, b.x2);
    if (b.y1 > b.y2) std::swap(b.y1, b.y2);
    ASSERT_NEAR(iou(a, b), raster_iou(a, b, 4), 1e-12);
  }
}

TEST(Property, IouSymmetricAndBounded) {
  Rng rng(4);
  for (int i = 0; i < 20000; ++i) {
    const PixelBox a = gen::pixel_box(rng, 500, 500), b = gen::pixel_box(rng, 500, 500);
    const double v = iou(a, b);
    ASSERT_EQ(v, iou(b, a));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    ASSERT_EQ(iou(a, a), 1.0);
    if (v == 1.0) { ASSERT_TRUE(a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2); }
  }
}

TEST(AreaBuckets, HalfOpenRanges) {
  EXPECT_EQ(area_bucket(400), AreaBucket::Small);
  EXPECT_EQ(area_bucket(1023.9), AreaBucket::Small);
  EXPECT_EQ(area_bucket(1024), AreaBucket::Medium);
  EXPECT_EQ(area_bucket(9215), AreaBucket::Medium);
  EXPECT_EQ(area_bucket(9216), AreaBucket::Large);
}

TEST(RecAccuracy, Thresholds) {
  const PixelBox gt{0, 0, 100, 100};
  auto sample = [&](int x2_milli) {
    // Prediction [0,0,x2,100] on a 1000x1000 image: IoU = x2 / 100 when x2 <= 100.
    return RecSample{PredictionSet::objects({norm_det("a", 0, 0, x2_milli, 100, 0.9)}), gt, 1000, 1000};
  };
  std::vector<RecSample> s49 = {sample(49)}, s51 = {sample(51)};
  EXPECT_EQ(rec_accuracy(s49), 0.0);
  EXPECT_EQ(rec_accuracy(s51), 1.0);
  std::vector<RecSample> three = {sample(90), sample(50), sample(30)};
  EXPECT_DOUBLE_EQ(rec_accuracy(three), 2.0 / 3.0);
  std::vector<RecSample> none = {RecSample{PredictionSet::none(), gt, 1000, 1000}};
  EXPECT_EQ(rec_accuracy(none), 0.0);
  EXPECT_THROW(rec_accuracy(std::span<const RecSample>{}), DomainError);
}

TEST(RecAccuracy, UsesHighestScoringDetection) {
  const PixelBox gt{0, 0, 100, 100};
  std::vector<RecSample> s = {RecSample{
      PredictionSet::objects({norm_det("a", 500, 500, 600, 600, 0.4), norm_det("a", 0, 0, 100, 100, 0.8)}), gt,
      1000, 1000}};
  EXPECT_EQ(rec_accuracy(s), 1.0);
}

TEST(DetectionEval, Examples) {
  const std::vector<GroundTruthImage> gts = {one_box_image("cat", {100, 100, 300, 300})};
  {
    const std::vector<ImagePredictions> p = {{"img", {norm_det("cat", 100, 100, 300, 300, 0.9)}}};
    const auto r = detection_eval(p, gts).report;
    EXPECT_EQ(*r.map, 1.0);
    EXPECT_EQ(*r.ap50, 1.0);
    EXPECT_EQ(*r.ap75, 1.0);
    EXPECT_EQ(*r.ar100, 1.0);
    EXPECT_EQ(*r.ap_large, 1.0);
    EXPECT_FALSE(r.ap_small.has_value());
  }
  {
    // Precision 1 at every recall level reached before the false positive.
    const std::vector<ImagePredictions> p = {
        {"img", {norm_det("cat", 100, 100, 300, 300, 0.9), norm_det("cat", 700, 700, 900, 900, 0.8)}}};
    EXPECT_EQ(*detection_eval(p, gts).report.ap50, 1.0);
    EXPECT_EQ(*oracle::brute_force_ap(p, gts).ap50, 1.0);
  }
  {
    // [100,100,300,300] vs [100,100,300,190]: IoU 0.45.
    const std::vector<ImagePredictions> p = {{"img", {norm_det("cat", 100, 100, 300, 190, 0.9)}}};
    EXPECT_EQ(*detection_eval(p, gts).report.map, 0.0);
  }
}

TEST(DetectionEval, FalsePositiveFirstHalvesPrecision) {
  const std::vector<GroundTruthImage> gts = {one_box_image("cat", {100, 100, 300, 300})};
  const std::vector<ImagePredictions> p = {
      {"img", {norm_det("cat", 100, 100, 300, 300, 0.5), norm_det("cat", 700, 700, 900, 900, 0.8)}}};
  EXPECT_DOUBLE_EQ(*detection_eval(p, gts).report.ap50, 0.5);
}

TEST(DetectionEval, InputErrorsAndDiagnostics) {
  const std::vector<GroundTruthImage> gts = {one_box_image("cat", {100, 100, 300, 300})};
  const std::vector<ImagePredictions> unknown_image = {{"other", {norm_det("cat", 0, 0, 1, 1, 0.5)}}};
  EXPECT_THROW(detection_eval(unknown_image, gts), InputError);
  const std::vector<ImagePredictions> unknown_cat = {
      {"img", {norm_det("zebra", 0, 0, 100, 100, 0.99), norm_det("cat", 100, 100, 300, 300, 0.5)}}};
  const auto r = detection_eval(unknown_cat, gts);
  EXPECT_EQ(*r.report.map, 1.0);
  EXPECT_EQ(r.diagnostics.size(), 1u);
  const std::vector<GroundTruthImage> dup = {gts[0], gts[0]};
  EXPECT_THROW(detection_eval({}, dup), InputError);
}

TEST(DetectionEval, MissingScoresUseDefault) {
  const std::vector<GroundTruthImage> gts = {one_box_image("cat", {100, 100, 300, 300})};
  // The unscored true positive (0.99) outranks the scored false positive.
  const std::vector<ImagePredictions> p = {
      {"img", {norm_det("cat", 700, 700, 900, 900, 0.9), norm_det("cat", 100, 100, 300, 300, std::nullopt)}}};
  EXPECT_EQ(*detection_eval(p, gts).report.ap50, 1.0);
}

TEST(DetectionEval, CapsDetectionsPerImage) {
  const std::vector<GroundTruthImage> gts = {one_box_image("cat", {100, 100, 300, 300})};
  std::vector<Detection> dets;
  for (int i = 0; i < 100; ++i) dets.push_back(norm_det("cat", 700, 700, 800, 800, 0.9));
  dets.push_back(norm_det("cat", 100, 100, 300, 300, 0.1));
  const std::vector<ImagePredictions> p = {{"img", dets}};
  EXPECT_EQ(*detection_eval(p, gts).report.ar100, 0.0);
}

TEST(Property, MatchesBruteForceOracle) {
  Rng rng(2025);
  for (int i = 0; i < 300; ++i) {
    const auto inst = gen::eval_instance(rng);
    const auto got = detection_eval(inst.predictions, inst.ground_truth).report;
    const auto want = oracle::brute_force_ap(inst.predictions, inst.ground_truth);
    SCOPED_TRACE("instance " + std::to_string(i));
    expect_same(got.map, want.map, "mAP");
    expect_same(got.ap50, want.ap50, "AP50");
    expect_same(got.ap75, want.ap75, "AP75");
    expect_same(got.ap_small, want.ap_small, "AP_S");
    expect_same(got.ap_medium, want.ap_medium, "AP_M");
    expect_same(got.ap_large, want.ap_large, "AP_L");
    expect_same(got.ar100, want.ar100, "AR100");
  }
}

TEST(Property, PerfectPredictionsScoreOne) {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    auto inst = gen::eval_instance(rng);
    inst.predictions.clear();
    double score = 1.0;
    for (const auto& g : inst.ground_truth) {
      ImagePredictions p{g.image_id, {}};
      for (const auto& a : g.annotations) {
        score *= 0.97;
        p.detections.push_back({a.label, gen::to_norm(a.box, g.width, g.height), score});
      }
      inst.predictions.push_back(std::move(p));
    }
    const auto r = detection_eval(inst.predictions, inst.ground_truth).report;
    ASSERT_EQ(*r.map, 1.0);
    ASSERT_EQ(*r.ar100, 1.0);
  }
}

TEST(Property, RankPreservingRescoreIsInvariant) {
  Rng rng(32);
  for (int i = 0; i < 200; ++i) {
    auto inst = gen::eval_instance(rng);
    for (auto& p : inst.predictions) {
      for (auto& d : p.detections) d.score = d.score.value_or(kDefaultScore);
    }
    const auto before = detection_eval(inst.predictions, inst.ground_truth).report;
    for (auto& p : inst.predictions) {
      for (auto& d : p.detections) d.score = std::pow(*d.score, 3.0) * 0.5;  // strictly increasing map
    }
    const auto after = detection_eval(inst.predictions, inst.ground_truth).report;
    ASSERT_EQ(before.map, after.map);
    ASSERT_EQ(before.ap50, after.ap50);
    ASSERT_EQ(before.ar100, after.ar100);
    ASSERT_EQ(before.ap_small, after.ap_small);
  }
}

TEST(Property, LowScoredFalsePositiveNeverRaisesAp) {
  Rng rng(33);
  for (int i = 0; i < 300; ++i) {
    auto inst = gen::eval_instance(rng);
    if (inst.ground_truth[0].annotations.empty()) continue;
    const auto before = detection_eval(inst.predictions, inst.ground_truth).report;
    double lowest = 1.0;
    for (const auto& p : inst.predictions) {
      for (const auto& d : p.detections) lowest = std::min(lowest, d.score.value_or(kDefaultScore));
    }
    // Far corner box of a known category that matches nothing.
    Detection fp{inst.ground_truth[0].annotations[0].label, NormBox::from_thousandths(999, 999, 1000, 1000),
                 lowest / 2};
    if (inst.predictions.empty()) inst.predictions.push_back({inst.ground_truth[0].image_id, {}});
    for (auto& p : inst.predictions) {
      if (p.image_id == inst.ground_truth[0].image_id) p.detections.push_back(fp);
    }
    const auto after = detection_eval(inst.predictions, inst.ground_truth).report;
    auto le = [](const std::optional<double>& a, const std::optional<double>& b) {
      return !a || *a <= *b + 1e-15;
    };
    ASSERT_TRUE(le(after.map, before.map));
    ASSERT_TRUE(le(after.ap50, before.ap50));
    ASSERT_TRUE(le(after.ap75, before.ap75));
    ASSERT_TRUE(le(after.ap_small, before.ap_small));
    ASSERT_TRUE(le(after.ap_medium, before.ap_medium));
    ASSERT_TRUE(le(after.ap_large, before.ap_large));
  }
}

TEST(Property, WorkerCountDoesNotChangeResults) {
  Rng rng(34);
  for (int i = 0; i < 50; ++i) {
    const auto inst = gen::eval_instance(rng);
    DetectionEvalOptions one, four;
    four.workers = 4;
    const auto a = detection_eval(inst.predictions, inst.ground_truth, one).report;
    const auto b = detection_eval(inst.predictions, inst.ground_truth, four).report;
    ASSERT_EQ(a.map, b.map);
    ASSERT_EQ(a.ar100, b.ar100);
  }
}

TEST(Oracle, RefusesLargeInputs) {
  std::vector<GroundTruthImage> gts = {one_box_image("cat", {0, 0, 10, 10})};
  for (int i = 0; i < 10; ++i) gts[0].annotations.push_back(gts[0].annotations[0]);
  EXPECT_THROW(oracle::brute_force_ap({}, gts), std::length_error);
}

TEST(Oracle, EmptyPredictions) {
  const std::vector<GroundTruthImage> gts = {one_box_image("cat", {0, 0, 10, 10})};
  const auto r = oracle::brute_force_ap({}, gts);
  EXPECT_EQ(*r.map, 0.0);
  EXPECT_EQ(*r.ar100, 0.0);
}

TEST(Grounding, Examples) {
  const std::vector<PixelBox> two = {{0, 0, 10, 10}, {20, 0, 30, 10}};
  {
    // Both instances found; the enclosing box [0,0,30,10] has IoU 1/3 with the top box.
    std::vector<PhraseCase> c = {{"dogs", {{two[0], 0.9}, {two[1], 0.8}}, two}};
    const auto r = grounding_eval(c);
    EXPECT_EQ(r.any_recall, 1.0);
    EXPECT_EQ(r.merged_recall, 0.0);
  }
  {
    std::vector<PhraseCase> c = {{"dogs", {{two[0], 0.9}}, two}};
    EXPECT_EQ(grounding_eval(c).any_recall, 0.5);
  }
  {
    std::vector<PhraseCase> c = {{"dog", {{two[0], 0.9}}, {two[0]}}};
    EXPECT_EQ(grounding_eval(c).merged_recall, 1.0);
  }
  {
    std::vector<PhraseCase> c = {{"dog", {}, {two[0]}}};
    const auto r = grounding_eval(c);
    EXPECT_EQ(r.any_recall, 0.0);
    EXPECT_EQ(r.merged_recall, 0.0);
  }
  std::vector<PhraseCase> bad = {{"dog", {}, {}}};
  EXPECT_THROW(grounding_eval(bad), DomainError);
}
