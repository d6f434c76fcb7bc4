#include <gtest/gtest.h>

#include "locseq/io.hpp"

using namespace locseq;
using namespace locseq::io;

TEST(Io, PredictionRecordRoundTrip) {
  PredictionRecord r{"img1", PredictionSet::objects({{"cat", NormBox::from_thousandths(1, 2, 3, 4), 0.5},
                                                     {"dog", NormBox::from_thousandths(0, 0, 1000, 1000), std::nullopt}})};
  const json j = to_json(r);
  EXPECT_EQ(j.dump(), R"({"detections":[{"bbox_norm":[0.001,0.002,0.003,0.004],"label":"cat","score":0.5},)"
                      R"({"bbox_norm":[0.0,0.0,1.0,1.0],"label":"dog"}],"image_id":"img1"})");
  const auto back = prediction_record_from_json(j);
  EXPECT_EQ(back.predictions, r.predictions);

  const PredictionRecord none{"img2", PredictionSet::none()};
  EXPECT_TRUE(prediction_record_from_json(to_json(none)).predictions.is_none());
}

TEST(Io, PredictionRecordFromSequence) {
  const auto r = prediction_record_from_json(
      json::parse(R"({"image_id":"a","sequence":"[0.1,0.2,0.3,0.4]-cat","order":"coord_first"})"));
  ASSERT_EQ(r.predictions.detections().size(), 1u);
  EXPECT_EQ(r.predictions.detections()[0].label, "cat");
  EXPECT_THROW(prediction_record_from_json(json::parse(R"({"image_id":"a","sequence":"cat-[0.1]"})")), InputError);
}

TEST(Io, RejectsBadDetections) {
  EXPECT_THROW(detection_from_json(json::parse(R"({"label":"a","bbox_norm":[0.1,0.2,0.3]})")), InputError);
  EXPECT_THROW(detection_from_json(json::parse(R"({"label":"a","bbox_norm":[0.5,0.2,0.3,0.4]})")), InputError);
  EXPECT_THROW(detection_from_json(json::parse(R"({"label":"a&b","bbox_norm":[0.1,0.2,0.3,0.4]})")), InputError);
  EXPECT_THROW(detection_from_json(json::parse(R"({"label":"a","bbox_norm":[0.1,0.2,0.3,0.4],"score":0})")),
               InputError);
  EXPECT_THROW(parse_json_line("{not json"), InputError);
}

TEST(Io, TraceRecord) {
  const auto r = trace_record_from_json(json::parse(
      R"({"image_id":"x","instruction":"find","tokens":[{"text":"a-[0.1,","prob":0.9},{"text":"0.2,0.3,0.4]","prob":1}]})"));
  EXPECT_EQ(r.trace.text(), "a-[0.1,0.2,0.3,0.4]");
  EXPECT_FALSE(r.order.has_value());
  const auto again = trace_record_from_json(to_json(r));
  EXPECT_EQ(again.trace.text(), r.trace.text());
  EXPECT_THROW(trace_record_from_json(json::parse(R"({"image_id":"x","tokens":[{"text":"a","prob":0}]})")),
               InputError);
}

TEST(Io, GroundTruth) {
  const auto g = ground_truth_from_json(json::parse(
      R"({"image_id":"i","width":100,"height":50,"annotations":[{"label":"a","bbox":[0,0,10,10],"area":42}],)"
      R"("phrases":[{"phrase":"p","boxes":[[1,1,2,2]]}]})"));
  EXPECT_EQ(g.annotations[0].effective_area(), 42.0);
  EXPECT_EQ(g.phrases[0].boxes.size(), 1u);
  EXPECT_EQ(ground_truth_from_json(to_json(g)).annotations[0].area, 42.0);
  EXPECT_THROW(ground_truth_from_json(json::parse(R"({"image_id":"i","width":0,"height":5})")), InputError);
  EXPECT_THROW(ground_truth_from_json(json::parse(
                   R"({"image_id":"i","width":10,"height":5,"annotations":[{"label":"a","bbox":[1,1,1,4]}]})")),
               InputError);
}

TEST(Io, SourceRecordLoading) {
  const auto ok = load_source_line(
      R"({"image_id":"i","width":640,"height":480,"actual_width":480,"actual_height":640,)"
      R"("referents":[{"expr":"the dog","bbox":[0,0,10,10]}],"negatives":["zebra"]})",
      1);
  ASSERT_TRUE(ok.record.has_value());
  EXPECT_EQ(ok.record->actual_size->width, 480);
  EXPECT_EQ(ok.record->negatives[0], "zebra");
  const auto bad = load_source_line("{", 7);
  EXPECT_FALSE(bad.record.has_value());
  EXPECT_EQ(bad.id, "line 7");
}

TEST(Io, ScenarioSampleRoundTrip) {
  dataset::ScenarioSample s{"i", dataset::Scenario::NonExisting, "Where is zebra", "None", "lvis", "r1", {640, 480}};
  EXPECT_EQ(scenario_sample_from_json(to_json(s)), s);
}

TEST(Io, ReportUsesNullForUndefined) {
  EvalReport r;
  r.map = 0.5;
  const json j = to_json(r);
  EXPECT_EQ(j["mAP"], 0.5);
  EXPECT_TRUE(j["AP_L"].is_null());
}

TEST(Io, SynthConfig) {
  const auto c = synth_config_from_json(json::parse(R"({"seed":3,"images":10,"box_noise":0.1})"));
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.images, 10u);
  EXPECT_EQ(c.drop_rate, 0.1);
  EXPECT_THROW(synth_config_from_json(json::parse(R"({"drop_rate":2})")), ValidationError);
  EXPECT_THROW(synth_config_from_json(json::parse(R"({"images":"many"})")), InputError);
}
