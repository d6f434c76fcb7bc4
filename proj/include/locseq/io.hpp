#pragma once

// JSON Lines schemas shared by the CLI, the synthetic generator and tests.
//
//   sequence record   {image_id, sequence, order}
//   prediction record {image_id, detections:[{label, bbox_norm:[x1,y1,x2,y2], score?}]}
//                     | {image_id, none:true} | a sequence record
//   trace record      {image_id, instruction, tokens:[{text, prob}], order?}
//   ground truth      {image_id, width, height, annotations:[{label, bbox, area?}],
//                      phrases?:[{phrase, boxes:[[x1,y1,x2,y2],...]}]}
//   source record     {image_id, width, height, source?, record_id?, actual_width?,
//                      actual_height?, referents?:[{expr, bbox}],
//                      annotations?:[{label, bbox}], phrases?:[...], negatives?:[...]}

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "locseq/codec.hpp"
#include "locseq/dataset.hpp"
#include "locseq/error.hpp"
#include "locseq/metrics.hpp"
#include "locseq/scoring.hpp"
#include "locseq/synth.hpp"

namespace locseq::io {

using nlohmann::json;

inline json parse_json_line(std::string_view line) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("invalid JSON: ") + e.what());
  }
}

namespace detail {

inline const json& require(const json& j, const char* key) {
  if (!j.is_object()) throw InputError("expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw InputError(std::string("missing field \"") + key + "\"");
  return *it;
}

inline std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw InputError(std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

inline double require_number(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_number()) throw InputError(std::string("field \"") + key + "\" must be a number");
  return v.get<double>();
}

inline std::array<double, 4> four_numbers(const json& v, const char* what) {
  if (!v.is_array() || v.size() != 4) {
    throw InputError(std::string(what) + " must be an array of 4 numbers");
  }
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!v[i].is_number()) throw InputError(std::string(what) + " must contain numbers");
    out[i] = v[i].get<double>();
  }
  return out;
}

inline PixelBox pixel_box(const json& v, const char* what = "bbox") {
  const auto c = four_numbers(v, what);
  if (c[0] > c[2] || c[1] > c[3]) throw InputError(std::string(what) + " corners inverted");
  return PixelBox{c[0], c[1], c[2], c[3]};
}

inline json pixel_box_json(const PixelBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline SequenceOrder order_field(const json& j, SequenceOrder fallback) {
  auto it = j.find("order");
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw InputError("field \"order\" must be a string");
  auto order = parse_order(it->get<std::string>());
  if (!order) throw InputError("unknown order \"" + it->get<std::string>() + "\"");
  return *order;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Detections and prediction records

inline json to_json(const Detection& d) {
  const auto& m = d.box.thousandths();
  json j = {{"label", d.label},
            {"bbox_norm", json::array({m[0] / 1000.0, m[1] / 1000.0, m[2] / 1000.0, m[3] / 1000.0})}};
  if (d.score) j["score"] = *d.score;
  return j;
}

inline Detection detection_from_json(const json& j) {
  Detection d;
  d.label = detail::require_string(j, "label");
  if (auto why = label_problem(d.label); !why.empty()) throw InputError(why);
  const auto c = detail::four_numbers(detail::require(j, "bbox_norm"), "bbox_norm");
  try {
    d.box = NormBox::from_normalized(c[0], c[1], c[2], c[3]);
  } catch (const Error& e) {
    throw InputError(std::string("bbox_norm: ") + e.what());
  }
  if (auto it = j.find("score"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw InputError("score must be a number");
    const double s = it->get<double>();
    if (!(s > 0.0 && s <= 1.0)) throw InputError("score must be in (0,1]");
    d.score = s;
  }
  return d;
}

struct PredictionRecord {
  std::string image_id;
  PredictionSet predictions;
};

inline json to_json(const PredictionRecord& r) {
  json j = {{"image_id", r.image_id}};
  if (r.predictions.is_none()) {
    j["none"] = true;
    return j;
  }
  json dets = json::array();
  for (const auto& d : r.predictions.detections()) dets.push_back(to_json(d));
  j["detections"] = std::move(dets);
  return j;
}

// Accepts a detection list, {none:true}, or a raw sequence record which is
// decoded in strict mode.
inline PredictionRecord prediction_record_from_json(const json& j,
                                                    SequenceOrder fallback = SequenceOrder::LabelFirst) {
  PredictionRecord r;
  r.image_id = detail::require_string(j, "image_id");
  if (j.contains("sequence")) {
    const std::string seq = detail::require_string(j, "sequence");
    try {
      r.predictions = parse(seq, detail::order_field(j, fallback), ParseMode::Strict).predictions;
    } catch (const ParseError& e) {
      throw InputError(std::string("sequence: ") + e.what());
    }
    return r;
  }
  if (auto it = j.find("none"); it != j.end() && it->is_boolean() && it->get<bool>()) {
    r.predictions = PredictionSet::none();
    return r;
  }
  const json& dets = detail::require(j, "detections");
  if (!dets.is_array()) throw InputError("field \"detections\" must be an array");
  std::vector<Detection> out;
  for (const auto& d : dets) out.push_back(detection_from_json(d));
  r.predictions = PredictionSet::objects(std::move(out));
  return r;
}

// ---------------------------------------------------------------------------
// Sequence records

struct SequenceRecord {
  std::string image_id;
  std::string sequence;
  SequenceOrder order = SequenceOrder::LabelFirst;
};

inline json to_json(const SequenceRecord& r) {
  return {{"image_id", r.image_id}, {"sequence", r.sequence}, {"order", std::string(to_string(r.order))}};
}

inline SequenceRecord sequence_record_from_json(const json& j,
                                                SequenceOrder fallback = SequenceOrder::LabelFirst) {
  return {detail::require_string(j, "image_id"), detail::require_string(j, "sequence"),
          detail::order_field(j, fallback)};
}

// ---------------------------------------------------------------------------
// Token traces

struct TraceRecord {
  std::string image_id;
  TokenTrace trace;
  std::optional<SequenceOrder> order;
};

inline json to_json(const TraceRecord& r) {
  json tokens = json::array();
  for (const auto& t : r.trace.tokens()) tokens.push_back({{"text", t.text}, {"prob", t.prob}});
  json j = {{"image_id", r.image_id}, {"tokens", std::move(tokens)}};
  j["instruction"] = r.trace.context() ? r.trace.context()->instruction : std::string();
  if (r.order) j["order"] = std::string(to_string(*r.order));
  return j;
}

inline TraceRecord trace_record_from_json(const json& j) {
  TraceRecord r;
  r.image_id = detail::require_string(j, "image_id");
  const json& tokens = detail::require(j, "tokens");
  if (!tokens.is_array()) throw InputError("field \"tokens\" must be an array");
  std::vector<Token> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    out.push_back({detail::require_string(t, "text"), detail::require_number(t, "prob")});
  }
  std::optional<PromptContext> context;
  if (auto it = j.find("instruction"); it != j.end() && it->is_string() && !it->get<std::string>().empty()) {
    context = PromptContext{r.image_id, it->get<std::string>()};
  }
  try {
    r.trace = TokenTrace(std::move(out), std::move(context));
  } catch (const ValidationError& e) {
    throw InputError(e.what());
  }
  if (j.contains("order")) r.order = detail::order_field(j, SequenceOrder::LabelFirst);
  return r;
}

// ---------------------------------------------------------------------------
// Ground truth

inline json to_json(const GroundTruthImage& g) {
  json anns = json::array();
  for (const auto& a : g.annotations) {
    json aj = {{"label", a.label}, {"bbox", detail::pixel_box_json(a.box)}};
    if (a.area) aj["area"] = *a.area;
    anns.push_back(std::move(aj));
  }
  json j = {{"image_id", g.image_id}, {"width", g.width}, {"height", g.height},
            {"annotations", std::move(anns)}};
  if (!g.phrases.empty()) {
    json phrases = json::array();
    for (const auto& p : g.phrases) {
      json boxes = json::array();
      for (const auto& b : p.boxes) boxes.push_back(detail::pixel_box_json(b));
      phrases.push_back({{"phrase", p.phrase}, {"boxes", std::move(boxes)}});
    }
    j["phrases"] = std::move(phrases);
  }
  return j;
}

inline GroundTruthImage ground_truth_from_json(const json& j) {
  GroundTruthImage g;
  g.image_id = detail::require_string(j, "image_id");
  g.width = detail::require_number(j, "width");
  g.height = detail::require_number(j, "height");
  if (g.width < 1 || g.height < 1) throw InputError("image " + g.image_id + ": size must be >= 1");
  if (auto it = j.find("annotations"); it != j.end()) {
    for (const auto& a : *it) {
      Annotation ann{detail::require_string(a, "label"), detail::pixel_box(detail::require(a, "bbox")),
                     std::nullopt};
      if (auto ar = a.find("area"); ar != a.end() && !ar->is_null()) ann.area = ar->get<double>();
      if (!(ann.effective_area() > 0)) {
        throw InputError("image " + g.image_id + ": annotation with non-positive area");
      }
      g.annotations.push_back(std::move(ann));
    }
  }
  if (auto it = j.find("phrases"); it != j.end()) {
    for (const auto& p : *it) {
      PhraseGroup pg{detail::require_string(p, "phrase"), {}};
      for (const auto& b : detail::require(p, "boxes")) pg.boxes.push_back(detail::pixel_box(b, "boxes"));
      g.phrases.push_back(std::move(pg));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dataset records

inline dataset::SourceRecord source_record_from_json(const json& j) {
  dataset::SourceRecord r;
  r.image_id = detail::require_string(j, "image_id");
  auto as_int = [&](const char* key) {
    const double v = detail::require_number(j, key);
    if (v != static_cast<double>(static_cast<int>(v))) {
      throw InputError(std::string("field \"") + key + "\" must be an integer");
    }
    return static_cast<int>(v);
  };
  r.size = {as_int("width"), as_int("height")};
  if (j.contains("source")) r.source = detail::require_string(j, "source");
  if (j.contains("record_id")) r.record_id = detail::require_string(j, "record_id");
  if (j.contains("actual_width") || j.contains("actual_height")) {
    r.actual_size = dataset::ImageSize{as_int("actual_width"), as_int("actual_height")};
  }
  if (auto it = j.find("referents"); it != j.end()) {
    for (const auto& a : *it) {
      r.referents.push_back({detail::require_string(a, "expr"), detail::pixel_box(detail::require(a, "bbox"))});
    }
  }
  if (auto it = j.find("annotations"); it != j.end()) {
    for (const auto& a : *it) {
      r.objects.push_back({detail::require_string(a, "label"), detail::pixel_box(detail::require(a, "bbox"))});
    }
  }
  if (auto it = j.find("phrases"); it != j.end()) {
    for (const auto& p : *it) {
      dataset::PhraseAnnotation pa{detail::require_string(p, "phrase"), {}};
      for (const auto& b : detail::require(p, "boxes")) pa.boxes.push_back(detail::pixel_box(b, "boxes"));
      r.phrases.push_back(std::move(pa));
    }
  }
  if (auto it = j.find("negatives"); it != j.end()) {
    for (const auto& n : *it) {
      if (!n.is_string()) throw InputError("negatives must be strings");
      r.negatives.push_back(n.get<std::string>());
    }
  }
  return r;
}

// Never throws: a bad line becomes an unreadable record.
inline dataset::LoadedRecord load_source_line(std::string_view line, std::size_t line_no) {
  dataset::LoadedRecord lr;
  lr.id = "line " + std::to_string(line_no);
  try {
    const json j = parse_json_line(line);
    if (j.is_object() && j.contains("image_id") && j["image_id"].is_string()) {
      lr.id = j["image_id"].get<std::string>();
      if (j.contains("record_id") && j["record_id"].is_string()) lr.id = j["record_id"].get<std::string>();
    }
    lr.record = source_record_from_json(j);
  } catch (const std::exception& e) {
    lr.record.reset();
    lr.error = e.what();
  }
  return lr;
}

inline json to_json(const dataset::ScenarioSample& s) {
  return {{"image_id", s.image_id},
          {"scenario", std::string(dataset::to_string(s.scenario))},
          {"instruction", s.instruction},
          {"target", s.target},
          {"source", s.source},
          {"record_id", s.record_id},
          {"width", s.size.width},
          {"height", s.size.height}};
}

inline dataset::ScenarioSample scenario_sample_from_json(const json& j) {
  dataset::ScenarioSample s;
  s.image_id = detail::require_string(j, "image_id");
  auto scenario = dataset::parse_scenario(detail::require_string(j, "scenario"));
  if (!scenario) throw InputError("unknown scenario");
  s.scenario = *scenario;
  s.instruction = detail::require_string(j, "instruction");
  s.target = detail::require_string(j, "target");
  if (j.contains("source")) s.source = detail::require_string(j, "source");
  if (j.contains("record_id")) s.record_id = detail::require_string(j, "record_id");
  s.size = {static_cast<int>(detail::require_number(j, "width")),
            static_cast<int>(detail::require_number(j, "height"))};
  return s;
}

inline json to_json(const dataset::DatasetManifest& m) {
  json counts = json::object();
  for (const auto& [k, v] : m.counts) counts[k] = v;
  return {{"manifest", {{"seed", m.seed}, {"source_digest", m.source_digest}, {"counts", counts}}}};
}

inline dataset::AttributeLexicon lexicon_from_json(const json& j) {
  dataset::AttributeLexicon lex;
  auto list = [&](const char* key, std::vector<std::string>& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<std::vector<std::string>>();
  };
  list("colors", lex.colors);
  list("positions", lex.positions);
  list("clothing", lex.clothing);
  list("categories", lex.categories);
  return lex;
}

// ---------------------------------------------------------------------------
// Reports and configs

inline json to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json per_cat = json::array();
  for (const auto& c : r.per_category) {
    per_cat.push_back({{"category", c.category},
                       {"gt_count", c.ground_truth_count},
                       {"ap", opt(c.ap)},
                       {"ap50", opt(c.ap50)},
                       {"ap75", opt(c.ap75)}});
  }
  return {{"mAP", opt(r.map)},
          {"AP50", opt(r.ap50)},
          {"AP75", opt(r.ap75)},
          {"AP_S", opt(r.ap_small)},
          {"AP_M", opt(r.ap_medium)},
          {"AP_L", opt(r.ap_large)},
          {"AR100", opt(r.ar100)},
          {"rec_accuracy", opt(r.rec_accuracy)},
          {"grounding_any_recall", opt(r.grounding_any_recall)},
          {"grounding_merged_recall", opt(r.grounding_merged_recall)},
          {"per_category", std::move(per_cat)}};
}

inline json to_json(const synth::SynthConfig& c) {
  return {{"seed", c.seed},
          {"images", c.images},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"categories", c.categories},
          {"box_noise", c.box_noise},
          {"drop_rate", c.drop_rate},
          {"spurious_rate", c.spurious_rate},
          {"calibration_slope", c.calibration_slope},
          {"min_image_size", c.min_image_size},
          {"max_image_size", c.max_image_size}};
}

inline synth::SynthConfig synth_config_from_json(const json& j) {
  synth::SynthConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.images = j.value("images", c.images);
    c.min_objects = j.value("min_objects", c.min_objects);
    c.max_objects = j.value("max_objects", c.max_objects);
    c.categories = j.value("categories", c.categories);
    c.box_noise = j.value("box_noise", c.box_noise);
    c.drop_rate = j.value("drop_rate", c.drop_rate);
    c.spurious_rate = j.value("spurious_rate", c.spurious_rate);
    c.calibration_slope = j.value("calibration_slope", c.calibration_slope);
    c.min_image_size = j.value("min_image_size", c.min_image_size);
    c.max_image_size = j.value("max_image_size", c.max_image_size);
  } catch (const json::exception& e) {
    throw InputError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace locseq::io
