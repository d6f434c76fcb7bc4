// locseq: batch front end for the codec, scoring, evaluation, dataset and
// synthetic-data modules. Every input and output is JSON Lines.
//
// Exit codes: 0 success, 1 data error, 2 usage error.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "locseq/codec.hpp"
#include "locseq/dataset.hpp"
#include "locseq/io.hpp"
#include "locseq/metrics.hpp"
#include "locseq/parallel.hpp"
#include "locseq/random.hpp"
#include "locseq/scoring.hpp"
#include "locseq/synth.hpp"

#ifndef LOCSEQ_VERSION
#define LOCSEQ_VERSION "0.0.0"
#endif

namespace {

using locseq::io::json;
namespace fs = std::filesystem;

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;
constexpr std::size_t kChunkLines = 1024;

// Reads lines from a file or stdin ("-") and keeps a running FNV-1a digest
// of everything read, newline-terminated.
class LineReader {
 public:
  explicit LineReader(const std::string& path) {
    if (path == "-") {
      in_ = &std::cin;
    } else {
      file_.open(path);
      if (!file_) throw locseq::InputError("cannot open " + path);
      in_ = &file_;
    }
  }

  bool next(std::string& line) {
    if (!std::getline(*in_, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    digest_ = locseq::fnv1a64(line, digest_);
    digest_ = locseq::fnv1a64("\n", digest_);
    ++line_no_;
    return true;
  }

  std::size_t line_no() const { return line_no_; }
  std::string digest() const { return locseq::hex64(digest_); }

 private:
  std::ifstream file_;
  std::istream* in_ = nullptr;
  std::uint64_t digest_ = locseq::fnv1a64("");
  std::size_t line_no_ = 0;
};

// Output to a file or stdout ("-").
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") {
      out_ = &std::cout;
      return;
    }
    file_.open(path, std::ios::binary);
    if (!file_) throw locseq::InputError("cannot write " + path);
    out_ = &file_;
  }
  void line(const std::string& s) { *out_ << s << '\n'; }

 private:
  std::ofstream file_;
  std::ostream* out_ = nullptr;
};

// Diagnostics go to a sidecar file when one is named, otherwise to stderr.
class DiagnosticSink {
 public:
  explicit DiagnosticSink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw locseq::InputError("cannot write " + path);
    }
  }
  void add(const json& d) {
    (file_.is_open() ? static_cast<std::ostream&>(file_) : std::cerr) << d.dump() << '\n';
  }

 private:
  std::ofstream file_;
};

json line_diagnostic(std::size_t line_no, const std::string& message) {
  return {{"line", line_no}, {"message", message}};
}

struct LineOutcome {
  std::optional<std::string> output;
  std::vector<json> diagnostics;
  bool failed = false;
};

// Streams `in` through fn in fixed-size chunks. Within a chunk lines are
// processed on `workers` threads; results are written in input order.
// Blank lines are skipped. Returns the number of failed lines.
template <class Fn>
std::size_t stream_lines(LineReader& in, Output& out, DiagnosticSink& diags, unsigned workers, Fn&& fn) {
  std::size_t failures = 0;
  std::vector<std::pair<std::size_t, std::string>> chunk;
  std::vector<LineOutcome> results;
  std::string line;
  bool more = true;
  while (more) {
    chunk.clear();
    while (chunk.size() < kChunkLines && (more = in.next(line))) {
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      chunk.emplace_back(in.line_no(), line);
    }
    results.assign(chunk.size(), {});
    locseq::parallel_for(chunk.size(), workers, [&](std::size_t i) {
      try {
        results[i] = fn(chunk[i].second, chunk[i].first);
      } catch (const locseq::Error& e) {
        results[i] = {std::nullopt, {line_diagnostic(chunk[i].first, e.what())}, true};
      } catch (const json::exception& e) {
        results[i] = {std::nullopt, {line_diagnostic(chunk[i].first, e.what())}, true};
      }
    });
    for (auto& r : results) {
      for (const auto& d : r.diagnostics) diags.add(d);
      if (r.output) out.line(*r.output);
      if (r.failed) ++failures;
    }
  }
  return failures;
}

std::string file_digest(const std::string& path) {
  LineReader r(path);
  std::string line;
  while (r.next(line)) {
  }
  return r.digest();
}

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
  std::string command;
  json flags = json::object();
  json inputs = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  json to_json() const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {{"run_manifest",
             {{"command", command},
              {"flags", flags},
              {"inputs", inputs},
              {"version", LOCSEQ_VERSION},
              {"duration_s", secs}}}};
  }
};

void record_flags(const CLI::App& cmd, RunManifest& m) {
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_name();
    if (name.empty() || name == "--help" || name == "--version") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    m.flags[name] = value;
  }
}

// ---------------------------------------------------------------------------
// Shared flag holders

struct Common {
  unsigned workers = 1;
  std::string manifest_path;
};

locseq::SequenceOrder to_order(const std::string& s) { return *locseq::parse_order(s); }

locseq::ParseMode to_mode(const std::string& s) {
  return s == "strict" ? locseq::ParseMode::Strict : locseq::ParseMode::Lenient;
}

std::string sidecar_path(const std::string& explicit_path, const std::string& output) {
  if (!explicit_path.empty()) return explicit_path;
  if (!output.empty() && output != "-") return output + ".diag.jsonl";
  return {};
}

// ---------------------------------------------------------------------------
// encode / decode

struct CodecArgs {
  std::string input, output, diagnostics;
  std::string order = "label_first";
  std::string mode = "strict";
};

int run_decode(const CodecArgs& a, const Common& c, RunManifest& m) {
  LineReader in(a.input);
  Output out(a.output);
  const bool strict = a.mode == "strict";
  DiagnosticSink diags(strict ? a.diagnostics : sidecar_path(a.diagnostics, a.output));
  const auto order = to_order(a.order);
  const auto mode = to_mode(a.mode);
  const std::size_t failed = stream_lines(in, out, diags, c.workers, [&](const std::string& line, std::size_t n) {
    const auto rec = locseq::io::sequence_record_from_json(locseq::io::parse_json_line(line), order);
    LineOutcome o;
    locseq::ParseResult parsed;
    try {
      parsed = locseq::parse(rec.sequence, rec.order, mode);
    } catch (const locseq::ParseError& e) {
      o.failed = true;
      o.diagnostics.push_back({{"line", n}, {"image_id", rec.image_id}, {"offset", e.offset()},
                               {"message", e.what()}});
      return o;
    }
    for (const auto& d : parsed.diagnostics) {
      o.diagnostics.push_back({{"line", n}, {"image_id", rec.image_id}, {"offset", d.offset},
                               {"segment", d.segment}, {"message", d.message}});
    }
    o.output = locseq::io::to_json(locseq::io::PredictionRecord{rec.image_id, parsed.predictions}).dump();
    return o;
  });
  m.inputs[a.input] = in.digest();
  return strict && failed > 0 ? kExitData : 0;
}

int run_encode(const CodecArgs& a, const Common& c, RunManifest& m) {
  LineReader in(a.input);
  Output out(a.output);
  const bool strict = a.mode == "strict";
  DiagnosticSink diags(strict ? a.diagnostics : sidecar_path(a.diagnostics, a.output));
  const auto order = to_order(a.order);
  const std::size_t failed = stream_lines(in, out, diags, c.workers, [&](const std::string& line, std::size_t) {
    const auto rec = locseq::io::prediction_record_from_json(locseq::io::parse_json_line(line), order);
    LineOutcome o;
    o.output = locseq::io::to_json(
                   locseq::io::SequenceRecord{rec.image_id, locseq::serialize(rec.predictions, order), order})
                   .dump();
    return o;
  });
  m.inputs[a.input] = in.digest();
  return strict && failed > 0 ? kExitData : 0;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  std::string input, output, diagnostics;
  std::string order = "label_first";
  locseq::ScoringConfig config;
  bool breakdown = false;
};

int run_score(const ScoreArgs& a, const Common& c, RunManifest& m) {
  LineReader in(a.input);
  Output out(a.output);
  DiagnosticSink diags(a.diagnostics);
  const auto fallback = to_order(a.order);
  const std::size_t failed = stream_lines(in, out, diags, c.workers, [&](const std::string& line, std::size_t) {
    const auto rec = locseq::io::trace_record_from_json(locseq::io::parse_json_line(line));
    const auto order = rec.order.value_or(fallback);
    const std::string text = rec.trace.text();
    LineOutcome o;
    if (locseq::parse(text, order, locseq::ParseMode::Strict).predictions.is_none()) {
      o.output = locseq::io::to_json(locseq::io::PredictionRecord{rec.image_id, locseq::PredictionSet::none()}).dump();
      return o;
    }
    json dets = json::array();
    for (const auto& sd : locseq::score_trace_detailed(rec.trace, order, a.config)) {
      json d = locseq::io::to_json(sd.detection);
      if (a.breakdown) {
        d["label_score"] = sd.breakdown.label_score;
        d["loc_score"] = sd.breakdown.loc_score;
        d["position"] = sd.position;
      }
      dets.push_back(std::move(d));
    }
    o.output = json{{"image_id", rec.image_id}, {"detections", std::move(dets)}}.dump();
    return o;
  });
  m.inputs[a.input] = in.digest();
  return failed > 0 ? kExitData : 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string predictions, ground_truth, report;
  std::string task = "det";
  std::string order = "label_first";
  double default_score = locseq::kDefaultScore;
  double threshold = 0.5;
};

template <class T, class Fn>
std::vector<T> read_all(const std::string& path, RunManifest& m, Fn&& fn) {
  LineReader in(path);
  std::vector<T> out;
  std::string line;
  while (in.next(line)) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(fn(locseq::io::parse_json_line(line)));
    } catch (const std::exception& e) {
      throw locseq::InputError(path + ":" + std::to_string(in.line_no()) + ": " + e.what());
    }
  }
  m.inputs[path] = in.digest();
  return out;
}

std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << *v * 100.0;
  return s.str();
}

void print_table(const std::vector<std::string>& header, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::cout << std::setw(static_cast<int>(std::max<std::size_t>(header[i].size(), 6) + 2)) << header[i];
  }
  std::cout << '\n';
  for (std::size_t i = 0; i < row.size(); ++i) {
    std::cout << std::setw(static_cast<int>(std::max<std::size_t>(header[i].size(), 6) + 2)) << row[i];
  }
  std::cout << '\n';
}

int run_eval(const EvalArgs& a, const Common& c, RunManifest& m) {
  using namespace locseq;
  const auto order = to_order(a.order);
  const auto gts = read_all<GroundTruthImage>(a.ground_truth, m, io::ground_truth_from_json);
  const auto records = read_all<io::PredictionRecord>(
      a.predictions, m, [&](const json& j) { return io::prediction_record_from_json(j, order); });

  std::unordered_map<std::string, const PredictionSet*> by_id;
  for (const auto& r : records) {
    if (!by_id.emplace(r.image_id, &r.predictions).second) {
      throw InputError("duplicate predictions for image " + r.image_id);
    }
  }
  const PredictionSet none = PredictionSet::none();
  auto lookup = [&](const std::string& id) -> const PredictionSet& {
    auto it = by_id.find(id);
    return it == by_id.end() ? none : *it->second;
  };

  EvalReport report;
  if (a.task == "det") {
    std::vector<ImagePredictions> preds;
    for (const auto& r : records) preds.push_back({r.image_id, r.predictions.detections()});
    DetectionEvalOptions opts;
    opts.default_score = a.default_score;
    opts.workers = c.workers;
    auto result = detection_eval(preds, gts, opts);
    for (const auto& d : result.diagnostics) std::cerr << d << '\n';
    report = std::move(result.report);
    print_table({"mAP", "AP50", "AP75", "AP_S", "AP_M", "AP_L", "AR100"},
                {pct(report.map), pct(report.ap50), pct(report.ap75), pct(report.ap_small),
                 pct(report.ap_medium), pct(report.ap_large), pct(report.ar100)});
  } else if (a.task == "rec") {
    std::vector<RecSample> samples;
    for (const auto& g : gts) {
      if (g.annotations.size() != 1) {
        throw InputError("rec ground truth " + g.image_id + " must have exactly one annotation");
      }
      samples.push_back({lookup(g.image_id), g.annotations[0].box, g.width, g.height});
    }
    report.rec_accuracy = rec_accuracy(samples, a.threshold, a.default_score);
    std::ostringstream h;
    h << "Acc@" << a.threshold;
    print_table({h.str()}, {pct(report.rec_accuracy)});
  } else {
    std::vector<PhraseCase> cases;
    for (const auto& g : gts) {
      const auto& dets = lookup(g.image_id).detections();
      for (const auto& p : g.phrases) {
        PhraseCase pc{p.phrase, {}, p.boxes};
        for (const auto& d : dets) {
          if (d.label == p.phrase) {
            pc.predictions.push_back({denormalize(d.box, g.width, g.height), d.score.value_or(a.default_score)});
          }
        }
        cases.push_back(std::move(pc));
      }
    }
    const auto g = grounding_eval(cases, a.threshold);
    report.grounding_any_recall = g.any_recall;
    report.grounding_merged_recall = g.merged_recall;
    print_table({"ANY", "MERGED"}, {pct(report.grounding_any_recall), pct(report.grounding_merged_recall)});
  }

  if (!a.report.empty()) {
    json j = io::to_json(report);
    j["task"] = a.task;
    std::ofstream out(a.report, std::ios::binary);
    if (!out) throw InputError("cannot write " + a.report);
    out << j.dump(2) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// build

struct BuildArgs {
  std::string sources, templates, output, diagnostics, lexicon;
  std::string scenario = "all";
  std::string category_set = "per-image";
  std::uint64_t seed = 0;
  std::size_t max_categories = 0;
  std::size_t composed_negatives = 0;
  std::size_t max_templates = 60;
  bool one_negative_per_image = false;
  bool balance_large = false;
};

int run_build(const BuildArgs& a, const Common& c, RunManifest& m) {
  using namespace locseq;
  using namespace locseq::dataset;
  DiagnosticSink diags(a.diagnostics);

  LineReader in(a.sources);
  std::vector<LoadedRecord> loaded;
  std::string line;
  while (in.next(line)) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    loaded.push_back(io::load_source_line(line, in.line_no()));
  }
  const std::string digest = in.digest();
  m.inputs[a.sources] = digest;

  const auto filtered = filter_images(loaded);
  for (const auto& d : filtered.dropped) {
    diags.add({{"record", d.id}, {"dropped", std::string(to_string(d.reason))}, {"detail", d.detail}});
  }

  BuildOptions opts;
  opts.seed = a.seed;
  opts.workers = c.workers;
  opts.max_categories = a.max_categories;
  opts.one_negative_per_image = a.one_negative_per_image;
  opts.category_set = a.category_set == "all" ? CategorySetMode::AllDataset : CategorySetMode::PerImage;
  if (!a.lexicon.empty()) {
    std::ifstream lf(a.lexicon);
    std::stringstream buf;
    buf << lf.rdbuf();
    try {
      opts.lexicon = io::lexicon_from_json(json::parse(buf.str()));
    } catch (const json::exception& e) {
      throw InputError("lexicon: " + std::string(e.what()));
    }
    m.inputs[a.lexicon] = file_digest(a.lexicon);
    opts.composed_negatives_per_image = a.composed_negatives > 0 ? a.composed_negatives : 1;
  }

  std::vector<Scenario> scenarios;
  if (a.scenario == "all") {
    scenarios.assign(kAllScenarios.begin(), kAllScenarios.end());
  } else {
    scenarios.push_back(*parse_scenario(a.scenario));
  }

  std::vector<ScenarioSample> samples;
  for (Scenario s : scenarios) {
    const auto templates = load_templates(a.templates, s, a.max_templates);
    auto result = build_scenario(filtered.kept, s, templates, opts);
    for (const auto& d : result.diagnostics) {
      diags.add({{"scenario", std::string(to_string(s))}, {"message", d}});
    }
    for (auto& smp : result.samples) samples.push_back(std::move(smp));
  }
  if (a.balance_large) samples = balance_large_objects(std::move(samples), a.seed);

  Output out(a.output);
  out.line(io::to_json(make_manifest(a.seed, digest, samples)).dump());
  for (const auto& s : samples) out.line(io::to_json(s).dump());
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string config, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> images;
};

int run_synth(const SynthArgs& a, const Common& c, RunManifest& m) {
  using namespace locseq;
  std::ifstream cf(a.config);
  std::stringstream buf;
  buf << cf.rdbuf();
  json cj;
  try {
    cj = json::parse(buf.str());
  } catch (const json::exception& e) {
    throw InputError("synth config: " + std::string(e.what()));
  }
  m.inputs[a.config] = file_digest(a.config);
  synth::SynthConfig cfg = io::synth_config_from_json(cj);
  if (a.seed) cfg.seed = *a.seed;
  if (a.images) cfg.images = *a.images;
  cfg.validate();

  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw InputError("cannot create " + a.out_dir + ": " + ec.message());
  Output gt_out((fs::path(a.out_dir) / "ground_truth.jsonl").string());
  Output trace_out((fs::path(a.out_dir) / "traces.jsonl").string());
  {
    Output cfg_out((fs::path(a.out_dir) / "config.json").string());
    cfg_out.line(io::to_json(cfg).dump(2));
  }

  std::vector<std::pair<std::string, std::string>> rows;
  for (std::size_t base = 0; base < cfg.images; base += kChunkLines) {
    const std::size_t n = std::min(kChunkLines, cfg.images - base);
    rows.assign(n, {});
    parallel_for(n, c.workers, [&](std::size_t k) {
      const std::size_t i = base + k;
      const auto scene = synth::generate_scene(cfg, i);
      const auto sim = synth::simulate_predictions(scene, cfg, i);
      rows[k] = {io::to_json(scene).dump(),
                 io::to_json(io::TraceRecord{sim.image_id, sim.trace, SequenceOrder::LabelFirst}).dump()};
    });
    for (const auto& [g, t] : rows) {
      gt_out.line(g);
      trace_out.line(t);
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------

CLI::Validator unit_interval_open_left() {
  return CLI::Validator(
      [](std::string& s) -> std::string {
        double v = 0;
        try {
          std::size_t used = 0;
          v = std::stod(s, &used);
          if (used != s.size()) return "not a number: " + s;
        } catch (const std::exception&) {
          return "not a number: " + s;
        }
        return v > 0.0 && v <= 1.0 ? std::string() : "value " + s + " not in (0,1]";
      },
      "(0,1]");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"locseq: location-sequence codec, scoring and evaluation tools"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", LOCSEQ_VERSION);

  Common common;
  app.add_option("--workers", common.workers, "worker threads")
      ->envname("LOCSEQ_WORKERS")
      ->check(CLI::Range(1u, 256u))
      ->capture_default_str();
  app.add_option("--manifest", common.manifest_path, "write the run manifest here instead of stderr");

  const std::vector<std::string> orders = {"label_first", "coord_first"};
  const std::vector<std::string> modes = {"strict", "lenient"};

  CodecArgs enc, dec;
  auto add_codec = [&](CLI::App* cmd, CodecArgs& a) {
    cmd->add_option("input", a.input, "input JSONL (- for stdin)")->required();
    cmd->add_option("-o,--output", a.output, "output JSONL (default stdout)");
    cmd->add_option("--order", a.order)->check(CLI::IsMember(orders))->capture_default_str();
    cmd->add_option("--mode", a.mode)->check(CLI::IsMember(modes))->capture_default_str();
    cmd->add_option("--diagnostics", a.diagnostics, "diagnostics file (lenient default: <output>.diag.jsonl)");
  };
  CLI::App* encode = app.add_subcommand("encode", "prediction records -> sequence records");
  add_codec(encode, enc);
  CLI::App* decode = app.add_subcommand("decode", "sequence records -> prediction records");
  add_codec(decode, dec);

  ScoreArgs sc;
  CLI::App* score = app.add_subcommand("score", "token traces -> scored prediction records");
  score->add_option("input", sc.input, "trace JSONL (- for stdin)")->required();
  score->add_option("-o,--output", sc.output);
  score->add_option("--order", sc.order, "order when a trace record has none")
      ->check(CLI::IsMember(orders))
      ->capture_default_str();
  score->add_option("--q", sc.config.q, "label/location weight")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  score->add_option("--use-label", sc.config.use_label_score)->capture_default_str();
  score->add_option("--use-loc", sc.config.use_loc_score)->capture_default_str();
  score->add_option("--default-score", sc.config.default_score)
      ->check(unit_interval_open_left())
      ->capture_default_str();
  score->add_flag("--breakdown", sc.breakdown, "also write label/location scores");
  score->add_option("--diagnostics", sc.diagnostics);

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "evaluate predictions against ground truth");
  eval->add_option("predictions", ev.predictions)->required()->check(CLI::ExistingFile);
  eval->add_option("ground_truth", ev.ground_truth)->required()->check(CLI::ExistingFile);
  eval->add_option("--task", ev.task)->check(CLI::IsMember({"det", "rec", "ground"}))->capture_default_str();
  eval->add_option("--order", ev.order)->check(CLI::IsMember(orders))->capture_default_str();
  eval->add_option("--default-score", ev.default_score)->check(unit_interval_open_left())->capture_default_str();
  eval->add_option("--iou", ev.threshold, "IoU threshold for rec and ground")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  eval->add_option("--report", ev.report, "machine-readable JSON report");

  BuildArgs bd;
  CLI::App* build = app.add_subcommand("build", "source annotations -> instruction samples");
  build->add_option("sources", bd.sources)->required()->check(CLI::ExistingFile);
  build->add_option("--templates", bd.templates)->required()->check(CLI::ExistingDirectory);
  build->add_option("--scenario", bd.scenario)
      ->check(CLI::IsMember({"all", "single_referent", "one_category_multi", "non_existing",
                             "multi_category_multi", "1v1", "1vn", "none", "nvn"}))
      ->capture_default_str();
  build->add_option("--seed", bd.seed)->capture_default_str();
  build->add_option("-o,--output", bd.output);
  build->add_option("--diagnostics", bd.diagnostics);
  build->add_option("--lexicon", bd.lexicon, "attribute lexicon for composed negatives")->check(CLI::ExistingFile);
  build->add_option("--composed-negatives", bd.composed_negatives, "per image, with --lexicon");
  build->add_option("--category-set", bd.category_set)
      ->check(CLI::IsMember({"per-image", "all"}))
      ->capture_default_str();
  build->add_option("--max-categories", bd.max_categories, "0 keeps all")->capture_default_str();
  build->add_option("--max-templates", bd.max_templates)->check(CLI::PositiveNumber)->capture_default_str();
  build->add_flag("--one-negative-per-image", bd.one_negative_per_image);
  build->add_flag("--balance-large", bd.balance_large, "subsample large-object samples");

  SynthArgs sy;
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic ground-truth and trace bundle");
  synth->add_option("--config", sy.config)->required()->check(CLI::ExistingFile);
  synth->add_option("--out-dir", sy.out_dir)->required();
  synth->add_option("--seed", sy.seed, "override the config seed");
  synth->add_option("--images", sy.images, "override the config image count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  RunManifest manifest;
  manifest.command = cmd->get_name();
  record_flags(app, manifest);
  record_flags(*cmd, manifest);

  int rc = 0;
  try {
    if (cmd == encode) rc = run_encode(enc, common, manifest);
    else if (cmd == decode) rc = run_decode(dec, common, manifest);
    else if (cmd == score) rc = run_score(sc, common, manifest);
    else if (cmd == eval) rc = run_eval(ev, common, manifest);
    else if (cmd == build) rc = run_build(bd, common, manifest);
    else rc = run_synth(sy, common, manifest);
  } catch (const locseq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    rc = kExitData;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    rc = kExitData;
  }
  std::cout.flush();

  const std::string line = manifest.to_json().dump();
  if (common.manifest_path.empty()) {
    std::cerr << line << '\n';
  } else {
    std::ofstream mf(common.manifest_path, std::ios::binary);
    mf << line << '\n';
  }
  return rc;
}
