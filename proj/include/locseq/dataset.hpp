#pragma once

// Reformats detection / referring-expression / grounding annotations into
// instruction samples for the four localization scenarios.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "locseq/codec.hpp"
#include "locseq/error.hpp"
#include "locseq/metrics.hpp"
#include "locseq/parallel.hpp"
#include "locseq/random.hpp"

namespace locseq::dataset {

enum class Scenario { SingleReferent, OneCategoryMulti, NonExisting, MultiCategoryMulti };

inline constexpr std::array<Scenario, 4> kAllScenarios = {
    Scenario::SingleReferent, Scenario::OneCategoryMulti, Scenario::NonExisting,
    Scenario::MultiCategoryMulti};

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::SingleReferent: return "single_referent";
    case Scenario::OneCategoryMulti: return "one_category_multi";
    case Scenario::NonExisting: return "non_existing";
    case Scenario::MultiCategoryMulti: return "multi_category_multi";
  }
  return "unknown";
}

// Accepts the canonical names plus the short forms 1v1, 1vn, none, nvn.
inline std::optional<Scenario> parse_scenario(std::string_view name) {
  if (name == "single_referent" || name == "1v1") return Scenario::SingleReferent;
  if (name == "one_category_multi" || name == "1vn") return Scenario::OneCategoryMulti;
  if (name == "non_existing" || name == "none") return Scenario::NonExisting;
  if (name == "multi_category_multi" || name == "nvn") return Scenario::MultiCategoryMulti;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Source records

struct ImageSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct ReferentAnnotation {
  std::string expr;
  PixelBox box;
};

struct ObjectAnnotation {
  std::string category;
  PixelBox box;
};

struct PhraseAnnotation {
  std::string phrase;
  std::vector<PixelBox> boxes;
};

struct SourceRecord {
  std::string image_id;
  std::string source;     // originating dataset, e.g. "refcoco"
  std::string record_id;  // falls back to image_id when empty
  ImageSize size;
  std::optional<ImageSize> actual_size;  // probed size of the image file, if known
  std::vector<ReferentAnnotation> referents;
  std::vector<ObjectAnnotation> objects;
  std::vector<PhraseAnnotation> phrases;
  std::vector<std::string> negatives;

  const std::string& key() const { return record_id.empty() ? image_id : record_id; }
};

// A record as read from disk: parsed, or the reason it could not be.
struct LoadedRecord {
  std::string id;
  std::optional<SourceRecord> record;
  std::string error;
};

inline std::string record_problem(const SourceRecord& r) {
  if (r.image_id.empty()) return "missing image_id";
  if (r.size.width <= 0 || r.size.height <= 0) return "non-positive image size";
  const double w = r.size.width, h = r.size.height;
  auto bad = [&](const PixelBox& b) {
    return !(b.x1 >= 0 && b.y1 >= 0 && b.x1 <= b.x2 && b.y1 <= b.y2 && b.x2 <= w && b.y2 <= h);
  };
  for (const auto& a : r.referents) {
    if (bad(a.box)) return "referent box outside image bounds";
  }
  for (const auto& a : r.objects) {
    if (bad(a.box)) return "object box outside image bounds";
  }
  for (const auto& p : r.phrases) {
    for (const auto& b : p.boxes) {
      if (bad(b)) return "phrase box outside image bounds";
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Filtering

inline constexpr int kMinLongestEdge = 250;

enum class DropReason { TooSmall, SizeMismatch, Unreadable, InvalidAnnotation };

inline std::string_view to_string(DropReason r) {
  switch (r) {
    case DropReason::TooSmall: return "too-small";
    case DropReason::SizeMismatch: return "size-mismatch";
    case DropReason::Unreadable: return "unreadable";
    case DropReason::InvalidAnnotation: return "invalid-annotation";
  }
  return "unknown";
}

struct DroppedRecord {
  std::string id;
  DropReason reason;
  std::string detail;
};

struct FilterResult {
  std::vector<SourceRecord> kept;
  std::vector<DroppedRecord> dropped;
};

// Returns the actual pixel size of a record's image, or nullopt if unknown.
using SizeProbe = std::function<std::optional<ImageSize>(const SourceRecord&)>;

// Drops images whose longest edge is under 250 px and images whose declared
// size disagrees with the probed one. Never throws on bad records.
inline FilterResult filter_images(std::span<const LoadedRecord> records,
                                  const SizeProbe& probe = {}) {
  FilterResult out;
  for (const LoadedRecord& lr : records) {
    if (!lr.record) {
      out.dropped.push_back({lr.id, DropReason::Unreadable, lr.error});
      continue;
    }
    const SourceRecord& r = *lr.record;
    if (auto why = record_problem(r); !why.empty()) {
      out.dropped.push_back({lr.id, DropReason::InvalidAnnotation, why});
      continue;
    }
    const int longest = std::max(r.size.width, r.size.height);
    if (longest < kMinLongestEdge) {
      out.dropped.push_back({lr.id, DropReason::TooSmall,
                             "longest edge " + std::to_string(longest) + " < " +
                                 std::to_string(kMinLongestEdge)});
      continue;
    }
    const std::optional<ImageSize> actual = probe ? probe(r) : r.actual_size;
    if (actual && *actual != r.size) {
      out.dropped.push_back({lr.id, DropReason::SizeMismatch,
                             "declared " + std::to_string(r.size.width) + "x" +
                                 std::to_string(r.size.height) + ", actual " +
                                 std::to_string(actual->width) + "x" +
                                 std::to_string(actual->height)});
      continue;
    }
    out.kept.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Templates

inline constexpr std::string_view kExprMarker = "<expr>";
inline constexpr std::string_view kImageMarker = "<image>";
inline constexpr std::string_view kCategorySetMarker = "<category set>";

namespace detail {

struct PlaceholderCounts {
  std::size_t expr = 0, image = 0, category_set = 0;
  std::vector<std::string> unknown;
};

inline PlaceholderCounts count_placeholders(std::string_view text) {
  PlaceholderCounts c;
  std::size_t pos = 0;
  while ((pos = text.find('<', pos)) != std::string_view::npos) {
    const std::size_t close = text.find('>', pos + 1);
    if (close == std::string_view::npos) break;
    const std::string_view inner = text.substr(pos + 1, close - pos - 1);
    const bool word_like = !inner.empty() && inner.find('<') == std::string_view::npos &&
                           std::all_of(inner.begin(), inner.end(), [](unsigned char ch) {
                             return std::isalpha(ch) || ch == ' ' || ch == '_';
                           });
    if (!word_like) {
      pos += 1;
      continue;
    }
    const std::string_view token = text.substr(pos, close - pos + 1);
    if (token == kExprMarker) ++c.expr;
    else if (token == kImageMarker) ++c.image;
    else if (token == kCategorySetMarker) ++c.category_set;
    else c.unknown.emplace_back(token);
    pos = close + 1;
  }
  return c;
}

}  // namespace detail

inline bool has_placeholder(std::string_view text) {
  const auto c = detail::count_placeholders(text);
  return c.expr + c.image + c.category_set > 0;
}

class Template {
 public:
  static Template parse(std::string text, Scenario scenario, std::string source_id = {}) {
    const auto c = detail::count_placeholders(text);
    if (!c.unknown.empty()) {
      throw TemplateError("unknown placeholder " + c.unknown.front() + " in template: " + text);
    }
    const bool wants_set = scenario == Scenario::MultiCategoryMulti;
    if (wants_set ? (c.category_set != 1 || c.expr != 0) : (c.expr != 1 || c.category_set != 0)) {
      throw TemplateError(std::string("template for ") + std::string(to_string(scenario)) +
                          " must contain exactly one " +
                          std::string(wants_set ? kCategorySetMarker : kExprMarker) + ": " + text);
    }
    Template t;
    t.text_ = std::move(text);
    t.scenario_ = scenario;
    t.source_id_ = std::move(source_id);
    return t;
  }

  const std::string& text() const { return text_; }
  Scenario scenario() const { return scenario_; }
  const std::string& source_id() const { return source_id_; }

 private:
  std::string text_;
  Scenario scenario_ = Scenario::SingleReferent;
  std::string source_id_;
};

// One referent/phrase, or a category set.
using TemplateArgs = std::variant<std::string, std::vector<std::string>>;

// Category sets render comma+space joined, with nothing appended.
inline std::string join_categories(std::span<const std::string> categories) {
  std::string out;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (i) out += ", ";
    out += categories[i];
  }
  return out;
}

inline std::string instantiate_template(const Template& tmpl, const TemplateArgs& args) {
  const std::string& text = tmpl.text();
  const auto counts = detail::count_placeholders(text);
  const auto* expr = std::get_if<std::string>(&args);
  const auto* cats = std::get_if<std::vector<std::string>>(&args);
  if (expr && (counts.expr != 1 || counts.category_set != 0)) {
    throw TemplateError("template does not take a single <expr>: " + text);
  }
  if (cats && (counts.category_set != 1 || counts.expr != 0)) {
    throw TemplateError("template does not take a <category set>: " + text);
  }
  if (expr && expr->empty()) throw TemplateError("empty referent text");
  if (cats && cats->empty()) throw TemplateError("empty category set");
  const std::string replacement = expr ? *expr : join_categories(*cats);

  std::string out;
  out.reserve(text.size() + replacement.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::string_view rest = std::string_view(text).substr(pos);
    if (rest.starts_with(kExprMarker)) {
      out += replacement;
      pos += kExprMarker.size();
    } else if (rest.starts_with(kCategorySetMarker)) {
      out += replacement;
      pos += kCategorySetMarker.size();
    } else if (rest.starts_with(kImageMarker)) {
      // The image is attached positionally; drop the marker and the
      // whitespace that separated it from the preceding word.
      while (!out.empty() && (out.back() == ' ' || out.back() == '\t')) out.pop_back();
      pos += kImageMarker.size();
      if (out.empty()) {
        while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
      }
    } else {
      out.push_back(text[pos++]);
    }
  }
  while (!out.empty() && (out.back() == ' ' || out.back() == '\t')) out.pop_back();
  if (has_placeholder(out)) {
    throw TemplateError("instantiated instruction still contains a placeholder: " + out);
  }
  return out;
}

inline std::string template_file_name(Scenario s) { return std::string(to_string(s)) + ".txt"; }

// Reads `<dir>/<scenario>.txt`, one template per line; blank lines and lines
// starting with '#' are skipped. Non-existing referents reuse the
// single-referent templates when no dedicated file exists.
inline std::vector<Template> load_templates(const std::filesystem::path& dir, Scenario scenario,
                                            std::size_t max_templates = 60) {
  namespace fs = std::filesystem;
  fs::path file = dir / template_file_name(scenario);
  if (!fs::exists(file) && scenario == Scenario::NonExisting) {
    file = dir / template_file_name(Scenario::SingleReferent);
  }
  std::ifstream in(file);
  if (!in) throw InputError("cannot open template file " + file.string());
  std::vector<Template> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line) && out.size() < max_templates) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    out.push_back(Template::parse(line, scenario,
                                  file.filename().string() + ":" + std::to_string(line_no)));
  }
  if (out.empty()) throw InputError("no templates in " + file.string());
  return out;
}

// ---------------------------------------------------------------------------
// Negatives

struct AttributeLexicon {
  std::vector<std::string> colors;     // "a {color} {category}"
  std::vector<std::string> positions;  // "the {category} on the {position}"
  std::vector<std::string> clothing;   // "{category} wearing {clothing}"
  std::vector<std::string> categories;  // used when the caller supplies none

  bool empty() const { return colors.empty() && positions.empty() && clothing.empty(); }
};

struct NegativeResult {
  std::vector<std::string> negatives;
  std::vector<std::string> diagnostics;
};

namespace detail {

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// Builds fine-grained referents ("a white cat") that are absent from the
// image: a candidate is rejected if it equals or is contained in any
// positive label (case-insensitive).
inline NegativeResult compose_negatives(std::span<const std::string> categories,
                                        std::span<const std::string> positive_labels,
                                        const AttributeLexicon& lexicon, std::size_t count,
                                        Rng& rng) {
  NegativeResult out;
  if (lexicon.empty()) {
    out.diagnostics.push_back("attribute lexicon is empty; no negatives composed");
    return out;
  }
  std::vector<std::string> cats(categories.begin(), categories.end());
  if (cats.empty()) cats = lexicon.categories;
  if (cats.empty()) {
    out.diagnostics.push_back("no categories to compose negatives with");
    return out;
  }
  std::sort(cats.begin(), cats.end());
  cats.erase(std::unique(cats.begin(), cats.end()), cats.end());

  std::vector<std::string> candidates;
  for (const auto& cat : cats) {
    for (const auto& c : lexicon.colors) candidates.push_back("a " + c + " " + cat);
    for (const auto& p : lexicon.positions) candidates.push_back("the " + cat + " on the " + p);
    for (const auto& w : lexicon.clothing) candidates.push_back(cat + " wearing " + w);
  }
  rng.shuffle(std::span<std::string>(candidates));

  std::vector<std::string> positives;
  for (const auto& p : positive_labels) positives.push_back(detail::lowercase(p));
  std::set<std::string> seen;
  for (const auto& cand : candidates) {
    if (out.negatives.size() == count) break;
    const std::string low = detail::lowercase(cand);
    const bool collides = std::any_of(positives.begin(), positives.end(), [&](const auto& p) {
      return p.find(low) != std::string::npos;
    });
    if (collides || !seen.insert(low).second) continue;
    out.negatives.push_back(cand);
  }
  if (out.negatives.size() < count) {
    out.diagnostics.push_back("combination space exhausted: composed " +
                              std::to_string(out.negatives.size()) + " of " +
                              std::to_string(count) + " negatives");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario assembly

struct ScenarioSample {
  std::string image_id;
  Scenario scenario = Scenario::SingleReferent;
  std::string instruction;
  std::string target;  // label-first sequence or "None"
  std::string source;
  std::string record_id;
  ImageSize size;

  friend bool operator==(const ScenarioSample&, const ScenarioSample&) = default;
};

enum class CategorySetMode { PerImage, AllDataset };

struct BuildOptions {
  std::uint64_t seed = 0;
  CategorySetMode category_set = CategorySetMode::PerImage;
  std::size_t max_categories = 0;  // 0: every category of the image
  bool one_negative_per_image = false;
  std::optional<AttributeLexicon> lexicon;
  std::size_t composed_negatives_per_image = 0;
  unsigned workers = 1;
};

struct BuildResult {
  std::vector<ScenarioSample> samples;
  std::vector<std::string> diagnostics;
};

namespace detail {

inline NormBox normalize_box(const PixelBox& b, const ImageSize& size) {
  const double w = size.width, h = size.height;
  auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return NormBox::from_normalized(unit(b.x1 / w), unit(b.y1 / h), unit(b.x2 / w), unit(b.y2 / h));
}

struct RecordOutput {
  std::vector<ScenarioSample> samples;
  std::vector<std::string> diagnostics;
};

inline RecordOutput build_record(const SourceRecord& r, Scenario scenario,
                                 std::span<const Template> templates, const BuildOptions& options,
                                 const std::vector<std::string>& dataset_categories) {
  RecordOutput out;
  Rng rng(derive_seed(options.seed, std::string(to_string(scenario)) + "/" + r.key()));
  auto diag = [&](const std::string& msg) { out.diagnostics.push_back(r.key() + ": " + msg); };
  auto emit = [&](const TemplateArgs& args, const PredictionSet& target) {
    const Template& t = templates[rng.below(templates.size())];
    ScenarioSample s;
    s.image_id = r.image_id;
    s.scenario = scenario;
    s.source = r.source;
    s.record_id = r.key();
    s.size = r.size;
    try {
      s.instruction = instantiate_template(t, args);
      s.target = serialize(target, SequenceOrder::LabelFirst);
    } catch (const Error& e) {
      diag(std::string("skipped sample: ") + e.what());
      return;
    }
    out.samples.push_back(std::move(s));
  };
  auto detection = [&](const std::string& label, const PixelBox& box) {
    return Detection{label, normalize_box(box, r.size), std::nullopt};
  };

  switch (scenario) {
    case Scenario::SingleReferent:
      if (r.referents.empty()) diag("no referent annotations");
      for (const auto& a : r.referents) {
        emit(a.expr, PredictionSet::objects({detection(a.expr, a.box)}));
      }
      break;
    case Scenario::OneCategoryMulti:
      if (r.phrases.empty()) diag("no phrase annotations");
      for (const auto& p : r.phrases) {
        if (p.boxes.empty()) {
          diag("phrase \"" + p.phrase + "\" has no boxes");
          continue;
        }
        std::vector<Detection> dets;
        for (const auto& b : p.boxes) dets.push_back(detection(p.phrase, b));
        emit(p.phrase, PredictionSet::objects(std::move(dets)));
      }
      break;
    case Scenario::MultiCategoryMulti: {
      if (r.objects.empty()) {
        diag("no object annotations");
        break;
      }
      std::vector<std::string> present;
      for (const auto& o : r.objects) {
        if (std::find(present.begin(), present.end(), o.category) == present.end()) {
          present.push_back(o.category);
        }
      }
      std::vector<std::string> selected = present;
      if (options.max_categories > 0 && present.size() > options.max_categories) {
        std::vector<std::string> pool = present;
        rng.shuffle(std::span<std::string>(pool));
        pool.resize(options.max_categories);
        selected.clear();
        for (const auto& c : present) {
          if (std::find(pool.begin(), pool.end(), c) != pool.end()) selected.push_back(c);
        }
      }
      std::vector<Detection> dets;
      for (const auto& o : r.objects) {
        if (std::find(selected.begin(), selected.end(), o.category) != selected.end()) {
          dets.push_back(detection(o.category, o.box));
        }
      }
      const auto& listed =
          options.category_set == CategorySetMode::AllDataset ? dataset_categories : selected;
      emit(listed, PredictionSet::objects(std::move(dets)));
      break;
    }
    case Scenario::NonExisting: {
      std::vector<std::string> negatives = r.negatives;
      if (options.lexicon && options.composed_negatives_per_image > 0) {
        std::vector<std::string> positives, cats;
        for (const auto& a : r.referents) positives.push_back(a.expr);
        for (const auto& o : r.objects) {
          positives.push_back(o.category);
          cats.push_back(o.category);
        }
        for (const auto& p : r.phrases) {
          positives.push_back(p.phrase);
          cats.push_back(p.phrase);
        }
        auto composed = compose_negatives(cats, positives, *options.lexicon,
                                          options.composed_negatives_per_image, rng);
        for (auto& d : composed.diagnostics) diag(d);
        negatives.insert(negatives.end(), composed.negatives.begin(), composed.negatives.end());
      }
      if (negatives.empty()) {
        diag("no negative categories");
        break;
      }
      if (options.one_negative_per_image) {
        negatives = {negatives[rng.below(negatives.size())]};
      }
      for (const auto& neg : negatives) emit(neg, PredictionSet::none());
      break;
    }
  }
  return out;
}

}  // namespace detail

// Deterministic for a fixed seed and input order regardless of worker
// count: each record draws from its own generator seeded by (seed,
// scenario, record id). Duplicate (image, instruction, target) samples are
// dropped, keeping the first.
inline BuildResult build_scenario(std::span<const SourceRecord> records, Scenario scenario,
                                  std::span<const Template> templates,
                                  const BuildOptions& options = {}) {
  if (templates.empty()) throw TemplateError("no templates supplied");
  for (const auto& t : templates) {
    if (t.scenario() != scenario &&
        !(scenario == Scenario::NonExisting && t.scenario() == Scenario::SingleReferent)) {
      throw TemplateError("template " + t.source_id() + " belongs to another scenario");
    }
  }
  std::vector<std::string> dataset_categories;
  if (options.category_set == CategorySetMode::AllDataset) {
    std::set<std::string> all;
    for (const auto& r : records) {
      for (const auto& o : r.objects) all.insert(o.category);
    }
    dataset_categories.assign(all.begin(), all.end());
  }

  std::vector<detail::RecordOutput> per_record(records.size());
  parallel_for(records.size(), options.workers, [&](std::size_t i) {
    per_record[i] = detail::build_record(records[i], scenario, templates, options, dataset_categories);
  });

  BuildResult result;
  std::set<std::string> seen;
  for (auto& ro : per_record) {
    for (auto& d : ro.diagnostics) result.diagnostics.push_back(std::move(d));
    for (auto& s : ro.samples) {
      std::string key = s.image_id + '\x1f' + s.instruction + '\x1f' + s.target;
      if (!seen.insert(std::move(key)).second) continue;
      result.samples.push_back(std::move(s));
    }
  }
  return result;
}

inline bool has_large_object(const ScenarioSample& s) {
  if (s.size.width <= 0 || s.size.height <= 0) return false;
  const auto parsed = parse(s.target, SequenceOrder::LabelFirst, ParseMode::Strict);
  for (const auto& d : parsed.predictions.detections()) {
    const PixelBox px = denormalize(d.box, s.size.width, s.size.height);
    if (area_bucket(px.area()) == AreaBucket::Large) return true;
  }
  return false;
}

// Keeps every sample whose boxes are all small/medium and subsamples the
// large-object ones down to the same count (never upsamples). Output keeps
// the input order.
inline std::vector<ScenarioSample> balance_large_objects(std::vector<ScenarioSample> samples,
                                                         std::uint64_t seed) {
  std::vector<std::size_t> large;
  std::vector<bool> drop(samples.size(), false);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (has_large_object(samples[i])) {
      large.push_back(i);
      drop[i] = true;
    }
  }
  const std::size_t small_medium = samples.size() - large.size();
  if (large.size() <= small_medium) return samples;
  Rng rng(derive_seed(seed, "balance-large"));
  rng.shuffle(std::span<std::size_t>(large));
  large.resize(small_medium);
  for (std::size_t i : large) drop[i] = false;
  std::vector<ScenarioSample> out;
  out.reserve(small_medium * 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!drop[i]) out.push_back(std::move(samples[i]));
  }
  return out;
}

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string source_digest;
  std::map<std::string, std::size_t> counts;  // per scenario name
};

inline DatasetManifest make_manifest(std::uint64_t seed, std::string source_digest,
                                     std::span<const ScenarioSample> samples) {
  DatasetManifest m{seed, std::move(source_digest), {}};
  for (Scenario s : kAllScenarios) m.counts[std::string(to_string(s))] = 0;
  for (const auto& s : samples) ++m.counts[std::string(to_string(s.scenario))];
  return m;
}

}  // namespace locseq::dataset
