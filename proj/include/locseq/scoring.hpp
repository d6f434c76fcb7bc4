#pragma once

// Training-free confidence scores for detections decoded from an
// autoregressive token trace. A detection's label score is the product of
// its label tokens' conditional probabilities, its localization score the
// product over the four coordinates, and the final score their weighted
// geometric mean. All products are accumulated as sums of natural logs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "locseq/codec.hpp"
#include "locseq/error.hpp"

namespace locseq {

struct PromptContext {
  std::string image_ref;
  std::string instruction;
};

struct Token {
  std::string text;
  double prob = 1.0;
};

class TokenTrace {
 public:
  TokenTrace() = default;

  explicit TokenTrace(std::vector<Token> tokens, std::optional<PromptContext> context = std::nullopt)
      : tokens_(std::move(tokens)), context_(std::move(context)) {
    if (context_ && context_->instruction.empty()) {
      throw ValidationError("prompt instruction must be non-empty");
    }
    log_probs_.reserve(tokens_.size());
    offsets_.reserve(tokens_.size() + 1);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const double p = tokens_[i].prob;
      // Zero probabilities must be floored by the producer (e.g. to 1e-30).
      if (!(p > 0.0 && p <= 1.0)) {
        throw ValidationError("token " + std::to_string(i) + " probability " + std::to_string(p) +
                              " outside (0,1]");
      }
      log_probs_.push_back(std::log(p));
      offsets_.push_back(offsets_.back() + tokens_[i].text.size());
    }
  }

  const std::vector<Token>& tokens() const { return tokens_; }
  const std::optional<PromptContext>& context() const { return context_; }
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  double log_prob(std::size_t i) const { return log_probs_.at(i); }

  // Character offset where token i starts; offset(size()) is the text length.
  std::size_t offset(std::size_t i) const { return offsets_.at(i); }

  std::string text() const {
    std::string out;
    out.reserve(offsets_.back());
    for (const auto& t : tokens_) out += t.text;
    return out;
  }

 private:
  std::vector<Token> tokens_;
  std::vector<double> log_probs_;
  std::vector<std::size_t> offsets_{0};
  std::optional<PromptContext> context_;
};

// Half-open token index range.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct DetectionSpans {
  TokenSpan label;
  std::array<TokenSpan, 4> coords;  // x1, y1, x2, y2

  friend bool operator==(const DetectionSpans&, const DetectionSpans&) = default;
};

struct ScoringConfig {
  double q = 0.5;
  bool use_label_score = true;
  bool use_loc_score = true;
  double default_score = 0.99;

  void validate() const {
    if (!(q >= 0.0 && q <= 1.0)) throw RangeError("q must be in [0,1]");
    if (!(default_score > 0.0 && default_score <= 1.0)) {
      throw RangeError("default score must be in (0,1]");
    }
  }
};

struct ScoreBreakdown {
  double label_score = 1.0;
  double loc_score = 1.0;
  double final_score = 1.0;
  double final_log = 0.0;  // natural log of the unclamped final score
};

namespace detail {

inline double clamped_exp(double log_value) {
  return std::max(std::exp(log_value), std::numeric_limits<double>::denorm_min());
}

}  // namespace detail

inline double sequence_log_prob(const TokenTrace& trace) {
  if (trace.empty()) throw DomainError("sequence probability of an empty trace");
  double sum = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) sum += trace.log_prob(i);
  return sum;
}

// Probability of the whole generated sequence (product over all tokens).
inline double sequence_prob(const TokenTrace& trace) { return std::exp(sequence_log_prob(trace)); }

inline double span_log_prob(const TokenTrace& trace, TokenSpan span) {
  if (span.empty()) throw DomainError("empty token span");
  if (span.end > trace.size()) throw DomainError("token span exceeds trace length");
  double sum = 0.0;
  for (std::size_t i = span.begin; i < span.end; ++i) sum += trace.log_prob(i);
  return sum;
}

inline double label_score(const TokenTrace& trace, TokenSpan label_span) {
  return detail::clamped_exp(span_log_prob(trace, label_span));
}

inline double loc_log_score(const TokenTrace& trace, const std::array<TokenSpan, 4>& coord_spans) {
  double sum = 0.0;
  for (const TokenSpan& s : coord_spans) sum += span_log_prob(trace, s);
  return sum;
}

inline double loc_score(const TokenTrace& trace, const std::array<TokenSpan, 4>& coord_spans) {
  return detail::clamped_exp(loc_log_score(trace, coord_spans));
}

// Combines log-domain label and localization scores according to `config`.
inline ScoreBreakdown confidence_from_logs(double label_log, double loc_log,
                                           const ScoringConfig& config) {
  config.validate();
  ScoreBreakdown out;
  out.label_score = detail::clamped_exp(label_log);
  out.loc_score = detail::clamped_exp(loc_log);
  if (config.use_label_score && config.use_loc_score) {
    out.final_log = config.q * label_log + (1.0 - config.q) * loc_log;
  } else if (config.use_loc_score) {
    out.final_log = loc_log;
  } else if (config.use_label_score) {
    out.final_log = label_log;
  } else {
    out.final_log = std::log(config.default_score);
    out.final_score = config.default_score;
    return out;
  }
  out.final_score = detail::clamped_exp(out.final_log);
  return out;
}

inline ScoreBreakdown confidence(double label, double loc, const ScoringConfig& config) {
  if (!(label > 0.0 && label <= 1.0) || !(loc > 0.0 && loc <= 1.0)) {
    throw RangeError("label and localization scores must be in (0,1]");
  }
  ScoreBreakdown out = confidence_from_logs(std::log(label), std::log(loc), config);
  out.label_score = label;
  out.loc_score = loc;
  return out;
}

namespace detail {

// Tokens whose fragments intersect text[r.begin, r.end).
inline TokenSpan tokens_covering(const TokenTrace& trace, CharRange r) {
  if (r.size() == 0) throw AlignmentError("field has no characters");
  const std::size_t n = trace.size();
  // First token ending after r.begin holds character r.begin.
  std::size_t lo = 0, hi = n;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (trace.offset(mid + 1) <= r.begin) lo = mid + 1;
    else hi = mid;
  }
  const std::size_t first = lo;
  lo = first;
  hi = n;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (trace.offset(mid + 1) < r.end) lo = mid + 1;
    else hi = mid;
  }
  const std::size_t last = lo;
  if (first >= n || last >= n) throw AlignmentError("field extends past the trace text");
  return TokenSpan{first, last + 1};
}

inline bool same_objects(const PredictionSet& a, const PredictionSet& b) {
  if (a.is_none() != b.is_none()) return false;
  const auto& da = a.detections();
  const auto& db = b.detections();
  if (da.size() != db.size()) return false;
  for (std::size_t i = 0; i < da.size(); ++i) {
    if (da[i].label != db[i].label || da[i].box != db[i].box) return false;
  }
  return true;
}

}  // namespace detail

// Maps every detection's label and coordinate numerals onto token index
// ranges. A token straddling a field boundary belongs to every field it
// touches; delimiter-only tokens belong to none.
inline std::vector<DetectionSpans> align_spans(const TokenTrace& trace, const PredictionSet& parsed,
                                               SequenceOrder order) {
  const std::string text = trace.text();
  ParseResult reparsed;
  try {
    reparsed = parse(text, order, ParseMode::Strict);
  } catch (const ParseError& e) {
    throw AlignmentError(std::string("trace text does not parse: ") + e.what());
  }
  if (!detail::same_objects(reparsed.predictions, parsed)) {
    throw AlignmentError("trace text does not match the parsed predictions");
  }
  std::vector<DetectionSpans> spans;
  spans.reserve(reparsed.layout.size());
  for (const FieldLayout& layout : reparsed.layout) {
    DetectionSpans s;
    s.label = detail::tokens_covering(trace, layout.label);
    for (std::size_t c = 0; c < 4; ++c) s.coords[c] = detail::tokens_covering(trace, layout.coords[c]);
    spans.push_back(s);
  }
  return spans;
}

struct ScoredDetection {
  Detection detection;
  ScoreBreakdown breakdown;
  DetectionSpans spans;
  std::size_t position = 0;  // index in the generated sequence
};

// Full scoring pipeline with per-detection breakdowns, sorted by final score
// (descending, earlier sequence position first on ties). Returns an empty
// vector for a "None" trace; check `parse` first if the distinction matters.
inline std::vector<ScoredDetection> score_trace_detailed(const TokenTrace& trace,
                                                         SequenceOrder order,
                                                         const ScoringConfig& config) {
  config.validate();
  const std::string text = trace.text();
  const ParseResult parsed = parse(text, order, ParseMode::Strict);
  if (parsed.predictions.is_none()) return {};
  const auto spans = align_spans(trace, parsed.predictions, order);
  const auto& dets = parsed.predictions.detections();

  std::vector<ScoredDetection> scored;
  scored.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const double label_log = span_log_prob(trace, spans[i].label);
    const double loc_log = loc_log_score(trace, spans[i].coords);
    ScoredDetection sd{dets[i], confidence_from_logs(label_log, loc_log, config), spans[i], i};
    sd.detection.score = sd.breakdown.final_score;
    scored.push_back(std::move(sd));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.breakdown.final_log > b.breakdown.final_log;
  });
  return scored;
}

inline PredictionSet score_trace(const TokenTrace& trace, SequenceOrder order,
                                 const ScoringConfig& config) {
  const std::string text = trace.text();
  if (parse(text, order, ParseMode::Strict).predictions.is_none()) return PredictionSet::none();
  std::vector<Detection> out;
  for (auto& sd : score_trace_detailed(trace, order, config)) out.push_back(std::move(sd.detection));
  return PredictionSet::objects(std::move(out));
}

}  // namespace locseq
