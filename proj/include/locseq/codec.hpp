#pragma once

// Textual localization sequences: "label-[x1,y1,x2,y2]" joined by "&", or
// the literal "None". Coordinates are normalized to [0,1] and stored as
// integer thousandths.

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <variant>
#include <vector>

#include "locseq/error.hpp"

namespace locseq {

inline constexpr int kCoordScale = 1000;

static_assert(std::numeric_limits<long double>::digits >= 63,
              "quantize_coord needs an exact double*1000 product");

// Nearest multiple of 0.001, returned in thousandths. Rounds the exact binary
// value of `value`; ties go away from zero.
inline int quantize_coord(double value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw RangeError("coordinate " + std::to_string(value) + " outside [0,1]");
  }
  const long double scaled = static_cast<long double>(value) * 1000.0L;
  return static_cast<int>(std::roundl(scaled));
}

class NormBox {
 public:
  NormBox() = default;

  static NormBox from_thousandths(int x1, int y1, int x2, int y2) {
    for (int v : {x1, y1, x2, y2}) {
      if (v < 0 || v > kCoordScale) {
        throw ValidationError("box coordinate outside [0,1]");
      }
    }
    if (x1 > x2 || y1 > y2) {
      throw ValidationError("box corners inverted (need x1<=x2, y1<=y2)");
    }
    return NormBox({x1, y1, x2, y2});
  }

  static NormBox from_normalized(double x1, double y1, double x2, double y2) {
    return from_thousandths(quantize_coord(x1), quantize_coord(y1), quantize_coord(x2),
                            quantize_coord(y2));
  }

  const std::array<int, 4>& thousandths() const { return milli_; }
  double coord(std::size_t i) const { return milli_[i] / static_cast<double>(kCoordScale); }
  double x1() const { return coord(0); }
  double y1() const { return coord(1); }
  double x2() const { return coord(2); }
  double y2() const { return coord(3); }

  friend bool operator==(const NormBox&, const NormBox&) = default;

 private:
  explicit NormBox(std::array<int, 4> milli) : milli_(milli) {}

  std::array<int, 4> milli_{0, 0, 0, 0};
};

// Returns an empty string when `label` is usable, otherwise the reason.
inline std::string label_problem(std::string_view label) {
  if (label.empty()) return "empty label";
  for (char c : label) {
    if (c == '&') return "label contains '&'";
    if (c == '\n' || c == '\r') return "label contains a newline";
  }
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\v' || c == '\f'; };
  if (is_space(label.front()) || is_space(label.back())) {
    return "label has leading or trailing whitespace";
  }
  return {};
}

struct Detection {
  std::string label;
  NormBox box;
  std::optional<double> score;

  friend bool operator==(const Detection&, const Detection&) = default;
};

class PredictionSet {
 public:
  PredictionSet() = default;

  static PredictionSet none() {
    PredictionSet p;
    p.value_ = NoneSentinel{};
    return p;
  }

  static PredictionSet objects(std::vector<Detection> detections) {
    PredictionSet p;
    p.value_ = std::move(detections);
    return p;
  }

  bool is_none() const { return std::holds_alternative<NoneSentinel>(value_); }

  // Empty for the None sentinel.
  const std::vector<Detection>& detections() const {
    static const std::vector<Detection> kEmpty;
    if (is_none()) return kEmpty;
    return std::get<std::vector<Detection>>(value_);
  }

  std::vector<Detection>& mutable_detections() {
    if (is_none()) throw ValidationError("None sentinel has no detections");
    return std::get<std::vector<Detection>>(value_);
  }

  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;

 private:
  struct NoneSentinel {
    friend bool operator==(const NoneSentinel&, const NoneSentinel&) = default;
  };

  std::variant<std::vector<Detection>, NoneSentinel> value_;
};

enum class SequenceOrder { LabelFirst, CoordFirst };

inline std::string_view to_string(SequenceOrder order) {
  return order == SequenceOrder::LabelFirst ? "label_first" : "coord_first";
}

inline std::optional<SequenceOrder> parse_order(std::string_view name) {
  if (name == "label_first") return SequenceOrder::LabelFirst;
  if (name == "coord_first") return SequenceOrder::CoordFirst;
  return std::nullopt;
}

inline constexpr std::string_view kNoneText = "None";

namespace detail {

inline void append_coord(std::string& out, int milli) {
  out.push_back(static_cast<char>('0' + milli / 1000));
  out.push_back('.');
  out.push_back(static_cast<char>('0' + milli / 100 % 10));
  out.push_back(static_cast<char>('0' + milli / 10 % 10));
  out.push_back(static_cast<char>('0' + milli % 10));
}

inline void append_block(std::string& out, const NormBox& box) {
  out.push_back('[');
  const auto& m = box.thousandths();
  for (std::size_t i = 0; i < 4; ++i) {
    if (i) out.push_back(',');
    append_coord(out, m[i]);
  }
  out.push_back(']');
}

}  // namespace detail

inline std::string serialize(const PredictionSet& preds, SequenceOrder order) {
  if (preds.is_none()) return std::string(kNoneText);
  const auto& dets = preds.detections();
  if (dets.empty()) throw ValidationError("cannot serialize an empty detection list");
  std::string out;
  out.reserve(dets.size() * 40);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = dets[i];
    if (auto why = label_problem(d.label); !why.empty()) {
      throw ValidationError(why + ": \"" + d.label + "\"");
    }
    if (i) out.push_back('&');
    if (order == SequenceOrder::LabelFirst) {
      out += d.label;
      out.push_back('-');
      detail::append_block(out, d.box);
    } else {
      detail::append_block(out, d.box);
      out.push_back('-');
      out += d.label;
    }
  }
  return out;
}

enum class ParseMode { Strict, Lenient };

struct CharRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const CharRange&, const CharRange&) = default;
};

// Character positions of one detection's fields inside the parsed text.
// Coordinate ranges cover the numeral only (no brackets or commas).
struct FieldLayout {
  CharRange label;
  std::array<CharRange, 4> coords;
};

struct ParseDiagnostic {
  std::size_t offset = 0;
  std::string segment;
  std::string message;
};

struct ParseResult {
  PredictionSet predictions;
  std::vector<ParseDiagnostic> diagnostics;
  std::vector<FieldLayout> layout;  // parallel to predictions.detections()
};

namespace detail {

inline bool is_ws(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

inline CharRange trim(std::string_view text, CharRange r) {
  while (r.begin < r.end && is_ws(text[r.begin])) ++r.begin;
  while (r.end > r.begin && is_ws(text[r.end - 1])) --r.end;
  return r;
}

struct SegmentError {
  std::size_t offset;
  std::string message;
};

struct ParsedSegment {
  Detection detection;
  FieldLayout layout;
};

using SegmentOutcome = std::variant<ParsedSegment, SegmentError>;

// Grammar: -?digits[.digits] | -?.digits. Returns thousandths clamped to [0,1000].
inline std::optional<int> parse_numeral(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && s[i] == '-') ++i;
  std::size_t int_digits = 0;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i, ++int_digits;
  std::size_t frac_digits = 0;
  if (i < s.size() && s[i] == '.') {
    ++i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i, ++frac_digits;
    if (frac_digits == 0) return std::nullopt;
  }
  if (i != s.size() || int_digits + frac_digits == 0) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  if (value < 0.0) value = 0.0;
  if (value > 1.0) value = 1.0;
  return quantize_coord(value);
}

struct BlockResult {
  NormBox box;
  std::array<CharRange, 4> coords;
};

// Parses "[a,b,c,d]" occupying exactly text[r.begin, r.end).
inline std::variant<BlockResult, SegmentError> parse_block(std::string_view text, CharRange r,
                                                           ParseMode mode) {
  if (r.size() < 2 || text[r.begin] != '[' || text[r.end - 1] != ']') {
    return SegmentError{r.begin, "coordinate block must be enclosed in [ ]"};
  }
  std::array<CharRange, 4> coords{};
  std::array<int, 4> milli{};
  std::size_t count = 0;
  std::size_t start = r.begin + 1;
  const std::size_t inner_end = r.end - 1;
  for (std::size_t pos = start; pos <= inner_end; ++pos) {
    if (pos != inner_end && text[pos] != ',') continue;
    CharRange piece{start, pos};
    if (mode == ParseMode::Lenient) piece = trim(text, piece);
    if (count < 4) {
      auto value = parse_numeral(text.substr(piece.begin, piece.size()));
      if (!value) {
        return SegmentError{piece.begin,
                            "malformed coordinate \"" +
                                std::string(text.substr(piece.begin, piece.size())) + "\""};
      }
      coords[count] = piece;
      milli[count] = *value;
    }
    ++count;
    start = pos + 1;
  }
  if (count != 4) {
    return SegmentError{r.begin, "expected 4 coordinates, found " + std::to_string(count)};
  }
  if (milli[0] > milli[2] || milli[1] > milli[3]) {
    return SegmentError{r.begin, "box corners inverted (need x1<=x2, y1<=y2)"};
  }
  return BlockResult{NormBox::from_thousandths(milli[0], milli[1], milli[2], milli[3]), coords};
}

inline SegmentOutcome make_detection(std::string_view text, CharRange label, BlockResult block,
                                     ParseMode mode) {
  if (mode == ParseMode::Lenient) label = trim(text, label);
  std::string label_text(text.substr(label.begin, label.size()));
  if (auto why = label_problem(label_text); !why.empty()) {
    return SegmentError{label.begin, why};
  }
  return ParsedSegment{Detection{std::move(label_text), block.box, std::nullopt},
                       FieldLayout{label, block.coords}};
}

inline SegmentOutcome parse_label_first(std::string_view text, CharRange seg, ParseMode mode) {
  std::optional<SegmentError> first_error;
  // The label/box boundary is the last "-[" whose block runs to the segment end.
  std::size_t search_end = seg.end;
  while (search_end > seg.begin + 1) {
    const std::string_view window = text.substr(seg.begin, search_end - seg.begin);
    const std::size_t rel = window.rfind("-[");
    if (rel == std::string_view::npos) break;
    const std::size_t dash = seg.begin + rel;
    auto block = parse_block(text, CharRange{dash + 1, seg.end}, mode);
    if (auto* ok = std::get_if<BlockResult>(&block)) {
      return make_detection(text, CharRange{seg.begin, dash}, *ok, mode);
    }
    if (!first_error) first_error = std::get<SegmentError>(block);
    search_end = dash;
  }
  if (first_error) return *first_error;
  return SegmentError{seg.begin, "missing \"-[\" between label and coordinates"};
}

inline SegmentOutcome parse_coord_first(std::string_view text, CharRange seg, ParseMode mode) {
  if (seg.size() == 0 || text[seg.begin] != '[') {
    return SegmentError{seg.begin, "coordinate block must open the segment"};
  }
  const std::size_t close = text.substr(0, seg.end).find(']', seg.begin);
  if (close == std::string_view::npos) {
    return SegmentError{seg.begin, "unterminated coordinate block"};
  }
  auto block = parse_block(text, CharRange{seg.begin, close + 1}, mode);
  if (auto* err = std::get_if<SegmentError>(&block)) return *err;
  if (close + 1 >= seg.end || text[close + 1] != '-') {
    return SegmentError{close + 1, "missing \"-\" between coordinates and label"};
  }
  return make_detection(text, CharRange{close + 2, seg.end}, std::get<BlockResult>(block), mode);
}

}  // namespace detail

// Inverse of serialize(). Strict mode throws ParseError on the first bad
// segment; lenient mode skips it and records a diagnostic. Lenient parsing
// never throws on any input.
inline ParseResult parse(std::string_view text, SequenceOrder order, ParseMode mode) {
  ParseResult result;
  const CharRange whole = detail::trim(text, CharRange{0, text.size()});
  const std::string_view body = text.substr(whole.begin, whole.size());
  if (body == kNoneText) {
    result.predictions = PredictionSet::none();
    return result;
  }
  std::vector<Detection> detections;
  if (body.empty()) {
    if (mode == ParseMode::Strict) throw ParseError("empty sequence", whole.begin);
    result.diagnostics.push_back({whole.begin, "", "empty sequence"});
    result.predictions = PredictionSet::objects({});
    return result;
  }
  std::size_t seg_start = whole.begin;
  for (std::size_t pos = whole.begin; pos <= whole.end; ++pos) {
    if (pos != whole.end && text[pos] != '&') continue;
    CharRange seg{seg_start, pos};
    if (mode == ParseMode::Lenient) seg = detail::trim(text, seg);
    seg_start = pos + 1;

    detail::SegmentOutcome outcome =
        seg.size() == 0 ? detail::SegmentOutcome{detail::SegmentError{seg.begin, "empty segment"}}
        : order == SequenceOrder::LabelFirst ? detail::parse_label_first(text, seg, mode)
                                             : detail::parse_coord_first(text, seg, mode);
    if (auto* err = std::get_if<detail::SegmentError>(&outcome)) {
      if (mode == ParseMode::Strict) throw ParseError(err->message, err->offset);
      result.diagnostics.push_back(
          {err->offset, std::string(text.substr(seg.begin, seg.size())), err->message});
      continue;
    }
    auto& parsed = std::get<detail::ParsedSegment>(outcome);
    detections.push_back(std::move(parsed.detection));
    result.layout.push_back(parsed.layout);
  }
  result.predictions = PredictionSet::objects(std::move(detections));
  return result;
}

}  // namespace locseq
