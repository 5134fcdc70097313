#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grca/geometry.hpp"

namespace grca {

/// The four geometric fields of the structured output, in canonical order.
enum class Field : int { kBbox2d = 0, kBbox3d = 1, kKpts2d = 2, kKpts3d = 3 };

inline constexpr std::size_t kNumFields = 4;
inline constexpr std::array<Field, kNumFields> kGeometricFields = {
    Field::kBbox2d, Field::kBbox3d, Field::kKpts2d, Field::kKpts3d};

constexpr std::size_t index(Field f) { return static_cast<std::size_t>(f); }
std::string_view field_name(Field f);

enum class FieldStatus { kOk, kMissing, kDuplicated, kMalformed };
std::string_view status_name(FieldStatus s);

/// Half-open character interval [start, end) into the raw response.
struct CharSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  bool operator==(const CharSpan&) const = default;
};

struct ParsedOutput {
  std::string answer;
  std::string description;
  FieldStatus answer_status = FieldStatus::kMissing;
  FieldStatus description_status = FieldStatus::kMissing;

  std::array<int, 4> bbox2d{};
  std::array<int, 6> bbox3d{};
  std::vector<std::array<int, 2>> kpts2d;
  std::vector<std::array<int, 3>> kpts3d;

  std::array<FieldStatus, kNumFields> status{FieldStatus::kMissing, FieldStatus::kMissing,
                                             FieldStatus::kMissing, FieldStatus::kMissing};
  /// Present iff the matching status is kOk; covers the bracketed payload only.
  std::array<std::optional<CharSpan>, kNumFields> span;

  /// Length of the text this was parsed from (0 for hand-built values).
  std::size_t text_length = 0;

  FieldStatus status_of(Field f) const { return status[index(f)]; }
  bool ok(Field f) const { return status_of(f) == FieldStatus::kOk; }
  void set_failed(Field f, FieldStatus s);
  /// Equality of values and statuses; spans and text_length are not compared.
  bool same_values(const ParsedOutput& other) const;
};

/// Best-effort parse of a generated response. Never throws: every field ends
/// up with a value and span or with a failure status. Coordinates must be
/// integer bins in [0, bin_count].
ParsedOutput parse_structured_output(std::string_view text, int bin_count = 1000);

struct CanonicalText {
  std::string text;
  std::array<CharSpan, kNumFields> spans;
};

/// Deterministic serialization: key order answer, description, bbox2d,
/// bbox3d, kpts2d, kpts3d; ", " and ": " separators. Throws Error
/// "incomplete fields" unless all six fields are ok.
CanonicalText serialize_canonical(const ParsedOutput& fields);

/// Per-axis ranges used to turn bins into image/world coordinates.
struct FieldRanges {
  QuantRange x2d{0.0, 1.0, 1000};
  QuantRange y2d{0.0, 1.0, 1000};
  QuantRange x3d{-1.0, 1.0, 1000};
  QuantRange y3d{-1.0, 1.0, 1000};
  QuantRange z3d{-1.0, 1.0, 1000};

  void validate() const;
  static FieldRanges image(double width, double height);
};

struct GeometricValues {
  std::optional<Box2D> box2d;
  std::optional<Box3D> box3d;
  std::optional<KeypointSet2D> kpts2d;
  std::optional<KeypointSet3D> kpts3d;
  /// Field status after dequantization; out-of-range bins demote to malformed.
  std::array<FieldStatus, kNumFields> status{};
  /// Set when an inverted min/max pair of a box was swapped.
  std::array<bool, kNumFields> swapped{};
};

GeometricValues dequantize_fields(const ParsedOutput& p, const FieldRanges& ranges);

/// Quantizes continuous boxes and keypoints into a fully populated output.
ParsedOutput quantize_fields(const Box2D& box2d, const Box3D& box3d, const KeypointSet2D& kpts2d,
                             const KeypointSet3D& kpts3d, const FieldRanges& ranges);

}  // namespace grca
