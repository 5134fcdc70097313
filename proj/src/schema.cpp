#include "grca/schema.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <utility>

namespace grca {

std::string_view field_name(Field f) {
  switch (f) {
    case Field::kBbox2d: return "bbox2d";
    case Field::kBbox3d: return "bbox3d";
    case Field::kKpts2d: return "kpts2d";
    case Field::kKpts3d: return "kpts3d";
  }
  return "?";
}

std::string_view status_name(FieldStatus s) {
  switch (s) {
    case FieldStatus::kOk: return "ok";
    case FieldStatus::kMissing: return "missing";
    case FieldStatus::kDuplicated: return "duplicated";
    case FieldStatus::kMalformed: return "malformed";
  }
  return "?";
}

void ParsedOutput::set_failed(Field f, FieldStatus s) {
  status[index(f)] = s;
  span[index(f)].reset();
  switch (f) {
    case Field::kBbox2d: bbox2d = {}; break;
    case Field::kBbox3d: bbox3d = {}; break;
    case Field::kKpts2d: kpts2d.clear(); break;
    case Field::kKpts3d: kpts3d.clear(); break;
  }
}

bool ParsedOutput::same_values(const ParsedOutput& o) const {
  return answer == o.answer && description == o.description && answer_status == o.answer_status &&
         description_status == o.description_status && bbox2d == o.bbox2d && bbox3d == o.bbox3d &&
         kpts2d == o.kpts2d && kpts3d == o.kpts3d && status == o.status;
}

namespace {

// Minimal JSON reader that keeps the character extent of every value.
struct Node {
  enum class Kind { kObject, kArray, kString, kNumber, kBool, kNull };
  Kind kind = Kind::kNull;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string text;           // decoded string value
  bool is_bin = false;        // non-negative integer literal that fits in int
  int bin = 0;
  std::vector<Node> items;
  std::vector<std::pair<std::string, Node>> members;
};

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}

  bool parse_object_at(std::size_t pos, Node& out) {
    pos_ = pos;
    return value(out, 0) && out.kind == Node::Kind::kObject;
  }

 private:
  static constexpr int kMaxDepth = 64;

  void skip_ws() {
    while (pos_ < s_.size() &&
           (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r')) {
      ++pos_;
    }
  }

  bool literal(std::string_view word) {
    if (s_.substr(pos_, word.size()) != word) return false;
    pos_ += word.size();
    return true;
  }

  bool value(Node& out, int depth) {
    if (depth > kMaxDepth) return false;
    skip_ws();
    if (pos_ >= s_.size()) return false;
    out.start = pos_;
    const char c = s_[pos_];
    bool ok = false;
    if (c == '{') {
      ok = object(out, depth);
    } else if (c == '[') {
      ok = array(out, depth);
    } else if (c == '"') {
      out.kind = Node::Kind::kString;
      ok = string(out.text);
    } else if (c == 't' || c == 'f') {
      out.kind = Node::Kind::kBool;
      ok = literal(c == 't' ? "true" : "false");
    } else if (c == 'n') {
      out.kind = Node::Kind::kNull;
      ok = literal("null");
    } else {
      out.kind = Node::Kind::kNumber;
      ok = number(out);
    }
    out.end = pos_;
    return ok;
  }

  bool object(Node& out, int depth) {
    out.kind = Node::Kind::kObject;
    ++pos_;
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '}') {
      ++pos_;
      return true;
    }
    while (true) {
      skip_ws();
      if (pos_ >= s_.size() || s_[pos_] != '"') return false;
      std::string key;
      if (!string(key)) return false;
      skip_ws();
      if (pos_ >= s_.size() || s_[pos_] != ':') return false;
      ++pos_;
      Node child;
      if (!value(child, depth + 1)) return false;
      out.members.emplace_back(std::move(key), std::move(child));
      skip_ws();
      if (pos_ >= s_.size()) return false;
      if (s_[pos_] == ',') {
        ++pos_;
        continue;
      }
      if (s_[pos_] == '}') {
        ++pos_;
        return true;
      }
      return false;
    }
  }

  bool array(Node& out, int depth) {
    out.kind = Node::Kind::kArray;
    ++pos_;
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return true;
    }
    while (true) {
      Node child;
      if (!value(child, depth + 1)) return false;
      out.items.push_back(std::move(child));
      skip_ws();
      if (pos_ >= s_.size()) return false;
      if (s_[pos_] == ',') {
        ++pos_;
        continue;
      }
      if (s_[pos_] == ']') {
        ++pos_;
        return true;
      }
      return false;
    }
  }

  static void append_utf8(std::string& out, unsigned cp) {
    if (cp < 0x80) {
      out += static_cast<char>(cp);
    } else if (cp < 0x800) {
      out += static_cast<char>(0xC0 | (cp >> 6));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      out += static_cast<char>(0xE0 | (cp >> 12));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (cp >> 18));
      out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }

  bool hex4(unsigned& cp) {
    if (pos_ + 4 > s_.size()) return false;
    cp = 0;
    for (int i = 0; i < 4; ++i) {
      const char h = s_[pos_++];
      cp <<= 4;
      if (h >= '0' && h <= '9') cp |= static_cast<unsigned>(h - '0');
      else if (h >= 'a' && h <= 'f') cp |= static_cast<unsigned>(h - 'a' + 10);
      else if (h >= 'A' && h <= 'F') cp |= static_cast<unsigned>(h - 'A' + 10);
      else return false;
    }
    return true;
  }

  bool string(std::string& out) {
    ++pos_;  // opening quote
    while (pos_ < s_.size()) {
      const char c = s_[pos_++];
      if (c == '"') return true;
      if (static_cast<unsigned char>(c) < 0x20) return false;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (pos_ >= s_.size()) return false;
      const char e = s_[pos_++];
      switch (e) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case '/': out += '/'; break;
        case 'b': out += '\b'; break;
        case 'f': out += '\f'; break;
        case 'n': out += '\n'; break;
        case 'r': out += '\r'; break;
        case 't': out += '\t'; break;
        case 'u': {
          unsigned cp = 0;
          if (!hex4(cp)) return false;
          if (cp >= 0xD800 && cp < 0xDC00 && s_.substr(pos_, 2) == "\\u") {
            pos_ += 2;
            unsigned lo = 0;
            if (!hex4(lo) || lo < 0xDC00 || lo >= 0xE000) return false;
            cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
          }
          append_utf8(out, cp);
          break;
        }
        default: return false;
      }
    }
    return false;
  }

  bool number(Node& out) {
    const std::size_t begin = pos_;
    if (pos_ < s_.size() && s_[pos_] == '-') ++pos_;
    const std::size_t int_begin = pos_;
    while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
    if (pos_ == int_begin) return false;
    if (pos_ - int_begin > 1 && s_[int_begin] == '0') return false;  // leading zero
    bool integral = true;
    if (pos_ < s_.size() && s_[pos_] == '.') {
      integral = false;
      ++pos_;
      const std::size_t frac = pos_;
      while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
      if (pos_ == frac) return false;
    }
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      integral = false;
      ++pos_;
      if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
      const std::size_t exp = pos_;
      while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
      if (pos_ == exp) return false;
    }
    if (integral && s_[begin] != '-') {
      int v = 0;
      const auto res = std::from_chars(s_.data() + begin, s_.data() + pos_, v);
      if (res.ec == std::errc() && res.ptr == s_.data() + pos_) {
        out.is_bin = true;
        out.bin = v;
      }
    }
    return true;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

bool read_bins(const Node& node, std::size_t arity, int bin_count, int* out) {
  if (node.kind != Node::Kind::kArray || node.items.size() != arity) return false;
  for (std::size_t i = 0; i < arity; ++i) {
    const Node& item = node.items[i];
    if (item.kind != Node::Kind::kNumber || !item.is_bin || item.bin > bin_count) return false;
    out[i] = item.bin;
  }
  return true;
}

template <std::size_t N>
bool read_points(const Node& node, int bin_count, std::vector<std::array<int, N>>& out) {
  if (node.kind != Node::Kind::kArray || node.items.empty()) return false;
  out.resize(node.items.size());
  for (std::size_t i = 0; i < node.items.size(); ++i) {
    if (!read_bins(node.items[i], N, bin_count, out[i].data())) return false;
  }
  return true;
}

bool read_field(Field f, const Node& node, int bin_count, ParsedOutput& out) {
  switch (f) {
    case Field::kBbox2d: return read_bins(node, 4, bin_count, out.bbox2d.data());
    case Field::kBbox3d: return read_bins(node, 6, bin_count, out.bbox3d.data());
    case Field::kKpts2d: return read_points<2>(node, bin_count, out.kpts2d);
    case Field::kKpts3d: return read_points<3>(node, bin_count, out.kpts3d);
  }
  return false;
}

void escape_into(std::string& out, std::string_view s) {
  out += '"';
  for (const char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", static_cast<unsigned>(c));
          out += buf;
        } else {
          out += c;
        }
    }
  }
  out += '"';
}

template <typename Range>
void write_ints(std::string& out, const Range& values) {
  out += '[';
  bool first = true;
  for (const int v : values) {
    if (!first) out += ", ";
    first = false;
    out += std::to_string(v);
  }
  out += ']';
}

template <std::size_t N>
void write_points(std::string& out, const std::vector<std::array<int, N>>& pts) {
  out += '[';
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i > 0) out += ", ";
    write_ints(out, pts[i]);
  }
  out += ']';
}

}  // namespace

ParsedOutput parse_structured_output(std::string_view text, int bin_count) {
  ParsedOutput out;
  out.text_length = text.size();

  Node root;
  const std::size_t brace = text.find('{');
  if (brace == std::string_view::npos || !Reader(text).parse_object_at(brace, root)) {
    for (const Field f : kGeometricFields) out.set_failed(f, FieldStatus::kMalformed);
    out.answer_status = FieldStatus::kMalformed;
    out.description_status = FieldStatus::kMalformed;
    return out;
  }

  auto lookup = [&](std::string_view key, const Node*& node) {
    std::size_t count = 0;
    for (const auto& [k, v] : root.members) {
      if (k == key) {
        ++count;
        node = &v;
      }
    }
    return count;
  };

  auto text_field = [&](std::string_view key, std::string& value, FieldStatus& status) {
    const Node* node = nullptr;
    const std::size_t n = lookup(key, node);
    if (n == 0) {
      status = FieldStatus::kMissing;
    } else if (n > 1) {
      status = FieldStatus::kDuplicated;
    } else if (node->kind != Node::Kind::kString) {
      status = FieldStatus::kMalformed;
    } else {
      value = node->text;
      status = FieldStatus::kOk;
    }
  };
  text_field("answer", out.answer, out.answer_status);
  text_field("description", out.description, out.description_status);

  for (const Field f : kGeometricFields) {
    const Node* node = nullptr;
    const std::size_t n = lookup(field_name(f), node);
    if (n == 0) {
      out.set_failed(f, FieldStatus::kMissing);
    } else if (n > 1) {
      out.set_failed(f, FieldStatus::kDuplicated);
    } else if (!read_field(f, *node, bin_count, out)) {
      out.set_failed(f, FieldStatus::kMalformed);
    } else {
      out.status[index(f)] = FieldStatus::kOk;
      out.span[index(f)] = CharSpan{node->start, node->end};
    }
  }
  return out;
}

CanonicalText serialize_canonical(const ParsedOutput& p) {
  const bool complete = p.answer_status == FieldStatus::kOk &&
                        p.description_status == FieldStatus::kOk &&
                        std::all_of(p.status.begin(), p.status.end(),
                                    [](FieldStatus s) { return s == FieldStatus::kOk; }) &&
                        !p.kpts2d.empty() && !p.kpts3d.empty();
  if (!complete) throw Error("incomplete fields");

  CanonicalText out;
  std::string& s = out.text;
  s += "{\"answer\": ";
  escape_into(s, p.answer);
  s += ", \"description\": ";
  escape_into(s, p.description);

  auto emit = [&](Field f, auto&& writer) {
    s += ", \"";
    s += field_name(f);
    s += "\": ";
    const std::size_t start = s.size();
    writer();
    out.spans[index(f)] = CharSpan{start, s.size()};
  };
  emit(Field::kBbox2d, [&] { write_ints(s, p.bbox2d); });
  emit(Field::kBbox3d, [&] { write_ints(s, p.bbox3d); });
  emit(Field::kKpts2d, [&] { write_points(s, p.kpts2d); });
  emit(Field::kKpts3d, [&] { write_points(s, p.kpts3d); });
  s += '}';
  return out;
}

void FieldRanges::validate() const {
  for (const QuantRange* r : {&x2d, &y2d, &x3d, &y3d, &z3d}) r->validate();
  if (x2d.bin_count != y2d.bin_count || x2d.bin_count != x3d.bin_count ||
      x2d.bin_count != y3d.bin_count || x2d.bin_count != z3d.bin_count) {
    throw Error("quant ranges: all axes must share bin_count");
  }
}

FieldRanges FieldRanges::image(double width, double height) {
  FieldRanges r;
  r.x2d = {0.0, width, 1000};
  r.y2d = {0.0, height, 1000};
  return r;
}

namespace {

bool bins_in(const int* bins, std::size_t n, const QuantRange& r) {
  return std::all_of(bins, bins + n, [&](int b) { return b >= 0 && b <= r.bin_count; });
}

}  // namespace

GeometricValues dequantize_fields(const ParsedOutput& p, const FieldRanges& ranges) {
  GeometricValues g;
  g.status = p.status;
  const int bc = ranges.x2d.bin_count;
  auto in_range = [bc](int b) { return b >= 0 && b <= bc; };

  if (p.ok(Field::kBbox2d)) {
    const auto& b = p.bbox2d;
    if (std::all_of(b.begin(), b.end(), in_range)) {
      Box2D box{dequantize(b[0], ranges.x2d), dequantize(b[1], ranges.y2d),
                dequantize(b[2], ranges.x2d), dequantize(b[3], ranges.y2d)};
      bool swapped = false;
      if (box.x_min > box.x_max) std::swap(box.x_min, box.x_max), swapped = true;
      if (box.y_min > box.y_max) std::swap(box.y_min, box.y_max), swapped = true;
      g.box2d = box;
      g.swapped[index(Field::kBbox2d)] = swapped;
    } else {
      g.status[index(Field::kBbox2d)] = FieldStatus::kMalformed;
    }
  }
  if (p.ok(Field::kBbox3d)) {
    const auto& b = p.bbox3d;
    if (std::all_of(b.begin(), b.end(), in_range)) {
      Box3D box{dequantize(b[0], ranges.x3d), dequantize(b[1], ranges.y3d),
                dequantize(b[2], ranges.z3d), dequantize(b[3], ranges.x3d),
                dequantize(b[4], ranges.y3d), dequantize(b[5], ranges.z3d)};
      bool swapped = false;
      if (box.x_min > box.x_max) std::swap(box.x_min, box.x_max), swapped = true;
      if (box.y_min > box.y_max) std::swap(box.y_min, box.y_max), swapped = true;
      if (box.z_min > box.z_max) std::swap(box.z_min, box.z_max), swapped = true;
      g.box3d = box;
      g.swapped[index(Field::kBbox3d)] = swapped;
    } else {
      g.status[index(Field::kBbox3d)] = FieldStatus::kMalformed;
    }
  }
  if (p.ok(Field::kKpts2d)) {
    KeypointSet2D k;
    bool good = true;
    for (const auto& pt : p.kpts2d) {
      if (!bins_in(pt.data(), 2, ranges.x2d)) {
        good = false;
        break;
      }
      k.points.emplace_back(dequantize(pt[0], ranges.x2d), dequantize(pt[1], ranges.y2d));
    }
    if (good) g.kpts2d = std::move(k);
    else g.status[index(Field::kKpts2d)] = FieldStatus::kMalformed;
  }
  if (p.ok(Field::kKpts3d)) {
    KeypointSet3D k;
    bool good = true;
    for (const auto& pt : p.kpts3d) {
      if (!bins_in(pt.data(), 3, ranges.x3d)) {
        good = false;
        break;
      }
      k.points.emplace_back(dequantize(pt[0], ranges.x3d), dequantize(pt[1], ranges.y3d),
                            dequantize(pt[2], ranges.z3d));
    }
    if (good) g.kpts3d = std::move(k);
    else g.status[index(Field::kKpts3d)] = FieldStatus::kMalformed;
  }
  return g;
}

ParsedOutput quantize_fields(const Box2D& box2d, const Box3D& box3d, const KeypointSet2D& kpts2d,
                             const KeypointSet3D& kpts3d, const FieldRanges& ranges) {
  ParsedOutput p;
  p.bbox2d = {quantize(box2d.x_min, ranges.x2d), quantize(box2d.y_min, ranges.y2d),
              quantize(box2d.x_max, ranges.x2d), quantize(box2d.y_max, ranges.y2d)};
  p.bbox3d = {quantize(box3d.x_min, ranges.x3d), quantize(box3d.y_min, ranges.y3d),
              quantize(box3d.z_min, ranges.z3d), quantize(box3d.x_max, ranges.x3d),
              quantize(box3d.y_max, ranges.y3d), quantize(box3d.z_max, ranges.z3d)};
  for (const auto& k : kpts2d.points) {
    p.kpts2d.push_back({quantize(k.x(), ranges.x2d), quantize(k.y(), ranges.y2d)});
  }
  for (const auto& k : kpts3d.points) {
    p.kpts3d.push_back(
        {quantize(k.x(), ranges.x3d), quantize(k.y(), ranges.y3d), quantize(k.z(), ranges.z3d)});
  }
  p.status.fill(FieldStatus::kOk);
  return p;
}

}  // namespace grca
