#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "grca/schema.hpp"

namespace grca {

/// Decoded pieces of a token sequence with cumulative end offsets:
/// token i covers characters [begin(i), end(i)).
class TokenizerView {
 public:
  TokenizerView() = default;
  explicit TokenizerView(std::vector<std::string> pieces);

  std::size_t size() const { return pieces_.size(); }
  std::size_t text_length() const { return offsets_.empty() ? 0 : offsets_.back(); }
  std::size_t begin(std::size_t i) const { return i == 0 ? 0 : offsets_[i - 1]; }
  std::size_t end(std::size_t i) const { return offsets_[i]; }
  const std::vector<std::string>& pieces() const { return pieces_; }
  const std::vector<std::size_t>& offsets() const { return offsets_; }
  std::string text() const;
  /// Index of the token whose interval contains character c.
  std::size_t token_at(std::size_t c) const;

 private:
  std::vector<std::string> pieces_;
  std::vector<std::size_t> offsets_;
};

enum class TokenizerMode {
  kChar,      // one token per byte
  kBoundary,  // split on digit / non-digit transitions
};

TokenizerView reference_tokenizer(std::string_view text, TokenizerMode mode);

/// Role of a token in the routing partition: a geometric field or background.
enum class TokenRole : std::uint8_t { kBbox2d = 0, kBbox3d = 1, kKpts2d = 2, kKpts3d = 3, kBackground = 4 };

inline TokenRole role_of(Field f) { return static_cast<TokenRole>(index(f)); }

struct TokenSpanPartition {
  std::array<std::vector<std::size_t>, kNumFields> field_tokens;
  std::vector<std::size_t> background;
  std::vector<TokenRole> roles;  // one per token

  std::size_t size() const { return roles.size(); }
  const std::vector<std::size_t>& tokens(Field f) const { return field_tokens[index(f)]; }
};

/// Any-overlap rule: a token touching a field's character span belongs to that
/// field (the earliest such field if it touches several); all other tokens
/// are background. Fields with a non-ok status route nowhere.
TokenSpanPartition char_to_token_spans(const TokenizerView& view, const ParsedOutput& parsed);

}  // namespace grca
