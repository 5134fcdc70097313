#include "grca/spans.hpp"

#include <algorithm>
#include <cctype>

namespace grca {

TokenizerView::TokenizerView(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  offsets_.reserve(pieces_.size());
  std::size_t acc = 0;
  for (const auto& p : pieces_) {
    acc += p.size();
    offsets_.push_back(acc);
  }
}

std::string TokenizerView::text() const {
  std::string out;
  out.reserve(text_length());
  for (const auto& p : pieces_) out += p;
  return out;
}

std::size_t TokenizerView::token_at(std::size_t c) const {
  // First token whose end is past c; empty pieces never satisfy this.
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), c);
  if (it == offsets_.end()) throw Error("character offset past end of tokens");
  return static_cast<std::size_t>(it - offsets_.begin());
}

TokenizerView reference_tokenizer(std::string_view text, TokenizerMode mode) {
  std::vector<std::string> pieces;
  if (mode == TokenizerMode::kChar) {
    pieces.reserve(text.size());
    for (const char c : text) pieces.emplace_back(1, c);
    return TokenizerView(std::move(pieces));
  }
  auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  std::size_t start = 0;
  for (std::size_t i = 1; i <= text.size(); ++i) {
    if (i == text.size() || is_digit(text[i]) != is_digit(text[i - 1])) {
      pieces.emplace_back(text.substr(start, i - start));
      start = i;
    }
  }
  return TokenizerView(std::move(pieces));
}

TokenSpanPartition char_to_token_spans(const TokenizerView& view, const ParsedOutput& parsed) {
  if (view.text_length() != parsed.text_length) throw Error("view/text mismatch");

  TokenSpanPartition part;
  part.roles.assign(view.size(), TokenRole::kBackground);

  // Claim tokens in text order so that the earlier field wins a shared token.
  std::vector<Field> order;
  for (const Field f : kGeometricFields) {
    if (parsed.ok(f) && parsed.span[index(f)]) order.push_back(f);
  }
  std::sort(order.begin(), order.end(), [&](Field a, Field b) {
    return parsed.span[index(a)]->start < parsed.span[index(b)]->start;
  });

  for (const Field f : order) {
    const CharSpan span = *parsed.span[index(f)];
    if (span.size() == 0) continue;
    const std::size_t first = view.token_at(span.start);
    for (std::size_t t = first; t < view.size() && view.begin(t) < span.end; ++t) {
      if (view.end(t) > view.begin(t) && part.roles[t] == TokenRole::kBackground) {
        part.roles[t] = role_of(f);
      }
    }
  }

  for (std::size_t t = 0; t < part.roles.size(); ++t) {
    if (part.roles[t] == TokenRole::kBackground) {
      part.background.push_back(t);
    } else {
      part.field_tokens[static_cast<std::size_t>(part.roles[t])].push_back(t);
    }
  }
  return part;
}

}  // namespace grca
