#include <doctest.h>

#include <random>

#include "grca/spans.hpp"
#include "oracles.hpp"

using namespace grca;

TEST_CASE("tokenizer view offsets") {
  const TokenizerView v({"ab", "", "cde", "f"});
  CHECK(v.size() == 4);
  CHECK(v.text() == "abcdef");
  CHECK(v.begin(2) == 2);
  CHECK(v.end(2) == 5);
  CHECK(v.token_at(0) == 0);
  CHECK(v.token_at(2) == 2);
  CHECK(v.token_at(5) == 3);
  CHECK_THROWS_AS(v.token_at(6), Error);
}

TEST_CASE("reference tokenizers reproduce the text") {
  const std::string text = R"({"bbox2d": [12, 345]})";
  const auto c = reference_tokenizer(text, TokenizerMode::kChar);
  CHECK(c.size() == text.size());
  CHECK(c.text() == text);
  const auto b = reference_tokenizer(text, TokenizerMode::kBoundary);
  CHECK(b.text() == text);
  CHECK(b.pieces() == std::vector<std::string>{"{\"bbox", "2", "d\": [", "12", ", ", "345", "]}"});
}

TEST_CASE("tokens touching a span belong to the field") {
  const std::string text = R"({"bbox2d": [1, 2, 3, 4]})";
  const ParsedOutput p = parse_structured_output(text);
  REQUIRE(p.ok(Field::kBbox2d));
  // The first piece ends with '[' which is part of the span.
  const TokenizerView v({"{\"bbox2d\": [", "1, 2, 3, 4", "]}"});
  const TokenSpanPartition part = char_to_token_spans(v, p);
  CHECK(part.tokens(Field::kBbox2d) == std::vector<std::size_t>{0, 1, 2});
  CHECK(part.background.empty());
  CHECK(testing::partition_sound(v, p, part));
}

TEST_CASE("straddling token goes to the earlier field") {
  const std::string text = R"({"bbox2d": [1, 2, 3, 4], "bbox3d": [1, 2, 3, 4, 5, 6]})";
  const ParsedOutput p = parse_structured_output(text);
  const std::size_t a = p.span[index(Field::kBbox2d)]->end - 1;
  const std::size_t b = p.span[index(Field::kBbox3d)]->start + 1;
  const TokenizerView v({text.substr(0, a), text.substr(a, b - a), text.substr(b)});
  const TokenSpanPartition part = char_to_token_spans(v, p);
  CHECK(part.roles[1] == TokenRole::kBbox2d);
  CHECK(part.roles[2] == TokenRole::kBbox3d);
  CHECK(testing::partition_sound(v, p, part));
}

TEST_CASE("non-ok fields route nowhere") {
  const std::string text = R"({"bbox2d": [1, 2, 3], "bbox3d": [1, 2, 3, 4, 5, 6]})";
  const ParsedOutput p = parse_structured_output(text);
  const auto v = reference_tokenizer(text, TokenizerMode::kChar);
  const TokenSpanPartition part = char_to_token_spans(v, p);
  CHECK(part.tokens(Field::kBbox2d).empty());
  CHECK(part.tokens(Field::kBbox3d).size() == p.span[index(Field::kBbox3d)]->size());
  CHECK(testing::partition_sound(v, p, part));
}

TEST_CASE("mismatched view and text are rejected") {
  const ParsedOutput p = parse_structured_output(R"({"bbox2d": [1, 2, 3, 4]})");
  CHECK_THROWS_AS(char_to_token_spans(TokenizerView({"{}"}), p), Error);
}

TEST_CASE("partition is sound on corrupted outputs") {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 1000; ++i) {
    const std::string text = testing::corrupt(serialize_canonical(testing::random_output(rng)).text, rng);
    const ParsedOutput p = parse_structured_output(text);
    for (const auto mode : {TokenizerMode::kChar, TokenizerMode::kBoundary}) {
      const auto v = reference_tokenizer(text, mode);
      CHECK(testing::partition_sound(v, p, char_to_token_spans(v, p)));
    }
  }
}
