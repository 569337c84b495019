// Vocabulary layout, prompt construction for the three forms, tokenization
// with span tracking, and span target rows.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <numeric>

#include "affr/text.hpp"

using namespace affr;

namespace {

Vocabulary test_vocab() {
  return Vocabulary::from_tokens({"<pad>", "<noobj>", "something", "it", "them", "abcd", "drink",
                                  "water", "with", "red", "cup", "blue", "bottle"});
}

}  // namespace

TEST_CASE("reserved token ids occupy the first six slots") {
  Vocabulary v = test_vocab();
  CHECK(Vocabulary::kPad == 0);
  CHECK(Vocabulary::kNoObject == 1);
  CHECK(Vocabulary::kSomething == 2);
  CHECK(Vocabulary::kIt == 3);
  CHECK(Vocabulary::kThem == 4);
  CHECK(Vocabulary::kPlaceholder == 5);
  CHECK(v.token(Vocabulary::kSomething) == "something");
  CHECK(v.placeholder_surface() == "abcd");
  CHECK(v.is_reserved(5));
  CHECK_FALSE(v.is_reserved(6));
  CHECK(v.id_of("cup") == 10);
  CHECK_FALSE(v.id_of("spoon").has_value());
}

TEST_CASE("duplicate tokens and short vocabularies are rejected") {
  CHECK_THROWS(Vocabulary::from_tokens({"<pad>", "<noobj>", "something", "it", "them", "abcd",
                                        "cup", "cup"}));
  CHECK_THROWS(Vocabulary::from_tokens({"<pad>", "<noobj>"}));
}

TEST_CASE("vocabulary files round-trip") {
  namespace fs = std::filesystem;
  Vocabulary v = test_vocab();
  fs::path p = fs::temp_directory_path() / "affr_vocab_rt.txt";
  v.save(p.string());
  Vocabulary back = Vocabulary::load(p.string());
  REQUIRE(back.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(back.token(i) == v.token(i));
  fs::remove(p);
}

TEST_CASE("zero targets force the empty prompt whatever form was asked") {
  for (PromptForm f : {PromptForm::kEmpty, PromptForm::kNoun, PromptForm::kPronoun}) {
    PromptSpec s = build_prompt("drink water with", f, {"red cup"}, 0);
    CHECK(s.form == PromptForm::kEmpty);
    CHECK(s.text.empty());
  }
}

TEST_CASE("prompt text composes per form") {
  PromptSpec noun1 = build_prompt("drink water with", PromptForm::kNoun, {"red cup"}, 2);
  CHECK(noun1.text == "drink water with red cup");
  PromptSpec noun2 =
      build_prompt("drink water with", PromptForm::kNoun, {"red cup", "blue bottle"}, 3);
  CHECK(noun2.text == "drink water with red cup drink water with blue bottle");
  PromptSpec pron = build_prompt("drink water with", PromptForm::kPronoun, {}, 1);
  CHECK(pron.text == "drink water with something");
  PromptSpec it = build_prompt("drink water with", PromptForm::kPronoun, {}, 1, "it");
  CHECK(it.text == "drink water with it");
}

TEST_CASE("malformed prompt requests are rejected") {
  CHECK_THROWS(build_prompt("", PromptForm::kPronoun, {}, 1));
  CHECK_THROWS(build_prompt("drink", PromptForm::kNoun, {}, 1));
  CHECK_THROWS(build_prompt("drink", PromptForm::kNoun, {"cup", ""}, 1));
  CHECK_THROWS(build_prompt("drink", PromptForm::kPronoun, {}, 1, ""));
  CHECK_THROWS(build_prompt("drink", PromptForm::kEmpty, {}, 1));
}

TEST_CASE("tokenized prompts carry content then padding then no-object") {
  Vocabulary v = test_vocab();
  Prompt p = tokenize(build_prompt("drink water with", PromptForm::kPronoun, {}, 1), v, 8);
  REQUIRE(p.ids.size() == 8);
  CHECK(p.ids == std::vector<int>{6, 7, 8, 2, 0, 0, 0, 1});
  CHECK(p.content_len == 4);
  CHECK(p.verb_span == TokenSpan{0, 3});
  CHECK(p.pronoun_span == TokenSpan{3, 4});
  REQUIRE(p.phrase_spans.size() == 1);
  CHECK(p.phrase_spans[0] == TokenSpan{0, 4});
  CHECK(p.noun_spans.empty());
  CHECK(p.attend_mask() == std::vector<uint8_t>{1, 1, 1, 1, 0, 0, 0, 1});
}

TEST_CASE("noun prompts track per-category noun spans") {
  Vocabulary v = test_vocab();
  Prompt p = tokenize(
      build_prompt("drink water with", PromptForm::kNoun, {"red cup", "blue bottle"}, 2), v, 16);
  CHECK(p.content_len == 10);
  CHECK(p.ids[0] == 6);
  CHECK(p.ids[3] == 9);   // red
  CHECK(p.ids[4] == 10);  // cup
  CHECK(p.ids[8] == 11);  // blue
  CHECK(p.ids[9] == 12);  // bottle
  REQUIRE(p.noun_spans.size() == 2);
  CHECK(p.noun_spans[0] == TokenSpan{3, 5});
  CHECK(p.noun_spans[1] == TokenSpan{8, 10});
  REQUIRE(p.phrase_spans.size() == 2);
  CHECK(p.phrase_spans[0] == TokenSpan{0, 5});
  CHECK(p.phrase_spans[1] == TokenSpan{5, 10});
  CHECK(p.verb_span == TokenSpan{0, 3});
}

TEST_CASE("empty prompts tokenize to padding plus the no-object slot") {
  Vocabulary v = test_vocab();
  Prompt p = tokenize(build_prompt("drink", PromptForm::kNoun, {"cup"}, 0), v, 6);
  CHECK(p.form == PromptForm::kEmpty);
  CHECK(p.content_len == 0);
  CHECK(p.ids == std::vector<int>{0, 0, 0, 0, 0, 1});
  CHECK(p.attend_mask() == std::vector<uint8_t>{0, 0, 0, 0, 0, 1});
}

TEST_CASE("out-of-vocabulary words are named with their position") {
  Vocabulary v = test_vocab();
  PromptSpec s = build_prompt("drink tea with", PromptForm::kPronoun, {}, 1);
  try {
    tokenize(s, v, 8);
    FAIL("expected rejection");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("tea") != std::string::npos);
    CHECK(msg.find("1") != std::string::npos);
  }
}

TEST_CASE("content overflowing the reserved layout is rejected") {
  Vocabulary v = test_vocab();
  PromptSpec s = build_prompt("drink water with", PromptForm::kPronoun, {}, 1);
  CHECK_THROWS(tokenize(s, v, 4));  // 4 content tokens need n_max >= 5
  CHECK_NOTHROW(tokenize(s, v, 5));
  CHECK_THROWS(tokenize(s, v, 1));
}

TEST_CASE("span distribution is uniform over the span and sums to one") {
  auto row = span_distribution({2, 5}, 8);
  REQUIRE(row.size() == 8);
  CHECK(row[1] == 0.0);
  CHECK(row[2] == doctest::Approx(1.0 / 3.0));
  CHECK(row[4] == doctest::Approx(1.0 / 3.0));
  CHECK(row[5] == 0.0);
  CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(span_distribution({3, 3}, 8));
  CHECK_THROWS(span_distribution({6, 9}, 8));
}

TEST_CASE("no-object row is one-hot on the last slot") {
  auto row = no_object_row(5);
  CHECK(row == std::vector<double>{0, 0, 0, 0, 1});
}
