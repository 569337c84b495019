// Closed-vocabulary text handling: vocabulary files, prompt construction for
// the three prompt forms, and whitespace tokenization with span tracking.
//
// Token id space reserves the first six slots: PAD, the no-object marker,
// the pronouns "something" / "it" / "them", and one configurable
// placeholder word that behaves like a pronoun but carries no meaning.
// In logit space the no-object class always occupies the last sequence slot
// (index n_max-1), so prompt content must fit into n_max-1 positions.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "affr/autodiff.hpp"

namespace affr {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kNoObject = 1;
  static constexpr int kSomething = 2;
  static constexpr int kIt = 3;
  static constexpr int kThem = 4;
  static constexpr int kPlaceholder = 5;  // surface form configurable, e.g. "abcd"
  static constexpr int kReservedCount = 6;

  // One token per line, UTF-8; the first six lines are the reserved tokens in
  // the order above. Duplicate tokens are rejected.
  static Vocabulary load(const std::string& path);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int size() const { return int(tokens_.size()); }
  const std::string& token(int id) const;
  std::optional<int> id_of(const std::string& token) const;
  bool is_reserved(int id) const { return id >= 0 && id < kReservedCount; }
  const std::string& placeholder_surface() const { return tokens_[kPlaceholder]; }

  void save(const std::string& path) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, int>> index_;  // sorted for lookup
  void build_index();
};

enum class PromptForm { kEmpty, kNoun, kPronoun };

const char* prompt_form_name(PromptForm f);

// A half-open token range [begin, end).
struct TokenSpan {
  int begin = 0;
  int end = 0;
  int len() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool operator==(const TokenSpan&) const = default;
};

// Output of build_prompt: surface text plus per-phrase structure that the
// tokenizer turns into token spans.
struct PromptSpec {
  std::string text;
  PromptForm form = PromptForm::kEmpty;
  std::string verb;                     // verb phrase, e.g. "sit comfortably on"
  std::string pronoun;                  // pronoun form only
  std::vector<std::string> categories;  // noun form only, one phrase each
};

// Builds the text input for one sample. Rules:
//   n_gt == 0            -> empty prompt regardless of requested form
//   noun form, k == 1    -> "<verb> <category>"
//   noun form, k > 1     -> concatenated "<verb> <category>" phrases
//   pronoun form         -> "<verb> <pronoun>"
// Injective over (verb, form, category list) for n_gt > 0.
PromptSpec build_prompt(const std::string& verb_phrase, PromptForm form,
                        const std::vector<std::string>& categories, int n_gt,
                        const std::string& pronoun = "something");

struct Prompt {
  std::vector<int> ids;  // length n_max: content, PAD tail, no-object last
  int n_max = 0;
  int content_len = 0;
  PromptForm form = PromptForm::kEmpty;
  TokenSpan verb_span;                  // first phrase's verb tokens
  TokenSpan pronoun_span;               // pronoun form only
  std::vector<TokenSpan> phrase_spans;  // one per phrase (noun: per category)
  std::vector<TokenSpan> noun_spans;    // noun form: category tokens inside each phrase
  std::string text;

  // Attention mask over sequence positions: content plus the final
  // no-object slot. PAD positions are never attendable.
  std::vector<uint8_t> attend_mask() const;
};

// Whitespace tokenization against a closed vocabulary. Content must fit into
// n_max-1 positions (the last slot is reserved); out-of-vocabulary words are
// rejected with the word and its position.
Prompt tokenize(const PromptSpec& spec, const Vocabulary& vocab, int n_max);

// Uniform distribution over a token span, as a dense row of length n_max.
std::vector<double> span_distribution(TokenSpan span, int n_max);
// One-hot row selecting the no-object slot.
std::vector<double> no_object_row(int n_max);

}  // namespace affr
