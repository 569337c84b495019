#include "affr/text.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "affr/util.hpp"

namespace affr {

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  return from_tokens(tokens);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (int(tokens.size()) < kReservedCount)
    throw std::runtime_error("vocabulary needs at least " + std::to_string(kReservedCount) +
                             " reserved tokens, got " + std::to_string(tokens.size()));
  Vocabulary v;
  v.tokens_ = tokens;
  v.build_index();
  return v;
}

void Vocabulary::build_index() {
  index_.clear();
  index_.reserve(tokens_.size());
  for (size_t i = 0; i < tokens_.size(); ++i) index_.emplace_back(tokens_[i], int(i));
  std::sort(index_.begin(), index_.end());
  for (size_t i = 1; i < index_.size(); ++i)
    if (index_[i].first == index_[i - 1].first)
      throw std::runtime_error("duplicate vocabulary token: '" + index_[i].first + "'");
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::runtime_error("token id out of range: " + std::to_string(id));
  return tokens_[size_t(id)];
}

std::optional<int> Vocabulary::id_of(const std::string& token) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), std::make_pair(token, 0));
  if (it != index_.end() && it->first == token) return it->second;
  return std::nullopt;
}

void Vocabulary::save(const std::string& path) const {
  std::ostringstream os;
  for (const auto& t : tokens_) os << t << "\n";
  write_text_file(path, os.str());
}

const char* prompt_form_name(PromptForm f) {
  switch (f) {
    case PromptForm::kEmpty: return "empty";
    case PromptForm::kNoun: return "noun";
    case PromptForm::kPronoun: return "pronoun";
  }
  return "?";
}

PromptSpec build_prompt(const std::string& verb_phrase, PromptForm form,
                        const std::vector<std::string>& categories, int n_gt,
                        const std::string& pronoun) {
  PromptSpec spec;
  if (n_gt == 0) {
    spec.form = PromptForm::kEmpty;
    return spec;
  }
  if (verb_phrase.empty()) throw std::runtime_error("build_prompt: empty verb phrase");
  spec.verb = verb_phrase;
  spec.form = form;
  if (form == PromptForm::kPronoun) {
    if (pronoun.empty()) throw std::runtime_error("build_prompt: empty pronoun");
    spec.pronoun = pronoun;
    spec.text = verb_phrase + " " + pronoun;
  } else if (form == PromptForm::kNoun) {
    if (categories.empty())
      throw std::runtime_error("build_prompt: noun form needs at least one category");
    spec.categories = categories;
    std::vector<std::string> phrases;
    for (const auto& c : categories) {
      if (c.empty()) throw std::runtime_error("build_prompt: empty category name");
      phrases.push_back(verb_phrase + " " + c);
    }
    spec.text = join(phrases, " ");
  } else {
    throw std::runtime_error("build_prompt: empty form requested with n_gt > 0");
  }
  return spec;
}

std::vector<uint8_t> Prompt::attend_mask() const {
  std::vector<uint8_t> m(size_t(n_max), 0);
  for (int i = 0; i < content_len; ++i) m[size_t(i)] = 1;
  m[size_t(n_max) - 1] = 1;  // the no-object slot is always attendable
  return m;
}

namespace {

std::vector<int> words_to_ids(const std::vector<std::string>& words, const Vocabulary& vocab,
                              int base_pos) {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (size_t i = 0; i < words.size(); ++i) {
    auto id = vocab.id_of(words[i]);
    if (!id)
      throw std::runtime_error("out-of-vocabulary word '" + words[i] + "' at token position " +
                               std::to_string(base_pos + int(i)));
    ids.push_back(*id);
  }
  return ids;
}

}  // namespace

Prompt tokenize(const PromptSpec& spec, const Vocabulary& vocab, int n_max) {
  if (n_max < 2) throw std::runtime_error("tokenize: n_max must be at least 2");
  Prompt p;
  p.n_max = n_max;
  p.form = spec.form;
  p.text = spec.text;
  p.ids.assign(size_t(n_max), Vocabulary::kPad);
  p.ids[size_t(n_max) - 1] = Vocabulary::kNoObject;
  if (spec.form == PromptForm::kEmpty) return p;

  std::vector<std::string> verb_words = split_ws(spec.verb);
  int vlen = int(verb_words.size());
  std::vector<int> ids;
  if (spec.form == PromptForm::kPronoun) {
    ids = words_to_ids(verb_words, vocab, 0);
    auto pron = words_to_ids({spec.pronoun}, vocab, vlen);
    ids.insert(ids.end(), pron.begin(), pron.end());
    p.verb_span = {0, vlen};
    p.pronoun_span = {vlen, vlen + 1};
    p.phrase_spans.push_back({0, int(ids.size())});
  } else {
    int pos = 0;
    for (size_t c = 0; c < spec.categories.size(); ++c) {
      std::vector<std::string> cat_words = split_ws(spec.categories[c]);
      auto vw = words_to_ids(verb_words, vocab, pos);
      auto cw = words_to_ids(cat_words, vocab, pos + vlen);
      if (c == 0) p.verb_span = {pos, pos + vlen};
      p.noun_spans.push_back({pos + vlen, pos + vlen + int(cat_words.size())});
      p.phrase_spans.push_back({pos, pos + vlen + int(cat_words.size())});
      ids.insert(ids.end(), vw.begin(), vw.end());
      ids.insert(ids.end(), cw.begin(), cw.end());
      pos += vlen + int(cat_words.size());
    }
  }
  int max_content = n_max - 1;  // the last slot is reserved for no-object
  if (int(ids.size()) > max_content)
    throw std::runtime_error("prompt needs " + std::to_string(ids.size()) +
                             " content tokens but only " + std::to_string(max_content) +
                             " fit; required n_max >= " + std::to_string(int(ids.size()) + 1));
  p.content_len = int(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) p.ids[i] = ids[i];
  return p;
}

std::vector<double> span_distribution(TokenSpan span, int n_max) {
  if (span.empty() || span.begin < 0 || span.end > n_max)
    throw std::runtime_error("span_distribution: invalid span");
  std::vector<double> row(size_t(n_max), 0.0);
  double w = 1.0 / double(span.len());
  for (int i = span.begin; i < span.end; ++i) row[size_t(i)] = w;
  return row;
}

std::vector<double> no_object_row(int n_max) {
  std::vector<double> row(size_t(n_max), 0.0);
  row[size_t(n_max) - 1] = 1.0;
  return row;
}

}  // namespace affr
