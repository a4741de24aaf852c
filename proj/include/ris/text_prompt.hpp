#pragma once

// Referring-expression preprocessing: tokenization, head-noun extraction,
// target-prompt augmentation ("<expr> . it is a <noun>") and id encoding.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ris/error.hpp"
#include "ris/lexicon.hpp"

namespace ris {

// Lowercases and splits on whitespace. Every punctuation character becomes its
// own token, except hyphens and apostrophes with letters or digits on both
// sides ("second-from-left", "man's").
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if ((c == '-' || c == '\'') && !cur.empty() && i + 1 < text.size() &&
               std::isalnum(static_cast<unsigned char>(text[i + 1]))) {
      cur.push_back(static_cast<char>(c));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  if (out.empty()) throw Error(ErrorCode::EmptyExpression, "expression has no tokens");
  return out;
}

inline std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

struct Expression {
  std::string text;
  std::vector<std::string> tokens;

  static Expression from_text(const std::string& text) { return {text, tokenize(text)}; }
};

struct TargetNoun {
  std::string token;
  std::size_t source_index = 0;
};

enum class HeadRule { FirstNounPhrase, LastNoun, LastContentWord };

namespace detail {

struct HeadResult {
  std::size_t index;
  HeadRule rule;
};

// Returns the head position and the rule that selected it.
inline std::optional<HeadResult> find_head(const std::vector<std::string>& tokens, const Lexicon& lex) {
  std::vector<Pos> tags(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) tags[i] = lex.tag(tokens[i]);

  // The first noun phrase ends at the first preposition, verb, conjunction,
  // relative pronoun or punctuation mark, or at a determiner or spatial word
  // following a noun ("the chair that ...", "the circle left of ...").
  std::optional<std::size_t> in_np;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Pos p = tags[i];
    const bool boundary = p == Pos::Preposition || p == Pos::Verb || p == Pos::Conjunction || p == Pos::Punct ||
                          ((p == Pos::Pronoun || p == Pos::Determiner || p == Pos::Spatial) && in_np);
    if (boundary) break;
    if (p == Pos::Noun) in_np = i;
  }
  if (in_np) return HeadResult{*in_np, HeadRule::FirstNounPhrase};

  for (std::size_t i = tokens.size(); i-- > 0;)
    if (tags[i] == Pos::Noun) return HeadResult{i, HeadRule::LastNoun};

  for (std::size_t i = tokens.size(); i-- > 0;)
    if (!lex.is_stopword(tokens[i])) return HeadResult{i, HeadRule::LastContentWord};
  return std::nullopt;
}

}  // namespace detail

inline TargetNoun extract_target_noun(const Expression& expr, const Lexicon& lex = Lexicon::builtin()) {
  auto head = detail::find_head(expr.tokens, lex);
  if (!head) throw Error(ErrorCode::NoNounFound, "no noun in \"" + expr.text + "\"");
  return {expr.tokens[head->index], head->index};
}

struct PromptTemplate {
  std::string name;
  std::vector<std::string> tokens;

  static PromptTemplate manual() { return {"manual", {"it", "is", "a"}}; }
  static PromptTemplate describes() { return {"describes", {"it", "describes", "a"}}; }

  static PromptTemplate by_name(const std::string& name) {
    if (name == "manual") return manual();
    if (name == "describes") return describes();
    throw Error(ErrorCode::ConfigError, "unknown prompt template '" + name + "' (expected manual|describes)");
  }
};

inline constexpr const char* kPromptSeparator = ".";

// Built only from an Expression, so a prompted form cannot be prompted again.
class PromptedExpression {
 public:
  const Expression& original() const { return original_; }
  const TargetNoun& target() const { return target_; }
  const std::vector<std::string>& context_tokens() const { return context_; }
  const std::vector<std::string>& full_tokens() const { return full_; }

 private:
  friend PromptedExpression build_prompted_expression(const Expression&, const PromptTemplate&, const Lexicon&);
  Expression original_;
  TargetNoun target_;
  std::vector<std::string> context_;
  std::vector<std::string> full_;
};

inline PromptedExpression build_prompted_expression(const Expression& expr,
                                                    const PromptTemplate& tmpl = PromptTemplate::manual(),
                                                    const Lexicon& lex = Lexicon::builtin()) {
  PromptedExpression p;
  p.original_ = expr;
  p.target_ = extract_target_noun(expr, lex);
  p.context_.push_back(kPromptSeparator);
  p.context_.insert(p.context_.end(), tmpl.tokens.begin(), tmpl.tokens.end());
  p.full_ = expr.tokens;
  p.full_.insert(p.full_.end(), p.context_.begin(), p.context_.end());
  p.full_.push_back(p.target_.token);
  return p;
}

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"} {}

  // Ids assigned in sorted token order, so the result does not depend on the
  // order the sentences are seen.
  static Vocabulary build(const std::vector<std::vector<std::string>>& sentences) {
    std::vector<std::string> all;
    for (const auto& s : sentences) all.insert(all.end(), s.begin(), s.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    Vocabulary v;
    for (const auto& t : all) v.add(t);
    return v;
  }

  int add(const std::string& token) {
    auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  nlohmann::json to_json() const { return tokens_; }

  static Vocabulary from_json(const nlohmann::json& j) {
    auto tokens = j.get<std::vector<std::string>>();
    if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>")
      throw Error(ErrorCode::CorruptCheckpoint, "vocabulary lacks the reserved <pad>/<unk> entries");
    Vocabulary v;
    for (std::size_t i = 2; i < tokens.size(); ++i)
      if (v.add(tokens[i]) != static_cast<int>(i))
        throw Error(ErrorCode::CorruptCheckpoint, "duplicate vocabulary token " + tokens[i]);
    return v;
  }

 private:
  std::map<std::string, int> ids_;
  std::vector<std::string> tokens_;
};

struct EncodedText {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
};

inline EncodedText encode_tokens(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t max_len) {
  if (tokens.size() > max_len)
    throw Error(ErrorCode::ExpressionTooLong,
                std::to_string(tokens.size()) + " tokens exceed max_len " + std::to_string(max_len));
  EncodedText e{std::vector<int>(max_len, Vocabulary::kPad), std::vector<std::uint8_t>(max_len, 0)};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    e.ids[i] = vocab.id(tokens[i]);
    e.mask[i] = 1;
  }
  return e;
}

inline EncodedText encode_tokens(const PromptedExpression& p, const Vocabulary& vocab, std::size_t max_len) {
  return encode_tokens(p.full_tokens(), vocab, max_len);
}

}  // namespace ris
