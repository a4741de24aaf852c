#pragma once

// Closed-class word lists and a noun list used for part-of-speech lookup.
// The same lists ship as plain UTF-8 files (one token per line) under
// data/lexicon/ and can be replaced at runtime with Lexicon::load().

#include <array>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ris/error.hpp"

namespace ris {

enum class Pos { Determiner, Preposition, Adjective, Spatial, Ordinal, Noun, Pronoun, Verb, Conjunction, Punct, Other };

namespace lexicon_data {

inline constexpr std::string_view kDeterminers[] = {
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "its", "his", "her", "their",
    "my", "your", "our", "all", "both", "another", "other", "no"};

inline constexpr std::string_view kPrepositions[] = {
    "in", "on", "at", "of", "with", "from", "by", "to", "near", "beside", "behind", "under", "over", "above", "below",
    "between", "among", "inside", "outside", "into", "onto", "across", "along", "around", "against", "toward",
    "towards", "without", "within", "upon", "beneath", "underneath", "like", "for", "than", "next", "besides"};

inline constexpr std::string_view kAdjectives[] = {
    "red", "green", "blue", "yellow", "purple", "orange", "cyan", "white", "black", "gray", "grey", "brown", "pink",
    "dark", "light", "bright", "pale", "big", "large", "huge", "small", "tiny", "little", "medium", "tall", "short",
    "long", "wide", "narrow", "thin", "thick", "round", "square", "empty", "full", "open", "closed", "old", "young",
    "new", "striped", "wooden", "metal", "plastic", "colored", "coloured", "same", "only", "other", "smaller",
    "larger", "bigger", "biggest", "smallest", "largest", "tallest", "shortest", "half", "whole", "visible",
    "partial", "crimson", "scarlet", "navy", "violet", "golden", "sitting", "standing", "cut", "sliced", "baby"};

// Location words: absolute and relative spatial vocabulary.
inline constexpr std::string_view kSpatial[] = {
    "left", "right", "top", "bottom", "middle", "center", "centre", "upper", "lower", "leftmost", "rightmost",
    "topmost", "bottommost", "uppermost", "lowermost", "corner", "front", "back", "closest", "nearest", "farthest",
    "furthest", "side", "edge", "far", "second-from-left", "second-from-right", "second-from-top",
    "second-from-bottom", "central", "lefthand", "righthand"};

inline constexpr std::string_view kOrdinals[] = {"first", "second", "third", "fourth", "fifth", "last",
                                                 "1st",   "2nd",    "3rd",   "4th",    "5th"};

inline constexpr std::string_view kPronouns[] = {
    "it", "one", "ones", "which", "who", "whose", "whom", "what", "he", "she", "they", "them", "him", "i", "you",
    "we", "itself", "something", "thing", "things", "anything", "everything", "there", "here"};

inline constexpr std::string_view kVerbs[] = {
    "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "looks", "look", "looking", "appears",
    "located", "placed", "lying", "lies", "sits", "stands", "holding", "holds", "wearing", "wears", "describes",
    "shown", "seen", "painted", "filled", "drawn", "touching", "facing", "eating", "riding", "resting"};

inline constexpr std::string_view kConjunctions[] = {"and", "or", "but", "nor", "so", "yet", "while", "where",
                                                     "when", "as", "if", "not", "very", "just", "also", "too"};

inline constexpr std::string_view kNouns[] = {
    // synthetic scene vocabulary
    "circle", "square", "triangle", "bar", "ring", "cross", "diamond", "hexagon", "star", "shape", "object",
    "blob", "disk", "disc", "block", "box", "rectangle", "plus", "donut", "picture", "image", "row", "column",
    "background", "scene", "canvas", "color", "colour", "size", "figure",
    // everyday referring-expression vocabulary
    "can", "tomato", "elephant", "man", "woman", "person", "guy", "girl", "boy", "lady", "kid", "child", "people",
    "shirt", "jacket", "hat", "umbrella", "dog", "cat", "horse", "cow", "sheep", "zebra", "giraffe", "bear", "bird",
    "car", "truck", "bus", "bike", "bicycle", "motorcycle", "train", "boat", "plane", "chair", "table", "bed",
    "couch", "sofa", "bench", "bowl", "cup", "glass", "bottle", "plate", "pizza", "cake", "sandwich", "banana",
    "apple", "broccoli", "carrot", "vase", "book", "clock", "lamp", "laptop", "phone", "tv",
    "screen", "window", "door", "tree", "bush", "grass", "sky", "water", "rock", "building", "wall", "sign", "pole",
    "lamp-post", "player", "catcher", "batter", "skier", "surfer", "tail", "head", "hand", "leg", "arm", "mug",
    "jar", "bag", "suitcase", "teddy", "animal", "food", "slice", "piece", "part", "spoon", "fork", "knife", "ball", "kite", "frisbee", "racket", "van", "shoe", "coat"};

}  // namespace lexicon_data

// Word -> part-of-speech map. Earlier categories win on overlap in the order
// they are registered below (closed classes before nouns before adjectives), so
// "square" resolves to NOUN while "red" stays an adjective.
class Lexicon {
 public:
  static constexpr std::array<std::pair<std::string_view, Pos>, 9> kFiles = {{
      {"determiners", Pos::Determiner},
      {"prepositions", Pos::Preposition},
      {"pronouns", Pos::Pronoun},
      {"verbs", Pos::Verb},
      {"conjunctions", Pos::Conjunction},
      {"spatial", Pos::Spatial},
      {"ordinals", Pos::Ordinal},
      {"nouns", Pos::Noun},
      {"adjectives", Pos::Adjective},
  }};

  static const Lexicon& builtin() {
    static const Lexicon lex = [] {
      Lexicon l;
      using namespace lexicon_data;
      l.add_all(kDeterminers, Pos::Determiner);
      l.add_all(kPrepositions, Pos::Preposition);
      l.add_all(kPronouns, Pos::Pronoun);
      l.add_all(kVerbs, Pos::Verb);
      l.add_all(kConjunctions, Pos::Conjunction);
      l.add_all(kSpatial, Pos::Spatial);
      l.add_all(kOrdinals, Pos::Ordinal);
      l.add_all(kNouns, Pos::Noun);
      l.add_all(kAdjectives, Pos::Adjective);
      return l;
    }();
    return lex;
  }

  // Reads <dir>/<category>.txt for every category in kFiles.
  static Lexicon load(const std::filesystem::path& dir) {
    Lexicon l;
    for (const auto& [file, pos] : kFiles) {
      const auto path = dir / (std::string(file) + ".txt");
      std::ifstream in(path);
      if (!in) throw Error(ErrorCode::IoError, "missing lexicon file " + path.string());
      std::string line;
      while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty() && line[0] != '#') l.add(line, pos);
      }
    }
    return l;
  }

  // Words of one category, sorted.
  std::vector<std::string> words(Pos pos) const {
    std::set<std::string> out;
    for (const auto& [w, p] : all_)
      if (p.count(pos)) out.insert(w);
    return {out.begin(), out.end()};
  }

  Pos tag(const std::string& token) const {
    if (!token.empty() && is_punct_token(token)) return Pos::Punct;
    auto it = primary_.find(token);
    return it == primary_.end() ? Pos::Other : it->second;
  }

  bool has(const std::string& token, Pos pos) const {
    auto it = all_.find(token);
    return it != all_.end() && it->second.count(pos) > 0;
  }

  bool is_location_word(const std::string& token) const { return has(token, Pos::Spatial); }

  // Tokens carrying no content: closed classes and punctuation.
  bool is_stopword(const std::string& token) const {
    switch (tag(token)) {
      case Pos::Determiner:
      case Pos::Preposition:
      case Pos::Pronoun:
      case Pos::Verb:
      case Pos::Conjunction:
      case Pos::Punct:
        return true;
      default:
        return false;
    }
  }

  static bool is_punct_token(const std::string& token) {
    for (unsigned char c : token)
      if (std::isalnum(c)) return false;
    return true;
  }

 private:
  template <std::size_t N>
  void add_all(const std::string_view (&words)[N], Pos pos) {
    for (auto w : words) add(std::string(w), pos);
  }

  void add(const std::string& word, Pos pos) {
    primary_.emplace(word, pos);  // first registration wins
    all_[word].insert(pos);
  }

  std::unordered_map<std::string, Pos> primary_;
  std::unordered_map<std::string, std::set<Pos>> all_;
};

}  // namespace ris
