#pragma once

// Procedural scenes of flat-coloured shapes and template-generated referring
// expressions whose meaning is checked symbolically against the scene.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ris/error.hpp"
#include "ris/image_io.hpp"
#include "ris/text_prompt.hpp"

namespace ris::synth {

enum class Shape { Circle, Square, Triangle, Bar, Ring, Cross, Diamond, Hexagon };
enum class Background { Flat, Gradient, Noise };
enum class Style { Locational, AppearanceOnly, Longform };

inline constexpr std::array<const char*, 8> kShapeNames{"circle", "square", "triangle", "bar",
                                                        "ring",   "cross",  "diamond",  "hexagon"};
inline const char* shape_name(Shape s) { return kShapeNames[static_cast<std::size_t>(s)]; }

inline Shape shape_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i)
    if (name == kShapeNames[i]) return static_cast<Shape>(i);
  throw Error(ErrorCode::ConfigError, "unknown shape '" + name + "'");
}

inline const char* background_name(Background b) {
  switch (b) {
    case Background::Flat: return "flat";
    case Background::Gradient: return "gradient";
    case Background::Noise: return "noise";
  }
  return "?";
}

inline const char* style_name(Style s) {
  switch (s) {
    case Style::Locational: return "locational";
    case Style::AppearanceOnly: return "appearance_only";
    case Style::Longform: return "longform";
  }
  return "?";
}

inline Style style_from_name(const std::string& name) {
  if (name == "locational") return Style::Locational;
  if (name == "appearance_only") return Style::AppearanceOnly;
  if (name == "longform") return Style::Longform;
  throw Error(ErrorCode::CorruptManifest, "unknown style '" + name + "'");
}

struct PaletteColor {
  const char* name;
  double r, g, b;
};

inline constexpr std::array<PaletteColor, 8> kPalette{{
    {"red", 0.90, 0.12, 0.10},
    {"green", 0.10, 0.72, 0.20},
    {"blue", 0.15, 0.30, 0.95},
    {"yellow", 0.95, 0.88, 0.10},
    {"purple", 0.58, 0.20, 0.80},
    {"orange", 1.00, 0.55, 0.05},
    {"cyan", 0.10, 0.85, 0.90},
    {"white", 0.97, 0.97, 0.97},
}};

struct SceneObject {
  Shape shape = Shape::Circle;
  std::size_t color = 0;  // palette index
  double radius = 8.0;    // half extent in pixels
  double cx = 0, cy = 0;  // centre in pixel coordinates
  bool vertical = false;  // bar orientation
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t height = 64, width = 64;
  std::vector<SceneObject> objects;  // z-order: later objects are drawn on top
  Background background = Background::Flat;
};

struct Scene {
  SceneSpec spec;
  RgbImage image;
  std::vector<BinaryMask> masks;  // visible (post-occlusion) mask per object
};

struct SceneConfig {
  std::vector<Shape> shapes{Shape::Circle, Shape::Square, Shape::Triangle, Shape::Bar};
  std::vector<Background> backgrounds{Background::Flat};
  std::size_t min_objects = 2, max_objects = 6;
  double min_radius = 6.0, max_radius = 13.0;
  std::size_t min_pixels = 16;
  double min_visible_fraction = 0.5;  // of an object's unoccluded area
  std::size_t placement_attempts = 200;
  std::size_t height = 64, width = 64;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Whether the pixel centre offset (dx, dy) from an object's centre is inside it.
inline bool shape_contains(const SceneObject& o, double dx, double dy) {
  const double r = o.radius, ax = std::abs(dx), ay = std::abs(dy);
  switch (o.shape) {
    case Shape::Circle: return dx * dx + dy * dy <= r * r;
    case Shape::Square: return ax <= 0.85 * r && ay <= 0.85 * r;
    case Shape::Triangle: return dy >= -r && dy <= r && ax <= 0.5 * (dy + r);
    case Shape::Bar: return o.vertical ? (ax <= 0.35 * r && ay <= r) : (ax <= r && ay <= 0.35 * r);
    case Shape::Ring: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    case Shape::Cross: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);
    case Shape::Diamond: return ax + ay <= r;
    case Shape::Hexagon: return ay <= 0.866 * r && 0.866 * ax + 0.5 * ay <= 0.866 * r;
  }
  return false;
}

inline BinaryMask rasterize(const SceneObject& o, std::size_t h, std::size_t w) {
  BinaryMask m{h, w, std::vector<std::uint8_t>(h * w, 0)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      m.bits[y * w + x] = shape_contains(o, x + 0.5 - o.cx, y + 0.5 - o.cy) ? 1 : 0;
  return m;
}

namespace detail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void paint_background(RgbImage& img, Background bg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t h = img.height, w = img.width;
  auto put = [&](std::size_t y, std::size_t x, double r, double g, double b) {
    auto* p = &img.pixels[(y * w + x) * 3];
    p[0] = to_byte(r);
    p[1] = to_byte(g);
    p[2] = to_byte(b);
  };
  switch (bg) {
    case Background::Flat: {
      const double level = 0.25 + 0.2 * u(rng);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) put(y, x, level, level, level);
      break;
    }
    case Background::Gradient: {
      double a[3], b[3];
      for (int c = 0; c < 3; ++c) {
        a[c] = 0.05 + 0.45 * u(rng);
        b[c] = 0.05 + 0.45 * u(rng);
      }
      const double angle = 2.0 * 3.141592653589793 * u(rng);
      const double ux = std::cos(angle), uy = std::sin(angle);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double t = 0.5 + 0.5 * ((x / (w - 1.0) - 0.5) * ux + (y / (h - 1.0) - 0.5) * uy) * 1.41421356;
          put(y, x, a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t);
        }
      break;
    }
    case Background::Noise: {
      double tint[3];
      for (double& t : tint) t = 0.15 + 0.25 * u(rng);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double n = 0.3 * (u(rng) - 0.5);
          put(y, x, tint[0] + n, tint[1] + n, tint[2] + n);
        }
      break;
    }
  }
}

}  // namespace detail

// Deterministic in (seed, config). Objects are placed one at a time on top of
// the earlier ones; a placement is rejected when it would leave any object
// with fewer than min_pixels visible pixels or less than min_visible_fraction
// of its own area.
inline Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  if (cfg.shapes.empty() || cfg.backgrounds.empty() || cfg.min_objects < 1 || cfg.min_objects > cfg.max_objects)
    throw Error(ErrorCode::ConfigError, "scene config needs shapes, backgrounds and a valid object range");
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  Scene s;
  s.spec.seed = seed;
  s.spec.height = cfg.height;
  s.spec.width = cfg.width;
  s.spec.background = cfg.backgrounds[pick(cfg.backgrounds.size())];
  const std::size_t h = cfg.height, w = cfg.width;
  const std::size_t n_objects = cfg.min_objects + pick(cfg.max_objects - cfg.min_objects + 1);

  std::vector<BinaryMask> full;
  std::vector<std::size_t> full_area;
  // owner[p] = index of the top object covering pixel p, or -1
  std::vector<int> owner(h * w, -1);
  for (std::size_t k = 0; k < n_objects; ++k) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.placement_attempts && !placed; ++attempt) {
      SceneObject o;
      o.shape = cfg.shapes[pick(cfg.shapes.size())];
      o.color = pick(kPalette.size());
      o.radius = cfg.min_radius + (cfg.max_radius - cfg.min_radius) * u(rng);
      o.cx = o.radius + (static_cast<double>(w) - 2 * o.radius) * u(rng);
      o.cy = o.radius + (static_cast<double>(h) - 2 * o.radius) * u(rng);
      o.vertical = u(rng) < 0.5;
      BinaryMask m = rasterize(o, h, w);
      const std::size_t area = m.count();
      if (area < cfg.min_pixels) continue;
      std::vector<std::size_t> visible(full.size(), 0);
      for (std::size_t p = 0; p < h * w; ++p)
        if (owner[p] >= 0 && !m.bits[p]) ++visible[static_cast<std::size_t>(owner[p])];
      bool ok = true;
      for (std::size_t j = 0; j < full.size() && ok; ++j)
        ok = visible[j] >= cfg.min_pixels &&
             static_cast<double>(visible[j]) >= cfg.min_visible_fraction * static_cast<double>(full_area[j]);
      if (!ok) continue;
      for (std::size_t p = 0; p < h * w; ++p)
        if (m.bits[p]) owner[p] = static_cast<int>(k);
      s.spec.objects.push_back(o);
      full.push_back(std::move(m));
      full_area.push_back(area);
      placed = true;
    }
    if (!placed)
      throw Error(ErrorCode::PlacementFailure,
                  "scene " + std::to_string(seed) + ": object " + std::to_string(k) + " could not be placed");
  }

  s.masks.assign(n_objects, BinaryMask{h, w, std::vector<std::uint8_t>(h * w, 0)});
  for (std::size_t p = 0; p < h * w; ++p)
    if (owner[p] >= 0) s.masks[static_cast<std::size_t>(owner[p])].bits[p] = 1;

  s.image = RgbImage{h, w, std::vector<std::uint8_t>(h * w * 3)};
  detail::paint_background(s.image, s.spec.background, rng);
  for (std::size_t p = 0; p < h * w; ++p) {
    if (owner[p] < 0) continue;
    const auto& c = kPalette[s.spec.objects[static_cast<std::size_t>(owner[p])].color];
    s.image.pixels[p * 3] = detail::to_byte(c.r);
    s.image.pixels[p * 3 + 1] = detail::to_byte(c.g);
    s.image.pixels[p * 3 + 2] = detail::to_byte(c.b);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Symbolic descriptions

enum class SizeRel { None, Largest, Smallest };
// Ordering among the objects that match the appearance predicates.
enum class Loc { None, Left, Right, Top, Bottom, Middle, SecondLeft, SecondRight };
// Absolute third of the canvas.
enum class Region { None, Left, Right, Top, Bottom };
enum class Relation { None, LeftOf, RightOf, Above, Below };

struct Description {
  std::optional<Shape> shape;
  std::optional<std::size_t> color;
  SizeRel size = SizeRel::None;
  Loc loc = Loc::None;
  Region region = Region::None;
  Relation relation = Relation::None;
  std::size_t reference = 0;  // object index the relation is anchored to
};

struct ObjectStats {
  double cx, cy;  // centroid of the visible mask
  std::size_t area;
};

inline std::vector<ObjectStats> object_stats(const Scene& s) {
  std::vector<ObjectStats> out;
  for (const auto& m : s.masks) {
    double sx = 0, sy = 0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < m.height; ++y)
      for (std::size_t x = 0; x < m.width; ++x)
        if (m.bits[y * m.width + x]) {
          sx += x + 0.5;
          sy += y + 0.5;
          ++n;
        }
    out.push_back({n ? sx / n : 0.0, n ? sy / n : 0.0, n});
  }
  return out;
}

inline constexpr double kLocMargin = 6.0;       // pixels between neighbours in an ordering
inline constexpr double kRelationMargin = 8.0;  // pixels between target and reference
inline constexpr double kSizeRatio = 1.3;       // extreme area vs runner-up

// Objects of the scene that satisfy every predicate of `d`.
inline std::vector<std::size_t> denotation(const Scene& s, const Description& d) {
  const auto stats = object_stats(s);
  const double w = static_cast<double>(s.spec.width), h = static_cast<double>(s.spec.height);
  std::vector<std::size_t> c;
  for (std::size_t i = 0; i < s.spec.objects.size(); ++i) {
    const auto& o = s.spec.objects[i];
    if (d.shape && o.shape != *d.shape) continue;
    if (d.color && o.color != *d.color) continue;
    c.push_back(i);
  }
  if (d.region != Region::None) {
    std::erase_if(c, [&](std::size_t i) {
      switch (d.region) {
        case Region::Left: return stats[i].cx >= w / 3;
        case Region::Right: return stats[i].cx <= 2 * w / 3;
        case Region::Top: return stats[i].cy >= h / 3;
        case Region::Bottom: return stats[i].cy <= 2 * h / 3;
        default: return false;
      }
    });
  }
  if (d.relation != Relation::None) {
    const auto& r = stats.at(d.reference);
    std::erase_if(c, [&](std::size_t i) {
      if (i == d.reference) return true;
      switch (d.relation) {
        case Relation::LeftOf: return stats[i].cx > r.cx - kRelationMargin;
        case Relation::RightOf: return stats[i].cx < r.cx + kRelationMargin;
        case Relation::Above: return stats[i].cy > r.cy - kRelationMargin;
        case Relation::Below: return stats[i].cy < r.cy + kRelationMargin;
        default: return false;
      }
    });
  }
  if (d.size != SizeRel::None) {
    if (c.size() < 2) return {};
    std::sort(c.begin(), c.end(), [&](std::size_t a, std::size_t b) { return stats[a].area < stats[b].area; });
    const bool largest = d.size == SizeRel::Largest;
    const double extreme = static_cast<double>(stats[largest ? c.back() : c.front()].area);
    const double runner = static_cast<double>(stats[largest ? c[c.size() - 2] : c[1]].area);
    const bool clear = largest ? extreme >= kSizeRatio * runner : runner >= kSizeRatio * extreme;
    if (!clear) return {};
    c = {largest ? c.back() : c.front()};
  }
  if (d.loc != Loc::None) {
    const bool horizontal = d.loc == Loc::Left || d.loc == Loc::Right || d.loc == Loc::Middle ||
                            d.loc == Loc::SecondLeft || d.loc == Loc::SecondRight;
    auto key = [&](std::size_t i) { return horizontal ? stats[i].cx : stats[i].cy; };
    std::sort(c.begin(), c.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    auto gap = [&](std::size_t a, std::size_t b) { return key(c[b]) - key(c[a]) >= kLocMargin; };
    const std::size_t n = c.size();
    std::optional<std::size_t> pos;
    switch (d.loc) {
      case Loc::Left:
      case Loc::Top:
        if (n >= 2 && gap(0, 1)) pos = 0;
        break;
      case Loc::Right:
      case Loc::Bottom:
        if (n >= 2 && gap(n - 2, n - 1)) pos = n - 1;
        break;
      case Loc::Middle:
        if (n == 3 && gap(0, 1) && gap(1, 2)) pos = 1;
        break;
      case Loc::SecondLeft:
        if (n >= 3 && gap(0, 1) && gap(1, 2)) pos = 1;
        break;
      case Loc::SecondRight:
        if (n >= 3 && gap(n - 3, n - 2) && gap(n - 2, n - 1)) pos = n - 2;
        break;
      default:
        break;
    }
    if (!pos) return {};
    c = {c[*pos]};
  }
  std::sort(c.begin(), c.end());
  return c;
}

inline bool identifies(const Scene& s, const Description& d, std::size_t target) {
  const auto den = denotation(s, d);
  return den.size() == 1 && den[0] == target;
}

// ---------------------------------------------------------------------------
// Surface realisation

struct GeneratedExpression {
  Expression expression;
  std::string target_noun;  // surface noun naming the target (label oracle)
  Description description;
  Style style;
};

namespace detail {

inline const std::vector<std::string>& shape_synonyms(Shape s) {
  static const std::array<std::vector<std::string>, 8> pools{{
      {"circle", "disk"},
      {"square", "block"},
      {"triangle"},
      {"bar", "rectangle"},
      {"ring", "donut"},
      {"cross", "plus"},
      {"diamond"},
      {"hexagon"},
  }};
  return pools[static_cast<std::size_t>(s)];
}

inline const std::vector<std::string>& color_synonyms(std::size_t c) {
  static const std::array<std::vector<std::string>, 8> pools{{
      {"red", "crimson"},
      {"green"},
      {"blue"},
      {"yellow"},
      {"purple", "violet"},
      {"orange"},
      {"cyan"},
      {"white"},
  }};
  return pools[c];
}

template <class T>
const T& choose(const std::vector<T>& xs, std::mt19937_64& rng) {
  return xs[std::uniform_int_distribution<std::size_t>(0, xs.size() - 1)(rng)];
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (w.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

inline std::string size_word(SizeRel s, std::mt19937_64& rng) {
  static const std::vector<std::string> big{"big", "large", "biggest", "largest"};
  static const std::vector<std::string> small{"small", "little", "smallest", "tiny"};
  if (s == SizeRel::Largest) return choose(big, rng);
  if (s == SizeRel::Smallest) return choose(small, rng);
  return "";
}

inline std::vector<std::string> loc_phrases(Loc l) {
  switch (l) {
    case Loc::Left: return {"on the left", "at the left", "on the left side"};
    case Loc::Right: return {"on the right", "at the right", "on the right side"};
    case Loc::Top: return {"at the top", "on top"};
    case Loc::Bottom: return {"at the bottom", "on the bottom"};
    case Loc::Middle: return {"in the middle", "in the center"};
    case Loc::SecondLeft: return {"second from the left"};
    case Loc::SecondRight: return {"second from the right"};
    default: return {""};
  }
}

inline std::vector<std::string> loc_adjectives(Loc l) {
  switch (l) {
    case Loc::Left: return {"left", "leftmost"};
    case Loc::Right: return {"right", "rightmost"};
    case Loc::Top: return {"top", "upper", "topmost"};
    case Loc::Bottom: return {"bottom", "lower"};
    case Loc::Middle: return {"middle", "center"};
    case Loc::SecondLeft: return {"second-from-left"};
    case Loc::SecondRight: return {"second-from-right"};
    default: return {""};
  }
}

inline std::vector<std::string> relation_phrases(Relation r) {
  switch (r) {
    case Relation::LeftOf: return {"to the left of"};
    case Relation::RightOf: return {"to the right of"};
    case Relation::Above: return {"above", "over"};
    case Relation::Below: return {"below", "under", "beneath"};
    default: return {""};
  }
}

inline std::string region_phrase(Region r) {
  switch (r) {
    case Region::Left: return "on the left side of the picture";
    case Region::Right: return "on the right side of the picture";
    case Region::Top: return "near the top of the picture";
    case Region::Bottom: return "near the bottom of the picture";
    default: return "";
  }
}

}  // namespace detail

// Appearance-only, locational or long-form expression for `target`. The
// description is verified to pick out exactly that object before it is
// rendered. Throws CannotDisambiguate when no template candidate works.
inline GeneratedExpression generate_expression(const Scene& scene, std::size_t target, Style style,
                                               std::mt19937_64& rng) {
  using detail::choose;
  if (target >= scene.spec.objects.size()) throw Error(ErrorCode::ConfigError, "target index out of range");
  const SceneObject& t = scene.spec.objects[target];
  std::vector<std::string> dets{"the", "a", ""};

  std::vector<Description> candidates;
  auto base = [&](bool color, SizeRel size) {
    Description d;
    d.shape = t.shape;
    if (color) d.color = t.color;
    d.size = size;
    return d;
  };
  switch (style) {
    case Style::AppearanceOnly:
      for (bool color : {false, true})
        for (SizeRel s : {SizeRel::None, SizeRel::Largest, SizeRel::Smallest}) candidates.push_back(base(color, s));
      break;
    case Style::Locational:
      for (bool color : {false, true})
        for (Loc l : {Loc::Left, Loc::Right, Loc::Top, Loc::Bottom, Loc::Middle, Loc::SecondLeft, Loc::SecondRight}) {
          Description d = base(color, SizeRel::None);
          d.loc = l;
          candidates.push_back(d);
        }
      break;
    case Style::Longform:
      for (SizeRel s : {SizeRel::None, SizeRel::Largest, SizeRel::Smallest}) {
        for (std::size_t ref = 0; ref < scene.spec.objects.size(); ++ref) {
          if (ref == target) continue;
          Description anchor;
          anchor.shape = scene.spec.objects[ref].shape;
          anchor.color = scene.spec.objects[ref].color;
          if (!identifies(scene, anchor, ref)) continue;
          for (Relation r : {Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below}) {
            Description d = base(true, s);
            d.relation = r;
            d.reference = ref;
            candidates.push_back(d);
          }
        }
        for (Region g : {Region::Left, Region::Right, Region::Top, Region::Bottom}) {
          Description d = base(true, s);
          d.region = g;
          candidates.push_back(d);
        }
      }
      break;
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  auto chosen = std::find_if(candidates.begin(), candidates.end(),
                             [&](const Description& d) { return identifies(scene, d, target); });
  if (chosen == candidates.end())
    throw Error(ErrorCode::CannotDisambiguate, "scene " + std::to_string(scene.spec.seed) + " object " +
                                                   std::to_string(target) + " (" + style_name(style) + ")");
  const Description d = *chosen;

  const std::string noun = choose(detail::shape_synonyms(t.shape), rng);
  const std::string color = d.color ? choose(detail::color_synonyms(*d.color), rng) : "";
  const std::string size = detail::size_word(d.size, rng);
  std::string text;
  switch (style) {
    case Style::AppearanceOnly:
      if (!color.empty() && rng() % 3 == 0)
        text = detail::join_words({choose(dets, rng), size, noun, "that is", color});
      else
        text = detail::join_words({choose(dets, rng), size, color, noun});
      break;
    case Style::Locational:
      if (rng() % 2 == 0)
        text = detail::join_words({choose(dets, rng), color, noun, choose(detail::loc_phrases(d.loc), rng)});
      else
        text = detail::join_words({choose(std::vector<std::string>{"the", ""}, rng),
                                   choose(detail::loc_adjectives(d.loc), rng), color, noun});
      break;
    case Style::Longform: {
      static const std::vector<std::string> links{"that is", "which is", "placed", "sitting", "located"};
      std::string tail;
      if (d.relation != Relation::None) {
        const auto& ref = scene.spec.objects[d.reference];
        tail = detail::join_words({choose(detail::relation_phrases(d.relation), rng), "the",
                                   choose(detail::color_synonyms(ref.color), rng),
                                   choose(detail::shape_synonyms(ref.shape), rng)});
      } else {
        tail = detail::region_phrase(d.region);
      }
      text = detail::join_words({choose(dets, rng), size, color, noun, choose(links, rng), tail});
      if (tokenize(text).size() < 8) text += " in this picture";
      break;
    }
  }
  return {Expression::from_text(text), noun, d, style};
}

}  // namespace ris::synth
