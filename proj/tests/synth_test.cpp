#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "ris/corpus.hpp"
#include "ris/lexicon.hpp"
#include "ris/synth.hpp"

namespace ris::synth {
namespace {

namespace fs = std::filesystem;

// Scene from hand-placed objects, occluded in z-order.
Scene make_scene(const std::vector<SceneObject>& objects) {
  Scene s;
  s.spec.objects = objects;
  std::vector<int> owner(64 * 64, -1);
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto m = rasterize(objects[k], 64, 64);
    for (std::size_t p = 0; p < m.bits.size(); ++p)
      if (m.bits[p]) owner[p] = static_cast<int>(k);
  }
  s.masks.assign(objects.size(), BinaryMask{64, 64, std::vector<std::uint8_t>(64 * 64, 0)});
  for (std::size_t p = 0; p < owner.size(); ++p)
    if (owner[p] >= 0) s.masks[static_cast<std::size_t>(owner[p])].bits[p] = 1;
  return s;
}

SceneObject obj(Shape shape, std::size_t color, double cx, double cy, double r = 8.0) {
  SceneObject o;
  o.shape = shape;
  o.color = color;
  o.cx = cx;
  o.cy = cy;
  o.radius = r;
  return o;
}

TEST(Scene, DeterministicInSeed) {
  const SceneConfig cfg;
  for (std::uint64_t seed : {1ull, 77ull, 123456789ull}) {
    const auto a = generate_scene(seed, cfg), b = generate_scene(seed, cfg);
    EXPECT_EQ(a.image.pixels, b.image.pixels);
    ASSERT_EQ(a.masks.size(), b.masks.size());
    for (std::size_t i = 0; i < a.masks.size(); ++i) EXPECT_EQ(a.masks[i], b.masks[i]);
  }
  EXPECT_NE(generate_scene(1, cfg).image.pixels, generate_scene(2, cfg).image.pixels);
}

TEST(Scene, MasksDisjointLargeEnoughAndMatchPixels) {
  SceneConfig cfg;
  cfg.backgrounds = {Background::Flat, Background::Gradient, Background::Noise};
  std::size_t scenes = 0;
  for (std::uint64_t seed = 0; scenes < 200; ++seed) {
    Scene s;
    try {
      s = generate_scene(seed, cfg);
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::PlacementFailure);
      continue;
    }
    ++scenes;
    ASSERT_GE(s.masks.size(), cfg.min_objects);
    ASSERT_LE(s.masks.size(), cfg.max_objects);
    std::vector<int> cover(64 * 64, 0);
    for (std::size_t k = 0; k < s.masks.size(); ++k) {
      ASSERT_GE(s.masks[k].count(), cfg.min_pixels);
      const auto& c = kPalette[s.spec.objects[k].color];
      for (std::size_t p = 0; p < cover.size(); ++p) {
        if (!s.masks[k].bits[p]) continue;
        ++cover[p];
        // the object's colour is painted exactly where its mask is
        ASSERT_EQ(s.image.pixels[p * 3], detail::to_byte(c.r));
        ASSERT_EQ(s.image.pixels[p * 3 + 2], detail::to_byte(c.b));
      }
    }
    for (int c : cover) ASSERT_LE(c, 1);
  }
}

TEST(Scene, RejectsBadConfig) {
  SceneConfig cfg;
  cfg.shapes.clear();
  EXPECT_THROW(generate_scene(1, cfg), Error);
}

TEST(Denotation, LocationalOrdering) {
  const Scene s = make_scene({obj(Shape::Circle, 0, 12, 32), obj(Shape::Circle, 0, 50, 32),
                              obj(Shape::Square, 2, 32, 10)});
  Description d;
  d.shape = Shape::Circle;
  d.loc = Loc::Left;
  EXPECT_EQ(denotation(s, d), std::vector<std::size_t>{0});
  d.loc = Loc::Right;
  EXPECT_EQ(denotation(s, d), std::vector<std::size_t>{1});
  d.loc = Loc::None;
  EXPECT_EQ(denotation(s, d).size(), 2u);
  EXPECT_FALSE(identifies(s, d, 0));
  Description sq;
  sq.shape = Shape::Square;
  EXPECT_TRUE(identifies(s, sq, 2));
}

TEST(Denotation, LookalikesCannotBeDescribedByAppearance) {
  const Scene s = make_scene({obj(Shape::Circle, 0, 14, 32), obj(Shape::Circle, 0, 48, 32)});
  std::mt19937_64 rng(3);
  try {
    generate_expression(s, 0, Style::AppearanceOnly, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CannotDisambiguate);
  }
  // location resolves it
  const auto ge = generate_expression(s, 0, Style::Locational, rng);
  EXPECT_TRUE(identifies(s, ge.description, 0));
}

TEST(Denotation, SizeNeedsClearMargin) {
  const Scene close = make_scene({obj(Shape::Circle, 0, 14, 32, 8.0), obj(Shape::Circle, 0, 48, 32, 8.5)});
  Description d;
  d.shape = Shape::Circle;
  d.size = SizeRel::Largest;
  EXPECT_TRUE(denotation(close, d).empty());
  const Scene clear = make_scene({obj(Shape::Circle, 0, 14, 32, 6.0), obj(Shape::Circle, 0, 44, 32, 12.0)});
  EXPECT_EQ(denotation(clear, d), std::vector<std::size_t>{1});
  d.size = SizeRel::Smallest;
  EXPECT_EQ(denotation(clear, d), std::vector<std::size_t>{0});
}

TEST(Expression, GeneratedTextIsVerifiedAndNamesTheTarget) {
  const SceneConfig cfg;
  std::size_t checked = 0;
  for (std::uint64_t seed = 100; checked < 300; ++seed) {
    Scene s;
    try {
      s = generate_scene(seed, cfg);
    } catch (const Error&) {
      continue;
    }
    std::mt19937_64 rng(seed);
    for (Style style : {Style::AppearanceOnly, Style::Locational, Style::Longform}) {
      for (std::size_t t = 0; t < s.spec.objects.size(); ++t) {
        try {
          const auto ge = generate_expression(s, t, style, rng);
          ASSERT_TRUE(identifies(s, ge.description, t));
          const auto& toks = ge.expression.tokens;
          ASSERT_NE(std::find(toks.begin(), toks.end(), ge.target_noun), toks.end()) << ge.expression.text;
          if (style == Style::Longform) {
            ASSERT_GE(toks.size(), 8u) << ge.expression.text;
          }
          ++checked;
        } catch (const Error& e) {
          ASSERT_EQ(e.code(), ErrorCode::CannotDisambiguate);
        }
      }
    }
  }
}

std::vector<ReferringSample> generate_split(const std::string& profile, const std::string& split, std::size_t n,
                                            std::uint64_t seed = 1) {
  const auto p = corpus_profile(profile);
  std::vector<ReferringSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(p, seed, split, i).sample);
  return out;
}

TEST(Corpus, ProfilesHonourTheirStyleAndShapeSets) {
  for (const std::string name : {"a", "b", "c", "d"}) {
    const auto p = corpus_profile(name);
    std::set<Style> allowed;
    for (const auto& s : p.styles) allowed.insert(s.style);
    const std::set<Shape> shapes(p.scene.shapes.begin(), p.scene.shapes.end());
    for (std::size_t i = 0; i < 60; ++i) {
      const auto g = generate_sample(p, 1, "val", i);
      EXPECT_TRUE(allowed.count(g.sample.style)) << name;
      EXPECT_GE(g.sample.mask.count(), 16u);
      EXPECT_EQ(g.sample.mask, g.scene.masks[g.sample.target_index]);
      for (const auto& o : g.scene.spec.objects) EXPECT_TRUE(shapes.count(o.shape)) << name;
      EXPECT_TRUE(std::count(p.scene.backgrounds.begin(), p.scene.backgrounds.end(), g.scene.spec.background));
    }
  }
  EXPECT_TRUE(corpus_profile("d").eval_only);
  EXPECT_EQ(corpus_profile("d").split_sizes.at("train"), 0u);
  EXPECT_THROW(corpus_profile("e"), Error);
}

TEST(Corpus, AppearanceOnlyCorpusHasNoLocationWords) {
  const auto& lex = Lexicon::builtin();
  for (const auto& s : generate_split("b", "train", 300))
    for (const auto& tok : tokenize(s.expression)) ASSERT_FALSE(lex.is_location_word(tok)) << s.expression;
}

TEST(Corpus, HeadFinderRecoversGeneratorNouns) {
  for (const std::string name : {"a", "b", "c", "d"}) {
    const auto samples = generate_split(name, "test", 250, 5);
    std::size_t hits = 0;
    for (const auto& s : samples) {
      const auto expr = Expression::from_text(s.expression);
      hits += extract_target_noun(expr).token == s.target_noun;
      const auto prompted = build_prompted_expression(expr);
      ASSERT_EQ(prompted.full_tokens().back(), prompted.target().token);
    }
    EXPECT_GE(static_cast<double>(hits) / samples.size(), 0.99) << name << ": " << hits << "/" << samples.size();
  }
}

TEST(Corpus, SplitsDoNotShareScenes) {
  std::set<std::uint64_t> seen;
  for (const char* split : kSplits)
    for (const auto& s : generate_split("a", split, 100)) EXPECT_TRUE(seen.insert(s.scene_seed).second);
}

TEST(Corpus, BuildIsDeterministicAndRoundTrips) {
  auto p = corpus_profile("c");
  p.split_sizes = {{"train", 12}, {"val", 4}, {"test", 4}};
  const fs::path root = fs::temp_directory_path() / "ris_synth_test";
  fs::remove_all(root);
  build_corpus(p, root / "one", 9, 1);
  build_corpus(p, root / "two", 9, 3);
  for (const char* split : kSplits) {
    auto read = [](const fs::path& f) {
      std::ifstream in(f);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    EXPECT_EQ(read(root / "one" / (std::string(split) + ".jsonl")), read(root / "two" / (std::string(split) + ".jsonl")));
    const auto loaded = load_split(root / "one", split);
    ASSERT_EQ(loaded.size(), p.split_sizes.at(split));
    for (std::size_t i = 0; i < loaded.size(); ++i) {
      const auto g = generate_sample(p, 9, split, i);
      EXPECT_EQ(loaded[i].mask, g.sample.mask);
      EXPECT_EQ(loaded[i].expression, g.sample.expression);
      EXPECT_EQ(read_ppm(root / "one" / loaded[i].image_path).pixels, g.scene.image.pixels);
    }
  }
  EXPECT_THROW(load_split(root / "missing", "train"), Error);
  fs::remove_all(root);
}

TEST(Corpus, CorruptManifestLine) {
  const fs::path dir = fs::temp_directory_path() / "ris_synth_corrupt";
  fs::create_directories(dir);
  std::ofstream(dir / "val.jsonl") << "{\"scene_seed\": 1}\n";
  try {
    load_split(dir, "val");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CorruptManifest);
  }
  fs::remove_all(dir);
}

}  // namespace
}  // namespace ris::synth
