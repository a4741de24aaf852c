#pragma once

// Corpus profiles, generation to disk and manifest loading.
//
// Layout of a generated corpus directory:
//   corpus.json            profile summary (sizes, styles, shapes, backgrounds)
//   <split>.jsonl          one sample per line
//   images/<split>_NNNNN.ppm

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "ris/synth.hpp"

namespace ris::synth {

inline constexpr std::array<const char*, 3> kSplits{"train", "val", "test"};

struct StyleWeight {
  Style style;
  double weight;
};

struct CorpusProfile {
  std::string name;
  SceneConfig scene;
  std::vector<StyleWeight> styles;
  std::map<std::string, std::size_t> split_sizes{{"train", 2000}, {"val", 200}, {"test", 400}};
  bool eval_only = false;
};

inline const std::vector<Shape>& shape_set_s1() {
  static const std::vector<Shape> s{Shape::Circle, Shape::Square, Shape::Triangle, Shape::Bar};
  return s;
}
inline const std::vector<Shape>& shape_set_s2() {
  static const std::vector<Shape> s{Shape::Ring, Shape::Cross, Shape::Diamond, Shape::Hexagon};
  return s;
}

// a: locational + appearance, S1 shapes, flat backgrounds
// b: appearance only, S1 shapes, flat backgrounds
// c: all styles, S2 shapes, gradient/noise backgrounds
// d: clutter, longform only, S1+S2, noise backgrounds; evaluation splits only
inline CorpusProfile corpus_profile(const std::string& name) {
  CorpusProfile p;
  p.name = name;
  if (name == "a") {
    p.scene.shapes = shape_set_s1();
    p.styles = {{Style::Locational, 0.5}, {Style::AppearanceOnly, 0.5}};
  } else if (name == "b") {
    p.scene.shapes = shape_set_s1();
    p.styles = {{Style::AppearanceOnly, 1.0}};
  } else if (name == "c") {
    p.scene.shapes = shape_set_s2();
    p.scene.backgrounds = {Background::Gradient, Background::Noise};
    p.styles = {{Style::Locational, 1.0}, {Style::AppearanceOnly, 1.0}, {Style::Longform, 1.0}};
  } else if (name == "d") {
    p.scene.shapes = shape_set_s1();
    p.scene.shapes.insert(p.scene.shapes.end(), shape_set_s2().begin(), shape_set_s2().end());
    p.scene.backgrounds = {Background::Noise};
    p.scene.min_objects = 5;
    p.scene.max_objects = 6;
    p.scene.min_radius = 5.0;
    p.scene.max_radius = 9.0;
    p.scene.min_visible_fraction = 0.4;
    p.styles = {{Style::Longform, 1.0}};
    p.split_sizes = {{"train", 0}, {"val", 200}, {"test", 400}};
    p.eval_only = true;
  } else {
    throw Error(ErrorCode::ConfigError, "unknown corpus profile '" + name + "' (expected a|b|c|d)");
  }
  return p;
}

inline std::size_t profile_index(const std::string& name) {
  static const std::vector<std::string> names{"a", "b", "c", "d"};
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? 15 : static_cast<std::size_t>(it - names.begin());
}

inline std::size_t split_index(const std::string& split) {
  for (std::size_t i = 0; i < kSplits.size(); ++i)
    if (split == kSplits[i]) return i;
  throw Error(ErrorCode::ConfigError, "unknown split '" + split + "'");
}

inline constexpr std::size_t kAttemptsPerSample = 256;

// Seeds of one (corpus seed, profile, split) live in their own block, so
// splits never share a scene.
inline std::uint64_t scene_seed(std::uint64_t corpus_seed, std::size_t profile, std::size_t split, std::size_t index,
                                std::size_t attempt) {
  if (index >= (1u << 20)) throw Error(ErrorCode::ConfigError, "split too large");
  return (corpus_seed << 32) + (static_cast<std::uint64_t>(profile * 4 + split) << 28) +
         static_cast<std::uint64_t>(index) * kAttemptsPerSample + attempt;
}

struct ReferringSample {
  std::uint64_t scene_seed = 0;
  std::string split;
  std::string image_path;  // relative to the corpus directory
  std::size_t target_index = 0;
  std::string expression;
  Style style = Style::AppearanceOnly;
  std::string target_noun;
  BinaryMask mask;
};

struct GeneratedSample {
  ReferringSample sample;
  Scene scene;
  GeneratedExpression expression;
};

// Sample `index` of a split: retries with the next scene seed on
// PlacementFailure or when no object of the scene can be described.
inline GeneratedSample generate_sample(const CorpusProfile& profile, std::uint64_t corpus_seed,
                                       const std::string& split, std::size_t index) {
  const std::size_t pid = profile_index(profile.name), sid = split_index(split);
  for (std::size_t attempt = 0; attempt < kAttemptsPerSample; ++attempt) {
    const std::uint64_t seed = scene_seed(corpus_seed, pid, sid, index, attempt);
    Scene scene;
    try {
      scene = generate_scene(seed, profile.scene);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::PlacementFailure) continue;
      throw;
    }
    std::mt19937_64 rng(splitmix64(seed ^ 0x5eed5eed5eed5eedull));
    double total = 0;
    for (const auto& s : profile.styles) total += s.weight;
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    Style style = profile.styles.back().style;
    for (const auto& s : profile.styles) {
      if (r < s.weight) {
        style = s.style;
        break;
      }
      r -= s.weight;
    }
    std::vector<std::size_t> order(scene.spec.objects.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t target : order) {
      try {
        GeneratedExpression ge = generate_expression(scene, target, style, rng);
        GeneratedSample g;
        char name[64];
        std::snprintf(name, sizeof name, "images/%s_%05zu.ppm", split.c_str(), index);
        g.sample = {seed, split, name, target, ge.expression.text, style, ge.target_noun, scene.masks[target]};
        g.scene = std::move(scene);
        g.expression = std::move(ge);
        return g;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::CannotDisambiguate) throw;
      }
    }
  }
  throw Error(ErrorCode::PlacementFailure, "no usable scene for " + profile.name + "/" + split + " sample " +
                                               std::to_string(index));
}

inline nlohmann::json sample_to_json(const ReferringSample& s) {
  return {{"scene_seed", s.scene_seed},
          {"split", s.split},
          {"image_path", s.image_path},
          {"target_index", s.target_index},
          {"expression", s.expression},
          {"style", style_name(s.style)},
          {"target_noun", s.target_noun},
          {"height", s.mask.height},
          {"width", s.mask.width},
          {"rle", rle_to_string(rle_encode(s.mask))}};
}

inline ReferringSample sample_from_json(const nlohmann::json& j) {
  ReferringSample s;
  try {
    s.scene_seed = j.at("scene_seed").get<std::uint64_t>();
    s.split = j.value("split", "");
    s.image_path = j.at("image_path").get<std::string>();
    s.target_index = j.value("target_index", std::size_t{0});
    s.expression = j.at("expression").get<std::string>();
    s.style = style_from_name(j.at("style").get<std::string>());
    s.target_noun = j.at("target_noun").get<std::string>();
    const auto h = j.value("height", std::size_t{64}), w = j.value("width", std::size_t{64});
    s.mask = rle_decode(rle_from_string(j.at("rle").get<std::string>()), h, w);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, e.what());
  }
  return s;
}

struct CorpusSummary {
  std::string name;
  std::filesystem::path dir;
  std::map<std::string, std::size_t> split_sizes;
};

// Writes images and manifests for every split of `profile`. Samples are
// generated in parallel over `threads` workers; output is independent of the
// thread count.
inline CorpusSummary build_corpus(const CorpusProfile& profile, const std::filesystem::path& dir,
                                  std::uint64_t corpus_seed, unsigned threads = 1) {
  std::filesystem::create_directories(dir / "images");
  nlohmann::json styles = nlohmann::json::object();
  for (const auto& s : profile.styles) styles[style_name(s.style)] = s.weight;
  nlohmann::json shapes = nlohmann::json::array(), backgrounds = nlohmann::json::array();
  for (auto s : profile.scene.shapes) shapes.push_back(shape_name(s));
  for (auto b : profile.scene.backgrounds) backgrounds.push_back(background_name(b));
  nlohmann::json files = nlohmann::json::object();

  for (const char* split : kSplits) {
    const std::size_t n = profile.split_sizes.count(split) ? profile.split_sizes.at(split) : 0;
    std::vector<std::string> lines(n);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          GeneratedSample g = generate_sample(profile, corpus_seed, split, i);
          write_ppm(dir / g.sample.image_path, g.scene.image);
          lines[i] = sample_to_json(g.sample).dump();
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < std::max(1u, threads); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    const std::string file = std::string(split) + ".jsonl";
    std::ofstream out(dir / file, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / file).string());
    for (const auto& l : lines) out << l << '\n';
    files[split] = file;
  }

  nlohmann::json summary = {{"name", profile.name},
                            {"seed", corpus_seed},
                            {"eval_only", profile.eval_only},
                            {"splits", profile.split_sizes},
                            {"styles", styles},
                            {"shapes", shapes},
                            {"backgrounds", backgrounds},
                            {"files", files}};
  std::ofstream(dir / "corpus.json", std::ios::trunc) << summary.dump(2) << '\n';
  return {profile.name, dir, profile.split_sizes};
}

inline std::vector<ReferringSample> load_split(const std::filesystem::path& corpus_dir, const std::string& split) {
  const auto path = corpus_dir / (split + ".jsonl");
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::CorruptManifest, "missing manifest " + path.string());
  std::vector<ReferringSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::CorruptManifest, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(sample_from_json(j));
  }
  return out;
}

}  // namespace ris::synth
