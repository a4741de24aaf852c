#pragma once

// Run configuration (flat dotted-key JSON), training runs that write
// self-describing artifact directories, checkpoint loading, the
// cross-dataset grid and the baseline / +TP / +MFA&VG ablation.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "ris/training.hpp"

namespace ris {

struct GuidanceSource {
  std::string source = "seed:17";  // <checkpoint path> | seed:N | autoenc
  std::size_t autoenc_steps = 400;
  std::size_t autoenc_batch = 4;
  double autoenc_lr = 1e-3;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  GuidanceSource guidance;
  std::string corpus;  // training corpus directory, relative to the workdir
  std::uint64_t corpus_seed = 1;
};

namespace detail {

inline nlohmann::json nested_config(const RunConfig& c) {
  nlohmann::json model = c.model;
  model.erase("vocab_size");  // derived from the training corpus
  return {{"model", model},
          {"train", c.train},
          {"guidance",
           {{"source", c.guidance.source},
            {"autoenc_steps", c.guidance.autoenc_steps},
            {"autoenc_batch", c.guidance.autoenc_batch},
            {"autoenc_lr", c.guidance.autoenc_lr}}},
          {"data", {{"corpus", c.corpus}, {"corpus_seed", c.corpus_seed}}}};
}

}  // namespace detail

// {"model.base_channels": 32, ...}; keys sorted.
inline nlohmann::json to_flat_json(const RunConfig& c) {
  const nlohmann::json nested = detail::nested_config(c);
  nlohmann::json flat = nlohmann::json::object();
  for (const auto& [section, body] : nested.items())
    for (const auto& [key, value] : body.items()) flat[section + "." + key] = value;
  return flat;
}

// Applies dotted-key overrides. Unknown keys and ill-typed values raise
// ConfigError naming the key.
inline void apply_overrides(RunConfig& c, const nlohmann::json& flat) {
  if (!flat.is_object()) throw Error(ErrorCode::ConfigError, "config: expected a flat JSON object");
  nlohmann::json nested = detail::nested_config(c);
  for (const auto& [key, value] : flat.items()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos || !nested.contains(key.substr(0, dot)) ||
        !nested[key.substr(0, dot)].contains(key.substr(dot + 1)))
      throw Error(ErrorCode::ConfigError, key + ": unknown config key");
    auto& slot = nested[key.substr(0, dot)][key.substr(dot + 1)];
    const bool numeric = slot.is_number() && value.is_number();
    if (slot.type() != value.type() && !numeric)
      throw Error(ErrorCode::ConfigError, key + ": expected " + std::string(slot.type_name()) + ", got " +
                                              value.type_name());
    if (slot.is_number_unsigned() && !(value.is_number_unsigned() || (value.is_number_integer() && value.get<long long>() >= 0)))
      throw Error(ErrorCode::ConfigError, key + ": expected a non-negative integer");
    if (key == "model.heads" && value.size() != 4)
      throw Error(ErrorCode::ConfigError, key + ": expected 4 entries");
    slot = value;
  }
  try {
    const auto& m = nested.at("model");
    const std::size_t vocab = c.model.vocab_size;
    c.model = m.get<ModelConfig>();
    c.model.vocab_size = vocab;
    const auto& t = nested.at("train");
    c.train.epochs = t.at("epochs");
    c.train.batch_size = t.at("batch_size");
    c.train.max_steps = t.at("max_steps");
    c.train.optim.lr = t.at("lr");
    c.train.optim.beta1 = t.at("beta1");
    c.train.optim.beta2 = t.at("beta2");
    c.train.optim.eps = t.at("eps");
    c.train.optim.weight_decay = t.at("weight_decay");
    c.train.cosine = t.at("cosine");
    c.train.seed = t.at("seed");
    const auto& g = nested.at("guidance");
    c.guidance.source = g.at("source");
    c.guidance.autoenc_steps = g.at("autoenc_steps");
    c.guidance.autoenc_batch = g.at("autoenc_batch");
    c.guidance.autoenc_lr = g.at("autoenc_lr");
    c.corpus = nested.at("data").at("corpus");
    c.corpus_seed = nested.at("data").at("corpus_seed");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config: ") + e.what());
  }
}

inline void validate(const RunConfig& c) {
  c.model.validate();
  if (c.train.batch_size == 0) throw Error(ErrorCode::ConfigError, "train.batch_size: must be positive");
  if (!(c.train.optim.lr > 0.0)) throw Error(ErrorCode::ConfigError, "train.lr: must be positive");
  const auto& s = c.guidance.source;
  if (s.empty()) throw Error(ErrorCode::ConfigError, "guidance.source: must not be empty");
  if (s.rfind("seed:", 0) == 0) {
    const std::string n = s.substr(5);
    if (n.empty() || n.find_first_not_of("0123456789") != std::string::npos)
      throw Error(ErrorCode::ConfigError, "guidance.source: expected seed:<non-negative integer>");
  }
}

// 64-bit FNV-1a over the compact dump of the flat config.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_flat_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& path, ErrorCode missing = ErrorCode::IoError) {
  std::ifstream in(path);
  if (!in) throw Error(missing, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

// Stored config files carry their hash; a mismatch means the file was edited.
inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  RunConfig c;
  apply_overrides(c, j.at("config"));
  if (j.value("hash", "") != config_hash(c))
    throw Error(ErrorCode::ConfigError, path.string() + ": stored hash does not match its config");
  return c;
}

inline void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  write_json_file(path, {{"config", to_flat_json(c)}, {"hash", config_hash(c)}});
}

// Sets up the model's frozen guidance encoder from `src`. Autoencoding
// pretrains on `images`.
inline void apply_guidance_source(Model& model, const GuidanceSource& src, const std::vector<Tensor>& images) {
  GuidanceEncoder* g = model.guidance();
  if (!g) return;
  if (src.source.rfind("seed:", 0) == 0) return;  // seed already applied via model.guidance_seed
  if (src.source == "autoenc") {
    pretrain_guidance_autoencoder(*g, images, model.config(), src.autoenc_steps, src.autoenc_batch,
                                  model.config().guidance_seed, src.autoenc_lr);
    return;
  }
  if (!std::filesystem::exists(src.source))
    throw Error(ErrorCode::MissingCheckpoint, "guidance checkpoint " + src.source + " not found");
  restore_parameters(g->store(), read_checkpoint(src.source));
  g->store().freeze("");
}

inline std::uint64_t guidance_seed_of(const GuidanceSource& src, std::uint64_t fallback) {
  if (src.source.rfind("seed:", 0) == 0) return std::stoull(src.source.substr(5));
  return fallback;
}

struct RunRecord {
  std::string config_hash;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
  std::size_t steps = 0;
  double final_loss = 0.0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const {
    return {{"config_hash", config_hash},
            {"checkpoint", checkpoint.filename().string()},
            {"loss_csv", loss_csv.filename().string()},
            {"steps", steps},
            {"final_loss", final_loss},
            {"wall_seconds", wall_seconds}};
  }
};

struct TrainOptions {
  unsigned threads = 1;                         // data preparation only
  std::filesystem::path resume;                 // checkpoint to continue from
  std::function<void(std::size_t, double)> on_step;
};

// Trains on `corpus_dir`'s train split and writes into `out_dir`:
//   config.json   resolved flat config + hash
//   model.ckpt    parameters, guidance, optimizer state, vocabulary
//   loss.csv      step,loss
//   run.json      RunRecord
inline RunRecord train_run(RunConfig cfg, const std::filesystem::path& corpus_dir, const std::filesystem::path& out_dir,
                           const TrainOptions& opts = {}) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  if (!std::filesystem::exists(corpus_dir / "train.jsonl"))
    throw Error(ErrorCode::CorruptManifest, "no training corpus at " + corpus_dir.string());
  const auto samples = synth::load_split(corpus_dir, "train");
  if (samples.empty()) throw Error(ErrorCode::EmptyResultSet, corpus_dir.string() + " has no training samples");

  cfg.model.guidance_seed = guidance_seed_of(cfg.guidance, cfg.model.guidance_seed);
  const Vocabulary vocab = build_vocabulary(samples, cfg.model);
  cfg.model.vocab_size = vocab.size();
  Model model(cfg.model);

  std::vector<PreparedSample> data;
  std::unique_ptr<Trainer> trainer;
  if (opts.resume.empty()) {
    if (model.guidance() && cfg.guidance.source == "autoenc") {
      std::vector<Tensor> images;
      images.reserve(samples.size());
      for (const auto& s : samples) images.push_back(image_tensor(read_ppm(corpus_dir / s.image_path)));
      apply_guidance_source(model, cfg.guidance, images);
    } else {
      apply_guidance_source(model, cfg.guidance, {});
    }
    data = prepare_samples(samples, corpus_dir, vocab, model, opts.threads);
    trainer = std::make_unique<Trainer>(model, cfg.train, data);
  } else {
    if (!std::filesystem::exists(opts.resume))
      throw Error(ErrorCode::MissingCheckpoint, "checkpoint " + opts.resume.string() + " not found");
    const Checkpoint ckpt = read_checkpoint(opts.resume);
    if (Vocabulary::from_json(ckpt.meta.at("vocab")).to_json() != vocab.to_json())
      throw Error(ErrorCode::StateMismatch, "checkpoint vocabulary differs from the corpus");
    model.restore(ckpt);  // guidance first, so cached features match
    data = prepare_samples(samples, corpus_dir, vocab, model, opts.threads);
    trainer = std::make_unique<Trainer>(model, cfg.train, data);
    trainer->restore(ckpt);
  }

  std::filesystem::create_directories(out_dir);
  save_run_config(out_dir / "config.json", cfg);
  const auto csv_path = out_dir / "loss.csv";
  std::ofstream csv(csv_path, opts.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!csv) throw Error(ErrorCode::IoError, "cannot write " + csv_path.string());
  if (opts.resume.empty()) csv << "step,loss\n";
  double last = 0.0;
  trainer->run([&](std::size_t step, double loss) {
    last = loss;
    char line[64];
    std::snprintf(line, sizeof line, "%zu,%.17g\n", step, loss);
    csv << line;
    if (opts.on_step) opts.on_step(step, loss);
  });
  csv.flush();

  Checkpoint ckpt;
  trainer->capture(ckpt);
  ckpt.meta["vocab"] = vocab.to_json();
  ckpt.meta["config_hash"] = config_hash(cfg);
  const auto ckpt_path = out_dir / "model.ckpt";
  write_checkpoint(ckpt_path, ckpt);

  RunRecord rec{config_hash(cfg), ckpt_path, csv_path, trainer->step_index(), last,
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
  write_json_file(out_dir / "run.json", rec.to_json());
  return rec;
}

struct LoadedModel {
  std::unique_ptr<Model> model;
  Vocabulary vocab;
};

inline LoadedModel load_trained(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingCheckpoint, "checkpoint " + path.string() + " not found");
  const Checkpoint ckpt = read_checkpoint(path);
  if (!ckpt.meta.contains("model") || !ckpt.meta.contains("vocab"))
    throw Error(ErrorCode::CorruptCheckpoint, path.string() + " lacks model config or vocabulary");
  LoadedModel lm;
  const ModelConfig cfg = ckpt.meta.at("model").get<ModelConfig>();
  cfg.validate();
  lm.model = std::make_unique<Model>(cfg);
  lm.model->restore(ckpt);
  lm.vocab = Vocabulary::from_json(ckpt.meta.at("vocab"));
  return lm;
}

struct EvalResult {
  MetricReport report;
  std::vector<SampleResult> samples;
  std::vector<MaskPrediction> predictions;
};

// Evaluates on one split of a corpus. An empty split raises EmptyResultSet.
inline EvalResult evaluate_corpus(const LoadedModel& lm, const std::filesystem::path& corpus_dir,
                                  const std::string& split, unsigned threads = 1, bool keep_predictions = false) {
  const auto samples = synth::load_split(corpus_dir, split);
  const auto data = prepare_samples(samples, corpus_dir, lm.vocab, *lm.model, threads);
  EvalResult r;
  r.samples = evaluate_samples(*lm.model, data, threads, keep_predictions ? &r.predictions : nullptr);
  for (std::size_t i = 0; i < samples.size(); ++i) r.samples[i].id = split + "_" + std::to_string(i);
  r.report = aggregate(r.samples);
  return r;
}

struct NamedPath {
  std::string name;
  std::filesystem::path path;
};

// rows: one per checkpoint, cols: one per corpus, each cell evaluated on the
// corpus's `split`. Cells whose split is empty carry the error instead of a
// report; a missing checkpoint or manifest fails the whole grid.
inline CrossDatasetGrid run_cross_dataset(const std::vector<NamedPath>& checkpoints,
                                          const std::vector<NamedPath>& corpora, const std::string& split = "test",
                                          unsigned threads = 1) {
  CrossDatasetGrid grid;
  for (const auto& c : checkpoints) grid.rows.push_back(c.name);
  for (const auto& c : corpora) grid.cols.push_back(c.name);
  for (const auto& c : corpora)
    if (!std::filesystem::exists(c.path / (split + ".jsonl")))
      throw Error(ErrorCode::CorruptManifest, "missing manifest " + (c.path / (split + ".jsonl")).string());
  for (const auto& ck : checkpoints) {
    const LoadedModel lm = load_trained(ck.path);
    auto& row = grid.cells.emplace_back();
    for (const auto& corpus : corpora) {
      GridCell cell;
      cell.in_distribution = ck.name == corpus.name;
      try {
        cell.report = evaluate_corpus(lm, corpus.path, split, threads).report;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyResultSet) throw;
        cell.error = std::string(error_name(e.code())) + ": " + e.what();
      }
      row.push_back(std::move(cell));
    }
  }
  return grid;
}

struct Rung {
  std::string name;
  bool use_target_prompt, use_mfa, use_visual_guidance;
};

inline const std::array<Rung, 3>& ablation_rungs() {
  static const std::array<Rung, 3> r{{{"baseline", false, false, false},
                                       {"+TP", true, false, false},
                                       {"+MFA&VG", true, true, true}}};
  return r;
}

// Element-wise mean of reports.
inline MetricReport mean_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw Error(ErrorCode::EmptyResultSet, "no reports to average");
  MetricReport m;
  m.n = reports.front().n;
  for (const auto& r : reports) {
    m.oiou += r.oiou;
    m.miou += r.miou;
    for (const auto& [k, v] : r.prec) m.prec[k] += v;
  }
  const double inv = 1.0 / static_cast<double>(reports.size());
  m.oiou *= inv;
  m.miou *= inv;
  for (auto& [k, v] : m.prec) v *= inv;
  return m;
}

struct AblationTable {
  std::vector<std::string> rungs;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> corpora;
  std::string split;
  // per_seed[rung][corpus][seed]
  std::vector<std::vector<std::vector<MetricReport>>> per_seed;

  MetricReport mean(std::size_t rung, std::size_t corpus) const { return mean_report(per_seed[rung][corpus]); }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t c = 0; c < corpora.size(); ++c)
      for (std::size_t r = 0; r < rungs.size(); ++r) {
        nlohmann::json seeds_j = nlohmann::json::array();
        for (const auto& m : per_seed[r][c]) seeds_j.push_back(m.to_json());
        rows.push_back({{"corpus", corpora[c]},
                        {"split", split},
                        {"rung", rungs[r]},
                        {"mean", mean(r, c).to_json()},
                        {"per_seed", seeds_j}});
      }
    return {{"seeds", seeds}, {"rows", rows}};
  }

  std::string to_text() const {
    std::string out;
    for (std::size_t c = 0; c < corpora.size(); ++c) {
      out += corpora[c] + " (" + split + ", mean of " + std::to_string(seeds.size()) + " seeds)\n";
      out += format_report_header() + "\n";
      for (std::size_t r = 0; r < rungs.size(); ++r) out += format_report_row("  " + rungs[r], mean(r, c)) + "\n";
    }
    return out;
  }
};

// Trains one model per (rung, seed) on `train_corpus`, writing each run to
// out_dir/<rung>_seed<k>, and evaluates every run on each corpus's `split`.
// The seed sets both model initialisation and sample order.
inline AblationTable ablation_run(const RunConfig& base, const std::filesystem::path& train_corpus,
                                  const std::vector<NamedPath>& corpora, const std::vector<std::uint64_t>& seeds,
                                  const std::filesystem::path& out_dir, const std::string& split = "test",
                                  unsigned threads = 1,
                                  const std::function<void(const std::string&)>& log = {}) {
  AblationTable t;
  t.seeds = seeds;
  t.split = split;
  for (const auto& c : corpora) t.corpora.push_back(c.name);
  for (const auto& rung : ablation_rungs()) {
    t.rungs.push_back(rung.name);
    auto& by_corpus = t.per_seed.emplace_back(corpora.size());
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.model.use_target_prompt = rung.use_target_prompt;
      cfg.model.use_mfa = rung.use_mfa;
      cfg.model.use_visual_guidance = rung.use_visual_guidance;
      cfg.model.seed = seed;
      cfg.train.seed = seed;
      std::string dir_name = rung.name;
      for (auto& ch : dir_name)
        if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
      const auto run_dir = out_dir / (dir_name + "_seed" + std::to_string(seed));
      const RunRecord rec = train_run(cfg, train_corpus, run_dir, {threads, {}, {}});
      const LoadedModel lm = load_trained(rec.checkpoint);
      for (std::size_t c = 0; c < corpora.size(); ++c) {
        by_corpus[c].push_back(evaluate_corpus(lm, corpora[c].path, split, threads).report);
        if (log) log(rung.name + " seed " + std::to_string(seed) + " on " + corpora[c].name + ": " +
                     format_report_row("", by_corpus[c].back(), 0));
      }
    }
  }
  return t;
}

}  // namespace ris
