// ris: data generation, training, evaluation, cross-dataset grids, ablations
// and expression parsing.
//
// Config precedence: defaults < --config file < RIS_SEED < --set / flags.
// All relative paths resolve against --workdir.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ris/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string workdir = ".";
  unsigned threads = 1;
  std::string config_file;
  std::vector<std::string> sets;
};

fs::path resolve(const Globals& g, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(g.workdir) / path;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("RIS_SEED");
  if (!s || !*s) return std::nullopt;
  const std::string v(s);
  if (v.find_first_not_of("0123456789") != std::string::npos)
    throw ris::Error(ris::ErrorCode::ConfigError, "RIS_SEED: expected a non-negative integer");
  return std::stoull(v);
}

// key=value, value parsed as JSON when possible, otherwise taken as a string.
json parse_sets(const std::vector<std::string>& sets) {
  json flat = json::object();
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ris::Error(ris::ErrorCode::ConfigError, "--set " + s + ": expected key=value");
    const std::string key = s.substr(0, eq), value = s.substr(eq + 1);
    try {
      flat[key] = json::parse(value);
    } catch (const json::exception&) {
      flat[key] = value;
    }
  }
  return flat;
}

ris::RunConfig resolve_config(const Globals& g, const json& flag_overrides) {
  ris::RunConfig cfg;
  if (!g.config_file.empty()) ris::apply_overrides(cfg, ris::read_json_file(resolve(g, g.config_file)));
  if (auto seed = env_seed()) {
    cfg.model.seed = *seed;
    cfg.train.seed = *seed;
  }
  ris::apply_overrides(cfg, parse_sets(g.sets));
  ris::apply_overrides(cfg, flag_overrides);
  ris::validate(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ris::Error(ris::ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

std::vector<ris::NamedPath> corpus_paths(const Globals& g, const std::string& root, const std::string& names) {
  std::vector<ris::NamedPath> out;
  for (const auto& n : split_list(names)) out.push_back({n, resolve(g, root) / n});
  if (out.empty()) throw ris::Error(ris::ErrorCode::ConfigError, "--corpora: empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring image segmentation on synthetic corpora"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--workdir", g.workdir, "Base directory for relative paths");
  app.add_option("--threads", g.threads, "Worker threads for data generation and evaluation")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config_file, "Flat JSON config with dotted keys");
  app.add_option("--set", g.sets, "Config override key=value (repeatable)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic corpora");
  std::string gen_corpora = "a,b,c,d", gen_out = "corpora";
  std::uint64_t gen_seed = 1;
  std::optional<std::size_t> train_size, val_size, test_size;
  gen->add_option("--corpora", gen_corpora, "Comma-separated profiles (a,b,c,d)");
  gen->add_option("--out", gen_out, "Output root; each corpus goes to <out>/<name>");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--train-size", train_size);
  gen->add_option("--val-size", val_size);
  gen->add_option("--test-size", test_size);

  // train
  auto* train = app.add_subcommand("train", "Train on a corpus's train split");
  std::string train_corpus, train_out = "runs/train", resume, guidance;
  std::optional<std::size_t> max_steps, epochs;
  std::optional<std::string> rung;
  train->add_option("--corpus", train_corpus, "Corpus directory (overrides data.corpus)");
  train->add_option("--out", train_out, "Run directory");
  train->add_option("--resume", resume, "Continue from a checkpoint written by train");
  train->add_option("--guidance", guidance, "Guidance source: <checkpoint>|seed:N|autoenc");
  train->add_option("--max-steps", max_steps);
  train->add_option("--epochs", epochs);
  train->add_option("--rung", rung, "Ablation rung: baseline|+TP|+MFA&VG");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one corpus split");
  std::string eval_ckpt, eval_corpus, eval_split = "test", eval_out = "eval";
  bool dump_masks = false;
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--corpus", eval_corpus)->required();
  eval->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", eval_out, "Output directory for metrics.json / metrics.txt");
  eval->add_flag("--dump-masks", dump_masks, "Write predicted masks as PBM plus RLE text");

  // cross-eval
  auto* cross = app.add_subcommand("cross-eval", "Evaluate every checkpoint on every corpus");
  std::string cross_ckpts = "runs", cross_corpora = "a,b,c,d", cross_root = "corpora", cross_out = "grid.json",
              cross_split = "test";
  std::string cross_rows;
  cross->add_option("--checkpoints", cross_ckpts, "Directory holding <corpus>/model.ckpt");
  cross->add_option("--rows", cross_rows, "Training corpora (default: every corpus with a checkpoint)");
  cross->add_option("--corpora", cross_corpora);
  cross->add_option("--corpora-dir", cross_root);
  cross->add_option("--split", cross_split)->check(CLI::IsMember({"train", "val", "test"}));
  cross->add_option("--out", cross_out);

  // ablation
  auto* abl = app.add_subcommand("ablation", "Train baseline / +TP / +MFA&VG and evaluate zero-shot");
  std::string abl_corpus = "corpora/a", abl_eval = "b,c", abl_root = "corpora", abl_seeds = "0,1,2",
              abl_out = "ablation", abl_split = "test";
  abl->add_option("--corpus", abl_corpus, "Training corpus directory");
  abl->add_option("--eval", abl_eval, "Evaluation corpora");
  abl->add_option("--corpora-dir", abl_root);
  abl->add_option("--seeds", abl_seeds);
  abl->add_option("--split", abl_split)->check(CLI::IsMember({"train", "val", "test"}));
  abl->add_option("--out", abl_out);

  // parse-expr
  auto* parse = app.add_subcommand("parse-expr", "Show tokens, target noun and prompted sequence");
  std::string expr_text, template_name = "manual";
  bool parse_json = false;
  parse->add_option("--text,text", expr_text, "Referring expression")->required();
  parse->add_option("--template", template_name)->check(CLI::IsMember({"manual", "describes"}));
  parse->add_flag("--json", parse_json, "Print one JSON object instead of two lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", "UsageError"}, {"message", e.what()}}.dump() << '\n';
    return 2;
  }

  try {
    if (*gen) {
      if (!gen_seed_opt->count())
        if (auto s = env_seed()) gen_seed = *s;
      for (const auto& name : split_list(gen_corpora)) {
        auto profile = ris::synth::corpus_profile(name);
        if (train_size && !profile.eval_only) profile.split_sizes["train"] = *train_size;
        if (val_size) profile.split_sizes["val"] = *val_size;
        if (test_size) profile.split_sizes["test"] = *test_size;
        const auto s = ris::synth::build_corpus(profile, resolve(g, gen_out) / name, gen_seed, g.threads);
        std::cout << json{{"corpus", s.name}, {"dir", s.dir.string()}, {"splits", s.split_sizes}}.dump() << '\n';
      }
    } else if (*train) {
      json flags = json::object();
      if (!train_corpus.empty()) flags["data.corpus"] = train_corpus;
      if (!guidance.empty())
        flags["guidance.source"] =
            guidance == "autoenc" || guidance.rfind("seed:", 0) == 0 ? guidance : resolve(g, guidance).string();
      if (max_steps) flags["train.max_steps"] = *max_steps;
      if (epochs) flags["train.epochs"] = *epochs;
      if (rung) {
        bool found = false;
        for (const auto& r : ris::ablation_rungs())
          if (r.name == *rung) {
            flags["model.use_target_prompt"] = r.use_target_prompt;
            flags["model.use_mfa"] = r.use_mfa;
            flags["model.use_visual_guidance"] = r.use_visual_guidance;
            found = true;
          }
        if (!found) throw ris::Error(ris::ErrorCode::ConfigError, "--rung: expected baseline, +TP or +MFA&VG");
      }
      const ris::RunConfig cfg = resolve_config(g, flags);
      if (cfg.corpus.empty()) throw ris::Error(ris::ErrorCode::ConfigError, "data.corpus: no training corpus given");
      ris::TrainOptions opts;
      opts.threads = g.threads;
      if (!resume.empty()) opts.resume = resolve(g, resume);
      opts.on_step = [](std::size_t step, double loss) {
        if (step % 50 == 0) std::cerr << "step " << step << " loss " << loss << '\n';
      };
      const auto rec = ris::train_run(cfg, resolve(g, cfg.corpus), resolve(g, train_out), opts);
      std::cout << rec.to_json().dump() << '\n';
    } else if (*eval) {
      const auto lm = ris::load_trained(resolve(g, eval_ckpt));
      const auto r = ris::evaluate_corpus(lm, resolve(g, eval_corpus), eval_split, g.threads, dump_masks);
      const fs::path out = resolve(g, eval_out);
      json j = r.report.to_json();
      j["split"] = eval_split;
      j["corpus"] = eval_corpus;
      ris::write_json_file(out / "metrics.json", j);
      write_text(out / "metrics.txt", ris::format_report_header() + "\n" +
                                          ris::format_report_row(eval_split, r.report) + "\n");
      if (dump_masks) {
        std::string rle;
        for (std::size_t i = 0; i < r.predictions.size(); ++i) {
          const auto& p = r.predictions[i];
          const ris::BinaryMask m{p.height, p.width, p.mask};
          ris::write_pbm(out / "masks" / (r.samples[i].id + ".pbm"), m);
          rle += r.samples[i].id + " " + std::to_string(m.height) + " " + std::to_string(m.width) + " " +
                 ris::rle_to_string(ris::rle_encode(m)) + "\n";
        }
        write_text(out / "masks.rle", rle);
      }
      std::cout << j.dump() << '\n';
    } else if (*cross) {
      const auto corpora = corpus_paths(g, cross_root, cross_corpora);
      std::vector<ris::NamedPath> rows;
      const fs::path ckdir = resolve(g, cross_ckpts);
      if (!cross_rows.empty()) {
        for (const auto& n : split_list(cross_rows)) rows.push_back({n, ckdir / n / "model.ckpt"});
      } else {
        for (const auto& c : corpora)
          if (fs::exists(ckdir / c.name / "model.ckpt")) rows.push_back({c.name, ckdir / c.name / "model.ckpt"});
        if (rows.empty())
          throw ris::Error(ris::ErrorCode::MissingCheckpoint, "no <corpus>/model.ckpt under " + ckdir.string());
      }
      const auto grid = ris::run_cross_dataset(rows, corpora, cross_split, g.threads);
      const fs::path out = resolve(g, cross_out);
      ris::write_json_file(out, grid.to_json());
      write_text(fs::path(out).replace_extension(".txt"), grid.to_text());
      std::cout << grid.to_text();
    } else if (*abl) {
      const ris::RunConfig cfg = resolve_config(g, json::object());
      std::vector<std::uint64_t> seeds;
      for (const auto& s : split_list(abl_seeds)) {
        if (s.find_first_not_of("0123456789") != std::string::npos)
          throw ris::Error(ris::ErrorCode::ConfigError, "--seeds: expected non-negative integers");
        seeds.push_back(std::stoull(s));
      }
      if (seeds.empty()) throw ris::Error(ris::ErrorCode::ConfigError, "--seeds: empty list");
      const auto corpora = corpus_paths(g, abl_root, abl_eval);
      const fs::path out = resolve(g, abl_out);
      const auto table = ris::ablation_run(cfg, resolve(g, abl_corpus), corpora, seeds, out, abl_split, g.threads,
                                           [](const std::string& line) { std::cerr << line << '\n'; });
      ris::write_json_file(out / "ablation.json", table.to_json());
      write_text(out / "ablation.txt", table.to_text());
      std::cout << table.to_text();
    } else if (*parse) {
      const auto expr = ris::Expression::from_text(expr_text);
      const auto prompted =
          ris::build_prompted_expression(expr, ris::PromptTemplate::by_name(template_name));
      if (!parse_json) {
        std::cout << prompted.target().token << '\n' << ris::join_tokens(prompted.full_tokens()) << '\n';
        return 0;
      }
      std::cout << json{{"tokens", expr.tokens},
                        {"target_noun", prompted.target().token},
                        {"target_index", prompted.target().source_index},
                        {"prompted", prompted.full_tokens()},
                        {"prompted_text", ris::join_tokens(prompted.full_tokens())}}
                       .dump()
                << '\n';
    }
  } catch (const ris::Error& e) {
    std::cerr << json{{"error", std::string(ris::error_name(e.code()))}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "InternalError"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
