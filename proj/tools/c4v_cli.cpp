// Command-line front end: corpus generation, preprocessing, training,
// evaluation and diagnostics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "c4v/config.hpp"
#include "c4v/errors.hpp"
#include "c4v/model.hpp"
#include "c4v/synthetic_corpus.hpp"
#include "c4v/training.hpp"

namespace fs = std::filesystem;
using namespace c4v;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::size_t> seed;
  std::string out;
  std::string manifest;
  std::string checkpoint;
  std::string fusion;
  std::string type_mode;
  std::string save;
};

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value settings file");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--out", c.out, "output path (stdout when omitted)");
}

void add_manifest_flag(CLI::App* cmd, Common& c) {
  cmd->add_option("--manifest", c.manifest, "corpus manifest (JSON lines)")->required();
}

void add_checkpoint_flag(CLI::App* cmd, Common& c, bool required) {
  auto* opt = cmd->add_option("--checkpoint", c.checkpoint, "model checkpoint");
  if (required) opt->required();
}

void add_eval_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--fusion", c.fusion, "g2g | g2l | l2l");
  cmd->add_option("--type-mode", c.type_mode, "vb | nb | blend:<alpha> | both | record");
}

/// --config, else the checkpoint's own settings, else defaults; then flags.
RunConfig resolve_config(const Common& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) {
    cfg = RunConfig::load(c.config_path);
  } else if (!c.checkpoint.empty()) {
    cfg = checkpoint_config(c.checkpoint);
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.fusion.empty()) cfg.fusion = c.fusion;
  if (!c.type_mode.empty()) cfg.type_mode = c.type_mode;
  cfg.validate();
  return cfg;
}

Model make_model(const Common& c, const RunConfig& cfg) {
  if (c.checkpoint.empty()) return Model(cfg);
  return load_checkpoint(c.checkpoint, cfg);
}

Dataset open_dataset(const Common& c, const RunConfig& cfg) {
  return load_dataset(c.manifest, cfg.audio_segments, default_cache_dir(c.manifest));
}

/// Writes `text` to --out, or stdout.
void emit(const Common& c, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(c.out, std::ios::binary);
  if (!out) throw IoError("cannot write " + c.out);
  out << text;
}

/// Training log next to --out, or discarded when writing to stdout.
std::optional<std::ofstream> open_log(const std::string& out) {
  if (out.empty()) return std::nullopt;
  std::optional<std::ofstream> log(std::in_place, out + ".log.jsonl", std::ios::binary);
  if (!*log) throw IoError("cannot write " + out + ".log.jsonl");
  return log;
}

std::ostream* log_ptr(std::optional<std::ofstream>& log) { return log ? &*log : nullptr; }

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tri-modal (text, vision, audio) contrastive learning toolkit"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic corpus and its manifest");
  add_config_flags(gen, c);
  gen->callback([&] {
    if (c.out.empty()) throw CLI::ValidationError("--out", "an output directory is required");
    const auto cfg = resolve_config(c);
    CorpusSpec spec;
    spec.classes = cfg.classes;
    spec.items_per_class = cfg.items_per_class;
    spec.frames_per_item = cfg.frames_per_item;
    spec.clip_seconds = cfg.clip_seconds;
    spec.seed = cfg.seed;
    const auto m = generate_synthetic_corpus(spec, c.out);
    std::cout << (fs::path(c.out) / "manifest.jsonl").string() << ": " << m.records.size() << " records\n";
  });

  auto* pre = app.add_subcommand("preprocess", "compute and cache audio segments");
  add_config_flags(pre, c);
  add_manifest_flag(pre, c);
  pre->callback([&] {
    const auto cfg = resolve_config(c);
    const auto m = load_manifest(c.manifest);
    const auto dir = c.out.empty() ? default_cache_dir(c.manifest) : c.out;
    preprocess_corpus(m, dir, cfg.audio_segments);
    std::cout << dir << ": cached " << m.records.size() << " records\n";
  });

  auto* pt = app.add_subcommand("pretrain", "audio pre-training; --out is the checkpoint path");
  add_config_flags(pt, c);
  add_manifest_flag(pt, c);
  add_checkpoint_flag(pt, c, false);
  pt->callback([&] {
    if (c.out.empty()) throw CLI::ValidationError("--out", "a checkpoint path is required");
    const auto cfg = resolve_config(c);
    auto data = open_dataset(c, cfg);
    auto model = make_model(c, cfg);
    auto log = open_log(c.out);
    const auto losses = pretrain(model, data, log_ptr(log));
    save_checkpoint(model, c.out);
    if (!losses.empty()) std::cout << loss_json(losses.back()) << '\n';
  });

  auto* ftr = app.add_subcommand("finetune-retrieval", "fine-tune a fusion method and report test metrics");
  add_config_flags(ftr, c);
  add_manifest_flag(ftr, c);
  add_checkpoint_flag(ftr, c, false);
  add_eval_flags(ftr, c);
  ftr->add_option("--save", c.save, "write the fine-tuned checkpoint here");
  ftr->callback([&] {
    const auto cfg = resolve_config(c);
    auto data = open_dataset(c, cfg);
    auto model = make_model(c, cfg);
    auto log = open_log(c.out);
    const auto method = parse_fusion(cfg.fusion);
    const auto result = finetune_retrieval(model, data, method, parse_audio_type(cfg.type_mode), log_ptr(log));
    if (!c.save.empty()) save_checkpoint(model, c.save);
    emit(c, metrics_json(fusion_name(method), result) + "\n");
  });

  auto* ftc = app.add_subcommand("finetune-caption", "train the caption head; --out gets one JSON line per video");
  add_config_flags(ftc, c);
  add_manifest_flag(ftc, c);
  add_checkpoint_flag(ftc, c, false);
  ftc->add_option("--save", c.save, "write the fine-tuned checkpoint here");
  ftc->callback([&] {
    const auto cfg = resolve_config(c);
    auto data = open_dataset(c, cfg);
    auto model = make_model(c, cfg);
    auto log = open_log(c.out);
    const auto outcome =
        finetune_caption(model, data, data.indices(Split::train), data.indices(Split::test), log_ptr(log));
    if (!c.save.empty()) save_checkpoint(model, c.save);
    std::ostringstream lines;
    for (const auto& l : outcome.lines) lines << caption_json(l) << '\n';
    emit(c, lines.str());
    std::cerr << "corpus BLEU-4: " << outcome.corpus_bleu4 << '\n';
  });

  auto* ev = app.add_subcommand("eval", "text-to-video retrieval on the test split");
  add_config_flags(ev, c);
  add_manifest_flag(ev, c);
  add_checkpoint_flag(ev, c, false);
  add_eval_flags(ev, c);
  ev->callback([&] {
    const auto cfg = resolve_config(c);
    auto data = open_dataset(c, cfg);
    auto model = make_model(c, cfg);
    impute_silent_audio(model, data);
    const auto method = parse_fusion(cfg.fusion);
    const auto result =
        evaluate_retrieval(model, data, data.indices(Split::test), method, parse_audio_type(cfg.type_mode));
    emit(c, metrics_json(fusion_name(method), result) + "\n");
  });

  auto* sw = app.add_subcommand("sweep-type-token", "text-to-audio retrieval per subset across blend ratios");
  add_config_flags(sw, c);
  add_manifest_flag(sw, c);
  add_checkpoint_flag(sw, c, false);
  std::string grid;
  sw->add_option("--grid", grid, "comma-separated alpha values (default from config)");
  sw->callback([&] {
    const auto cfg = resolve_config(c);
    auto data = open_dataset(c, cfg);
    auto model = make_model(c, cfg);
    const auto alphas = parse_grid(grid.empty() ? cfg.sweep_grid : grid);
    emit(c, sweep_csv(type_token_sweep(model, data, alphas)));
  });

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks on a small model");
  add_config_flags(gc, c);
  int exit_code = 0;
  gc->callback([&] {
    const auto cfg = resolve_config(c);
    std::ostringstream lines;
    for (const auto& r : run_grad_checks(cfg.seed)) {
      nlohmann::ordered_json j;
      j["tensor"] = r.name;
      j["max_relative_error"] = r.max_relative_error;
      j["elements"] = r.elements_checked;
      j["pass"] = r.pass;
      lines << j.dump() << '\n';
      if (!r.pass) exit_code = 1;
    }
    emit(c, lines.str());
  });

  auto* pr = app.add_subcommand("probe", "linear-probe accuracy of frozen audio embeddings");
  add_config_flags(pr, c);
  add_manifest_flag(pr, c);
  add_checkpoint_flag(pr, c, false);
  pr->callback([&] {
    const auto cfg = resolve_config(c);
    auto data = open_dataset(c, cfg);
    auto model = make_model(c, cfg);
    nlohmann::ordered_json j;
    j["accuracy"] = probe_audio(model, data, cfg.probe_epochs);
    emit(c, j.dump() + "\n");
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return exit_code;
}
