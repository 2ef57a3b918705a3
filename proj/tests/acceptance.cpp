// Acceptance runner: one PASS/FAIL line per criterion, each backed by a
// measured value and the threshold it is compared against. Exit status is 0
// only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "c4v/audio_frontend.hpp"
#include "c4v/config.hpp"
#include "c4v/fusion.hpp"
#include "c4v/model.hpp"
#include "c4v/objectives.hpp"
#include "c4v/retrieval.hpp"
#include "c4v/synthetic_corpus.hpp"
#include "c4v/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace c4v;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
  fs::path cli;
  RunConfig toy;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Corpus for the end-to-end criteria; generated once per work directory.
std::string toy_corpus(const Context& ctx) {
  const auto dir = ctx.work / "corpus";
  const auto manifest = dir / "manifest.jsonl";
  if (!fs::exists(manifest)) {
    CorpusSpec spec;
    spec.classes = ctx.toy.classes;
    spec.items_per_class = ctx.toy.items_per_class;
    spec.frames_per_item = ctx.toy.frames_per_item;
    spec.clip_seconds = ctx.toy.clip_seconds;
    spec.seed = ctx.toy.seed;
    generate_synthetic_corpus(spec, dir.string());
  }
  return manifest.string();
}

Dataset toy_dataset(const Context& ctx, const RunConfig& cfg) {
  const auto manifest = toy_corpus(ctx);
  return load_dataset(manifest, cfg.audio_segments, default_cache_dir(manifest));
}

// Pre-trained toy checkpoint shared by criteria 5 and 6. The training time is
// stored beside it so criterion 5 can report the full runtime.
struct Trained {
  fs::path checkpoint;
  double train_seconds = 0.0;
};

Trained toy_checkpoint(const Context& ctx) {
  Trained t;
  t.checkpoint = ctx.work / "toy.c4v";
  const auto timing = ctx.work / "toy.seconds";
  if (fs::exists(t.checkpoint) && fs::exists(timing) &&
      checkpoint_config(t.checkpoint.string()).echo() == ctx.toy.echo()) {
    std::ifstream(timing) >> t.train_seconds;
    return t;
  }
  Stopwatch clock;
  const auto data = toy_dataset(ctx, ctx.toy);
  Model model(ctx.toy);
  pretrain(model, data);
  save_checkpoint(model, t.checkpoint.string());
  t.train_seconds = clock.seconds();
  std::ofstream(timing) << std::setprecision(17) << t.train_seconds;
  return t;
}

Outcome c1_spectrogram_arithmetic(const Context&) {
  Stopwatch clock;
  const std::vector<double> durations{1.792, 5.0, 10.0, 27.0};
  const std::map<double, std::size_t> anchors{{10.0, 6}, {27.0, 16}};
  bool ok = true;
  std::ostringstream d;
  for (double t : durations) {
    Waveform w;
    w.samples.assign(static_cast<std::size_t>(std::llround(t * kAudioSampleRate)), 0.0);
    const auto s = log_mel_spectrogram(w);
    const auto segments = segment_spectrogram(s).count;
    const auto want_frames = static_cast<std::size_t>(std::ceil(125.0 * t - 1e-9));
    const auto want_segments = static_cast<std::size_t>(std::ceil(t / 1.792 - 1e-12));
    ok = ok && s.frames == want_frames && segments == want_segments;
    if (anchors.count(t)) ok = ok && segments == anchors.at(t);
    d << t << "s->" << s.frames << "/" << segments << " ";
  }
  const double secs = clock.seconds();
  ok = ok && secs < 1.0;
  d << "runtime " << fmt(secs, 3) << "s (< 1s)";
  return {ok, d.str()};
}

Outcome c2_masking_statistics(const Context&) {
  Stopwatch clock;
  constexpr std::size_t kTrials = 10000, kFrames = 500;
  Spectrogram s;
  s.frames = kFrames;
  s.values.assign(kFrames * kMelBins, 0.0);
  std::vector<double> empirical(kTrials), simulated(kTrials);
  std::minstd_rand oracle_rng(12345);
  for (std::size_t k = 0; k < kTrials; ++k) {
    const auto m = apply_time_channel_mask(s, {0.05, 0.15, 10, k});
    empirical[k] = static_cast<double>(std::ranges::count(m.bitmap, 1)) / static_cast<double>(m.bitmap.size());
    simulated[k] = oracle::simulated_mask_fraction(kFrames, kMelBins, 0.05, 0.15, 10, oracle_rng);
  }
  const auto e = oracle::summarize(empirical), o = oracle::summarize(simulated);
  const double sigma = std::sqrt(e.var / kTrials + o.var / kTrials);
  const double gap = std::abs(e.mean - o.mean);
  const double secs = clock.seconds();
  return {gap < 3.0 * sigma && secs < 30.0, "masked fraction " + fmt(e.mean, 6) + " vs oracle " + fmt(o.mean, 6) +
                                                 ", |diff| " + fmt(gap, 3) + " < 3 sigma " + fmt(3.0 * sigma, 3) +
                                                 ", runtime " + fmt(secs, 3) + "s (< 30s)"};
}

Outcome c3_gradients(const Context&) {
  Stopwatch clock;
  GradCheckOptions options;
  options.epsilon = 1e-5;
  options.tolerance = 1e-4;
  const auto reports = run_grad_checks(0, options);
  double worst = 0.0;
  bool ok = !reports.empty();
  std::map<std::string, std::size_t> per_loss;
  for (const auto& r : reports) {
    ok = ok && r.pass;
    worst = std::max(worst, r.max_relative_error);
    ++per_loss[r.name.substr(0, r.name.find(':'))];
  }
  ok = ok && per_loss.size() == 3;
  const double secs = clock.seconds();
  ok = ok && secs < 120.0;
  std::ostringstream d;
  d << reports.size() << " tensors over " << per_loss.size() << " losses, max rel err " << fmt(worst, 3)
    << " (< 1e-4), runtime " << fmt(secs, 3) << "s (< 120s)";
  return {ok, d.str()};
}

Outcome c4_loss_oracles(const Context&) {
  bool ok = true;
  double worst = 0.0;
  std::mt19937_64 rng(4);
  for (std::size_t b : {2u, 4u, 8u}) {
    const auto row = oracle::unit_rows(1, 6, rng);
    std::vector<double> v;
    for (std::size_t i = 0; i < b; ++i) v.insert(v.end(), row.values().begin(), row.values().end());
    const Tensor same({b, 6}, v);
    const double err = std::abs(inter_modal_nce(same, same, Tensor::scalar(1.0)).item() - std::log(double(b)));
    worst = std::max(worst, err);
    ok = ok && err <= 1e-9;
  }
  const auto row = oracle::unit_rows(1, 6, rng);
  std::vector<double> v(row.values().begin(), row.values().end());
  v.insert(v.end(), row.values().begin(), row.values().end());
  const Tensor pair({2, 6}, v);
  const double intra_err = std::abs(intra_modal_nce(pair, pair, Tensor::scalar(1.0)).item() - std::log(3.0));
  ok = ok && intra_err <= 1e-9;

  bool counts = true;
  for (std::size_t b = 2; b <= 16; ++b) {
    const auto mask = intra_modal_logit_mask(b);
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t terms = 0;
      for (std::size_t c = 0; c < 2 * b; ++c) terms += mask[i * 2 * b + c];
      counts = counts && terms == 2 * b - 1;
    }
  }
  ok = ok && counts;
  return {ok, "inter |err| " + fmt(worst, 3) + ", intra |err| " + fmt(intra_err, 3) + " (<= 1e-9), 2B-1 terms for B=2..16: " +
                  (counts ? "yes" : "no")};
}

Outcome c5_retrieval_learning(const Context& ctx) {
  const auto trained = toy_checkpoint(ctx);
  Stopwatch clock;
  auto data = toy_dataset(ctx, ctx.toy);
  auto model = load_checkpoint(trained.checkpoint.string(), ctx.toy);
  impute_silent_audio(model, data);
  const auto test = data.indices(Split::test);
  const auto r = evaluate_retrieval(model, data, test, FusionMethod::g2g, AudioTypeConfig::per_item());

  auto control_data = toy_dataset(ctx, ctx.toy);
  Model control(ctx.toy);
  impute_silent_audio(control, control_data);
  const auto c = evaluate_retrieval(control, control_data, test, FusionMethod::g2g, AudioTypeConfig::per_item());
  const double g = static_cast<double>(r.num_queries);
  const double total = trained.train_seconds + clock.seconds();
  const bool ok = r.r1 >= 0.8 && r.median_rank == 1.0 && c.median_rank >= g / 4.0 && total <= 600.0;
  std::ostringstream d;
  d << "G=" << r.num_queries << " R@1 " << fmt(r.r1) << " (>= 0.8), MedianR " << r.median_rank
    << " (= 1); random-init MedianR " << c.median_rank << " (>= " << g / 4.0 << "); runtime " << fmt(total, 4)
    << "s (<= 600s)";
  return {ok, d.str()};
}

Outcome c6_type_token_effect(const Context& ctx) {
  const auto trained = toy_checkpoint(ctx);
  Stopwatch clock;
  const auto data = toy_dataset(ctx, ctx.toy);
  auto model = load_checkpoint(trained.checkpoint.string(), ctx.toy);
  const std::vector<double> grid{0.0, 1.0};
  const auto rows = type_token_sweep(model, data, grid);
  const double nb0 = rows[0].nb.r1, nb1 = rows[1].nb.r1, vb0 = rows[0].vb.r1, vb1 = rows[1].vb.r1;
  const double secs = clock.seconds();
  const bool ok = nb1 >= nb0 && vb0 >= vb1 && (nb1 > nb0 || vb0 > vb1) && secs < 60.0;
  return {ok, "NB R@1 a=1 " + fmt(nb1) + " vs a=0 " + fmt(nb0) + "; VB R@1 a=0 " + fmt(vb0) + " vs a=1 " + fmt(vb1) +
                  "; runtime " + fmt(secs, 3) + "s (< 60s)"};
}

Outcome c7_fusion_parity(const Context&) {
  constexpr std::size_t kWidth = 8, kEmbed = 6;
  FusionConfig cfg;
  cfg.width = kWidth;
  cfg.embed_dim = kEmbed;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.max_positions = 16;
  double worst = 0.0;
  for (auto method : {FusionMethod::g2g, FusionMethod::g2l, FusionMethod::l2l}) {
    ParamStore store;
    Rng init(4);
    const FusionHead head(store, method, cfg, init);
    std::mt19937_64 rng(5);
    const auto text = oracle::random_set(3, 5, 2, kWidth, kEmbed, rng);
    const auto vision = oracle::random_set(4, 2, 0, kWidth, kEmbed, rng);
    const auto audio = oracle::random_set(4, 3, 1, kWidth, kEmbed, rng);
    const auto full = head.scores(text, vision, audio);
    for (std::size_t q = 0; q < 3; ++q) {
      for (std::size_t g = 0; g < 4; ++g) {
        const std::vector<std::size_t> qi{q}, gi{g};
        const auto one = head.scores(select_items(text, qi), select_items(vision, gi), select_items(audio, gi));
        worst = std::max(worst, std::abs(full.at(q, g) - one.item()));
      }
    }
  }
  std::size_t exact = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = oracle::tied_matrix(seed);
    const auto r = retrieval_metrics(m.scores, m.queries, m.gallery, m.truth);
    const auto o = oracle::rank_summary(m.scores, m.queries, m.gallery, m.truth);
    exact += r.ranks == o.ranks && r.r1 == o.r1 && r.r5 == o.r5 && r.r10 == o.r10 && r.median_rank == o.median;
  }
  return {worst <= 1e-10 && exact == 20,
          "max |matrix - pairwise| " + fmt(worst, 3) + " (<= 1e-10); rank oracle exact on " + std::to_string(exact) + "/20"};
}

Outcome c8_caption_memorization(const Context& ctx) {
  Stopwatch clock;
  RunConfig cfg = ctx.toy;
  cfg.caption_steps = 500;
  const auto data = toy_dataset(ctx, cfg);
  Model model(cfg);
  const auto test = data.indices(Split::test);
  const std::vector<std::size_t> one{test.front()};
  const auto outcome = finetune_caption(model, data, one, one);
  const double secs = clock.seconds();
  const auto& line = outcome.lines.front();
  const bool ok = outcome.corpus_bleu4 == 1.0 && secs < 120.0;
  return {ok, "'" + line.caption + "' BLEU-4 " + fmt(outcome.corpus_bleu4) + " (= 1) after " +
                  std::to_string(cfg.caption_steps) + " steps; runtime " + fmt(secs, 3) + "s (< 120s)"};
}

// Every CLI command, run twice in separate directories with relative paths.
const std::vector<std::string> kCliRuns = {
    "gen-corpus --config tiny.cfg --out corpus",
    "preprocess --config tiny.cfg --manifest corpus/manifest.jsonl --out cache",
    "pretrain --config tiny.cfg --manifest corpus/manifest.jsonl --out pre.c4v",
    "finetune-retrieval --config tiny.cfg --manifest corpus/manifest.jsonl --checkpoint pre.c4v --fusion l2l "
    "--out ftr.json --save ftr.c4v",
    "finetune-caption --config tiny.cfg --manifest corpus/manifest.jsonl --checkpoint pre.c4v --out cap.jsonl "
    "--save cap.c4v",
    "eval --config tiny.cfg --manifest corpus/manifest.jsonl --checkpoint pre.c4v --type-mode record --out eval.json",
    "sweep-type-token --config tiny.cfg --manifest corpus/manifest.jsonl --checkpoint pre.c4v --grid 0,0.5,1 "
    "--out sweep.csv",
    "grad-check --config tiny.cfg --out grad.jsonl",
    "probe --config tiny.cfg --manifest corpus/manifest.jsonl --checkpoint pre.c4v --out probe.json",
};

constexpr const char* kTinyConfig = R"(classes = 2
items_per_class = 6
clip_seconds = 1
frames_per_item = 1
width = 32
heads = 2
embed_dim = 32
layers = 1
fusion_layers = 1
caption_layers = 1
batch_size = 4
steps = 3
warmup_steps = 2
logit_scale = learnable
finetune_steps = 2
caption_steps = 2
probe_epochs = 3
)";

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_bytes(e.path());
  }
  return files;
}

Outcome c9_determinism(const Context& ctx) {
  const auto base = ctx.work / "cli";
  fs::remove_all(base);
  std::vector<fs::path> runs{base / "a", base / "b"};
  std::size_t failures = 0;
  for (const auto& dir : runs) {
    fs::create_directories(dir);
    std::ofstream(dir / "tiny.cfg") << kTinyConfig;
    for (std::size_t k = 0; k < kCliRuns.size(); ++k) {
      const auto tag = std::to_string(k);
      const std::string cmd = "cd '" + dir.string() + "' && '" + ctx.cli.string() + "' " + kCliRuns[k] + " > stdout" +
                              tag + ".txt 2> stderr" + tag + ".txt";
      if (std::system(cmd.c_str()) != 0) {
        ++failures;
        std::cerr << "command failed in " << dir << ": " << kCliRuns[k] << '\n';
      }
    }
  }
  const auto a = snapshot(runs[0]), b = snapshot(runs[1]);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) {
      ++differing;
      std::cerr << "differs: " << name << '\n';
    }
  }
  differing += b.size() > a.size() ? b.size() - a.size() : 0;

  // Checkpoint round trip: reload, re-save, compare bytes and a forward pass.
  const auto ckpt = runs[0] / "cap.c4v";
  bool round_trip = false;
  if (fs::exists(ckpt)) {
    const auto cfg = checkpoint_config(ckpt.string());
    const auto loaded = load_checkpoint(ckpt.string(), cfg);
    const auto again = base / "resaved.c4v";
    save_checkpoint(loaded, again.string());
    const auto manifest = (runs[0] / "corpus" / "manifest.jsonl").string();
    const auto data = load_dataset(manifest, cfg.audio_segments, default_cache_dir(manifest));
    const auto items = data.indices(Split::test);
    const auto other = load_checkpoint(again.string(), cfg);
    const auto batch = make_audio_batch(data, items);
    const auto x = loaded.audio().encode(batch, AudioTypeConfig::both());
    const auto y = other.audio().encode(batch, AudioTypeConfig::both());
    round_trip = read_bytes(ckpt) == read_bytes(again) && std::ranges::equal(x.global.values(), y.global.values());
  }
  const bool ok = failures == 0 && differing == 0 && !a.empty() && round_trip;
  return {ok, std::to_string(kCliRuns.size()) + " commands x2, " + std::to_string(a.size()) + " output files, " +
                  std::to_string(differing) + " differ, " + std::to_string(failures) + " failed; checkpoint round trip " +
                  (round_trip ? "bit-exact" : "NOT bit-exact")};
}

double final_loss(const std::vector<LossRecord>& trace) {
  const std::size_t n = std::min<std::size_t>(20, trace.size());
  double s = 0.0;
  for (std::size_t i = trace.size() - n; i < trace.size(); ++i) s += trace[i].total;
  return s / static_cast<double>(n);
}

Outcome c10_init_from_vision(const Context& ctx) {
  RunConfig cfg = ctx.toy;
  cfg.steps = 200;
  std::size_t shared = 0, equal = 0;
  {
    const Model fresh(cfg);
    for (const auto& name : fresh.store().names()) {
      if (name.rfind("vision.", 0) != 0) continue;
      const auto counterpart = "audio." + name.substr(7);
      if (!fresh.store().contains(counterpart)) continue;
      const auto v = fresh.store().get(name), a = fresh.store().get(counterpart);
      if (v.shape() != a.shape()) continue;
      ++shared;
      equal += std::ranges::equal(v.values(), a.values());
    }
  }
  const auto data = toy_dataset(ctx, cfg);
  Model vision_init(cfg);
  const double from_vision = final_loss(pretrain(vision_init, data));
  RunConfig random_cfg = cfg;
  random_cfg.init_audio_from_vision = false;
  Model random_init(random_cfg);
  const double from_random = final_loss(pretrain(random_init, data));
  const bool ok = shared > 0 && equal == shared && from_vision < from_random;
  return {ok, std::to_string(equal) + "/" + std::to_string(shared) +
                  " shared tensors bit-equal; final loss (mean of last 20 of 200 steps) vision-init " + fmt(from_vision) +
                  " vs random-init " + fmt(from_random) + " (need vision < random)"};
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  Context ctx;
  std::string work, cli, config;
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory")->required();
  app.add_option("--cli", cli, "path to the c4v executable")->required();
  app.add_option("--config", config, "toy run configuration")->required();
  app.add_option("--criterion", only, "run only these criteria (1-10)");
  CLI11_PARSE(app, argc, argv);

  ctx.work = fs::absolute(work);
  ctx.cli = fs::absolute(cli);
  fs::create_directories(ctx.work);
  ctx.toy = RunConfig::load(config);
  ctx.toy.validate();

  const std::vector<std::function<Outcome(const Context&)>> criteria = {
      c1_spectrogram_arithmetic, c2_masking_statistics, c3_gradients,          c4_loss_oracles,
      c5_retrieval_learning,     c6_type_token_effect,  c7_fusion_parity,      c8_caption_memorization,
      c9_determinism,            c10_init_from_vision,
  };
  std::set<int> selected(only.begin(), only.end());
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i](ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
