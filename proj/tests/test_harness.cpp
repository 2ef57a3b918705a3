#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>

#include "c4v/config.hpp"
#include "c4v/errors.hpp"
#include "c4v/model.hpp"
#include "c4v/synthetic_corpus.hpp"
#include "c4v/training.hpp"
#include "c4v/wav_io.hpp"

namespace fs = std::filesystem;
using namespace c4v;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("c4v_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small four-class corpus shared by the whole suite; generated once.
struct SharedCorpus {
  fs::path dir;
  std::string manifest;
  CorpusSpec spec;

  SharedCorpus() {
    dir = scratch("shared");
    spec.classes = 4;
    spec.items_per_class = 16;
    generate_synthetic_corpus(spec, dir.string());
    manifest = (dir / "manifest.jsonl").string();
  }

  Dataset load(std::size_t segments = 2) const {
    return load_dataset(manifest, segments, default_cache_dir(manifest));
  }
};

const SharedCorpus& corpus() {
  static const SharedCorpus c;
  return c;
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.classes = 4;
  cfg.width = 32;
  cfg.heads = 2;
  cfg.embed_dim = 32;
  cfg.layers = 1;
  cfg.fusion_layers = 1;
  cfg.caption_layers = 1;
  return cfg;
}

// Magnitude of the DFT of `x` at `hz`, evaluated directly.
double tone_energy(const std::vector<double>& x, double rate, double hz) {
  std::complex<double> acc;
  for (std::size_t n = 0; n < x.size(); ++n)
    acc += x[n] * std::polar(1.0, -2.0 * std::numbers::pi * hz * static_cast<double>(n) / rate);
  return std::abs(acc);
}

} // namespace

TEST(RunConfig, ParsesCommentsAndEchoRoundTrips) {
  const auto cfg = RunConfig::parse("# comment\nsteps = 5\n\nlr=0.01\nlogit_scale = learnable\n");
  EXPECT_EQ(cfg.steps, 5u);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.01);
  EXPECT_EQ(cfg.logit_scale, "learnable");
  EXPECT_EQ(RunConfig::parse(cfg.echo()).echo(), cfg.echo());
}

TEST(RunConfig, UnknownKeyAndBadValuesThrow) {
  EXPECT_THROW(RunConfig::parse("stepz = 5\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("steps = five\n"), std::invalid_argument);
  RunConfig cfg;
  cfg.batch_size = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.width = 30;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.logit_scale = "sometimes";
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_NO_THROW(RunConfig{}.validate());
}

TEST(RunConfig, ShapeDigestTracksOnlyShapes) {
  RunConfig a, b;
  b.steps = 7;
  b.lr = 0.5;
  EXPECT_EQ(a.shape_digest(), b.shape_digest());
  b.width = 128;
  EXPECT_NE(a.shape_digest(), b.shape_digest());
}

TEST(SyntheticCorpus, LayoutSplitsAndDeterminism) {
  const auto dir_a = scratch("gen_a"), dir_b = scratch("gen_b");
  CorpusSpec spec;
  spec.classes = 2;
  spec.items_per_class = 4;
  spec.clip_seconds = 1.0;
  const auto m = generate_synthetic_corpus(spec, dir_a.string());
  generate_synthetic_corpus(spec, dir_b.string());
  ASSERT_EQ(m.records.size(), 8u);

  std::size_t vb = 0, nb = 0;
  std::set<std::pair<std::size_t, AudioType>> groups_with_test;
  for (const auto& r : m.records) {
    (r.audio_type == AudioType::vb ? vb : nb) += 1;
    if (r.split == Split::test) groups_with_test.insert({r.class_id, r.audio_type});
    EXPECT_EQ(read_bytes(dir_a / r.wav_path), read_bytes(dir_b / r.wav_path)) << r.id;
  }
  EXPECT_EQ(vb, 4u);
  EXPECT_EQ(nb, 4u);
  EXPECT_EQ(groups_with_test.size(), 4u);
  EXPECT_EQ(read_bytes(dir_a / "manifest.jsonl"), read_bytes(dir_b / "manifest.jsonl"));
  EXPECT_NO_THROW(validate_manifest(load_manifest((dir_a / "manifest.jsonl").string()), true));
}

TEST(SyntheticCorpus, NonVisibleAudioCarriesTheClassTone) {
  const auto dir = scratch("tone");
  CorpusSpec spec;
  spec.classes = 2;
  spec.items_per_class = 2;
  spec.clip_seconds = 1.0;
  const auto m = generate_synthetic_corpus(spec, dir.string());
  for (const auto& r : m.records) {
    if (r.audio_type != AudioType::nb) continue;
    const auto w = read_wav((dir / r.wav_path).string());
    const double rate = w.sample_rate;
    const double tone = class_tone_hz(r.class_id), other = class_tone_hz(1 - r.class_id);
    EXPECT_GT(tone_energy(w.samples, rate, tone), 3.0 * tone_energy(w.samples, rate, other)) << r.id;
  }
}

TEST(SyntheticCorpus, UnwritableDirectoryRaisesIoError) {
  const auto dir = scratch("blocked");
  const auto file = dir / "not_a_dir";
  std::ofstream(file) << "x";
  CorpusSpec spec;
  spec.classes = 2;
  spec.items_per_class = 2;
  EXPECT_THROW(generate_synthetic_corpus(spec, (file / "sub").string()), IoError);
  spec.classes = 1;
  EXPECT_THROW(generate_synthetic_corpus(spec, (dir / "x").string()), std::invalid_argument);
}

TEST(Manifest, ValidationErrors) {
  const auto& c = corpus();
  auto m = load_manifest(c.manifest);
  ASSERT_GE(m.records.size(), 2u);

  auto dup = m;
  dup.records[1].id = dup.records[0].id;
  EXPECT_THROW(validate_manifest(dup, false), std::invalid_argument);

  auto many = m;
  many.records[0].frame_paths.assign(13, many.records[0].frame_paths[0]);
  EXPECT_THROW(validate_manifest(many, false), std::invalid_argument);

  auto none = m;
  none.records[0].frame_paths.clear();
  EXPECT_THROW(validate_manifest(none, false), std::invalid_argument);

  auto gone = m;
  gone.records[0].wav_path = "audio/does_not_exist.wav";
  EXPECT_NO_THROW(validate_manifest(gone, false));
  EXPECT_THROW(validate_manifest(gone, true), std::invalid_argument);
}

TEST(Manifest, SaveLoadRoundTripAndMalformedInput) {
  const auto& c = corpus();
  const auto m = load_manifest(c.manifest);
  const auto dir = scratch("manifest");
  const auto path = (dir / "copy.jsonl").string();
  save_manifest(m, path);
  EXPECT_EQ(read_bytes(path), read_bytes(c.manifest));

  std::ofstream(dir / "bad.jsonl") << "{\"id\": \"x\"\n";
  EXPECT_THROW(load_manifest((dir / "bad.jsonl").string()), FormatError);
  EXPECT_THROW(load_manifest((dir / "absent.jsonl").string()), IoError);
}

TEST(PretrainBatch, HalfVisibleHalfNonVisibleFromTrainOnly) {
  const auto data = corpus().load();
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto batch = sample_pretrain_batch(data, 8, rng);
    ASSERT_EQ(batch.size(), 8u);
    EXPECT_EQ(std::set<std::size_t>(batch.begin(), batch.end()).size(), 8u);
    std::size_t vb = 0;
    for (auto i : batch) {
      const auto& r = data.manifest.records[i];
      EXPECT_EQ(r.split, Split::train);
      vb += r.audio_type == AudioType::vb;
    }
    EXPECT_EQ(vb, 4u);
  }
  EXPECT_THROW(sample_pretrain_batch(data, 1000, rng), std::invalid_argument);
}

TEST(Pretrain, LossTraceIsReproducible) {
  const auto data = corpus().load();
  auto cfg = small_config();
  cfg.steps = 2;
  Model a(cfg), b(cfg);
  const auto la = pretrain(a, data), lb = pretrain(b, data);
  ASSERT_EQ(la.size(), 2u);
  ASSERT_EQ(lb.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(loss_json(la[i]), loss_json(lb[i]));
}

TEST(Pretrain, StepZeroLossIsBoundedAtUnitScale) {
  const auto data = corpus().load();
  auto cfg = small_config();
  cfg.steps = 1;
  Model model(cfg);
  const auto trace = pretrain(model, data);
  ASSERT_EQ(trace.size(), 1u);
  // Unit scale keeps every logit in [-1, 1].
  const double b = static_cast<double>(cfg.batch_size);
  EXPECT_GE(trace[0].nce_at, std::log(b) - 2.0);
  EXPECT_LE(trace[0].nce_at, std::log(b) + 2.0);
  EXPECT_GE(trace[0].nce_av, std::log(b) - 2.0);
  EXPECT_LE(trace[0].nce_av, std::log(b) + 2.0);
  EXPECT_GE(trace[0].nce_a_hat, std::log(2.0 * b - 1.0) - 2.0);
  EXPECT_LE(trace[0].nce_a_hat, std::log(2.0 * b - 1.0) + 2.0);
  EXPECT_NEAR(trace[0].total, trace[0].nce_at + trace[0].nce_av + trace[0].nce_a_hat, 1e-12);
}

TEST(Pretrain, FourClassLossHalvesWithin300Steps) {
  const auto data = corpus().load();
  auto cfg = RunConfig::load(C4V_SOURCE_DIR "/configs/toy.cfg");
  cfg.classes = 4;
  cfg.steps = 300;
  Model model(cfg);
  const auto trace = pretrain(model, data);
  ASSERT_EQ(trace.size(), 300u);
  double last = 0.0;
  for (std::size_t i = 280; i < 300; ++i) last += trace[i].total;
  last /= 20.0;
  EXPECT_LT(last, 0.5 * trace[0].total) << "initial " << trace[0].total << " final " << last;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = scratch("ckpt");
  auto cfg = small_config();
  cfg.seed = 9;
  Model model(cfg);
  model.caption();
  model.fusion(FusionMethod::g2l);
  const auto path = (dir / "m.c4v").string();
  save_checkpoint(model, path);
  const auto loaded = load_checkpoint(path, cfg);
  const auto again = (dir / "again.c4v").string();
  save_checkpoint(loaded, again);
  EXPECT_EQ(read_bytes(path), read_bytes(again));
  EXPECT_EQ(checkpoint_config(path).echo(), cfg.echo());

  const auto data = corpus().load();
  const auto items = data.indices(Split::test);
  Model fresh = load_checkpoint(path, cfg);
  const auto ab = make_audio_batch(data, items);
  const auto ea = model.audio().encode(ab, AudioTypeConfig::both());
  const auto eb = fresh.audio().encode(ab, AudioTypeConfig::both());
  const auto va = ea.global.values(), vb = eb.global.values();
  EXPECT_TRUE(std::ranges::equal(va, vb));
}

TEST(Checkpoint, TruncationAndShapeMismatch) {
  const auto dir = scratch("ckpt_bad");
  const auto cfg = small_config();
  const auto path = (dir / "m.c4v").string();
  save_checkpoint(Model(cfg), path);
  const auto bytes = read_bytes(path);
  const auto cut = (dir / "cut.c4v").string();
  std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint(cut, cfg), FormatError);

  auto wider = cfg;
  wider.width = 64;
  wider.embed_dim = 64;
  try {
    load_checkpoint(path, wider);
    FAIL() << "shape mismatch accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("text."), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_checkpoint((dir / "absent.c4v").string(), cfg), IoError);
}

TEST(Captioning, UntrainedCaptionerScoresNearZero) {
  const auto data = corpus().load();
  auto cfg = small_config();
  cfg.caption_steps = 0;
  Model model(cfg);
  const auto train = data.indices(Split::train), test = data.indices(Split::test);
  const auto outcome = finetune_caption(model, data, train, test);
  EXPECT_LT(outcome.corpus_bleu4, 0.1);
  EXPECT_FALSE(outcome.lines.empty());
  EXPECT_THROW(finetune_caption(model, data, train, {}), std::invalid_argument);
}

TEST(Sweep, OneRowPerGridPoint) {
  const auto data = corpus().load();
  Model model(small_config());
  const auto grid = parse_grid("0,0.5,1");
  ASSERT_EQ(grid, (std::vector<double>{0.0, 0.5, 1.0}));
  const auto rows = type_token_sweep(model, data, grid);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rows[i].alpha, grid[i]);
  EXPECT_THROW(parse_grid(""), std::invalid_argument);
  EXPECT_THROW(parse_grid("0,2"), std::invalid_argument);
}

TEST(Evaluation, UntrainedRetrievalIsNearChanceAndRepeatable) {
  const auto data = corpus().load();
  Model model(small_config());
  const auto test = data.indices(Split::test);
  const auto r = evaluate_retrieval(model, data, test, FusionMethod::g2g, AudioTypeConfig::per_item());
  const auto again = evaluate_retrieval(model, data, test, FusionMethod::g2g, AudioTypeConfig::per_item());
  EXPECT_EQ(metrics_json("g2g", r), metrics_json("g2g", again));
  const double g = static_cast<double>(r.num_queries);
  ASSERT_GE(g, 4.0);
  EXPECT_GE(r.median_rank, g / 4.0);
  EXPECT_LE(r.median_rank, 3.0 * g / 4.0 + 1.0);
}
