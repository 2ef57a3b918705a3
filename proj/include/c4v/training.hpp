#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "c4v/audio_frontend.hpp"
#include "c4v/grad_check.hpp"
#include "c4v/manifest.hpp"
#include "c4v/model.hpp"
#include "c4v/retrieval.hpp"

namespace c4v {

/// Cache location: $C4V_CACHE_DIR if set, else <manifest dir>/cache.
std::string default_cache_dir(const std::string& manifest_path);
std::string cache_file(const std::string& cache_dir, const std::string& id, std::size_t segments);

/// Runs the audio frontend on every record with audio and writes one segment
/// cache file per record (`segments` fixed slots). Records are processed in
/// parallel; output does not depend on the thread count.
void preprocess_corpus(const CorpusManifest& manifest, const std::string& cache_dir, std::size_t segments,
                       std::size_t threads = 0);

/// Manifest plus decoded inputs held in memory.
struct Dataset {
  CorpusManifest manifest;
  std::size_t segments = 0;
  /// Un-normalized log-Mel spectrogram rebuilt from the cache; nullopt for
  /// silent records.
  std::vector<std::optional<Spectrogram>> audio;
  /// frames x 224 x 224 x 3 bytes per record.
  std::vector<std::vector<std::uint8_t>> frames;
  /// Record whose audio stands in for each record (itself unless silent).
  std::vector<std::size_t> audio_source;

  std::size_t size() const { return manifest.records.size(); }
  std::vector<std::size_t> indices(Split split) const { return manifest.indices(split); }
  bool has_audio(std::size_t i) const { return audio[i].has_value(); }
};

/// Loads the manifest, preprocesses records missing from the cache, and
/// reads frames and cached audio.
Dataset load_dataset(const std::string& manifest_path, std::size_t segments, const std::string& cache_dir);

TextBatch make_text_batch(const Dataset& data, std::span<const std::size_t> items, std::size_t length);
/// `frames` = 0 uses the longest record in `items`.
VisionBatch make_vision_batch(const Dataset& data, std::span<const std::size_t> items, std::size_t frames = 0);
/// Normalized clean segments; silent records use their audio_source.
AudioBatch make_audio_batch(const Dataset& data, std::span<const std::size_t> items);
/// Time/channel-masked view, one mask seed per item drawn from `rng`.
AudioBatch make_masked_audio_batch(const Dataset& data, std::span<const std::size_t> items, const MaskSpec& spec,
                                   Rng& rng);
std::vector<AudioType> record_types(const Dataset& data, std::span<const std::size_t> items);

/// Pre-training batch: B/2 VB then B/2 NB train records, drawn without
/// replacement within the batch. With one pool empty the whole batch comes
/// from the other. Throws invalid_argument when a pool is too small.
std::vector<std::size_t> sample_pretrain_batch(const Dataset& data, std::size_t batch, Rng& rng);

struct LossRecord {
  std::size_t step = 0;
  double nce_at = 0.0;
  double nce_av = 0.0;
  double nce_a_hat = 0.0;
  double total = 0.0;
  double scale = 1.0;
};

std::string loss_json(const LossRecord& r);

/// Optional text-vision warm-up, then `steps` pre-training steps of the
/// summed text-audio, vision-audio and clean-masked audio losses. Audio
/// carries each record's own type token. Text and vision backbones follow
/// the freeze flags (their projections always train). One JSON line per
/// step goes to `log`.
std::vector<LossRecord> pretrain(Model& model, const Dataset& data, std::ostream* log = nullptr);

/// Keeps the first record of each distinct caption, so every query has a
/// single correct video.
std::vector<std::size_t> distinct_captions(const Dataset& data, std::span<const std::size_t> items);

/// Text-to-video retrieval over `items` (deduplicated by caption).
RetrievalResult evaluate_retrieval(Model& model, const Dataset& data, std::span<const std::size_t> items,
                                   FusionMethod method, const AudioTypeConfig& type_cfg);

/// Points silent records at the train record with audio whose vision global
/// is closest.
void impute_silent_audio(Model& model, Dataset& data);

/// Releases every parameter and trains `method` with the symmetric NCE over
/// text-to-video scores, then evaluates on the test split.
RetrievalResult finetune_retrieval(Model& model, Dataset& data, FusionMethod method,
                                   const AudioTypeConfig& type_cfg, std::ostream* log = nullptr);

struct CaptionLine {
  std::string id;
  std::string caption;
  double bleu4 = 0.0;
};

struct CaptionOutcome {
  double corpus_bleu4 = 0.0;
  std::vector<CaptionLine> lines;
};

/// Teacher-forced training of the caption head on frozen frame and segment
/// features of `train`, then greedy decoding of `test`.
CaptionOutcome finetune_caption(Model& model, const Dataset& data, std::span<const std::size_t> train,
                                std::span<const std::size_t> test, std::ostream* log = nullptr);
std::string caption_json(const CaptionLine& line);

struct SweepRow {
  double alpha = 0.0;
  RetrievalResult nb;
  RetrievalResult vb;
};

/// Text-to-audio retrieval on the NB-only and VB-only test subsets with the
/// audio encoded in blend(alpha) mode for each alpha. No training.
std::vector<SweepRow> type_token_sweep(Model& model, const Dataset& data, std::span<const double> grid);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::vector<double> parse_grid(const std::string& text);

/// Linear-probe accuracy of frozen audio globals (record type tokens) for
/// class prediction, train split to test split.
double probe_audio(Model& model, const Dataset& data, std::size_t epochs);

/// Finite-difference checks of the pre-training loss, the L2L retrieval
/// loss and the caption loss on a 2-layer, width-16 model.
std::vector<GradCheckReport> run_grad_checks(std::uint64_t seed, const GradCheckOptions& options = {});

} // namespace c4v
