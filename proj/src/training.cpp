#include "c4v/training.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "c4v/bleu.hpp"
#include "c4v/errors.hpp"
#include "c4v/image_io.hpp"
#include "c4v/ops.hpp"
#include "c4v/segment_cache.hpp"
#include "c4v/tokenizer.hpp"
#include "c4v/wav_io.hpp"

namespace c4v {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kEvalChunk = 8;

Tensor detach(const Tensor& t) {
  if (!t.defined()) return t;
  return Tensor(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

EmbeddingSet detach(const EmbeddingSet& s) {
  EmbeddingSet out = s;
  out.local = detach(s.local);
  out.global = detach(s.global);
  return out;
}

EmbeddingSet concat_sets(const std::vector<EmbeddingSet>& parts) {
  if (parts.size() == 1) return parts.front();
  EmbeddingSet out;
  out.length = parts.front().length;
  std::vector<Tensor> locals, globals;
  for (const auto& p : parts) {
    if (p.length != out.length) {
      throw std::logic_error("concat_sets: sets differ in length");
    }
    out.batch += p.batch;
    out.valid.insert(out.valid.end(), p.valid.begin(), p.valid.end());
    locals.push_back(p.local);
    globals.push_back(p.global);
  }
  out.local = concat_rows(locals);
  out.global = concat_rows(globals);
  return out;
}

/// Encodes `items` in chunks without keeping the autograd graph.
template <typename Encode>
EmbeddingSet encode_chunked(std::span<const std::size_t> items, Encode encode) {
  std::vector<EmbeddingSet> parts;
  for (std::size_t start = 0; start < items.size(); start += kEvalChunk) {
    const auto chunk = items.subspan(start, std::min(kEvalChunk, items.size() - start));
    parts.push_back(detach(encode(chunk)));
  }
  if (parts.empty()) {
    throw std::invalid_argument("encode: no items");
  }
  return concat_sets(parts);
}

std::size_t max_frames(const Dataset& data, std::span<const std::size_t> items) {
  std::size_t n = 0;
  for (auto i : items) n = std::max(n, data.manifest.records[i].frame_paths.size());
  return n;
}

EmbeddingSet text_set(const Model& model, const Dataset& data, std::span<const std::size_t> items) {
  return model.text().encode(make_text_batch(data, items, model.config().text_len));
}

EmbeddingSet vision_set(const Model& model, const Dataset& data, std::span<const std::size_t> items,
                        std::size_t frames) {
  return model.vision().encode(make_vision_batch(data, items, frames));
}

EmbeddingSet audio_set(const Model& model, const Dataset& data, std::span<const std::size_t> items,
                       const AudioTypeConfig& type_cfg) {
  auto batch = make_audio_batch(data, items);
  batch.item_types = record_types(data, items);
  return model.audio().encode(batch, type_cfg);
}

struct FrozenSets {
  EmbeddingSet text, vision, audio;
};

FrozenSets encode_frozen(Model& model, const Dataset& data, std::span<const std::size_t> items,
                         const AudioTypeConfig& type_cfg, bool with_text = true) {
  const auto frames = max_frames(data, items);
  FrozenSets s;
  if (with_text) {
    s.text = encode_chunked(items, [&](auto c) { return text_set(model, data, c); });
  }
  s.vision = encode_chunked(items, [&](auto c) { return vision_set(model, data, c, frames); });
  s.audio = encode_chunked(items, [&](auto c) { return audio_set(model, data, c, type_cfg); });
  return s;
}

AdamOptions adam_options(const RunConfig& cfg) {
  AdamOptions o;
  o.lr = cfg.lr;
  o.head_lr = cfg.head_lr;
  return o;
}

/// Up to `batch` records from `pool` with pairwise distinct captions.
std::vector<std::size_t> sample_distinct(const Dataset& data, std::vector<std::size_t> pool, std::size_t batch,
                                         Rng& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> out;
  std::set<std::string> seen;
  for (auto i : pool) {
    if (out.size() == batch) break;
    if (seen.insert(data.manifest.records[i].text).second) out.push_back(i);
  }
  return out;
}

void write_line(std::ostream* log, const std::string& line) {
  if (log) *log << line << '\n';
}

} // namespace

// ---- cache and dataset ----

std::string default_cache_dir(const std::string& manifest_path) {
  if (const char* env = std::getenv("C4V_CACHE_DIR"); env && *env) {
    return env;
  }
  return (fs::path(manifest_path).parent_path() / "cache").string();
}

std::string cache_file(const std::string& cache_dir, const std::string& id, std::size_t segments) {
  return (fs::path(cache_dir) / (id + ".L" + std::to_string(segments) + ".a4v")).string();
}

namespace {

void preprocess_record(const CorpusManifest& manifest, const ManifestRecord& r, const std::string& cache_dir,
                       std::size_t segments) {
  auto wave = read_wav(manifest.resolve(r.wav_path));
  if (wave.sample_rate != kAudioSampleRate) {
    wave = resample_waveform(wave, kAudioSampleRate);
  }
  CachedAudio item;
  item.duration = wave.duration();
  item.segments = segment_spectrogram(log_mel_spectrogram(wave), segments);
  write_segment_cache(cache_file(cache_dir, r.id, segments), item);
}

} // namespace

void preprocess_corpus(const CorpusManifest& manifest, const std::string& cache_dir, std::size_t segments,
                       std::size_t threads) {
  if (segments == 0) {
    throw std::invalid_argument("preprocess: segment count must be positive");
  }
  std::error_code ec;
  fs::create_directories(cache_dir, ec);
  if (!fs::is_directory(cache_dir)) {
    throw IoError("cannot create cache directory " + cache_dir);
  }
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (!manifest.records[i].wav_path.empty()) todo.push_back(i);
  }
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(todo.size(), 1));

  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&](std::size_t k) {
    for (std::size_t j = k; j < todo.size(); j += threads) {
      try {
        preprocess_record(manifest, manifest.records[todo[j]], cache_dir, segments);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker, k);
  }
  if (failure) std::rethrow_exception(failure);
}

Dataset load_dataset(const std::string& manifest_path, std::size_t segments, const std::string& cache_dir) {
  Dataset d;
  d.manifest = load_manifest(manifest_path);
  d.segments = segments;
  const auto n = d.size();

  CorpusManifest missing;
  missing.root = d.manifest.root;
  for (const auto& r : d.manifest.records) {
    if (!r.wav_path.empty() && !fs::exists(cache_file(cache_dir, r.id, segments))) missing.records.push_back(r);
  }
  if (!missing.records.empty()) {
    preprocess_corpus(missing, cache_dir, segments);
  }

  d.audio.resize(n);
  d.frames.resize(n);
  d.audio_source.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = d.manifest.records[i];
    d.audio_source[i] = i;
    if (!r.wav_path.empty()) {
      const auto cached = read_segment_cache(cache_file(cache_dir, r.id, segments));
      if (cached.segments.count != segments) {
        throw FormatError("cache entry for '" + r.id + "' has the wrong segment count");
      }
      d.audio[i] = spectrogram_from_cache(cached);
    }
    auto& px = d.frames[i];
    px.reserve(r.frame_paths.size() * kImageValues);
    for (const auto& p : r.frame_paths) {
      const auto img = read_ppm(d.manifest.resolve(p));
      if (img.width != kImageSize || img.height != kImageSize) {
        throw std::invalid_argument("record '" + r.id + "': frames must be 224x224, got " +
                                    std::to_string(img.width) + "x" + std::to_string(img.height));
      }
      px.insert(px.end(), img.pixels.begin(), img.pixels.end());
    }
  }
  // Silent records borrow audio from the first record that has some until
  // impute_silent_audio picks a better donor.
  std::size_t first_with_audio = n;
  for (std::size_t i = 0; i < n && first_with_audio == n; ++i) {
    if (d.audio[i]) first_with_audio = i;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!d.audio[i]) {
      if (first_with_audio == n) {
        throw std::invalid_argument("dataset: no record has audio");
      }
      d.audio_source[i] = first_with_audio;
    }
  }
  return d;
}

// ---- batches ----

TextBatch make_text_batch(const Dataset& data, std::span<const std::size_t> items, std::size_t length) {
  std::vector<std::string> texts;
  for (auto i : items) texts.push_back(data.manifest.records[i].text);
  return TextBatch::from_texts(texts, length);
}

VisionBatch make_vision_batch(const Dataset& data, std::span<const std::size_t> items, std::size_t frames) {
  if (frames == 0) frames = max_frames(data, items);
  VisionBatch b;
  b.batch = items.size();
  b.frames = frames;
  b.pixels.assign(b.batch * frames * kImageValues, 0.0);
  b.frame_valid.assign(b.batch * frames, 0);
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& px = data.frames[items[k]];
    const auto count = px.size() / kImageValues;
    if (count > frames) {
      throw std::invalid_argument("vision batch: record has more frames than the batch allows");
    }
    auto* dst = b.pixels.data() + k * frames * kImageValues;
    std::transform(px.begin(), px.end(), dst, normalize_pixel);
    std::fill_n(b.frame_valid.begin() + static_cast<std::ptrdiff_t>(k * frames), count, 1);
  }
  return b;
}

AudioBatch make_audio_batch(const Dataset& data, std::span<const std::size_t> items) {
  std::vector<AudioSegments> segs;
  for (auto i : items) {
    const auto& spec = *data.audio[data.audio_source[i]];
    segs.push_back(normalize_segments(segment_spectrogram(spec, data.segments)));
  }
  return AudioBatch::from_segments(segs);
}

AudioBatch make_masked_audio_batch(const Dataset& data, std::span<const std::size_t> items, const MaskSpec& spec,
                                   Rng& rng) {
  std::vector<AudioSegments> segs;
  for (auto i : items) {
    auto item_spec = spec;
    item_spec.seed = rng();
    const auto masked = apply_time_channel_mask(*data.audio[data.audio_source[i]], item_spec);
    segs.push_back(normalize_segments(segment_spectrogram(masked.spectrogram, data.segments)));
  }
  return AudioBatch::from_segments(segs);
}

std::vector<AudioType> record_types(const Dataset& data, std::span<const std::size_t> items) {
  std::vector<AudioType> t;
  for (auto i : items) t.push_back(data.manifest.records[i].audio_type);
  return t;
}

std::vector<std::size_t> sample_pretrain_batch(const Dataset& data, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> vb, nb;
  for (auto i : data.indices(Split::train)) {
    if (!data.has_audio(i)) continue;
    (data.manifest.records[i].audio_type == AudioType::vb ? vb : nb).push_back(i);
  }
  std::size_t want_vb = batch / 2, want_nb = batch - batch / 2;
  if (vb.empty()) {
    want_vb = 0;
    want_nb = batch;
  } else if (nb.empty()) {
    want_vb = batch;
    want_nb = 0;
  }
  if (want_vb > vb.size() || want_nb > nb.size()) {
    throw std::invalid_argument("pretrain: batch of " + std::to_string(batch) + " exceeds the train split (" +
                                std::to_string(vb.size()) + " VB, " + std::to_string(nb.size()) + " NB records)");
  }
  std::shuffle(vb.begin(), vb.end(), rng);
  std::shuffle(nb.begin(), nb.end(), rng);
  std::vector<std::size_t> out(vb.begin(), vb.begin() + static_cast<std::ptrdiff_t>(want_vb));
  out.insert(out.end(), nb.begin(), nb.begin() + static_cast<std::ptrdiff_t>(want_nb));
  return out;
}

std::string loss_json(const LossRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["nce_at"] = r.nce_at;
  j["nce_av"] = r.nce_av;
  j["nce_a_hat"] = r.nce_a_hat;
  j["total"] = r.total;
  j["scale"] = r.scale;
  return j.dump();
}

// ---- pre-training ----

namespace {

void apply_freeze_flags(ParamStore& store, const RunConfig& cfg) {
  store.set_trainable("", true);
  if (cfg.freeze_text) {
    store.set_trainable("text.", false);
    store.set_trainable("text.projection", true);
  }
  if (cfg.freeze_vision) {
    store.set_trainable("vision.", false);
    store.set_trainable("vision.projection", true);
  }
}

void warm_up_text_vision(Model& model, const Dataset& data, std::ostream* log) {
  const auto& cfg = model.config();
  auto& store = model.store();
  store.set_trainable("", false);
  store.set_trainable("text.", true);
  store.set_trainable("vision.", true);
  const auto train = data.indices(Split::train);
  for (std::size_t step = 0; step < cfg.warmup_steps; ++step) {
    const auto items = sample_distinct(data, train, cfg.batch_size, model.rng());
    if (items.size() < 2) {
      throw std::invalid_argument("warm-up: need at least two distinct train captions");
    }
    const auto text = text_set(model, data, items);
    const auto vision = vision_set(model, data, items, 0);
    const auto loss = inter_modal_nce(text.global, vision.global, model.logit_scale());
    backward(loss);
    adam_step(store, adam_options(cfg));
    nlohmann::ordered_json j;
    j["warmup_step"] = step;
    j["nce_tv"] = loss.item();
    write_line(log, j.dump());
  }
  store.reset_optimizer();
  if (cfg.init_audio_from_vision) {
    model.reinit_audio_from_vision();
  }
}

} // namespace

std::vector<LossRecord> pretrain(Model& model, const Dataset& data, std::ostream* log) {
  const auto& cfg = model.config();
  auto& store = model.store();
  if (cfg.warmup_steps > 0 && store.step() == 0) {
    warm_up_text_vision(model, data, log);
  }
  apply_freeze_flags(store, cfg);

  const bool frozen = cfg.freeze_text && cfg.freeze_vision;
  // Frozen backbones: cache pre-projection text [EOS] and frame features.
  std::map<std::size_t, std::size_t> row_of;
  Tensor text_cache, frame_cache;
  std::size_t frames = 0;
  if (frozen) {
    std::vector<std::size_t> pool;
    for (auto i : data.indices(Split::train)) {
      if (data.has_audio(i)) pool.push_back(i);
    }
    frames = max_frames(data, pool);
    std::vector<Tensor> text_parts, frame_parts;
    for (std::size_t start = 0; start < pool.size(); start += kEvalChunk) {
      const auto chunk = std::span<const std::size_t>(pool).subspan(start, std::min(kEvalChunk, pool.size() - start));
      const auto tb = make_text_batch(data, chunk, cfg.text_len);
      const auto te = model.text().encode(tb);
      text_parts.push_back(detach(model.text().eos_features(te, tb)));
      frame_parts.push_back(detach(model.vision().frame_features(make_vision_batch(data, chunk, frames))));
    }
    for (std::size_t k = 0; k < pool.size(); ++k) row_of[pool[k]] = k;
    text_cache = concat_rows(text_parts);
    frame_cache = concat_rows(frame_parts);
  }

  MaskSpec mask;
  mask.channel_start_prob = cfg.mask_channel_prob;
  mask.time_start_prob = cfg.mask_time_prob;
  mask.span = cfg.mask_span;
  PretrainLossOptions loss_options;
  loss_options.symmetric_intra = cfg.symmetric_intra;

  std::vector<LossRecord> records;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto items = sample_pretrain_batch(data, cfg.batch_size, model.rng());
    const auto types = record_types(data, items);

    Tensor text_global, vision_global;
    if (frozen) {
      std::vector<std::size_t> rows, frame_rows;
      std::vector<std::uint8_t> valid;
      for (auto i : items) {
        const auto r = row_of.at(i);
        rows.push_back(r);
        const auto count = data.frames[i].size() / kImageValues;
        for (std::size_t f = 0; f < frames; ++f) {
          frame_rows.push_back(r * frames + f);
          valid.push_back(f < count ? 1 : 0);
        }
      }
      text_global = model.text().project(gather_rows(text_cache, rows));
      vision_global = global_from_local(gather_rows(frame_cache, frame_rows), valid, items.size(),
                                        model.vision().backbone().projection());
    } else {
      text_global = text_set(model, data, items).global;
      vision_global = vision_set(model, data, items, 0).global;
    }

    auto clean = make_audio_batch(data, items);
    clean.item_types = types;
    auto masked = make_masked_audio_batch(data, items, mask, model.rng());
    masked.item_types = types;
    const auto audio_global = model.audio().encode(clean, AudioTypeConfig::per_item()).global;
    const auto masked_global = model.audio().encode(masked, AudioTypeConfig::per_item()).global;

    const auto scale = model.logit_scale();
    const auto losses = total_pretrain_loss(text_global, vision_global, audio_global, masked_global, scale,
                                            loss_options);
    backward(losses.total);
    adam_step(store, adam_options(cfg));

    LossRecord rec{step, losses.nce_at.item(), losses.nce_av.item(), losses.nce_a_hat.item(), losses.total.item(),
                   scale.item()};
    write_line(log, loss_json(rec));
    records.push_back(rec);
  }
  return records;
}

// ---- retrieval ----

std::vector<std::size_t> distinct_captions(const Dataset& data, std::span<const std::size_t> items) {
  std::vector<std::size_t> out;
  std::set<std::string> seen;
  for (auto i : items) {
    if (seen.insert(data.manifest.records[i].text).second) out.push_back(i);
  }
  return out;
}

namespace {

Tensor score_in_chunks(const FusionHead& head, const FrozenSets& s) {
  if (head.method() != FusionMethod::l2l) {
    return detach(head.scores(s.text, s.vision, s.audio));
  }
  std::vector<Tensor> rows;
  for (std::size_t start = 0; start < s.text.batch; start += kEvalChunk) {
    std::vector<std::size_t> q(std::min(kEvalChunk, s.text.batch - start));
    std::iota(q.begin(), q.end(), start);
    rows.push_back(detach(head.scores(select_items(s.text, q), s.vision, s.audio)));
  }
  return concat_rows(rows);
}

} // namespace

RetrievalResult evaluate_retrieval(Model& model, const Dataset& data, std::span<const std::size_t> items,
                                   FusionMethod method, const AudioTypeConfig& type_cfg) {
  const auto q = distinct_captions(data, items);
  if (q.empty()) {
    throw std::invalid_argument("evaluate: no records to evaluate");
  }
  const auto& head = model.fusion(method);
  const auto sets = encode_frozen(model, data, q, type_cfg);
  const auto scores = score_in_chunks(head, sets);
  std::vector<std::size_t> truth(q.size());
  std::iota(truth.begin(), truth.end(), 0);
  return retrieval_metrics(scores, truth);
}

void impute_silent_audio(Model& model, Dataset& data) {
  std::vector<std::size_t> silent, donors;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data.has_audio(i)) silent.push_back(i);
  }
  if (silent.empty()) return;
  for (auto i : data.indices(Split::train)) {
    if (data.has_audio(i)) donors.push_back(i);
  }
  if (donors.empty()) {
    throw std::invalid_argument("impute: no train record with audio");
  }
  const auto frames = std::max(max_frames(data, silent), max_frames(data, donors));
  const auto gallery = encode_chunked(donors, [&](auto c) { return vision_set(model, data, c, frames); });
  const auto queries = encode_chunked(silent, [&](auto c) { return vision_set(model, data, c, frames); });
  const auto e = queries.global.cols();
  for (std::size_t k = 0; k < silent.size(); ++k) {
    const auto query = queries.global.values().subspan(k * e, e);
    data.audio_source[silent[k]] = donors[impute_missing_audio(query, gallery.global)];
  }
}

RetrievalResult finetune_retrieval(Model& model, Dataset& data, FusionMethod method,
                                   const AudioTypeConfig& type_cfg, std::ostream* log) {
  const auto& cfg = model.config();
  auto& store = model.store();
  impute_silent_audio(model, data);
  const auto& head = model.fusion(method);
  store.set_trainable("", true);
  store.reset_optimizer();
  const auto train = data.indices(Split::train);
  for (std::size_t step = 0; step < cfg.finetune_steps; ++step) {
    const auto items = sample_distinct(data, train, cfg.batch_size, model.rng());
    if (items.size() < 2) {
      throw std::invalid_argument("finetune: need at least two distinct train captions");
    }
    const auto text = text_set(model, data, items);
    const auto vision = vision_set(model, data, items, 0);
    const auto audio = audio_set(model, data, items, type_cfg);
    const auto loss = symmetric_score_nce(scale_by(head.scores(text, vision, audio), model.logit_scale()));
    backward(loss);
    adam_step(store, adam_options(cfg));
    nlohmann::ordered_json j;
    j["step"] = step;
    j["loss"] = loss.item();
    write_line(log, j.dump());
  }
  return evaluate_retrieval(model, data, data.indices(Split::test), method, type_cfg);
}

// ---- captioning ----

CaptionOutcome finetune_caption(Model& model, const Dataset& data, std::span<const std::size_t> train,
                                std::span<const std::size_t> test, std::ostream* log) {
  if (test.empty()) {
    throw std::invalid_argument("finetune-caption: empty test split");
  }
  if (train.empty()) {
    throw std::invalid_argument("finetune-caption: empty train split");
  }
  const auto& cfg = model.config();
  auto& store = model.store();
  const auto& caption = model.caption();
  store.set_trainable("", false);
  store.set_trainable("caption.", true);
  store.reset_optimizer();

  const auto type_cfg = AudioTypeConfig::both();
  const auto train_sets = encode_frozen(model, data, train, type_cfg, false);
  const auto test_sets = encode_frozen(model, data, test, type_cfg, false);
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t step = 0; step < cfg.caption_steps; ++step) {
    std::vector<std::size_t> pick = all;
    if (pick.size() > cfg.batch_size) {
      std::shuffle(pick.begin(), pick.end(), model.rng());
      pick.resize(cfg.batch_size);
    }
    std::vector<std::size_t> records;
    for (auto k : pick) records.push_back(train[k]);
    const auto captions = make_text_batch(data, records, cfg.caption_len);
    const auto loss = caption.teacher_forced_loss(captions, select_items(train_sets.vision, pick),
                                                  select_items(train_sets.audio, pick));
    backward(loss);
    adam_step(store, adam_options(cfg));
    nlohmann::ordered_json j;
    j["step"] = step;
    j["loss"] = loss.item();
    write_line(log, j.dump());
  }

  CaptionOutcome out;
  BleuAccumulator corpus;
  for (std::size_t k = 0; k < test.size(); ++k) {
    const auto& r = data.manifest.records[test[k]];
    const auto ids = caption.greedy_decode(test_sets.vision, test_sets.audio, k, cfg.caption_len - 2);
    CaptionLine line;
    line.id = r.id;
    line.caption = ByteTokenizer::decode(ids);
    const std::vector<Words> refs = {split_words(r.text)};
    const auto hyp = split_words(line.caption);
    line.bleu4 = bleu4(hyp, refs, true);
    corpus.add(hyp, refs);
    out.lines.push_back(std::move(line));
  }
  out.corpus_bleu4 = corpus.score();
  return out;
}

std::string caption_json(const CaptionLine& line) {
  nlohmann::ordered_json j;
  j["video_id"] = line.id;
  j["caption"] = line.caption;
  j["bleu4"] = line.bleu4;
  return j.dump();
}

// ---- type-token sweep ----

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    grid.push_back(parse_audio_type("blend:" + item).alpha);
  }
  if (grid.empty()) {
    throw std::invalid_argument("sweep: empty alpha grid");
  }
  return grid;
}

std::vector<SweepRow> type_token_sweep(Model& model, const Dataset& data, std::span<const double> grid) {
  if (grid.empty()) {
    throw std::invalid_argument("sweep: empty alpha grid");
  }
  std::vector<std::size_t> nb, vb;
  for (auto i : data.indices(Split::test)) {
    (data.manifest.records[i].audio_type == AudioType::nb ? nb : vb).push_back(i);
  }
  struct Subset {
    std::vector<std::size_t> items;
    EmbeddingSet text;
  };
  std::array<Subset, 2> subsets;
  subsets[0].items = distinct_captions(data, nb);
  subsets[1].items = distinct_captions(data, vb);
  for (auto& s : subsets) {
    if (s.items.empty()) {
      throw std::invalid_argument("sweep: the test split needs both NB and VB records");
    }
    s.text = encode_chunked(s.items, [&](auto c) { return text_set(model, data, c); });
  }
  std::vector<SweepRow> rows;
  for (double alpha : grid) {
    const auto type_cfg = AudioTypeConfig::blend(alpha);
    SweepRow row;
    row.alpha = alpha;
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& s = subsets[k];
      const auto audio = encode_chunked(s.items, [&](auto c) { return audio_set(model, data, c, type_cfg); });
      std::vector<std::size_t> truth(s.items.size());
      std::iota(truth.begin(), truth.end(), 0);
      (k == 0 ? row.nb : row.vb) = retrieval_metrics(matmul_nt(s.text.global, audio.global), truth);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "alpha,nb_R1,nb_R5,nb_R10,vb_R1,vb_R5,vb_R10\n";
  for (const auto& r : rows) {
    out << r.alpha << ',' << r.nb.r1 << ',' << r.nb.r5 << ',' << r.nb.r10 << ',' << r.vb.r1 << ',' << r.vb.r5 << ','
        << r.vb.r10 << '\n';
  }
  return out.str();
}

// ---- probe ----

double probe_audio(Model& model, const Dataset& data, std::size_t epochs) {
  auto features = [&](Split split, std::vector<std::size_t>& labels) {
    const auto items = data.indices(split);
    if (items.empty()) {
      throw std::invalid_argument("probe: empty " + split_name(split) + " split");
    }
    for (auto i : items) labels.push_back(data.manifest.records[i].class_id);
    return encode_chunked(items, [&](auto c) { return audio_set(model, data, c, AudioTypeConfig::per_item()); })
        .global;
  };
  std::vector<std::size_t> train_labels, test_labels;
  const auto train = features(Split::train, train_labels);
  const auto test = features(Split::test, test_labels);
  std::size_t classes = 0;
  for (const auto& r : data.manifest.records) classes = std::max(classes, r.class_id + 1);
  ProbeOptions opts;
  opts.epochs = epochs;
  opts.seed = model.config().seed;
  return linear_probe(train, train_labels, test, test_labels, classes, opts);
}

// ---- gradient checks ----

std::vector<GradCheckReport> run_grad_checks(std::uint64_t seed, const GradCheckOptions& options) {
  RunConfig cfg;
  cfg.width = 16;
  cfg.embed_dim = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.fusion_layers = 2;
  cfg.caption_layers = 2;
  cfg.text_len = 12;
  cfg.caption_len = 12;
  cfg.audio_segments = 2;
  cfg.logit_scale = "learnable";
  cfg.init_audio_from_vision = false;
  cfg.seed = seed;
  Model model(cfg);
  model.fusion(FusionMethod::l2l);
  model.caption();
  auto& store = model.store();
  store.set_trainable("", true);

  Rng rng(seed + 17);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Checked at a generic point: at initialization zero biases, unit gains and
  // small weights leave many gradients near the finite-difference noise floor.
  for (auto& e : store.entries())
    for (auto& v : e.value.mutable_values()) v += options.parameter_noise * normal(rng);
  const std::size_t b = 2;
  auto randoms = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(rng);
    return v;
  };
  const auto text = TextBatch::from_texts({"class alpha", "class bravo"}, cfg.text_len);
  VisionBatch vision;
  vision.batch = b;
  vision.frames = 2;
  vision.pixels = randoms(b * 2 * kImageValues);
  vision.frame_valid = {1, 1, 1, 0};
  AudioBatch audio;
  audio.batch = b;
  audio.segments = 2;
  audio.data = randoms(b * 2 * kImageValues);
  audio.pad_mask = {0, 0, 0, 1};
  audio.item_types = {AudioType::vb, AudioType::nb};
  AudioBatch masked = audio;
  for (auto& v : masked.data) v += 0.3 * normal(rng);

  std::vector<std::string> names;
  for (const auto& e : store.entries()) names.push_back(e.name);
  auto select = [&](const std::vector<std::string>& prefixes) {
    std::vector<std::string> out;
    for (const auto& n : names) {
      for (const auto& p : prefixes) {
        if (n.rfind(p, 0) == 0) {
          out.push_back(n);
          break;
        }
      }
    }
    return out;
  };
  auto tag = [](std::vector<GradCheckReport> reports, const std::string& loss) {
    for (auto& r : reports) r.name = loss + ":" + r.name;
    return reports;
  };

  std::vector<GradCheckReport> all;
  const auto pretrain_names = select({"text.", "vision.", "audio.", "logit_scale"});
  auto pretrain_loss = [&] {
    const auto t = model.text().encode(text).global;
    const auto v = model.vision().encode(vision).global;
    const auto a = model.audio().encode(audio, AudioTypeConfig::per_item()).global;
    const auto m = model.audio().encode(masked, AudioTypeConfig::per_item()).global;
    return total_pretrain_loss(t, v, a, m, model.logit_scale()).total;
  };
  auto r1 = tag(grad_check(pretrain_loss, store, pretrain_names, options), "pretrain");
  all.insert(all.end(), r1.begin(), r1.end());

  const auto& l2l = model.fusion(FusionMethod::l2l);
  const auto l2l_names = select({"fusion.l2l.", "text.", "vision.projection", "audio.type", "logit_scale"});
  auto l2l_loss = [&] {
    const auto t = model.text().encode(text);
    const auto v = model.vision().encode(vision);
    const auto a = model.audio().encode(audio, AudioTypeConfig::both());
    return symmetric_score_nce(scale_by(l2l.scores(t, v, a), model.logit_scale()));
  };
  auto r2 = tag(grad_check(l2l_loss, store, l2l_names, options), "l2l");
  all.insert(all.end(), r2.begin(), r2.end());

  const auto& caption = model.caption();
  const auto caption_names = select({"caption.", "text.token_embedding", "vision.ln_post", "audio.ln_post"});
  const auto captions = TextBatch::from_texts({"a b", "c d e"}, cfg.caption_len);
  auto caption_loss = [&] {
    const auto v = model.vision().encode(vision);
    const auto a = model.audio().encode(audio, AudioTypeConfig::both());
    return caption.teacher_forced_loss(captions, v, a);
  };
  auto r3 = tag(grad_check(caption_loss, store, caption_names, options), "caption");
  all.insert(all.end(), r3.begin(), r3.end());
  return all;
}

} // namespace c4v
