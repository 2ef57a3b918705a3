#include "c4v/encoders.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>

#include "c4v/ops.hpp"
#include "c4v/tokenizer.hpp"

namespace c4v {

namespace {

void check_alpha(const AudioTypeConfig& cfg) {
  if (cfg.mode == AudioTypeMode::blend && !(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) {
    throw std::invalid_argument("audio type: blend weight must lie in [0, 1]");
  }
}

// Encodes only the items flagged valid and scatters them back, with zero
// rows standing in for invalid items.
Tensor scatter_valid(const Tensor& encoded, std::span<const std::uint8_t> valid, std::size_t width) {
  std::vector<RowRef> refs;
  refs.reserve(valid.size());
  std::uint32_t next = 0;
  for (auto v : valid) {
    refs.emplace_back(v ? RowRef{0, next++} : RowRef{1, 0});
  }
  if (!encoded.defined()) {
    return Tensor::zeros({valid.size(), width});
  }
  return select_rows({encoded, Tensor::zeros({1, width})}, refs);
}

} // namespace

TextBatch TextBatch::from_texts(const std::vector<std::string>& texts, std::size_t length) {
  TextBatch b;
  b.batch = texts.size();
  b.length = length;
  b.ids.reserve(texts.size() * length);
  for (const auto& t : texts) {
    const auto ids = ByteTokenizer::encode(t, length);
    b.ids.insert(b.ids.end(), ids.begin(), ids.end());
  }
  return b;
}

std::vector<std::size_t> TextBatch::eos_positions() const {
  if (ids.size() != batch * length) {
    throw std::invalid_argument("text batch: id count does not match batch x length");
  }
  std::vector<std::size_t> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto* row = ids.data() + b * length;
    if (length == 0 || row[0] != ByteTokenizer::kSos) {
      throw std::invalid_argument("text batch: item " + std::to_string(b) + " does not start with [SOS]");
    }
    const auto* eos = std::find(row, row + length, ByteTokenizer::kEos);
    if (eos == row + length) {
      throw std::invalid_argument("text batch: item " + std::to_string(b) + " has no [EOS]");
    }
    for (const auto* p = row; p != eos; ++p) {
      if (*p == ByteTokenizer::kPad) {
        throw std::invalid_argument("text batch: [PAD] before [EOS] in item " + std::to_string(b));
      }
    }
    out[b] = static_cast<std::size_t>(eos - row);
  }
  return out;
}

AudioBatch AudioBatch::from_segments(const std::vector<AudioSegments>& items, std::vector<AudioType> types) {
  if (items.empty()) {
    throw std::invalid_argument("audio batch: no items");
  }
  AudioBatch b;
  b.batch = items.size();
  b.segments = items.front().count;
  b.data.reserve(b.batch * b.segments * kSegmentValues);
  for (const auto& it : items) {
    if (it.count != b.segments || it.data.size() != it.count * kSegmentValues ||
        it.pad_mask.size() != it.count) {
      throw std::invalid_argument("audio batch: items must share the segment count");
    }
    b.data.insert(b.data.end(), it.data.begin(), it.data.end());
    b.pad_mask.insert(b.pad_mask.end(), it.pad_mask.begin(), it.pad_mask.end());
  }
  if (!types.empty() && types.size() != b.batch) {
    throw std::invalid_argument("audio batch: one type per item required");
  }
  b.item_types = std::move(types);
  return b;
}

AudioTypeConfig parse_audio_type(const std::string& text) {
  if (text == "vb") return AudioTypeConfig::vb();
  if (text == "nb") return AudioTypeConfig::nb();
  if (text == "both") return AudioTypeConfig::both();
  if (text == "record") return AudioTypeConfig::per_item();
  const std::string prefix = "blend:";
  if (text.rfind(prefix, 0) == 0) {
    const auto body = text.substr(prefix.size());
    char* end = nullptr;
    const double alpha = std::strtod(body.c_str(), &end);
    if (body.empty() || end != body.c_str() + body.size()) {
      throw std::invalid_argument("audio type: bad blend weight '" + body + "'");
    }
    auto cfg = AudioTypeConfig::blend(alpha);
    check_alpha(cfg);
    return cfg;
  }
  throw std::invalid_argument("audio type: expected vb, nb, both, record or blend:<alpha>, got '" + text + "'");
}

std::string audio_type_string(const AudioTypeConfig& cfg) {
  switch (cfg.mode) {
    case AudioTypeMode::single_vb: return "vb";
    case AudioTypeMode::single_nb: return "nb";
    case AudioTypeMode::append_both: return "both";
    case AudioTypeMode::per_item: return "record";
    case AudioTypeMode::blend: return "blend:" + std::to_string(cfg.alpha);
  }
  return "?";
}

EmbeddingSet select_items(const EmbeddingSet& set, std::span<const std::size_t> indices) {
  if (set.batch == 0) {
    return set;
  }
  EmbeddingSet out;
  out.batch = indices.size();
  out.length = set.length;
  std::vector<std::size_t> rows;
  rows.reserve(indices.size() * set.length);
  for (auto i : indices) {
    if (i >= set.batch) {
      throw std::invalid_argument("select_items: index out of range");
    }
    for (std::size_t t = 0; t < set.length; ++t) {
      rows.push_back(i * set.length + t);
      out.valid.push_back(set.valid[i * set.length + t]);
    }
  }
  if (set.local.defined()) out.local = gather_rows(set.local, rows);
  if (set.global.defined()) out.global = gather_rows(set.global, indices);
  return out;
}

Tensor global_from_local(const Tensor& local, std::span<const std::uint8_t> valid, std::size_t groups,
                         const Tensor& projection) {
  return l2_normalize_rows(group_mean(matmul(local, projection), groups, valid));
}

// ---- text ----

TextEncoder::TextEncoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto d = cfg.width;
  token_embedding_ = store.add_normal("text.token_embedding", {cfg.vocab_size, d}, rng);
  positional_ = store.add_normal("text.positional", {cfg.max_text_len, d}, rng, 0.01);
  stack_ = TransformerStack(store, "text", cfg.layers, d, cfg.heads, cfg.mlp_ratio, rng);
  ln_gain_ = store.add_constant("text.ln_final.gain", {d}, 1.0);
  ln_bias_ = store.add_constant("text.ln_final.bias", {d}, 0.0);
  projection_ = store.add_normal("text.projection", {d, cfg.embed_dim}, rng);
}

TextEncoder TextEncoder::bind(const ParamStore& store, const EncoderConfig& cfg) {
  TextEncoder e;
  e.cfg_ = cfg;
  e.token_embedding_ = store.get("text.token_embedding");
  e.positional_ = store.get("text.positional");
  e.ln_gain_ = store.get("text.ln_final.gain");
  e.ln_bias_ = store.get("text.ln_final.bias");
  e.projection_ = store.get("text.projection");
  e.stack_ = TransformerStack::bind(store, "text", cfg.layers, cfg.heads);
  return e;
}

EmbeddingSet TextEncoder::encode(const TextBatch& batch) const {
  const auto eos = batch.eos_positions();
  if (batch.length > positional_.dim(0)) {
    throw std::invalid_argument("text encoder: length " + std::to_string(batch.length) +
                                " exceeds the positional table");
  }
  std::vector<std::size_t> ids(batch.ids.begin(), batch.ids.end());
  for (auto id : ids) {
    if (id >= token_embedding_.dim(0)) {
      throw std::invalid_argument("text encoder: token id out of range");
    }
  }
  auto x = add_tiled(gather_rows(token_embedding_, ids), slice_rows(positional_, 0, batch.length));
  const auto mask = AttentionMask::causal(batch.length);
  x = stack_.forward(x, batch.batch, &mask);
  EmbeddingSet out;
  out.batch = batch.batch;
  out.length = batch.length;
  out.local = layer_norm(x, ln_gain_, ln_bias_);
  out.valid.assign(batch.batch * batch.length, 0);
  std::vector<std::size_t> eos_rows(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    std::fill_n(out.valid.begin() + static_cast<std::ptrdiff_t>(b * batch.length), eos[b] + 1, 1);
    eos_rows[b] = b * batch.length + eos[b];
  }
  out.global = project(gather_rows(out.local, eos_rows));
  return out;
}

Tensor TextEncoder::project(const Tensor& eos_features) const {
  return l2_normalize_rows(matmul(eos_features, projection_));
}

Tensor TextEncoder::eos_features(const EmbeddingSet& e, const TextBatch& batch) const {
  const auto eos = batch.eos_positions();
  std::vector<std::size_t> rows(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    rows[b] = b * batch.length + eos[b];
  }
  return gather_rows(e.local, rows);
}

// ---- patch encoder ----

std::vector<double> patchify(std::span<const double> images, std::size_t count, std::size_t patch_size) {
  if (patch_size == 0 || kImageSize % patch_size != 0) {
    throw std::invalid_argument("patchify: patch size must divide 224");
  }
  if (images.size() != count * kImageValues) {
    throw std::invalid_argument("patchify: expected " + std::to_string(count) + " images of 224x224x3");
  }
  const auto grid = kImageSize / patch_size;
  const auto patch_dim = patch_size * patch_size * kImageChannels;
  const auto row_values = patch_size * kImageChannels;
  std::vector<double> out(count * grid * grid * patch_dim);
  auto* dst = out.data();
  for (std::size_t n = 0; n < count; ++n) {
    const auto* img = images.data() + n * kImageValues;
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        for (std::size_t py = 0; py < patch_size; ++py) {
          const auto* src = img + ((gy * patch_size + py) * kImageSize + gx * patch_size) * kImageChannels;
          dst = std::copy_n(src, row_values, dst);
        }
      }
    }
  }
  return out;
}

PatchEncoder::PatchEncoder(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng,
                           bool with_type_tokens)
    : prefix_(prefix), cfg_(cfg), with_types_(with_type_tokens) {
  if (cfg.patch_size == 0 || kImageSize % cfg.patch_size != 0) {
    throw std::invalid_argument("patch encoder: patch size must divide 224");
  }
  const auto d = cfg.width;
  patch_embed_ = store.add_normal(prefix + ".patch_embed", {cfg.patch_dim(), d}, rng);
  class_embedding_ = store.add_normal(prefix + ".class_embedding", {1, d}, rng);
  positional_ = store.add_normal(prefix + ".positional", {1 + cfg.patches(), d}, rng, 0.01);
  ln_pre_gain_ = store.add_constant(prefix + ".ln_pre.gain", {d}, 1.0);
  ln_pre_bias_ = store.add_constant(prefix + ".ln_pre.bias", {d}, 0.0);
  stack_ = TransformerStack(store, prefix, cfg.layers, d, cfg.heads, cfg.mlp_ratio, rng);
  ln_post_gain_ = store.add_constant(prefix + ".ln_post.gain", {d}, 1.0);
  ln_post_bias_ = store.add_constant(prefix + ".ln_post.bias", {d}, 0.0);
  projection_ = store.add_normal(prefix + ".projection", {d, cfg.embed_dim}, rng);
  if (with_types_) {
    type_positional_ = store.add_normal(prefix + ".type_positional", {1, d}, rng, 0.01, ParamGroup::head);
  }
}

PatchEncoder PatchEncoder::bind(const ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                                bool with_type_tokens) {
  PatchEncoder e;
  e.prefix_ = prefix;
  e.cfg_ = cfg;
  e.with_types_ = with_type_tokens;
  e.patch_embed_ = store.get(prefix + ".patch_embed");
  e.class_embedding_ = store.get(prefix + ".class_embedding");
  e.positional_ = store.get(prefix + ".positional");
  e.ln_pre_gain_ = store.get(prefix + ".ln_pre.gain");
  e.ln_pre_bias_ = store.get(prefix + ".ln_pre.bias");
  e.stack_ = TransformerStack::bind(store, prefix, cfg.layers, cfg.heads);
  e.ln_post_gain_ = store.get(prefix + ".ln_post.gain");
  e.ln_post_bias_ = store.get(prefix + ".ln_post.bias");
  e.projection_ = store.get(prefix + ".projection");
  if (with_type_tokens) {
    e.type_positional_ = store.get(prefix + ".type_positional");
  }
  return e;
}

Tensor PatchEncoder::encode_images(std::span<const double> images, std::size_t count, const Tensor& types,
                                   const std::vector<std::vector<std::uint32_t>>& type_refs) const {
  if (count == 0) {
    throw std::invalid_argument("patch encoder: no images");
  }
  const std::size_t slots = type_refs.empty() ? 0 : type_refs.front().size();
  if (slots > 0 && (!with_types_ || !types.defined() || type_refs.size() != count)) {
    throw std::invalid_argument("patch encoder: type slots need type tokens for every image");
  }
  const auto patches = cfg_.patches();
  const auto seq = sequence_length(slots);

  Tensor pixels({count * patches, cfg_.patch_dim()}, patchify(images, count, cfg_.patch_size));
  const auto embedded = matmul(pixels, patch_embed_);

  std::vector<RowRef> refs;
  refs.reserve(count * seq);
  for (std::size_t n = 0; n < count; ++n) {
    refs.emplace_back(1, 0);
    for (std::size_t p = 0; p < patches; ++p) {
      refs.emplace_back(0, static_cast<std::uint32_t>(n * patches + p));
    }
    if (slots > 0) {
      if (type_refs[n].size() != slots) {
        throw std::invalid_argument("patch encoder: every image needs the same number of type slots");
      }
      for (auto t : type_refs[n]) {
        refs.emplace_back(2, t);
      }
    }
  }
  std::vector<Tensor> sources{embedded, class_embedding_};
  if (slots > 0) {
    sources.push_back(types);
  }
  auto x = select_rows(sources, refs);

  // The single type-slot positional embedding is repeated for every slot.
  Tensor pos = positional_;
  if (slots > 0) {
    std::vector<Tensor> parts{positional_};
    parts.insert(parts.end(), slots, type_positional_);
    pos = concat_rows(parts);
  }
  x = layer_norm(add_tiled(x, pos), ln_pre_gain_, ln_pre_bias_);
  x = stack_.forward(x, count, nullptr);

  std::vector<std::size_t> cls(count);
  for (std::size_t n = 0; n < count; ++n) {
    cls[n] = n * seq;
  }
  return layer_norm(gather_rows(x, cls), ln_post_gain_, ln_post_bias_);
}

// ---- vision ----

VisionEncoder::VisionEncoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng)
    : encoder_(store, "vision", cfg, rng, false) {}

VisionEncoder VisionEncoder::bind(const ParamStore& store, const EncoderConfig& cfg) {
  VisionEncoder e;
  e.encoder_ = PatchEncoder::bind(store, "vision", cfg, false);
  return e;
}

Tensor VisionEncoder::frame_features(const VisionBatch& batch) const {
  const auto total = batch.batch * batch.frames;
  if (batch.pixels.size() != total * kImageValues || batch.frame_valid.size() != total) {
    throw std::invalid_argument("vision batch: expected batch x frames x 224 x 224 x 3 pixels and masks");
  }
  std::vector<double> kept;
  std::size_t count = 0;
  for (std::size_t i = 0; i < total; ++i) {
    if (batch.frame_valid[i]) {
      const auto* src = batch.pixels.data() + i * kImageValues;
      kept.insert(kept.end(), src, src + kImageValues);
      ++count;
    }
  }
  Tensor encoded;
  if (count > 0) {
    encoded = encoder_.encode_images(kept, count);
  }
  return scatter_valid(encoded, batch.frame_valid, encoder_.projection().dim(0));
}

EmbeddingSet VisionEncoder::encode(const VisionBatch& batch) const {
  EmbeddingSet out;
  out.batch = batch.batch;
  out.length = batch.frames;
  out.local = frame_features(batch);
  out.valid = batch.frame_valid;
  out.global = global_from_local(out.local, out.valid, batch.batch, encoder_.projection());
  return out;
}

// ---- audio ----

AudioEncoder::AudioEncoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng)
    : encoder_(store, "audio", cfg, rng, true) {
  type_vb_ = store.add_normal("audio.type_vb", {1, cfg.width}, rng, 0.02, ParamGroup::head);
  type_nb_ = store.add_normal("audio.type_nb", {1, cfg.width}, rng, 0.02, ParamGroup::head);
}

AudioEncoder AudioEncoder::bind(const ParamStore& store, const EncoderConfig& cfg) {
  AudioEncoder e;
  e.encoder_ = PatchEncoder::bind(store, "audio", cfg, true);
  e.type_vb_ = store.get("audio.type_vb");
  e.type_nb_ = store.get("audio.type_nb");
  return e;
}

Tensor AudioEncoder::segment_features(const AudioBatch& batch, const AudioTypeConfig& type_cfg) const {
  check_alpha(type_cfg);
  const auto total = batch.batch * batch.segments;
  if (batch.data.size() != total * kSegmentValues || batch.pad_mask.size() != total) {
    throw std::invalid_argument("audio batch: expected batch x segments x 224 x 224 x 3 values and pad flags");
  }
  if (type_cfg.mode == AudioTypeMode::per_item && batch.item_types.size() != batch.batch) {
    throw std::invalid_argument("audio encoder: per-item type mode needs a type for every item");
  }

  Tensor types;
  switch (type_cfg.mode) {
    case AudioTypeMode::single_vb: types = type_vb_; break;
    case AudioTypeMode::single_nb: types = type_nb_; break;
    case AudioTypeMode::blend:
      types = add(scale(type_vb_, 1.0 - type_cfg.alpha), scale(type_nb_, type_cfg.alpha));
      break;
    case AudioTypeMode::append_both:
    case AudioTypeMode::per_item: types = concat_rows({type_vb_, type_nb_}); break;
  }

  std::vector<double> kept;
  std::vector<std::vector<std::uint32_t>> refs;
  std::vector<std::uint8_t> valid(total);
  for (std::size_t i = 0; i < total; ++i) {
    valid[i] = batch.pad_mask[i] ? 0 : 1;
    if (!valid[i]) {
      continue;
    }
    const auto* src = batch.data.data() + i * kSegmentValues;
    kept.insert(kept.end(), src, src + kSegmentValues);
    switch (type_cfg.mode) {
      case AudioTypeMode::append_both: refs.push_back({0, 1}); break;
      case AudioTypeMode::per_item:
        refs.push_back({batch.item_types[i / batch.segments] == AudioType::vb ? 0u : 1u});
        break;
      default: refs.push_back({0}); break;
    }
  }
  Tensor encoded;
  if (!refs.empty()) {
    encoded = encoder_.encode_images(kept, refs.size(), types, refs);
  }
  return scatter_valid(encoded, valid, encoder_.projection().dim(0));
}

EmbeddingSet AudioEncoder::encode(const AudioBatch& batch, const AudioTypeConfig& type_cfg) const {
  EmbeddingSet out;
  out.batch = batch.batch;
  out.length = batch.segments;
  out.local = segment_features(batch, type_cfg);
  out.valid.resize(batch.pad_mask.size());
  for (std::size_t i = 0; i < out.valid.size(); ++i) {
    out.valid[i] = batch.pad_mask[i] ? 0 : 1;
  }
  out.global = global_from_local(out.local, out.valid, batch.batch, encoder_.projection());
  return out;
}

void init_audio_from_vision(ParamStore& store, Rng& rng) {
  const std::string from = "vision.";
  for (auto& e : store.entries()) {
    if (e.name.rfind(from, 0) != 0) {
      continue;
    }
    const auto target = "audio." + e.name.substr(from.size());
    if (!store.contains(target)) {
      throw std::invalid_argument("init_audio_from_vision: no audio counterpart for " + e.name);
    }
    auto& dst = store.entry(target);
    if (dst.value.shape() != e.value.shape()) {
      throw std::invalid_argument("init_audio_from_vision: shape mismatch for " + target + " " +
                                  shape_string(dst.value.shape()) + " vs " + shape_string(e.value.shape()));
    }
    const auto src = e.value.values();
    std::copy(src.begin(), src.end(), dst.value.mutable_values().begin());
    dst.first_moment.clear();
    dst.second_moment.clear();
  }
  for (const char* name : {"audio.type_vb", "audio.type_nb", "audio.type_positional"}) {
    auto& dst = store.entry(name);
    const double stddev = std::string(name) == "audio.type_positional" ? 0.01 : 0.02;
    const auto draw = truncated_normal(dst.value.numel(), rng, stddev);
    std::copy(draw.begin(), draw.end(), dst.value.mutable_values().begin());
    dst.first_moment.clear();
    dst.second_moment.clear();
  }
}

} // namespace c4v
