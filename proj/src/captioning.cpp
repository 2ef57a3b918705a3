#include "c4v/captioning.hpp"

#include <stdexcept>

#include "c4v/ops.hpp"
#include "c4v/tokenizer.hpp"

namespace c4v {

namespace {

// Appends the L x L attention pattern of one sequence to `allow`.
void append_allow(std::vector<std::uint8_t>& allow, std::size_t words, std::span<const std::uint8_t> frame_valid,
                  std::span<const std::uint8_t> segment_valid) {
  const auto frames = frame_valid.size();
  const auto length = words + frames + segment_valid.size();
  std::vector<std::uint8_t> media(length, 0);
  bool any_media = false;
  for (std::size_t i = 0; i < frames; ++i) {
    media[words + i] = frame_valid[i];
    any_media |= frame_valid[i] != 0;
  }
  for (std::size_t i = 0; i < segment_valid.size(); ++i) {
    media[words + frames + i] = segment_valid[i];
    any_media |= segment_valid[i] != 0;
  }
  for (std::size_t q = 0; q < length; ++q) {
    for (std::size_t k = 0; k < length; ++k) {
      std::uint8_t a;
      if (q < words) {
        a = k <= q ? 1 : media[k];
      } else {
        a = any_media ? media[k] : static_cast<std::uint8_t>(k == q);
      }
      allow.push_back(a);
    }
  }
}

bool present(const EmbeddingSet& e) { return e.batch > 0; }

} // namespace

MultimodalSequence build_caption_input(const Tensor& words, const Tensor& frames,
                                       std::span<const std::uint8_t> frame_valid, const Tensor& segments,
                                       std::span<const std::uint8_t> segment_valid) {
  if (!words.defined() || words.rank() != 2 || words.rows() == 0) {
    throw std::invalid_argument("build_caption_input: needs at least one word");
  }
  MultimodalSequence s;
  s.words = words.rows();
  std::vector<Tensor> parts{words};
  auto add_part = [&](const Tensor& t, std::span<const std::uint8_t> valid, std::size_t& count, Modality tag) {
    if (!t.defined()) {
      if (!valid.empty()) throw std::invalid_argument("build_caption_input: flags given for an absent modality");
      return;
    }
    if (t.rank() != 2 || t.cols() != words.cols()) {
      throw std::invalid_argument("build_caption_input: feature widths differ");
    }
    if (valid.size() != t.rows()) {
      throw std::invalid_argument("build_caption_input: one validity flag per token required");
    }
    count = t.rows();
    s.tags.insert(s.tags.end(), count, tag);
    s.valid.insert(s.valid.end(), valid.begin(), valid.end());
    parts.push_back(t);
  };
  s.tags.assign(s.words, Modality::word);
  s.valid.assign(s.words, 1);
  add_part(frames, frame_valid, s.frames, Modality::vision);
  add_part(segments, segment_valid, s.segments, Modality::audio);
  s.features = parts.size() == 1 ? words : concat_rows(parts);
  append_allow(s.allow, s.words, frames.defined() ? frame_valid : std::span<const std::uint8_t>{},
               segments.defined() ? segment_valid : std::span<const std::uint8_t>{});
  return s;
}

CaptionModel::CaptionModel(ParamStore& store, const CaptionConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (!store.contains("text.token_embedding")) {
    throw std::invalid_argument("caption model: text encoder must be created first");
  }
  token_embedding_ = store.get("text.token_embedding");
  if (token_embedding_.dim(0) != cfg.vocab_size || token_embedding_.dim(1) != cfg.width) {
    throw std::invalid_argument("caption model: vocabulary or width differs from the text encoder");
  }
  const auto d = cfg.width;
  const auto head = ParamGroup::head;
  type_rows_ = store.add_normal("caption.type", {3, d}, rng, 0.02, head);
  positional_ = store.add_normal("caption.positional", {cfg.max_positions, d}, rng, 0.01, head);
  stack_ = TransformerStack(store, "caption", cfg.layers, d, cfg.heads, cfg.mlp_ratio, rng, head);
  ln_gain_ = store.add_constant("caption.ln_final.gain", {d}, 1.0, head);
  ln_bias_ = store.add_constant("caption.ln_final.bias", {d}, 0.0, head);
  out_w_ = store.add_normal("caption.output.w", {d, cfg.vocab_size}, rng, 0.02, head);
  out_b_ = store.add_constant("caption.output.b", {cfg.vocab_size}, 0.0, head);
}

CaptionModel CaptionModel::bind(const ParamStore& store, const CaptionConfig& cfg) {
  CaptionModel m;
  m.cfg_ = cfg;
  m.token_embedding_ = store.get("text.token_embedding");
  m.type_rows_ = store.get("caption.type");
  m.positional_ = store.get("caption.positional");
  m.stack_ = TransformerStack::bind(store, "caption", cfg.layers, cfg.heads);
  m.ln_gain_ = store.get("caption.ln_final.gain");
  m.ln_bias_ = store.get("caption.ln_final.bias");
  m.out_w_ = store.get("caption.output.w");
  m.out_b_ = store.get("caption.output.b");
  return m;
}

Tensor CaptionModel::forward_layout(const Tensor& raw, std::size_t groups, std::size_t words, std::size_t frames,
                                    std::size_t segments, const std::vector<std::uint8_t>& allow) const {
  const auto length = words + frames + segments;
  for (auto n : {words, frames, segments}) {
    if (n > cfg_.max_positions) {
      throw std::invalid_argument("caption model: section longer than the positional table");
    }
  }
  std::vector<RowRef> pos, type;
  auto section = [&](std::size_t n, std::uint32_t tag) {
    for (std::size_t i = 0; i < n; ++i) {
      pos.emplace_back(0, static_cast<std::uint32_t>(i));
      type.emplace_back(0, tag);
    }
  };
  section(words, 0);
  section(frames, 1);
  section(segments, 2);
  const auto pattern = add(select_rows({positional_}, pos), select_rows({type_rows_}, type));
  const AttentionMask mask(length, groups, allow);
  auto x = stack_.forward(add_tiled(raw, pattern), groups, &mask);
  std::vector<std::size_t> word_rows;
  word_rows.reserve(groups * words);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t t = 0; t < words; ++t) {
      word_rows.push_back(g * length + t);
    }
  }
  return linear(layer_norm(gather_rows(x, word_rows), ln_gain_, ln_bias_), out_w_, out_b_);
}

Tensor CaptionModel::logits(std::span<const std::uint32_t> ids, std::size_t batch, std::size_t length,
                            const EmbeddingSet& vision, const EmbeddingSet& audio) const {
  if (batch == 0 || length == 0 || ids.size() != batch * length) {
    throw std::invalid_argument("caption model: ids must be batch x length with length >= 1");
  }
  for (const auto* e : {&vision, &audio}) {
    if (present(*e) && e->batch != batch) {
      throw std::invalid_argument("caption model: features and captions differ in batch size");
    }
  }
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  for (auto r : rows) {
    if (r >= cfg_.vocab_size) throw std::invalid_argument("caption model: token id out of range");
  }
  std::vector<Tensor> sources{gather_rows(token_embedding_, rows)};
  const std::size_t frames = present(vision) ? vision.length : 0;
  const std::size_t segments = present(audio) ? audio.length : 0;
  if (frames > 0) sources.push_back(vision.local);
  if (segments > 0) sources.push_back(audio.local);
  const std::uint32_t frame_src = 1;
  const std::uint32_t segment_src = frames > 0 ? 2 : 1;

  std::vector<RowRef> refs;
  std::vector<std::uint8_t> allow;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < length; ++t) refs.emplace_back(0, static_cast<std::uint32_t>(b * length + t));
    for (std::size_t i = 0; i < frames; ++i) refs.emplace_back(frame_src, static_cast<std::uint32_t>(b * frames + i));
    for (std::size_t i = 0; i < segments; ++i) {
      refs.emplace_back(segment_src, static_cast<std::uint32_t>(b * segments + i));
    }
    const std::span<const std::uint8_t> fv =
        frames > 0 ? std::span<const std::uint8_t>(vision.valid).subspan(b * frames, frames)
                   : std::span<const std::uint8_t>{};
    const std::span<const std::uint8_t> sv =
        segments > 0 ? std::span<const std::uint8_t>(audio.valid).subspan(b * segments, segments)
                     : std::span<const std::uint8_t>{};
    append_allow(allow, length, fv, sv);
  }
  return forward_layout(select_rows(sources, refs), batch, length, frames, segments, allow);
}

Tensor CaptionModel::step_probabilities(const MultimodalSequence& seq) const {
  return softmax(forward_layout(seq.features, 1, seq.words, seq.frames, seq.segments, seq.allow));
}

Tensor CaptionModel::teacher_forced_loss(const TextBatch& captions, const EmbeddingSet& vision,
                                         const EmbeddingSet& audio) const {
  captions.eos_positions();
  if (captions.length < 2) {
    throw std::invalid_argument("caption model: captions need at least two tokens");
  }
  const auto steps = captions.length - 1;
  std::vector<std::uint32_t> inputs;
  std::vector<std::size_t> targets;
  inputs.reserve(captions.batch * steps);
  targets.reserve(captions.batch * steps);
  for (std::size_t b = 0; b < captions.batch; ++b) {
    const auto* row = captions.ids.data() + b * captions.length;
    for (std::size_t t = 0; t < steps; ++t) {
      inputs.push_back(row[t]);
      targets.push_back(row[t + 1] == ByteTokenizer::kPad ? kIgnoreTarget : row[t + 1]);
    }
  }
  return cross_entropy_rows(logits(inputs, captions.batch, steps, vision, audio), targets);
}

std::vector<std::uint32_t> CaptionModel::greedy_decode(const EmbeddingSet& vision, const EmbeddingSet& audio,
                                                       std::size_t item, std::size_t max_len) const {
  const std::size_t one[] = {item};
  const auto v = select_items(vision, one);
  const auto a = select_items(audio, one);
  std::vector<std::uint32_t> ids{ByteTokenizer::kSos};
  std::vector<std::uint32_t> out;
  while (out.size() < max_len) {
    const auto l = logits(ids, 1, ids.size(), v, a);
    const auto last = ids.size() - 1;
    std::uint32_t best = 0;
    for (std::uint32_t c = 1; c < cfg_.vocab_size; ++c) {
      if (l.at(last, c) > l.at(last, best)) best = c;
    }
    if (best == ByteTokenizer::kEos) {
      break;
    }
    out.push_back(best);
    ids.push_back(best);
  }
  return out;
}

} // namespace c4v
