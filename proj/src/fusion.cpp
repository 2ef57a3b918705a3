#include "c4v/fusion.hpp"

#include <stdexcept>

#include "c4v/ops.hpp"

namespace c4v {

namespace {

// Rows and flags of one modality section for a set of items.
struct Section {
  std::uint32_t source = 0;
  std::size_t length = 0;
  const EmbeddingSet* set = nullptr;
  std::uint32_t type_row = 0;
};

void check_set(const EmbeddingSet& e, std::size_t count, const char* what) {
  if (e.batch != count || !e.local.defined() || e.local.rows() != e.batch * e.length ||
      e.valid.size() != e.batch * e.length) {
    throw std::invalid_argument(std::string("fusion: inconsistent ") + what + " features");
  }
}

} // namespace

FusionMethod parse_fusion(const std::string& text) {
  if (text == "g2g") return FusionMethod::g2g;
  if (text == "g2l") return FusionMethod::g2l;
  if (text == "l2l") return FusionMethod::l2l;
  throw std::invalid_argument("unknown fusion method '" + text + "' (expected g2g, g2l or l2l)");
}

std::string fusion_name(FusionMethod method) {
  switch (method) {
    case FusionMethod::g2g: return "g2g";
    case FusionMethod::g2l: return "g2l";
    case FusionMethod::l2l: return "l2l";
  }
  return "?";
}

std::string FusionHead::prefix(FusionMethod method) {
  return method == FusionMethod::g2g ? std::string() : "fusion." + fusion_name(method);
}

FusionHead::FusionHead(ParamStore& store, FusionMethod method, const FusionConfig& cfg, Rng& rng)
    : method_(method), cfg_(cfg) {
  if (method == FusionMethod::g2g) {
    return;
  }
  if (cfg.layers == 0) {
    throw std::invalid_argument("fusion: G2L and L2L need at least one layer");
  }
  const auto p = prefix(method);
  const auto d = cfg.width;
  const auto head = ParamGroup::head;
  if (method == FusionMethod::l2l) {
    type_text_ = store.add_normal(p + ".type_text", {1, d}, rng, 0.02, head);
  }
  type_vision_ = store.add_normal(p + ".type_vision", {1, d}, rng, 0.02, head);
  type_audio_ = store.add_normal(p + ".type_audio", {1, d}, rng, 0.02, head);
  positional_ = store.add_normal(p + ".positional", {cfg.max_positions, d}, rng, 0.01, head);
  stack_ = TransformerStack(store, p, cfg.layers, d, cfg.heads, cfg.mlp_ratio, rng, head);
  if (method == FusionMethod::g2l) {
    projection_ = store.add_normal(p + ".projection", {d, cfg.embed_dim}, rng, 0.02, head);
  } else {
    score_w_ = store.add_normal(p + ".score_w", {d, 1}, rng, 0.02, head);
    score_b_ = store.add_constant(p + ".score_b", {1}, 0.0, head);
  }
}

FusionHead FusionHead::bind(const ParamStore& store, FusionMethod method, const FusionConfig& cfg) {
  FusionHead h;
  h.method_ = method;
  h.cfg_ = cfg;
  if (method == FusionMethod::g2g) {
    return h;
  }
  const auto p = prefix(method);
  if (method == FusionMethod::l2l) {
    h.type_text_ = store.get(p + ".type_text");
  }
  h.type_vision_ = store.get(p + ".type_vision");
  h.type_audio_ = store.get(p + ".type_audio");
  h.positional_ = store.get(p + ".positional");
  h.stack_ = TransformerStack::bind(store, p, cfg.layers, cfg.heads);
  if (method == FusionMethod::g2l) {
    h.projection_ = store.get(p + ".projection");
  } else {
    h.score_w_ = store.get(p + ".score_w");
    h.score_b_ = store.get(p + ".score_b");
  }
  return h;
}

double similarity_g2g(const Tensor& x, const Tensor& y, const Tensor& z) {
  const auto video = l2_normalize_rows(scale(add(y, z), 0.5));
  return matmul_nt(x, video).item();
}

Tensor FusionHead::video_vectors(const EmbeddingSet& vision, const EmbeddingSet& audio) const {
  const bool use_v = cfg_.sources != VideoSources::audio_only;
  const bool use_a = cfg_.sources != VideoSources::vision_only;
  const auto count = use_v ? vision.batch : audio.batch;
  if (count == 0) {
    throw std::invalid_argument("fusion: empty gallery");
  }
  if (method_ == FusionMethod::l2l) {
    throw std::invalid_argument("fusion: L2L scores depend on the query; use scores()");
  }
  if (method_ == FusionMethod::g2g) {
    if (!use_a) return vision.global;
    if (!use_v) return audio.global;
    if (vision.global.shape() != audio.global.shape()) {
      throw std::invalid_argument("fusion: vision and audio globals differ in shape");
    }
    return l2_normalize_rows(scale(add(vision.global, audio.global), 0.5));
  }

  // G2L: one sequence per video of frame tokens then segment tokens.
  std::vector<Tensor> sources;
  std::vector<Section> sections;
  if (use_v) {
    check_set(vision, count, "vision");
    sections.push_back({static_cast<std::uint32_t>(sources.size()), vision.length, &vision, 0});
    sources.push_back(vision.local);
  }
  if (use_a) {
    check_set(audio, count, "audio");
    sections.push_back({static_cast<std::uint32_t>(sources.size()), audio.length, &audio, 1});
    sources.push_back(audio.local);
  }
  std::size_t length = 0;
  std::vector<RowRef> pos_refs, type_refs;
  for (const auto& s : sections) {
    if (s.length > cfg_.max_positions) {
      throw std::invalid_argument("fusion: section longer than the positional table");
    }
    for (std::size_t i = 0; i < s.length; ++i) {
      pos_refs.emplace_back(0, static_cast<std::uint32_t>(i));
      type_refs.emplace_back(0, s.type_row);
    }
    length += s.length;
  }
  std::vector<RowRef> refs;
  std::vector<std::uint8_t> valid;
  refs.reserve(count * length);
  valid.reserve(count * length);
  for (std::size_t g = 0; g < count; ++g) {
    for (const auto& s : sections) {
      for (std::size_t i = 0; i < s.length; ++i) {
        refs.emplace_back(s.source, static_cast<std::uint32_t>(g * s.length + i));
        valid.push_back(s.set->valid[g * s.length + i]);
      }
    }
  }
  const auto types = concat_rows({type_vision_, type_audio_});
  const auto pattern = add(select_rows({positional_}, pos_refs), select_rows({types}, type_refs));
  auto x = add_tiled(select_rows(sources, refs), pattern);
  const auto mask = AttentionMask::key_padding(length, valid);
  x = stack_.forward(x, count, &mask);
  return l2_normalize_rows(matmul(group_mean(x, count, valid), projection_));
}

Tensor FusionHead::scores(const EmbeddingSet& text, const EmbeddingSet& vision, const EmbeddingSet& audio) const {
  if (text.batch == 0 || !text.global.defined()) {
    throw std::invalid_argument("fusion: no queries");
  }
  if (method_ == FusionMethod::l2l) {
    return l2l_scores(text, vision, audio);
  }
  return matmul_nt(text.global, video_vectors(vision, audio));
}

Tensor FusionHead::l2l_scores(const EmbeddingSet& text, const EmbeddingSet& vision, const EmbeddingSet& audio) const {
  const bool use_v = cfg_.sources != VideoSources::audio_only;
  const bool use_a = cfg_.sources != VideoSources::vision_only;
  const auto queries = text.batch;
  const auto videos = use_v ? vision.batch : audio.batch;
  if (videos == 0) {
    throw std::invalid_argument("fusion: empty gallery");
  }
  check_set(text, queries, "text");
  if (text.length == 0) {
    throw std::invalid_argument("fusion: L2L needs word tokens");
  }

  std::vector<Tensor> sources{text.local};
  std::vector<Section> video_sections;
  if (use_v) {
    check_set(vision, videos, "vision");
    video_sections.push_back({static_cast<std::uint32_t>(sources.size()), vision.length, &vision, 1});
    sources.push_back(vision.local);
  }
  if (use_a) {
    check_set(audio, videos, "audio");
    video_sections.push_back({static_cast<std::uint32_t>(sources.size()), audio.length, &audio, 2});
    sources.push_back(audio.local);
  }

  std::vector<RowRef> pos_refs, type_refs;
  auto layout = [&](std::size_t len, std::uint32_t type_row) {
    if (len > cfg_.max_positions) {
      throw std::invalid_argument("fusion: section longer than the positional table");
    }
    for (std::size_t i = 0; i < len; ++i) {
      pos_refs.emplace_back(0, static_cast<std::uint32_t>(i));
      type_refs.emplace_back(0, type_row);
    }
  };
  layout(text.length, 0);
  for (const auto& s : video_sections) {
    layout(s.length, s.type_row);
  }
  const auto length = pos_refs.size();

  const auto pairs = queries * videos;
  std::vector<RowRef> refs;
  std::vector<std::uint8_t> valid;
  refs.reserve(pairs * length);
  valid.reserve(pairs * length);
  for (std::size_t q = 0; q < queries; ++q) {
    for (std::size_t g = 0; g < videos; ++g) {
      for (std::size_t t = 0; t < text.length; ++t) {
        refs.emplace_back(0, static_cast<std::uint32_t>(q * text.length + t));
        valid.push_back(text.valid[q * text.length + t]);
      }
      for (const auto& s : video_sections) {
        for (std::size_t i = 0; i < s.length; ++i) {
          refs.emplace_back(s.source, static_cast<std::uint32_t>(g * s.length + i));
          valid.push_back(s.set->valid[g * s.length + i]);
        }
      }
    }
  }
  const auto types = concat_rows({type_text_, type_vision_, type_audio_});
  const auto pattern = add(select_rows({positional_}, pos_refs), select_rows({types}, type_refs));
  auto x = add_tiled(select_rows(sources, refs), pattern);
  const auto mask = AttentionMask::key_padding(length, valid);
  x = stack_.forward(x, pairs, &mask);
  const auto s = linear(group_mean(x, pairs, valid), score_w_, score_b_);
  return reshape(s, {queries, videos});
}

} // namespace c4v
