#include "c4v/model.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "c4v/binary_io.hpp"
#include "c4v/errors.hpp"
#include "c4v/tokenizer.hpp"

namespace c4v {

EncoderConfig encoder_config(const RunConfig& cfg) {
  EncoderConfig e;
  e.width = cfg.width;
  e.layers = cfg.layers;
  e.heads = cfg.heads;
  e.mlp_ratio = cfg.mlp_ratio;
  e.embed_dim = cfg.embed_dim;
  e.patch_size = cfg.patch_size;
  e.vocab_size = ByteTokenizer::kVocabSize;
  e.max_text_len = std::max(cfg.text_len, cfg.caption_len);
  return e;
}

namespace {

std::size_t section_limit(const RunConfig& cfg) {
  return std::max<std::size_t>({64, cfg.text_len, cfg.caption_len, cfg.audio_segments, 12});
}

} // namespace

FusionConfig fusion_config(const RunConfig& cfg) {
  FusionConfig f;
  f.width = cfg.width;
  f.embed_dim = cfg.embed_dim;
  f.layers = cfg.fusion_layers;
  f.heads = cfg.heads;
  f.mlp_ratio = cfg.mlp_ratio;
  f.max_positions = section_limit(cfg);
  return f;
}

CaptionConfig caption_config(const RunConfig& cfg) {
  CaptionConfig c;
  c.width = cfg.width;
  c.layers = cfg.caption_layers;
  c.heads = cfg.heads;
  c.mlp_ratio = cfg.mlp_ratio;
  c.vocab_size = ByteTokenizer::kVocabSize;
  c.max_positions = section_limit(cfg);
  c.max_len = cfg.caption_len;
  return c;
}

Model::Model(const RunConfig& cfg)
    : cfg_(cfg), enc_cfg_(encoder_config(cfg)), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
  cfg_.validate();
  Rng init(cfg.seed);
  text_ = TextEncoder(store_, enc_cfg_, init);
  vision_ = VisionEncoder(store_, enc_cfg_, init);
  audio_ = AudioEncoder(store_, enc_cfg_, init);
  logit_scale_ = cfg.logit_scale == "learnable" ? LogitScale::learnable(store_)
                                                : LogitScale::fixed(cfg.logit_scale_value);
  if (cfg.init_audio_from_vision) {
    reinit_audio_from_vision();
  }
}

Rng Model::head_rng(const std::string& prefix) const { return Rng(cfg_.seed ^ fnv1a64(prefix)); }

void Model::reinit_audio_from_vision() {
  auto rng = head_rng("audio.types");
  init_audio_from_vision(store_, rng);
}

const FusionHead& Model::fusion(FusionMethod method) {
  auto it = fusion_.find(method);
  if (it == fusion_.end()) {
    auto rng = head_rng(FusionHead::prefix(method));
    it = fusion_.emplace(method, FusionHead(store_, method, fusion_config(cfg_), rng)).first;
  }
  return it->second;
}

const CaptionModel& Model::caption() {
  if (!caption_) {
    auto rng = head_rng("caption");
    caption_ = CaptionModel(store_, caption_config(cfg_), rng);
  }
  return *caption_;
}

void Model::ensure_heads_for(const std::vector<std::string>& names) {
  // Heads are created in first-appearance order so a reloaded store keeps the
  // saved entry order and re-saves byte-identically.
  for (const auto& n : names) {
    auto starts = [&](const std::string& p) { return n.rfind(p + ".", 0) == 0; };
    for (auto method : {FusionMethod::g2l, FusionMethod::l2l}) {
      if (starts(FusionHead::prefix(method))) fusion(method);
    }
    if (starts("caption")) caption();
  }
}

namespace {

struct StoredTensor {
  std::string name;
  std::uint8_t group = 0;
  std::uint8_t trainable = 1;
  Shape shape;
  std::vector<double> values;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

struct StoredCheckpoint {
  std::uint64_t digest = 0;
  std::string config_echo;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<StoredTensor> tensors;
};

StoredCheckpoint parse_checkpoint(const std::string& path) {
  const auto bytes = binary::read_file(path);
  binary::Reader r(bytes, path);
  r.expect_magic("C4V1");
  const auto version = r.read<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  StoredCheckpoint ck;
  ck.digest = r.read<std::uint64_t>();
  ck.config_echo = r.read_string();
  ck.step = r.read<std::uint64_t>();
  ck.rng_state = r.read_string();
  const auto count = r.read<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.read_string(4096);
    t.group = r.read<std::uint8_t>();
    t.trainable = r.read<std::uint8_t>();
    const auto rank = r.read<std::uint32_t>();
    if (rank > 8) {
      throw FormatError(path + ": implausible rank for tensor '" + t.name + "'");
    }
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto extent = r.read<std::uint64_t>();
      if (extent > (1ull << 32)) {
        throw FormatError(path + ": implausible extent for tensor '" + t.name + "'");
      }
      t.shape.push_back(static_cast<std::size_t>(extent));
      numel *= static_cast<std::size_t>(extent);
    }
    t.values = r.read_f64s(numel);
    const auto moments = r.read<std::uint64_t>();
    if (moments != 0 && moments != numel) {
      throw FormatError(path + ": moment size mismatch for tensor '" + t.name + "'");
    }
    t.first_moment = r.read_f64s(static_cast<std::size_t>(moments));
    t.second_moment = r.read_f64s(static_cast<std::size_t>(moments));
    ck.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) {
    throw FormatError(path + ": trailing bytes");
  }
  return ck;
}

} // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ostringstream rng_state;
  rng_state << model.rng();
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out.write("C4V1", 4);
  binary::write<std::uint32_t>(out, kCheckpointVersion);
  binary::write<std::uint64_t>(out, model.config().shape_digest());
  binary::write_string(out, model.config().echo());
  binary::write<std::uint64_t>(out, model.store().step());
  binary::write_string(out, rng_state.str());
  const auto& entries = model.store().entries();
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    binary::write_string(out, e.name);
    binary::write<std::uint8_t>(out, e.group == ParamGroup::head ? 1 : 0);
    binary::write<std::uint8_t>(out, e.trainable ? 1 : 0);
    const auto& shape = e.value.shape();
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto extent : shape) {
      binary::write<std::uint64_t>(out, extent);
    }
    binary::write_f64s(out, e.value.values());
    binary::write<std::uint64_t>(out, e.first_moment.size());
    binary::write_f64s(out, e.first_moment);
    binary::write_f64s(out, e.second_moment);
  }
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

Model load_checkpoint(const std::string& path, const RunConfig& cfg) {
  const auto ck = parse_checkpoint(path);
  Model model(cfg);
  std::vector<std::string> names;
  for (const auto& t : ck.tensors) names.push_back(t.name);
  model.ensure_heads_for(names);

  auto& store = model.store();
  for (const auto& t : ck.tensors) {
    if (!store.contains(t.name)) {
      throw std::invalid_argument("checkpoint tensor '" + t.name + "' has no counterpart under this config");
    }
    const auto& expected = store.get(t.name).shape();
    if (expected != t.shape) {
      throw std::invalid_argument("checkpoint tensor '" + t.name + "' has shape " + shape_string(t.shape) +
                                  " but the config expects " + shape_string(expected));
    }
  }
  if (ck.digest != cfg.shape_digest()) {
    throw std::invalid_argument("checkpoint config digest does not match the model-shape settings");
  }

  for (const auto& t : ck.tensors) {
    auto& e = store.entry(t.name);
    std::copy(t.values.begin(), t.values.end(), e.value.mutable_values().begin());
    e.trainable = t.trainable != 0;
    e.first_moment = t.first_moment;
    e.second_moment = t.second_moment;
  }
  store.set_step(ck.step);
  std::istringstream rng_state(ck.rng_state);
  rng_state >> model.rng();
  if (!rng_state) {
    throw FormatError(path + ": unreadable RNG state");
  }
  return model;
}

RunConfig checkpoint_config(const std::string& path) { return RunConfig::parse(parse_checkpoint(path).config_echo); }

} // namespace c4v
