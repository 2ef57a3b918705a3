#include "c4v/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <variant>
#include <vector>

#include "c4v/errors.hpp"

namespace c4v {

namespace {

using Field = std::variant<std::size_t RunConfig::*, double RunConfig::*,
                           bool RunConfig::*, std::string RunConfig::*>;

struct FieldInfo {
  const char* key;
  Field field;
  bool shape; // part of the checkpoint digest
};

const std::vector<FieldInfo>& fields() {
  static const std::vector<FieldInfo> table = {
      {"audio_segments", &RunConfig::audio_segments, true},
      {"batch_size", &RunConfig::batch_size, false},
      {"caption_layers", &RunConfig::caption_layers, true},
      {"caption_len", &RunConfig::caption_len, false},
      {"caption_steps", &RunConfig::caption_steps, false},
      {"classes", &RunConfig::classes, false},
      {"clip_seconds", &RunConfig::clip_seconds, false},
      {"embed_dim", &RunConfig::embed_dim, true},
      {"finetune_steps", &RunConfig::finetune_steps, false},
      {"frames_per_item", &RunConfig::frames_per_item, false},
      {"freeze_text", &RunConfig::freeze_text, false},
      {"freeze_vision", &RunConfig::freeze_vision, false},
      {"fusion", &RunConfig::fusion, false},
      {"fusion_layers", &RunConfig::fusion_layers, true},
      {"head_lr", &RunConfig::head_lr, false},
      {"heads", &RunConfig::heads, true},
      {"init_audio_from_vision", &RunConfig::init_audio_from_vision, false},
      {"items_per_class", &RunConfig::items_per_class, false},
      {"layers", &RunConfig::layers, true},
      {"logit_scale", &RunConfig::logit_scale, true},
      {"logit_scale_value", &RunConfig::logit_scale_value, false},
      {"lr", &RunConfig::lr, false},
      {"mask_channel_prob", &RunConfig::mask_channel_prob, false},
      {"mask_span", &RunConfig::mask_span, false},
      {"mask_time_prob", &RunConfig::mask_time_prob, false},
      {"mlp_ratio", &RunConfig::mlp_ratio, true},
      {"patch_size", &RunConfig::patch_size, true},
      {"probe_epochs", &RunConfig::probe_epochs, false},
      {"seed", &RunConfig::seed, false},
      {"steps", &RunConfig::steps, false},
      {"sweep_grid", &RunConfig::sweep_grid, false},
      {"symmetric_intra", &RunConfig::symmetric_intra, false},
      {"text_len", &RunConfig::text_len, false},
      {"type_mode", &RunConfig::type_mode, false},
      {"warmup_steps", &RunConfig::warmup_steps, false},
      {"width", &RunConfig::width, true},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("config: bad value '" + value + "' for " + key);
  }
  return out;
}

std::string format_value(const RunConfig& c, const Field& f) {
  return std::visit(
      [&](auto member) -> std::string {
        const auto& v = c.*member;
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<V, std::string>) {
          return v;
        } else if constexpr (std::is_same_v<V, double>) {
          std::ostringstream o;
          o.precision(17);
          o << v;
          return o.str();
        } else {
          return std::to_string(v);
        }
      },
      f);
}

} // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& info : fields()) {
    if (key != info.key) continue;
    std::visit(
        [&](auto member) {
          auto& dst = this->*member;
          using V = std::decay_t<decltype(dst)>;
          if constexpr (std::is_same_v<V, bool>) {
            if (value == "true" || value == "1") dst = true;
            else if (value == "false" || value == "0") dst = false;
            else throw std::invalid_argument("config: bad boolean '" + value + "' for " + key);
          } else if constexpr (std::is_same_v<V, std::string>) {
            dst = value;
          } else {
            dst = parse_number<V>(key, value);
          }
        },
        info.field);
    return;
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read config " + path);
  }
  std::ostringstream s;
  s << in.rdbuf();
  return parse(s.str());
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& info : fields()) {
    out += std::string(info.key) + " = " + format_value(*this, info.field) + "\n";
  }
  return out;
}

std::uint64_t RunConfig::shape_digest() const {
  std::string s;
  for (const auto& info : fields()) {
    if (info.shape) s += std::string(info.key) + "=" + format_value(*this, info.field) + ";";
  }
  return fnv1a64(s);
}

void RunConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  need(classes >= 2, "classes must be at least 2");
  need(batch_size >= 2 && batch_size % 2 == 0, "batch_size must be even and at least 2");
  need(lr > 0.0 && head_lr > 0.0, "learning rates must be positive");
  need(heads > 0 && width % heads == 0, "width must be divisible by heads");
  need(patch_size > 0 && 224 % patch_size == 0, "patch_size must divide 224");
  need(frames_per_item >= 1 && frames_per_item <= 12, "frames_per_item must be in [1, 12]");
  need(audio_segments >= 1, "audio_segments must be positive");
  need(text_len >= 2 && caption_len >= 2, "text lengths must be at least 2");
  need(logit_scale == "fixed" || logit_scale == "learnable", "logit_scale must be fixed or learnable");
  need(logit_scale_value > 0.0, "logit_scale_value must be positive");
  need(clip_seconds > 0.0, "clip_seconds must be positive");
}

} // namespace c4v
