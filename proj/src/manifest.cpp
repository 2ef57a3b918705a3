#include "c4v/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "c4v/errors.hpp"

namespace c4v {

namespace fs = std::filesystem;

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::string audio_type_name(AudioType t) { return t == AudioType::vb ? "VB" : "NB"; }

AudioType parse_audio_type_name(const std::string& s) {
  if (s == "VB") return AudioType::vb;
  if (s == "NB") return AudioType::nb;
  throw std::invalid_argument("unknown audio type '" + s + "'");
}

std::vector<std::size_t> CorpusManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

std::string CorpusManifest::resolve(const std::string& relative) const {
  return (fs::path(root) / relative).string();
}

void save_manifest(const CorpusManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  for (const auto& r : m.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["text"] = r.text;
    j["frames"] = r.frame_paths;
    j["wav"] = r.wav_path;
    j["class_id"] = r.class_id;
    j["audio_type"] = audio_type_name(r.audio_type);
    j["split"] = split_name(r.split);
    out << j.dump() << '\n';
  }
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

void validate_manifest(const CorpusManifest& m, bool check_files) {
  std::map<std::string, Split> seen;
  for (const auto& r : m.records) {
    if (r.id.empty()) {
      throw std::invalid_argument("manifest: record with empty id");
    }
    const auto [it, fresh] = seen.emplace(r.id, r.split);
    if (!fresh) {
      if (it->second != r.split) {
        throw std::invalid_argument("manifest: record '" + r.id + "' appears in both " + split_name(it->second) +
                                    " and " + split_name(r.split));
      }
      throw std::invalid_argument("manifest: duplicate id '" + r.id + "'");
    }
    if (r.frame_paths.empty() || r.frame_paths.size() > 12) {
      throw std::invalid_argument("manifest: record '" + r.id + "' needs 1 to 12 frames");
    }
    if (check_files) {
      for (const auto& p : r.frame_paths) {
        if (!fs::exists(m.resolve(p))) {
          throw std::invalid_argument("manifest: record '" + r.id + "' frame missing: " + p);
        }
      }
      if (!r.wav_path.empty() && !fs::exists(m.resolve(r.wav_path))) {
        throw std::invalid_argument("manifest: record '" + r.id + "' audio missing: " + r.wav_path);
      }
    }
  }
}

CorpusManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read manifest " + path);
  }
  CorpusManifest m;
  m.root = fs::path(path).parent_path().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.text = j.at("text").get<std::string>();
      r.frame_paths = j.at("frames").get<std::vector<std::string>>();
      r.wav_path = j.value("wav", std::string());
      r.class_id = j.at("class_id").get<std::size_t>();
      r.audio_type = parse_audio_type_name(j.at("audio_type").get<std::string>());
      r.split = parse_split(j.at("split").get<std::string>());
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_manifest(m, true);
  return m;
}

} // namespace c4v
