#include "c4v/tokenizer.hpp"

#include <stdexcept>

namespace c4v {

std::vector<std::uint32_t> ByteTokenizer::encode(const std::string& text, std::size_t length) {
  if (length < 2) {
    throw std::invalid_argument("tokenizer: length must leave room for [SOS] and [EOS]");
  }
  std::vector<std::uint32_t> ids;
  ids.reserve(length);
  ids.push_back(kSos);
  for (std::size_t i = 0; i < text.size() && ids.size() < length - 1; ++i) {
    ids.push_back(static_cast<unsigned char>(text[i]));
  }
  ids.push_back(kEos);
  ids.resize(length, kPad);
  return ids;
}

std::string ByteTokenizer::decode(const std::vector<std::uint32_t>& ids) {
  std::string out;
  for (auto id : ids) {
    if (id == kEos) {
      break;
    }
    if (id < 256) {
      out.push_back(static_cast<char>(id));
    }
  }
  return out;
}

} // namespace c4v
