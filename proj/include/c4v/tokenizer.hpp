#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace c4v {

/// Byte-level vocabulary: 256 byte values plus three specials.
struct ByteTokenizer {
  static constexpr std::uint32_t kSos = 256;
  static constexpr std::uint32_t kEos = 257;
  static constexpr std::uint32_t kPad = 258;
  static constexpr std::uint32_t kVocabSize = 259;

  /// [SOS] bytes... [EOS] [PAD]..., exactly `length` ids. Text longer than
  /// length - 2 bytes is truncated.
  static std::vector<std::uint32_t> encode(const std::string& text, std::size_t length);
  /// Bytes up to the first [EOS]; specials are skipped.
  static std::string decode(const std::vector<std::uint32_t>& ids);
};

} // namespace c4v
