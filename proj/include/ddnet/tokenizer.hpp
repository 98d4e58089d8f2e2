#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ddnet {

/// A word or punctuation token with its code-point interval [begin, end)
/// in the source text.
struct TextToken {
  std::string text;  // lowercased
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Lowercase, then split on whitespace and at punctuation boundaries.
/// Letters, digits, non-ASCII code points and word-internal apostrophes
/// ("wasn't", "farmer's") stay inside words; every other punctuation
/// character is a token of its own.
std::vector<TextToken> tokenize(std::string_view text);
std::vector<std::string> tokenize_words(std::string_view text);

/// Number of code points in a UTF-8 string.
std::size_t codepoint_length(std::string_view text);

class Tokenizer {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kSep = 3;
  static constexpr std::size_t kQuestion = 4;
  static constexpr std::size_t kAnswer = 5;
  static constexpr std::size_t kNumReserved = 6;

  /// Reserved tokens only.
  Tokenizer();

  /// Vocabulary of every token in `texts` (min frequency 1), in order of
  /// first appearance after the reserved ids.
  static Tokenizer build(std::span<const std::string> texts);

  std::size_t size() const { return vocab_.size(); }
  std::size_t id(std::string_view token) const;
  const std::string& token(std::size_t id) const;

  std::vector<std::size_t> encode(std::string_view text) const;
  std::vector<std::size_t> encode_tokens(std::span<const TextToken> tokens) const;
  std::vector<std::string> decode(std::span<const std::size_t> ids) const;

  /// Content hash of the vocabulary.
  std::uint64_t fingerprint() const;

  /// One token per line, line number = id.
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  void add(const std::string& token);

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ddnet
