#include "ddnet/tokenizer.hpp"

#include <fstream>

#include "ddnet/errors.hpp"
#include "ddnet/hash.hpp"

namespace ddnet {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t byte_begin;
  std::size_t byte_len;
};

std::vector<CodePoint> decode_utf8(std::string_view s) {
  std::vector<CodePoint> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = c;
    if (c >= 0xF0) len = 4, cp = c & 0x07;
    else if (c >= 0xE0) len = 3, cp = c & 0x0F;
    else if (c >= 0xC0) len = 2, cp = c & 0x1F;
    if (i + len > s.size()) len = 1, cp = c;
    for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    out.push_back({cp, i, len});
    i += len;
  }
  return out;
}

bool is_space(char32_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' || c == 0xA0; }
bool is_word(char32_t c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= 128 && c != 0x2019 && c != 0xA0); }
bool is_apostrophe(char32_t c) { return c == '\'' || c == 0x2019; }

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& ch : out)
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  return out;
}

const char* const kReserved[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[Q]", "[A]"};

}  // namespace

std::vector<TextToken> tokenize(std::string_view text) {
  const auto cps = decode_utf8(text);
  std::vector<TextToken> out;
  std::size_t i = 0;
  auto bytes = [&](std::size_t b, std::size_t e) {
    const std::size_t bb = cps[b].byte_begin;
    const std::size_t be = cps[e - 1].byte_begin + cps[e - 1].byte_len;
    return lower_ascii(text.substr(bb, be - bb));
  };
  while (i < cps.size()) {
    const char32_t c = cps[i].value;
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (is_word(c)) {
      std::size_t j = i + 1;
      while (j < cps.size()) {
        if (is_word(cps[j].value)) {
          ++j;
        } else if (is_apostrophe(cps[j].value) && j + 1 < cps.size() && is_word(cps[j + 1].value)) {
          j += 2;
        } else {
          break;
        }
      }
      out.push_back({bytes(i, j), i, j});
      i = j;
      continue;
    }
    out.push_back({bytes(i, i + 1), i, i + 1});
    ++i;
  }
  return out;
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize(text)) out.push_back(std::move(t.text));
  return out;
}

std::size_t codepoint_length(std::string_view text) { return decode_utf8(text).size(); }

Tokenizer::Tokenizer() {
  for (const char* r : kReserved) add(r);
}

void Tokenizer::add(const std::string& token) {
  if (index_.contains(token)) return;
  index_.emplace(token, vocab_.size());
  vocab_.push_back(token);
}

Tokenizer Tokenizer::build(std::span<const std::string> texts) {
  Tokenizer t;
  for (const auto& text : texts)
    for (const auto& tok : tokenize(text)) t.add(tok.text);
  return t;
}

std::size_t Tokenizer::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::token(std::size_t id) const {
  if (id >= vocab_.size()) throw BoundsError("token id " + std::to_string(id) + " outside vocabulary");
  return vocab_[id];
}

std::vector<std::size_t> Tokenizer::encode(std::string_view text) const {
  const auto toks = tokenize(text);
  return encode_tokens(toks);
}

std::vector<std::size_t> Tokenizer::encode_tokens(std::span<const TextToken> tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t.text));
  return ids;
}

std::vector<std::string> Tokenizer::decode(std::span<const std::size_t> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(token(id));
  return out;
}

std::uint64_t Tokenizer::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : vocab_) {
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\n", 1), h);
  }
  return h;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write vocabulary " + path.string());
  for (const auto& t : vocab_) os << t << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read vocabulary " + path.string());
  Tokenizer t;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (n < kNumReserved) {
      if (line != kReserved[n]) throw ConfigError(path.string() + ": reserved token " + std::to_string(n) + " mismatch");
    } else {
      if (t.index_.contains(line)) throw ConfigError(path.string() + ": duplicate token '" + line + "'");
      t.add(line);
    }
    ++n;
  }
  return t;
}

}  // namespace ddnet
