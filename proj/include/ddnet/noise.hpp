#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ddnet/dataset.hpp"

namespace ddnet {

/// word -> replacement strings; a replacement may hold several words.
using ConfusionTable = std::map<std::string, std::vector<std::string>>;

/// Built-in phonetic-style confusions (about a hundred entries).
const ConfusionTable& builtin_confusion_table();
/// Filler words used for random substitutions and insertions.
const std::vector<std::string>& builtin_filler_words();

/// JSON object mapping each word to a nonempty list of replacements.
ConfusionTable load_confusion_table(const std::filesystem::path& path);
ConfusionTable confusion_table_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConfusionTable& table);

struct NoiseSpec {
  double sub_rate = 0.12;
  double del_rate = 0.07;
  double ins_rate = 0.06;
  /// Overrides the built-in table when present.
  std::optional<ConfusionTable> confusion_table;
  /// Chance that a random (non-table) substitution emits two words.
  double split_rate = 0.05;
  std::uint64_t seed = 0;

  /// Throws ParameterError unless each rate lies in [0, 1), they sum below
  /// 1, and every confusion entry has candidates.
  void validate() const;
  double total_rate() const { return sub_rate + del_rate + ins_rate; }
};

nlohmann::json to_json(const NoiseSpec& spec);
NoiseSpec noise_spec_from_json(const nlohmann::json& j);

struct Corruption {
  std::string text;
  /// Set when the first pass deleted every word and the text was redone
  /// without deletions.
  bool deletion_disabled = false;
};

/// Word-level noisy channel. One uniform draw per word chooses substitute,
/// delete, insert-after or keep. The stream is seeded from (spec.seed, hash of
/// text), so results do not depend on call order.
Corruption asr_corrupt(std::string_view text, const NoiseSpec& spec);

/// Lowercased words with punctuation stripped; the unit WER counts.
std::vector<std::string> wer_words(std::string_view text);
std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);
/// Word edit distance over reference length. Empty reference -> ContractError.
double wer(std::string_view reference, std::string_view hypothesis);

struct CorpusWer {
  std::size_t errors = 0;
  std::size_t reference_words = 0;
  double rate() const;
};

struct NoiseStats {
  CorpusWer documents;
  CorpusWer questions;
  std::size_t texts = 0;
  std::size_t deletion_retries = 0;
  nlohmann::json to_json() const;
};

/// Copy of `stories` with missing asr_document / asr_question fields filled
/// by corrupting the clean ones. Existing ASR text and the clean fields are
/// kept as they are; stats cover every pair.
std::vector<Story> corrupt_dataset(std::span<const Story> stories, const NoiseSpec& spec, NoiseStats* stats = nullptr);

}  // namespace ddnet
