#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddnet/dataset.hpp"
#include "ddnet/qa_model.hpp"
#include "ddnet/tokenizer.hpp"

namespace ddnet {

enum class View { clean, asr };

std::string to_string(View view);
View parse_view(std::string_view name);

/// Packed [CLS] question [SEP] document [SEP] ids with labels. Gold
/// positions index the packed sequence; 0 (the [CLS] slot) marks "no answer".
struct ExampleView {
  std::vector<std::size_t> ids;
  std::size_t doc_offset = 0;
  std::size_t doc_len = 0;
  std::size_t gold_start = 0;
  std::size_t gold_end = 0;
  std::vector<std::string> doc_tokens;
};

struct Example {
  std::string story_id;
  std::size_t turn_index = 0;
  ExampleView clean;
  std::optional<ExampleView> asr;
  std::vector<std::size_t> speech_ids;
  /// For each ASR document token of the window, the aligned clean document
  /// token (window-relative) or -1 for an inserted word.
  std::vector<long> asr_to_clean;
  std::vector<std::string> gold_answer_texts;
  bool answerable = true;
  std::uint64_t tokenizer_fingerprint = 0;

  /// Throws DataError when the ASR view is requested but missing.
  const ExampleView& view(View v) const;
  ModelInput input(View v) const;
};

struct ExampleConfig {
  int history_k = 2;
  int max_len = 384;
  int max_answer_len = 30;
  int speech_vocab_size = 512;
  int speech_repeat = 1;
  std::uint64_t speech_seed = 0;
  /// Raise DataError instead of recording a skip.
  bool strict = false;
};

struct SkippedTurn {
  std::string story_id;
  std::size_t turn_index = 0;
  std::string reason;
};

struct ExampleSet {
  std::vector<Example> examples;
  std::vector<SkippedTurn> skipped;
};

/// One Example per turn (or a named skip). The question field carries the
/// previous history_k (question, answer) pairs as [Q] q [A] a, then [Q] and
/// the current question. The gold span maximises word F1 against the answer
/// inside the rationale window (whole document without one). Documents that
/// do not fit are windowed with stride half the document budget and the
/// window holding the gold span is kept.
ExampleSet build_examples(std::span<const Story> stories, const Tokenizer& tokenizer, const ExampleConfig& config);

/// Discrete pseudo-acoustic units: each word hashes (character trigrams,
/// seeded) to a unit id in [0, vocab_size), emitted `repeat` times.
std::vector<std::size_t> speech_tokens(std::span<const std::string> words, int speech_vocab_size, int repeat,
                                       std::uint64_t seed);

/// Span [b, e] (inclusive token indices) of `doc` inside [window_begin,
/// window_end) maximising F1 against `answer`; shortest then earliest on
/// ties. Returns the span and its F1.
std::pair<std::pair<std::size_t, std::size_t>, double> best_f1_span(std::span<const std::string> doc,
                                                                    std::string_view answer, std::size_t window_begin,
                                                                    std::size_t window_end, std::size_t max_span_len);

/// Minimum-edit alignment of hyp onto ref: for every hyp token the ref index
/// it matches or substitutes, -1 for insertions.
std::vector<long> align_tokens(std::span<const std::string> ref, std::span<const std::string> hyp);

}  // namespace ddnet
