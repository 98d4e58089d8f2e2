#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ddnet {

class QAModel;
class Tokenizer;
struct Example;
enum class View;

/// lowercase -> drop punctuation -> drop whole-word articles (a, an, the)
/// -> collapse whitespace.
std::string normalize_answer(std::string_view s);
std::vector<std::string> normalized_tokens(std::string_view s);

struct EmF1 {
  double em = 0.0;
  double f1 = 0.0;
};

/// Token-multiset F1 between two normalized strings.
double f1_score(std::string_view prediction, std::string_view gold);
/// EM and F1 against the best-matching gold. Throws ContractError on an
/// empty gold list.
EmF1 em_f1(std::string_view predicted, std::span<const std::string> golds);

struct ExampleScore {
  std::string story_id;
  std::size_t turn_index = 0;
  double em = 0.0;
  double f1 = 0.0;
  std::string predicted;
  std::vector<std::string> golds;
  // prediction dump fields
  std::size_t start_token = 0;
  std::size_t end_token = 0;
  double score = 0.0;
  bool is_no_answer = false;
};

struct EvalReport {
  std::string split;
  double em = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
  std::vector<ExampleScore> per_example;
  std::string model_fingerprint;
  std::string tokenizer_fingerprint;

  /// Recomputes em/f1/count from per_example.
  void aggregate();
  nlohmann::json to_json() const;
  /// Per-example CSV: story_id,turn_index,em,f1,predicted,golds
  std::string per_example_csv() const;
  /// One JSON object per line: story_id, turn_id, answer, start, end, score, no_answer.
  std::string predictions_jsonl() const;
  void write(const std::filesystem::path& dir, const std::string& stem) const;
};

/// Forward + span decoding + scoring of every example, in input order.
/// Throws ConfigError when the examples, tokenizer and model disagree on
/// the tokenizer fingerprint.
EvalReport evaluate(const QAModel& model, std::span<const Example> examples, const Tokenizer& tokenizer, View view,
                    const std::string& split, int max_answer_len = 30);

}  // namespace ddnet
