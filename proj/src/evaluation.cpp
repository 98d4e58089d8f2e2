#include "ddnet/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "ddnet/checkpoint.hpp"
#include "ddnet/errors.hpp"
#include "ddnet/examples.hpp"
#include "ddnet/qa_model.hpp"
#include "ddnet/tokenizer.hpp"

namespace ddnet {

namespace {
bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) || (u >= 91 && u <= 96) || (u >= 123 && u <= 126);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}
}  // namespace

std::vector<std::string> normalized_tokens(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : s) {
    if (is_ascii_punct(c)) continue;
    cleaned += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
  }
  std::vector<std::string> out;
  std::istringstream is(cleaned);
  std::string w;
  while (is >> w) {
    if (w == "a" || w == "an" || w == "the") continue;
    out.push_back(std::move(w));
  }
  return out;
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  for (const auto& w : normalized_tokens(s)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

double f1_score(std::string_view prediction, std::string_view gold) {
  const auto p = normalized_tokens(prediction);
  const auto g = normalized_tokens(gold);
  if (p.empty() || g.empty()) return p.empty() && g.empty() ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  int common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

EmF1 em_f1(std::string_view predicted, std::span<const std::string> golds) {
  if (golds.empty()) throw ContractError("em_f1 needs at least one gold answer");
  const std::string np = normalize_answer(predicted);
  EmF1 best;
  for (const auto& g : golds) {
    best.em = std::max(best.em, np == normalize_answer(g) ? 1.0 : 0.0);
    best.f1 = std::max(best.f1, f1_score(predicted, g));
  }
  return best;
}

void EvalReport::aggregate() {
  count = per_example.size();
  double em_sum = 0.0, f1_sum = 0.0;
  for (const auto& e : per_example) {
    em_sum += e.em;
    f1_sum += e.f1;
  }
  em = count ? em_sum / static_cast<double>(count) : 0.0;
  f1 = count ? f1_sum / static_cast<double>(count) : 0.0;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : per_example) {
    rows.push_back({{"story_id", e.story_id},
                    {"turn_index", e.turn_index},
                    {"em", e.em},
                    {"f1", e.f1},
                    {"predicted", e.predicted},
                    {"golds", e.golds}});
  }
  return {{"split", split},
          {"em", em},
          {"f1", f1},
          {"count", count},
          {"model_fingerprint", model_fingerprint},
          {"tokenizer_fingerprint", tokenizer_fingerprint},
          {"per_example", std::move(rows)}};
}

std::string EvalReport::per_example_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "story_id,turn_index,em,f1,predicted,golds\n";
  for (const auto& e : per_example) {
    std::string golds;
    for (std::size_t i = 0; i < e.golds.size(); ++i) golds += (i ? "|" : "") + e.golds[i];
    os << csv_field(e.story_id) << ',' << e.turn_index << ',' << e.em << ',' << e.f1 << ',' << csv_field(e.predicted)
       << ',' << csv_field(golds) << '\n';
  }
  return os.str();
}

std::string EvalReport::predictions_jsonl() const {
  std::string out;
  for (const auto& e : per_example) {
    nlohmann::json j = {{"story_id", e.story_id}, {"turn_id", e.turn_index}, {"answer", e.predicted},
                        {"start", e.start_token}, {"end", e.end_token},      {"score", e.score},
                        {"no_answer", e.is_no_answer}};
    out += j.dump() + "\n";
  }
  return out;
}

void EvalReport::write(const std::filesystem::path& dir, const std::string& stem) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / (stem + ".json"), std::ios::trunc) << to_json().dump(1) << '\n';
  std::ofstream(dir / (stem + ".csv"), std::ios::trunc) << per_example_csv();
  std::ofstream(dir / (stem + "_predictions.jsonl"), std::ios::trunc) << predictions_jsonl();
}

EvalReport evaluate(const QAModel& model, std::span<const Example> examples, const Tokenizer& tokenizer, View view,
                    const std::string& split, int max_answer_len) {
  const std::uint64_t tok_fp = tokenizer.fingerprint();
  if (model.tokenizer_fingerprint != 0 && model.tokenizer_fingerprint != tok_fp) {
    throw ConfigError("model was trained with tokenizer " + hex64(model.tokenizer_fingerprint) + ", evaluating with " +
                      hex64(tok_fp));
  }
  EvalReport report;
  report.split = split;
  report.model_fingerprint = hex64(model.fingerprint());
  report.tokenizer_fingerprint = hex64(tok_fp);
  report.per_example.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.tokenizer_fingerprint != tok_fp) {
      throw ConfigError("example from story '" + ex.story_id + "' was built with tokenizer " +
                        hex64(ex.tokenizer_fingerprint) + ", evaluating with " + hex64(tok_fp));
    }
    const ExampleView& ev = ex.view(view);
    const SpanLogits logits = model.forward(ex.input(view));
    const AnswerSpan span = predict_answer(logits, ev.doc_tokens, max_answer_len);
    const EmF1 s = em_f1(span.text, ex.gold_answer_texts);
    report.per_example.push_back({ex.story_id, ex.turn_index, s.em, s.f1, span.text, ex.gold_answer_texts,
                                  span.start_token, span.end_token, span.score, span.is_no_answer});
  }
  report.aggregate();
  return report;
}

}  // namespace ddnet
