#include "ddnet/examples.hpp"

#include <algorithm>
#include <map>

#include "ddnet/errors.hpp"
#include "ddnet/evaluation.hpp"
#include "ddnet/hash.hpp"

namespace ddnet {

std::string to_string(View view) { return view == View::clean ? "clean" : "asr"; }

View parse_view(std::string_view name) {
  if (name == "clean") return View::clean;
  if (name == "asr") return View::asr;
  throw ConfigError("unknown view '" + std::string(name) + "' (expected clean or asr)");
}

const ExampleView& Example::view(View v) const {
  if (v == View::clean) return clean;
  if (!asr) throw DataError("story '" + story_id + "' turn " + std::to_string(turn_index) + " has no ASR view");
  return *asr;
}

ModelInput Example::input(View v) const {
  const ExampleView& ev = view(v);
  return {ev.ids, ev.doc_offset, ev.doc_len, speech_ids};
}

std::vector<std::size_t> speech_tokens(std::span<const std::string> words, int speech_vocab_size, int repeat,
                                       std::uint64_t seed) {
  if (speech_vocab_size < 2) throw ParameterError("speech_vocab_size must be >= 2");
  if (repeat < 1) throw ParameterError("speech repeat must be >= 1");
  std::vector<std::size_t> out;
  out.reserve(words.size() * static_cast<std::size_t>(repeat));
  const std::uint64_t base = splitmix64(seed ^ 0x5350454543485f55ULL);
  for (const auto& w : words) {
    const std::string padded = "#" + w + "#";
    std::uint64_t h = base;
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      h = fnv1a(std::string_view(padded).substr(i, 3), h);
      h = splitmix64(h);
    }
    if (padded.size() < 3) h = splitmix64(fnv1a(padded, h));
    const auto unit = static_cast<std::size_t>(h % static_cast<std::uint64_t>(speech_vocab_size));
    out.insert(out.end(), static_cast<std::size_t>(repeat), unit);
  }
  return out;
}

std::pair<std::pair<std::size_t, std::size_t>, double> best_f1_span(std::span<const std::string> doc,
                                                                    std::string_view answer, std::size_t window_begin,
                                                                    std::size_t window_end, std::size_t max_span_len) {
  window_end = std::min(window_end, doc.size());
  std::map<std::string, int> gold;
  int gold_len = 0;
  for (auto& t : normalized_tokens(answer)) {
    ++gold[t];
    ++gold_len;
  }
  std::vector<std::string> norm(doc.size());
  for (std::size_t i = window_begin; i < window_end; ++i) norm[i] = normalize_answer(doc[i]);

  double best = -1.0;
  std::pair<std::size_t, std::size_t> span{window_begin, window_begin};
  for (std::size_t i = window_begin; i < window_end; ++i) {
    std::map<std::string, int> pred;
    int pred_len = 0, overlap = 0;
    for (std::size_t j = i; j < window_end && j < i + max_span_len; ++j) {
      if (!norm[j].empty()) {
        const int c = ++pred[norm[j]];
        ++pred_len;
        auto g = gold.find(norm[j]);
        if (g != gold.end() && c <= g->second) ++overlap;
      }
      double f1;
      if (pred_len == 0 || gold_len == 0) {
        f1 = (pred_len == 0 && gold_len == 0) ? 1.0 : 0.0;
      } else if (overlap == 0) {
        f1 = 0.0;
      } else {
        const double p = static_cast<double>(overlap) / pred_len;
        const double r = static_cast<double>(overlap) / gold_len;
        f1 = 2.0 * p * r / (p + r);
      }
      const std::size_t len = j - i;
      if (f1 > best || (f1 == best && len < span.second - span.first)) {
        best = f1;
        span = {i, j};
      }
    }
  }
  return {span, std::max(best, 0.0)};
}

std::vector<long> align_tokens(std::span<const std::string> ref, std::span<const std::string> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});
  std::vector<long> out(m, -1);
  std::size_t i = n, j = m;
  while (i > 0 && j > 0) {
    const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
    if (at(i, j) == diag) {
      out[j - 1] = static_cast<long>(i - 1);
      --i;
      --j;
    } else if (at(i, j) == at(i, j - 1) + 1) {
      --j;  // insertion in hyp
    } else {
      --i;  // deletion
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> question_ids(const Story& story, std::size_t turn, const Tokenizer& tok, int history_k,
                                      bool asr) {
  auto question_of = [&](std::size_t t) -> const std::string& {
    const Turn& x = story.turns[t];
    return asr && x.asr_question ? *x.asr_question : x.question;
  };
  std::vector<std::size_t> ids;
  const std::size_t first = turn >= static_cast<std::size_t>(history_k) ? turn - static_cast<std::size_t>(history_k) : 0;
  for (std::size_t h = first; h < turn; ++h) {
    ids.push_back(Tokenizer::kQuestion);
    for (auto id : tok.encode(question_of(h))) ids.push_back(id);
    ids.push_back(Tokenizer::kAnswer);
    for (auto id : tok.encode(story.turns[h].answer)) ids.push_back(id);
  }
  ids.push_back(Tokenizer::kQuestion);
  for (auto id : tok.encode(question_of(turn))) ids.push_back(id);
  return ids;
}

ExampleView pack(std::span<const std::size_t> question, std::span<const std::size_t> doc_ids,
                 std::span<const std::string> doc_words, std::optional<std::pair<std::size_t, std::size_t>> gold) {
  ExampleView v;
  v.ids.reserve(question.size() + doc_ids.size() + 3);
  v.ids.push_back(Tokenizer::kCls);
  v.ids.insert(v.ids.end(), question.begin(), question.end());
  v.ids.push_back(Tokenizer::kSep);
  v.doc_offset = v.ids.size();
  v.ids.insert(v.ids.end(), doc_ids.begin(), doc_ids.end());
  v.ids.push_back(Tokenizer::kSep);
  v.doc_len = doc_ids.size();
  v.doc_tokens.assign(doc_words.begin(), doc_words.end());
  if (gold) {
    v.gold_start = v.doc_offset + gold->first;
    v.gold_end = v.doc_offset + gold->second;
  }
  return v;
}

}  // namespace

ExampleSet build_examples(std::span<const Story> stories, const Tokenizer& tokenizer, const ExampleConfig& config) {
  if (config.history_k < 0) throw ParameterError("history_k must be >= 0");
  if (config.max_len < 8) throw ParameterError("max_len too small for packing");
  ExampleSet out;
  auto skip = [&](const Story& s, std::size_t t, const std::string& reason) {
    if (config.strict) throw DataError("story '" + s.id + "' turn " + std::to_string(t) + ": " + reason);
    out.skipped.push_back({s.id, t, reason});
  };
  const auto max_len = static_cast<std::size_t>(config.max_len);
  const auto max_span = static_cast<std::size_t>(config.max_answer_len);

  for (const Story& story : stories) {
    const auto clean_toks = tokenize(story.document);
    std::vector<std::string> clean_words;
    for (const auto& t : clean_toks) clean_words.push_back(t.text);
    const auto clean_ids = tokenizer.encode_tokens(clean_toks);
    const std::size_t n = clean_words.size();

    std::vector<std::string> asr_words;
    std::vector<std::size_t> asr_ids;
    std::vector<long> align;
    if (story.asr_document) {
      const auto asr_toks = tokenize(*story.asr_document);
      for (const auto& t : asr_toks) asr_words.push_back(t.text);
      asr_ids = tokenizer.encode_tokens(asr_toks);
      align = align_tokens(clean_words, asr_words);
    }
    const std::size_t m = asr_words.size();

    for (std::size_t l = 0; l < story.turns.size(); ++l) {
      const Turn& turn = story.turns[l];
      if (n == 0) {
        skip(story, l, "empty document");
        continue;
      }
      // gold span on the clean document
      std::optional<std::pair<std::size_t, std::size_t>> gold;
      if (turn.answerable) {
        std::size_t wb = 0, we = n;
        if (turn.rationale_span) {
          const auto [cb, ce] = *turn.rationale_span;
          wb = n;
          we = 0;
          for (std::size_t i = 0; i < n; ++i) {
            if (clean_toks[i].end > cb && clean_toks[i].begin < ce) {
              wb = std::min(wb, i);
              we = std::max(we, i + 1);
            }
          }
          if (wb >= we) wb = 0, we = n;
        }
        auto [span, f1] = best_f1_span(clean_words, turn.answer, wb, we, max_span);
        if (f1 <= 0.0) {
          skip(story, l, "answer has no overlap with the document");
          continue;
        }
        gold = span;
      }

      const auto q_clean = question_ids(story, l, tokenizer, config.history_k, false);
      const auto q_asr = question_ids(story, l, tokenizer, config.history_k, true);
      if (q_clean.size() + 4 > max_len || q_asr.size() + 4 > max_len) {
        skip(story, l, "question and history exceed max_len");
        continue;
      }
      const std::size_t budget = max_len - q_clean.size() - 3;
      const std::size_t budget_asr = max_len - q_asr.size() - 3;

      // clean window
      std::size_t ws = 0, we = n;
      if (n > budget) {
        const std::size_t stride = std::max<std::size_t>(1, budget / 2);
        bool found = false;
        for (std::size_t s = 0;; s += stride) {
          const std::size_t e = std::min(n, s + budget);
          if (!gold || (gold->first >= s && gold->second < e)) {
            ws = s;
            we = e;
            found = true;
            break;
          }
          if (e == n) break;
        }
        if (!found) {
          skip(story, l, "no window of " + std::to_string(budget) + " tokens contains the gold span");
          continue;
        }
      }

      Example ex;
      ex.story_id = story.id;
      ex.turn_index = l;
      ex.answerable = turn.answerable;
      ex.gold_answer_texts = {turn.answerable ? turn.answer : std::string("unknown")};
      ex.tokenizer_fingerprint = tokenizer.fingerprint();
      std::optional<std::pair<std::size_t, std::size_t>> gold_rel;
      if (gold) gold_rel = std::make_pair(gold->first - ws, gold->second - ws);
      ex.clean = pack(q_clean, std::span(clean_ids).subspan(ws, we - ws),
                      std::span<const std::string>(clean_words).subspan(ws, we - ws), gold_rel);
      ex.speech_ids = speech_tokens(std::span<const std::string>(clean_words).subspan(ws, we - ws),
                                    config.speech_vocab_size, config.speech_repeat, config.speech_seed);

      if (story.asr_document) {
        if (m == 0) {
          skip(story, l, "ASR document is empty");
          continue;
        }
        // ASR range covering the clean window
        std::size_t as = 0, ae = m;
        if (ws != 0 || we != n) {
          as = m;
          ae = 0;
          for (std::size_t j = 0; j < m; ++j) {
            if (align[j] >= static_cast<long>(ws) && align[j] < static_cast<long>(we)) {
              as = std::min(as, j);
              ae = std::max(ae, j + 1);
            }
          }
          if (as >= ae) {
            skip(story, l, "ASR transcript has no words inside the document window");
            continue;
          }
        }
        // projected gold
        std::optional<std::pair<std::size_t, std::size_t>> asr_gold;
        if (gold) {
          std::size_t gs = m, ge = 0;
          for (std::size_t j = as; j < ae; ++j) {
            if (align[j] >= static_cast<long>(gold->first) && align[j] <= static_cast<long>(gold->second)) {
              gs = std::min(gs, j);
              ge = std::max(ge, j);
            }
          }
          if (gs > ge) {
            // every answer word was deleted: point at the next surviving word
            gs = ae - 1;
            for (std::size_t j = as; j < ae; ++j)
              if (align[j] > static_cast<long>(gold->second)) {
                gs = j;
                break;
              }
            ge = gs;
          }
          asr_gold = std::make_pair(gs, ge);
        }
        if (ae - as > budget_asr) {
          std::size_t lo = as;
          if (asr_gold) {
            const std::size_t span_len = asr_gold->second - asr_gold->first + 1;
            if (span_len > budget_asr) {
              skip(story, l, "ASR answer span longer than the window");
              continue;
            }
            const std::size_t slack = budget_asr - span_len;
            lo = asr_gold->first > slack / 2 ? asr_gold->first - slack / 2 : 0;
            lo = std::clamp(lo, as, ae - budget_asr);
          }
          as = lo;
          ae = lo + budget_asr;
        }
        std::optional<std::pair<std::size_t, std::size_t>> asr_rel;
        if (asr_gold) asr_rel = std::make_pair(asr_gold->first - as, asr_gold->second - as);
        ex.asr = pack(q_asr, std::span(asr_ids).subspan(as, ae - as),
                      std::span<const std::string>(asr_words).subspan(as, ae - as), asr_rel);
        ex.asr_to_clean.resize(ae - as);
        for (std::size_t j = as; j < ae; ++j) {
          const long a = align[j];
          ex.asr_to_clean[j - as] = (a >= static_cast<long>(ws) && a < static_cast<long>(we)) ? a - static_cast<long>(ws) : -1;
        }
      }
      out.examples.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace ddnet
