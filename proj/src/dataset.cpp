#include "ddnet/dataset.hpp"

#include <fstream>
#include <set>

#include "ddnet/errors.hpp"
#include "ddnet/tokenizer.hpp"

namespace ddnet {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) { throw DataError(where + ": " + what); }

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) fail(where, std::string("missing field \"") + key + "\"");
  return obj.at(key);
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) fail(where + "." + key, "expected a string");
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  if (!obj.at(key).is_string()) fail(where + "." + key, "expected a string");
  return obj.at(key).get<std::string>();
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) fail(where, "unknown field \"" + it.key() + "\"");
  }
}

}  // namespace

std::vector<Story> parse_dataset(const json& j) {
  if (!j.is_object()) fail("dataset", "top level must be an object");
  reject_unknown(j, {"version", "stories"}, "dataset");
  const auto& version = require(j, "version", "dataset");
  if (!version.is_number_integer() || version.get<int>() != 1) fail("dataset.version", "only version 1 is supported");
  const auto& stories = require(j, "stories", "dataset");
  if (!stories.is_array()) fail("dataset.stories", "expected an array");

  std::vector<Story> out;
  for (std::size_t s = 0; s < stories.size(); ++s) {
    const auto& js = stories[s];
    std::string where = "stories[" + std::to_string(s) + "]";
    if (!js.is_object()) fail(where, "expected an object");
    Story story;
    story.id = require_string(js, "id", where);
    where += " (id '" + story.id + "')";
    reject_unknown(js, {"id", "document", "asr_document", "turns"}, where);
    story.document = require_string(js, "document", where);
    story.asr_document = optional_string(js, "asr_document", where);
    const auto& turns = require(js, "turns", where);
    if (!turns.is_array()) fail(where + ".turns", "expected an array");
    for (std::size_t t = 0; t < turns.size(); ++t) {
      const std::string tw = where + ".turns[" + std::to_string(t) + "]";
      const auto& jt = turns[t];
      if (!jt.is_object()) fail(tw, "expected an object");
      reject_unknown(jt, {"question", "asr_question", "answer", "rationale_span", "answerable"}, tw);
      Turn turn;
      turn.question = require_string(jt, "question", tw);
      turn.asr_question = optional_string(jt, "asr_question", tw);
      turn.answer = require_string(jt, "answer", tw);
      if (jt.contains("answerable")) {
        if (!jt.at("answerable").is_boolean()) fail(tw + ".answerable", "expected a boolean");
        turn.answerable = jt.at("answerable").get<bool>();
      }
      if (jt.contains("rationale_span") && !jt.at("rationale_span").is_null()) {
        const auto& r = jt.at("rationale_span");
        if (!r.is_array() || r.size() != 2 || !r[0].is_number_unsigned() || !r[1].is_number_unsigned()) {
          fail(tw + ".rationale_span", "expected [start_char, end_char]");
        }
        turn.rationale_span = CharSpan{r[0].get<std::size_t>(), r[1].get<std::size_t>()};
      }
      story.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(story));
  }
  validate_dataset(out);
  return out;
}

void validate_dataset(const std::vector<Story>& stories) {
  std::set<std::string> ids;
  for (const auto& story : stories) {
    const std::string where = "story '" + story.id + "'";
    if (story.id.empty()) fail(where, "empty id");
    if (!ids.insert(story.id).second) fail(where, "duplicate story id");
    if (story.turns.empty()) fail(where, "no turns");
    const std::size_t doc_len = codepoint_length(story.document);
    for (std::size_t t = 0; t < story.turns.size(); ++t) {
      const auto& turn = story.turns[t];
      const std::string tw = where + " turn " + std::to_string(t);
      if (turn.rationale_span) {
        const auto [b, e] = *turn.rationale_span;
        if (b >= e) fail(tw + " rationale_span", "empty or inverted interval [" + std::to_string(b) + "," + std::to_string(e) + ")");
        if (e > doc_len) {
          fail(tw + " rationale_span", "[" + std::to_string(b) + "," + std::to_string(e) + ") exceeds document length " +
                                           std::to_string(doc_len));
        }
      }
    }
  }
}

std::vector<Story> load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  try {
    return parse_dataset(j);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

json dataset_to_json(const std::vector<Story>& stories) {
  json arr = json::array();
  for (const auto& s : stories) {
    json js = {{"id", s.id}, {"document", s.document}};
    if (s.asr_document) js["asr_document"] = *s.asr_document;
    json turns = json::array();
    for (const auto& t : s.turns) {
      json jt = {{"question", t.question}};
      if (t.asr_question) jt["asr_question"] = *t.asr_question;
      jt["answer"] = t.answer;
      if (t.rationale_span) jt["rationale_span"] = {t.rationale_span->first, t.rationale_span->second};
      jt["answerable"] = t.answerable;
      turns.push_back(std::move(jt));
    }
    js["turns"] = std::move(turns);
    arr.push_back(std::move(js));
  }
  return {{"version", 1}, {"stories", std::move(arr)}};
}

void save_dataset(const std::filesystem::path& path, const std::vector<Story>& stories) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write dataset " + path.string());
  os << dataset_to_json(stories).dump(1) << '\n';
}

}  // namespace ddnet
