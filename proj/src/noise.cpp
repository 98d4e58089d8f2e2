#include "ddnet/noise.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "ddnet/errors.hpp"
#include "ddnet/hash.hpp"

namespace ddnet {

namespace {

bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) || (u >= 91 && u <= 96) || (u >= 123 && u <= 126);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

/// A whitespace-delimited chunk split into punctuation prefix, word, suffix.
struct Chunk {
  std::string lead, core, trail;
};

std::vector<Chunk> chunks_of(std::string_view text) {
  std::vector<Chunk> out;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) {
    std::size_t b = 0, e = w.size();
    while (b < e && is_punct(w[b])) ++b;
    while (e > b && is_punct(w[e - 1])) --e;
    out.push_back({w.substr(0, b), w.substr(b, e - b), w.substr(e)});
  }
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

}  // namespace

const ConfusionTable& builtin_confusion_table() {
  static const ConfusionTable table = {
      // names
      {"cotton", {"caught in", "cotten"}}, {"milo", {"mylo", "mile"}}, {"luna", {"lunar"}},
      {"pepper", {"paper"}}, {"biscuit", {"biscuits"}}, {"daisy", {"days"}}, {"oscar", {"oscars"}},
      {"willow", {"will oh"}}, {"ziggy", {"ziggie"}}, {"hazel", {"hazard"}}, {"maple", {"mabel"}},
      {"rusty", {"rusted"}}, {"clover", {"closer"}}, {"ginger", {"gender"}}, {"peanut", {"peanuts"}},
      {"nutmeg", {"nut meg"}}, {"olive", {"olives"}}, {"toby", {"toe be"}}, {"poppy", {"puppy"}},
      {"jasper", {"jasmine"}}, {"button", {"mutton"}}, {"sunny", {"sonny"}}, {"pickle", {"nickel"}},
      {"marble", {"marvel"}}, {"rocket", {"pocket"}}, {"bramble", {"ramble"}}, {"fig", {"big"}},
      {"juniper", {"junior"}}, {"tango", {"tangle"}}, {"waffles", {"wafers"}},
      // animals
      {"kitten", {"kitchen", "mitten"}}, {"puppy", {"poppy"}}, {"rabbit", {"rabid"}},
      {"duckling", {"ducking"}}, {"piglet", {"pig let"}}, {"lamb", {"lamp"}}, {"fox", {"box", "socks"}},
      {"mouse", {"mouth"}}, {"hedgehog", {"hedge hog"}}, {"squirrel", {"squirrels"}}, {"goat", {"coat"}},
      {"pony", {"bony"}}, {"owl", {"al"}}, {"turtle", {"total"}},
      // colors
      {"white", {"why", "wide"}}, {"black", {"block"}}, {"brown", {"round"}}, {"gray", {"grey"}},
      {"orange", {"arrange"}}, {"golden", {"holden"}}, {"spotted", {"spotty"}}, {"red", {"read"}},
      {"silver", {"sliver"}}, {"yellow", {"hello"}},
      // places and landmarks
      {"barn", {"bar", "born"}}, {"cottage", {"cottages"}}, {"garden", {"pardon"}}, {"meadow", {"metal"}},
      {"stable", {"table"}}, {"forest", {"for rest"}}, {"shed", {"shared"}}, {"attic", {"addict"}},
      {"orchard", {"orchid"}}, {"cellar", {"seller"}}, {"field", {"feel"}}, {"hollow", {"hello"}},
      {"log", {"lock"}}, {"farm", {"form"}}, {"house", {"how's"}}, {"river", {"rivers"}}, {"mill", {"meal"}},
      {"pond", {"pound"}}, {"school", {"skull"}}, {"bakery", {"bakers"}}, {"church", {"chart"}},
      {"bridge", {"fridge"}}, {"lighthouse", {"light house"}},
      // foods and toys
      {"apples", {"apple"}}, {"carrots", {"carats"}}, {"cheese", {"she's"}}, {"berries", {"buries"}},
      {"fish", {"fix"}}, {"corn", {"horn"}}, {"bread", {"bred"}}, {"honey", {"funny"}}, {"leaves", {"lives"}},
      {"seeds", {"seats"}}, {"oats", {"notes"}}, {"milk", {"milked"}}, {"pears", {"pairs"}},
      {"ball", {"bowl"}}, {"kite", {"kit"}}, {"drum", {"drums"}}, {"yarn", {"yawn"}}, {"bell", {"bill"}},
      {"feather", {"father"}}, {"boat", {"vote"}}, {"wagon", {"wagging"}}, {"puzzle", {"puddle"}},
      {"hoop", {"hope"}},
      // everything else
      {"thunder", {"under"}}, {"dark", {"dog"}}, {"bees", {"peas"}}, {"water", {"waiter"}},
      {"trucks", {"tracks"}}, {"wind", {"win"}}, {"two", {"to", "too"}}, {"three", {"tree"}},
      {"four", {"for"}}, {"five", {"fine"}}, {"six", {"sticks"}}, {"seven", {"heaven"}}, {"eight", {"ate"}},
      {"nine", {"night"}}, {"spring", {"sprint"}}, {"summer", {"some are"}}, {"winter", {"window"}},
      {"swim", {"swam"}}, {"sing", {"thing"}}, {"climb", {"clime"}}, {"jump", {"junk"}}, {"run", {"ran"}},
      {"fast", {"last"}}, {"dance", {"dense"}}, {"once", {"wants"}}, {"upon", {"a pond"}},
      {"little", {"litter"}}, {"named", {"name"}}, {"near", {"ear"}}, {"morning", {"mourning"}},
      {"liked", {"like"}}, {"eat", {"heat"}}, {"best", {"bet"}}, {"called", {"cold"}}, {"played", {"plate"}},
      {"afraid", {"a fraid"}}, {"warm", {"worm"}}, {"bed", {"bad"}}, {"season", {"reason"}},
      {"better", {"bitter"}}, {"brothers", {"bothers"}}, {"sisters", {"sister"}}, {"lived", {"live"}},
  };
  return table;
}

const std::vector<std::string>& builtin_filler_words() {
  static const std::vector<std::string> words = {
      "and", "uh",   "um",   "of",   "to",   "it",    "that", "so",   "then", "well", "like", "just", "there",
      "here", "they", "we",  "you",  "on",   "at",    "but",  "or",   "oh",   "now",  "yes",  "no",   "this",
      "is",  "her",  "him",  "said", "had",  "would", "could", "some", "when", "what", "out",  "up",   "all",
      "one", "too",  "very", "much", "over", "back",  "did",  "not",  "if"};
  return words;
}

ConfusionTable confusion_table_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("confusion table must be a JSON object of word -> [replacements]");
  ConfusionTable table;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it->is_array()) throw ConfigError("confusion entry '" + it.key() + "' is not a list");
    auto& cands = table[lower(it.key())];
    for (const auto& c : *it) {
      if (!c.is_string() || c.get<std::string>().empty())
        throw ConfigError("confusion entry '" + it.key() + "' holds an empty or non-string candidate");
      cands.push_back(c.get<std::string>());
    }
    if (cands.empty()) throw ConfigError("confusion entry '" + it.key() + "' has no candidates");
  }
  return table;
}

ConfusionTable load_confusion_table(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open confusion table " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("confusion table " + path.string() + ": " + e.what());
  }
  return confusion_table_from_json(j);
}

nlohmann::json to_json(const ConfusionTable& table) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : table) j[k] = v;
  return j;
}

void NoiseSpec::validate() const {
  for (auto [name, r] : {std::pair{"sub_rate", sub_rate}, {"del_rate", del_rate}, {"ins_rate", ins_rate},
                         {"split_rate", split_rate}}) {
    if (!(r >= 0.0 && r < 1.0)) throw ParameterError(std::string(name) + " must lie in [0, 1), got " + std::to_string(r));
  }
  if (!(total_rate() < 1.0)) throw ParameterError("noise rates must sum below 1, got " + std::to_string(total_rate()));
  if (confusion_table) {
    for (const auto& [k, v] : *confusion_table)
      if (v.empty()) throw ParameterError("confusion entry '" + k + "' has no candidates");
  }
}

nlohmann::json to_json(const NoiseSpec& s) {
  nlohmann::json j = {{"sub_rate", s.sub_rate}, {"del_rate", s.del_rate}, {"ins_rate", s.ins_rate},
                      {"split_rate", s.split_rate}, {"seed", s.seed}};
  if (s.confusion_table) j["confusion_table"] = to_json(*s.confusion_table);
  return j;
}

NoiseSpec noise_spec_from_json(const nlohmann::json& j) {
  NoiseSpec s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "sub_rate") s.sub_rate = it->get<double>();
    else if (k == "del_rate") s.del_rate = it->get<double>();
    else if (k == "ins_rate") s.ins_rate = it->get<double>();
    else if (k == "split_rate") s.split_rate = it->get<double>();
    else if (k == "seed") s.seed = it->get<std::uint64_t>();
    else if (k == "confusion_table") s.confusion_table = confusion_table_from_json(*it);
    else throw ConfigError("unknown noise key '" + k + "'");
  }
  s.validate();
  return s;
}

namespace {

std::string corrupt_once(const std::vector<Chunk>& chunks, const NoiseSpec& spec, bool allow_delete,
                         std::size_t* surviving) {
  const ConfusionTable& table = spec.confusion_table ? *spec.confusion_table : builtin_confusion_table();
  const auto& filler = builtin_filler_words();
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_filler(0, filler.size() - 1);
  auto random_word = [&](const std::string& avoid) {
    std::string w = filler[pick_filler(rng)];
    while (w == avoid) w = filler[pick_filler(rng)];
    return w;
  };

  std::vector<std::string> out;
  *surviving = 0;
  for (const Chunk& c : chunks) {
    if (c.core.empty()) {
      out.push_back(c.lead + c.trail);
      continue;
    }
    const double u = unit(rng);
    const double del_rate = allow_delete ? spec.del_rate : 0.0;
    if (u < spec.sub_rate) {
      const std::string key = lower(c.core);
      std::string replacement;
      if (auto it = table.find(key); it != table.end()) {
        replacement = it->second[std::uniform_int_distribution<std::size_t>(0, it->second.size() - 1)(rng)];
      } else {
        replacement = random_word(key);
        if (unit(rng) < spec.split_rate) replacement += " " + random_word(key);
      }
      out.push_back(c.lead + replacement + c.trail);
      ++*surviving;
    } else if (u < spec.sub_rate + del_rate) {
      out.push_back(c.lead + c.trail);
    } else if (u < spec.sub_rate + del_rate + spec.ins_rate) {
      out.push_back(c.lead + c.core + c.trail);
      out.push_back(random_word(""));
      *surviving += 2;
    } else {
      out.push_back(c.lead + c.core + c.trail);
      ++*surviving;
    }
  }
  return join(out);
}

}  // namespace

Corruption asr_corrupt(std::string_view text, const NoiseSpec& spec) {
  spec.validate();
  // fold the text into the seed so each text has its own stream
  NoiseSpec seeded = spec;
  seeded.seed = substream_seed(spec.seed, "asr_text", fnv1a(text));
  const auto chunks = chunks_of(text);
  const bool has_words = std::any_of(chunks.begin(), chunks.end(), [](const Chunk& c) { return !c.core.empty(); });
  std::size_t surviving = 0;
  Corruption result{corrupt_once(chunks, seeded, true, &surviving), false};
  if (has_words && surviving == 0) {
    result.text = corrupt_once(chunks, seeded, false, &surviving);
    result.deletion_disabled = true;
  }
  return result;
}

std::vector<std::string> wer_words(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    if (is_punct(c)) continue;
    cleaned += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
  }
  std::vector<std::string> out;
  std::istringstream is(cleaned);
  std::string w;
  while (is >> w) out.push_back(std::move(w));
  return out;
}

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1), prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double wer(std::string_view reference, std::string_view hypothesis) {
  const auto ref = wer_words(reference);
  if (ref.empty()) throw ContractError("wer: reference has no words");
  const auto hyp = wer_words(hypothesis);
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

double CorpusWer::rate() const {
  return reference_words ? static_cast<double>(errors) / static_cast<double>(reference_words) : 0.0;
}

nlohmann::json NoiseStats::to_json() const {
  auto part = [](const CorpusWer& w) {
    return nlohmann::json{{"wer", w.rate()}, {"errors", w.errors}, {"reference_words", w.reference_words}};
  };
  return {{"documents", part(documents)},
          {"questions", part(questions)},
          {"texts", texts},
          {"deletion_retries", deletion_retries}};
}

std::vector<Story> corrupt_dataset(std::span<const Story> stories, const NoiseSpec& spec, NoiseStats* stats) {
  spec.validate();
  NoiseStats local;
  auto run = [&](const std::string& clean, std::optional<std::string>& asr, CorpusWer& bucket) {
    if (!asr) {
      Corruption c = asr_corrupt(clean, spec);
      if (c.deletion_disabled) ++local.deletion_retries;
      asr = std::move(c.text);
    }
    const auto ref = wer_words(clean);
    bucket.errors += edit_distance(ref, wer_words(*asr));
    bucket.reference_words += ref.size();
    ++local.texts;
  };
  std::vector<Story> out(stories.begin(), stories.end());
  for (Story& s : out) {
    run(s.document, s.asr_document, local.documents);
    for (Turn& t : s.turns) run(t.question, t.asr_question, local.questions);
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace ddnet
