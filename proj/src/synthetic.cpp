#include "ddnet/dataset.hpp"

#include <algorithm>

#include "ddnet/errors.hpp"
#include "ddnet/hash.hpp"

namespace ddnet {

namespace {

const std::vector<std::string> kNames = {
    "Cotton", "Milo",   "Luna",  "Pepper", "Biscuit", "Daisy",  "Oscar", "Willow", "Ziggy",  "Hazel",
    "Maple",  "Rusty",  "Clover", "Ginger", "Peanut", "Nutmeg", "Olive", "Toby",   "Poppy",  "Jasper",
    "Button", "Sunny",  "Pickle", "Marble", "Rocket", "Bramble", "Fig",  "Juniper", "Tango", "Waffles"};
const std::vector<std::string> kAnimals = {"kitten", "puppy", "rabbit", "duckling", "piglet", "lamb", "fox",
                                           "mouse",  "hedgehog", "squirrel", "goat", "pony", "owl", "turtle"};
const std::vector<std::string> kColors = {"white", "black", "brown", "gray", "orange", "golden", "spotted", "red", "silver", "yellow"};
const std::vector<std::string> kPlaces = {"barn",  "cottage", "garden", "meadow", "stable", "forest", "shed",
                                          "attic", "orchard", "cellar", "field", "hollow log"};
const std::vector<std::string> kLandmarks = {"farm house", "river", "old mill", "big oak tree", "pond",
                                             "school", "bakery", "church", "bridge", "lighthouse"};
const std::vector<std::string> kFoods = {"apples", "carrots", "cheese", "berries", "fish", "corn", "bread", "acorns",
                                         "honey", "clover leaves", "pumpkin seeds", "oats", "milk", "lettuce", "pears"};
const std::vector<std::string> kToys = {"ball", "kite", "drum", "yarn", "bell", "feather", "boat", "wagon", "puzzle", "hoop"};
const std::vector<std::string> kFears = {"thunder", "the dark", "big dogs", "the vacuum", "bees", "deep water",
                                         "loud trucks", "spiders", "the wind", "owls"};
const std::vector<std::string> kNumbers = {"two", "three", "four", "five", "six", "seven", "eight", "nine"};
const std::vector<std::string> kSeasons = {"spring", "summer", "autumn", "winter"};
const std::vector<std::string> kSkills = {"swim", "sing", "climb trees", "dig holes", "jump high", "run fast", "whistle", "dance"};

const std::vector<std::string> kUnanswerable = {
    "What was {poss} favorite song?", "Did {subj} ever visit the city?", "What was the name of {poss} teacher?",
    "How much did {subj} weigh?",     "What did {subj} dream about?",     "Who built {poss} first house?"};

struct Pronouns {
  std::string subj, poss, Subj, Poss;
};

std::string fill(std::string s, const std::vector<std::pair<std::string, std::string>>& slots) {
  for (const auto& [key, value] : slots) {
    const std::string pat = "{" + key + "}";
    for (auto pos = s.find(pat); pos != std::string::npos; pos = s.find(pat, pos + value.size())) {
      s.replace(pos, pat.size(), value);
    }
  }
  return s;
}

/// A sentence, the phrase it answers, and the two ways of asking for it.
struct Fact {
  std::string sentence;
  std::string answer;
  std::string question_named;  // uses the protagonist's name
  std::string question_pronoun;
  // Optional follow-up that refers back to this fact's answer.
  std::string follow_sentence_answer;
  std::string follow_question;
};

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& pool) {
  std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
  return pool[d(rng)];
}

Fact make_fact(const std::string& sentence, const std::string& answer, std::string named, std::string pronoun) {
  Fact f;
  f.sentence = sentence;
  f.answer = answer;
  f.question_named = std::move(named);
  f.question_pronoun = std::move(pronoun);
  return f;
}

}  // namespace

std::vector<Story> generate_synthetic(int num_stories, std::uint64_t seed, const SyntheticOptions& options) {
  if (num_stories < 1) throw ParameterError("num_stories must be >= 1");
  if (options.min_facts < 2 || options.max_facts < options.min_facts) throw ParameterError("invalid fact range");
  Rng rng = make_rng(seed, "synthetic");
  std::vector<Story> stories;
  stories.reserve(static_cast<std::size_t>(num_stories));

  for (int s = 0; s < num_stories; ++s) {
    const std::string name = pick(rng, kNames);
    const std::string animal = pick(rng, kAnimals);
    const std::string color = pick(rng, kColors);
    const bool she = std::bernoulli_distribution(0.5)(rng);
    const Pronouns p = she ? Pronouns{"she", "her", "She", "Her"} : Pronouns{"he", "his", "He", "His"};
    const std::vector<std::pair<std::string, std::string>> who = {
        {"name", name}, {"subj", p.subj}, {"poss", p.poss}, {"Subj", p.Subj}, {"Poss", p.Poss}};

    const std::string opening =
        fill("Once upon a time, there lived a little " + color + " " + animal + " named {name}.", who);
    std::vector<Fact> pool;
    {
      const auto place = pick(rng, kPlaces);
      const auto landmark = pick(rng, kLandmarks);
      pool.push_back(make_fact(fill("{name} lived in a " + place + " near the " + landmark + ".", who), "in a " + place,
                               fill("Where did {name} live?", who), fill("Where did {subj} live?", who)));
    }
    {
      const auto food = pick(rng, kFoods);
      pool.push_back(make_fact(fill("Every morning {subj} liked to eat " + food + ".", who), food,
                               fill("What did {name} like to eat?", who), fill("What did {subj} like to eat?", who)));
    }
    {
      std::string friend_name = pick(rng, kNames);
      while (friend_name == name) friend_name = pick(rng, kNames);
      const auto friend_animal = pick(rng, kAnimals);
      Fact f = make_fact(fill("{Poss} best friend was a " + friend_animal + " called " + friend_name + ".", who),
                         friend_name, fill("Who was {name}'s best friend?", who),
                         fill("Who was {poss} best friend?", who));
      f.follow_sentence_answer = friend_animal;
      f.follow_question = "What kind of animal was " + friend_name + "?";
      pool.push_back(std::move(f));
    }
    {
      const auto toy = pick(rng, kToys);
      const auto toy_color = pick(rng, kColors);
      pool.push_back(make_fact(fill("{Subj} played with a " + toy_color + " " + toy + " all day.", who),
                               toy_color + " " + toy, fill("What did {name} play with?", who),
                               fill("What did {subj} play with?", who)));
    }
    {
      const auto fear = pick(rng, kFears);
      pool.push_back(make_fact(fill("But {subj} was afraid of " + fear + ".", who), fear,
                               fill("What was {name} afraid of?", who), fill("What was {subj} afraid of?", who)));
    }
    {
      const auto n = pick(rng, kNumbers);
      const std::string kin = she ? "sisters" : "brothers";
      pool.push_back(make_fact(fill("{Subj} shared a warm bed with " + n + " other " + kin + ".", who), n,
                               fill("How many " + kin + " did {name} have?", who),
                               fill("How many " + kin + " did {subj} have?", who)));
    }
    {
      const auto season = pick(rng, kSeasons);
      pool.push_back(make_fact(fill("{Poss} favorite season was " + season + ".", who), season,
                               fill("Which season did {name} love most?", who),
                               fill("Which season did {subj} love most?", who)));
    }
    {
      const auto skill = pick(rng, kSkills);
      pool.push_back(make_fact(fill("{name} could " + skill + " better than anyone.", who), skill,
                               fill("What could {name} do well?", who), fill("What could {subj} do well?", who)));
    }
    // The opening's color as an askable fact.
    Fact color_fact = make_fact(opening, color, fill("What color was {name}?", who), fill("What color was {subj}?", who));

    std::shuffle(pool.begin(), pool.end(), rng);
    const int num_facts = std::uniform_int_distribution<int>(options.min_facts, options.max_facts)(rng);
    pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(num_facts)));

    // Document: opening then facts in the shuffled order, remembering offsets.
    Story story;
    story.id = "syn-" + std::to_string(seed) + "-" + std::to_string(s);
    story.document = opening;
    std::vector<std::size_t> sentence_begin;
    for (const auto& f : pool) {
      story.document += ' ';
      sentence_begin.push_back(story.document.size());
      story.document += f.sentence;
    }

    // Questions: color first with some probability, then facts in a fresh order.
    struct Ask {
      const Fact* fact;
      std::size_t begin;
      bool follow;
    };
    std::vector<Ask> asks;
    if (std::bernoulli_distribution(0.6)(rng)) asks.push_back({&color_fact, 0, false});
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (auto i : order) {
      asks.push_back({&pool[i], sentence_begin[i], false});
      if (!pool[i].follow_question.empty()) asks.push_back({&pool[i], sentence_begin[i], true});
    }

    std::bernoulli_distribution unanswerable(options.unanswerable_rate);
    bool named = false;
    for (const auto& a : asks) {
      if (unanswerable(rng)) {
        Turn t;
        t.question = fill(pick(rng, kUnanswerable), who);
        t.answer = "unknown";
        t.answerable = false;
        story.turns.push_back(std::move(t));
      }
      Turn t;
      const Fact& f = *a.fact;
      const std::string& answer = a.follow ? f.follow_sentence_answer : f.answer;
      t.question = a.follow ? f.follow_question : (named ? f.question_pronoun : f.question_named);
      named = true;
      t.answer = answer;
      t.rationale_span = CharSpan{a.begin, a.begin + f.sentence.size()};
      story.turns.push_back(std::move(t));
    }
    stories.push_back(std::move(story));
  }
  return stories;
}

}  // namespace ddnet
