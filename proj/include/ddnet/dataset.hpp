#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ddnet {

/// Code-point interval [begin, end) into a story's document.
using CharSpan = std::pair<std::size_t, std::size_t>;

struct Turn {
  std::string question;
  std::optional<std::string> asr_question;
  std::string answer;
  std::optional<CharSpan> rationale_span;
  bool answerable = true;

  bool operator==(const Turn&) const = default;
};

/// A passage with its L-turn conversation.
struct Story {
  std::string id;
  std::string document;
  std::optional<std::string> asr_document;
  std::vector<Turn> turns;

  bool operator==(const Story&) const = default;
};

/// Parses and validates {version: 1, stories: [...]}. Errors name the story
/// id and the offending field.
std::vector<Story> parse_dataset(const nlohmann::json& j);
std::vector<Story> load_dataset(const std::filesystem::path& path);

nlohmann::json dataset_to_json(const std::vector<Story>& stories);
void save_dataset(const std::filesystem::path& path, const std::vector<Story>& stories);

/// Throws DataError when a story breaks an invariant (duplicate id, no
/// turns, rationale outside the document or empty).
void validate_dataset(const std::vector<Story>& stories);

struct SyntheticOptions {
  int min_facts = 4;
  int max_facts = 7;
  /// Fraction of turns asking about something the story never states.
  double unanswerable_rate = 0.1;
};

/// Templated multi-turn stories about a named animal: attributes, places,
/// food, friends. Every answerable answer is a verbatim document substring
/// with its rationale span; follow-up questions refer back through pronouns.
/// Fully determined by the seed.
std::vector<Story> generate_synthetic(int num_stories, std::uint64_t seed, const SyntheticOptions& options = {});

}  // namespace ddnet
