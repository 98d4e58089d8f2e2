#include "ddnet/run_config.hpp"

#include <cstdlib>
#include <fstream>

#include "ddnet/checkpoint.hpp"
#include "ddnet/errors.hpp"
#include "ddnet/hash.hpp"

namespace ddnet {

RunConfig::RunConfig() { derive_seeds(); }

void RunConfig::derive_seeds() {
  model.text.seed = substream_seed(seed, "model");
  model.speech.seed = substream_seed(seed, "model.speech");
  train.seed = substream_seed(seed, "train");
  noise.seed = substream_seed(seed, "noise");
  examples.speech_seed = substream_seed(seed, "speech_units");
}

void RunConfig::fit_to_vocabulary(std::size_t vocab_size) {
  model.text.vocab_size = static_cast<int>(vocab_size);
  model.text.max_len = examples.max_len;
  model.speech.vocab_size = examples.speech_vocab_size;
  model.speech.max_len = examples.max_len * examples.speech_repeat;
  model.pad_id = Tokenizer::kPad;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  noise.validate();
  if (examples.history_k < 0) throw ParameterError("examples.history_k must be >= 0");
  if (examples.max_len < 8) throw ParameterError("examples.max_len must be >= 8");
  if (examples.max_answer_len < 1) throw ParameterError("examples.max_answer_len must be >= 1");
  if (examples.speech_vocab_size < 2 || examples.speech_repeat < 1) throw ParameterError("invalid speech unit settings");
  if (synthetic_stories < 1) throw ParameterError("synthetic_stories must be >= 1");
  if (!(dev_fraction >= 0.0 && test_fraction >= 0.0 && dev_fraction + test_fraction < 1.0)) {
    throw ParameterError("dev_fraction + test_fraction must lie in [0, 1)");
  }
  if (temperature_grid.empty()) throw ParameterError("temperature_grid is empty");
  for (double t : temperature_grid)
    if (!(t > 0.0)) throw ParameterError("temperature_grid holds a non-positive value");
  if (fusion_modes.empty()) throw ParameterError("fusion_modes is empty");
  if (paths.output_dir.empty()) throw ConfigError("paths.output_dir is empty");
}

std::filesystem::path RunConfig::output_dir() const {
  std::filesystem::path p(paths.output_dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("DDNET_OUTPUT_ROOT"); root != nullptr && *root != '\0') return std::filesystem::path(root) / p;
  }
  return p;
}

std::filesystem::path RunConfig::teacher_checkpoint() const {
  if (!paths.teacher_checkpoint.empty()) return paths.teacher_checkpoint;
  return output_dir() / "teacher" / "model.ckpt";
}

namespace {

nlohmann::json examples_to_json(const ExampleConfig& e) {
  return {{"history_k", e.history_k},           {"max_len", e.max_len},
          {"max_answer_len", e.max_answer_len}, {"speech_vocab_size", e.speech_vocab_size},
          {"speech_repeat", e.speech_repeat},   {"speech_seed", e.speech_seed},
          {"strict", e.strict}};
}

ExampleConfig examples_from_json(const nlohmann::json& j) {
  ExampleConfig e;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "history_k") e.history_k = it->get<int>();
    else if (k == "max_len") e.max_len = it->get<int>();
    else if (k == "max_answer_len") e.max_answer_len = it->get<int>();
    else if (k == "speech_vocab_size") e.speech_vocab_size = it->get<int>();
    else if (k == "speech_repeat") e.speech_repeat = it->get<int>();
    else if (k == "speech_seed") e.speech_seed = it->get<std::uint64_t>();
    else if (k == "strict") e.strict = it->get<bool>();
    else throw ConfigError("unknown examples key '" + k + "'");
  }
  return e;
}

RunPaths paths_from_json(const nlohmann::json& j) {
  RunPaths p;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "dataset") p.dataset = it->get<std::string>();
    else if (k == "output_dir") p.output_dir = it->get<std::string>();
    else if (k == "teacher_checkpoint") p.teacher_checkpoint = it->get<std::string>();
    else throw ConfigError("unknown paths key '" + k + "'");
  }
  return p;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json modes = nlohmann::json::array();
  for (auto m : c.fusion_modes) modes.push_back(to_string(m));
  return {{"seed", c.seed},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"noise", to_json(c.noise)},
          {"examples", examples_to_json(c.examples)},
          {"paths",
           {{"dataset", c.paths.dataset},
            {"output_dir", c.paths.output_dir},
            {"teacher_checkpoint", c.paths.teacher_checkpoint}}},
          {"synthetic_stories", c.synthetic_stories},
          {"dev_fraction", c.dev_fraction},
          {"test_fraction", c.test_fraction},
          {"temperature_grid", c.temperature_grid},
          {"fusion_modes", std::move(modes)}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run configuration must be a JSON object");
  RunConfig c;
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      if (k == "seed") continue;
      if (k == "model") c.model = model_config_from_json(*it);
      else if (k == "train") c.train = kd_config_from_json(*it);
      else if (k == "noise") c.noise = noise_spec_from_json(*it);
      else if (k == "examples") c.examples = examples_from_json(*it);
      else if (k == "paths") c.paths = paths_from_json(*it);
      else if (k == "synthetic_stories") c.synthetic_stories = it->get<int>();
      else if (k == "dev_fraction") c.dev_fraction = it->get<double>();
      else if (k == "test_fraction") c.test_fraction = it->get<double>();
      else if (k == "temperature_grid") c.temperature_grid = it->get<std::vector<double>>();
      else if (k == "fusion_modes") {
        c.fusion_modes.clear();
        for (const auto& m : *it) c.fusion_modes.push_back(parse_fusion_mode(m.get<std::string>()));
      } else throw ConfigError("unknown configuration key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed configuration value: ") + e.what());
  }
  // sections that omit their seed keep the derived one
  const RunConfig derived = [&] {
    RunConfig d;
    d.seed = c.seed;
    d.derive_seeds();
    return d;
  }();
  auto has = [&](std::initializer_list<const char*> path) {
    const nlohmann::json* node = &j;
    for (const char* key : path) {
      if (!node->is_object() || !node->contains(key)) return false;
      node = &node->at(key);
    }
    return true;
  };
  if (!has({"model", "text", "seed"})) c.model.text.seed = derived.model.text.seed;
  if (!has({"model", "speech", "seed"})) c.model.speech.seed = derived.model.speech.seed;
  if (!has({"train", "seed"})) c.train.seed = derived.train.seed;
  if (!has({"noise", "seed"})) c.noise.seed = derived.noise.seed;
  if (!has({"examples", "speech_seed"})) c.examples.speech_seed = derived.examples.speech_seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open configuration " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("configuration " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write configuration " + path.string());
  os << to_json(c).dump(2) << '\n';
}

}  // namespace ddnet
