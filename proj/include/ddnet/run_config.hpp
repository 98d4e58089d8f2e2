#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddnet/distill.hpp"
#include "ddnet/examples.hpp"
#include "ddnet/noise.hpp"
#include "ddnet/qa_model.hpp"

namespace ddnet {

struct RunPaths {
  /// Input dataset for prepare; empty means a synthetic corpus.
  std::string dataset;
  std::string output_dir = "runs/default";
  /// Teacher checkpoint for student training and ablations; empty means
  /// <output_dir>/teacher/model.ckpt.
  std::string teacher_checkpoint;

  bool operator==(const RunPaths&) const = default;
};

/// Everything a command needs, serialisable and strict about keys.
struct RunConfig {
  std::uint64_t seed = 0;
  QAModelConfig model;
  KDConfig train;
  NoiseSpec noise;
  ExampleConfig examples;
  RunPaths paths;
  int synthetic_stories = 200;
  double dev_fraction = 0.1;
  double test_fraction = 0.1;
  std::vector<double> temperature_grid{std::begin(kDefaultTemperatureGrid), std::end(kDefaultTemperatureGrid)};
  std::vector<FusionMode> fusion_modes{kAllFusionModes.begin(), kAllFusionModes.end()};

  RunConfig();

  /// Component seeds (model init, data order, noise, speech units) derived
  /// from the root seed through named substreams.
  void derive_seeds();
  /// Sizes that follow from the data: vocabulary and sequence lengths.
  void fit_to_vocabulary(std::size_t vocab_size);
  /// ConfigError/ParameterError on any invalid field.
  void validate() const;

  std::filesystem::path output_dir() const;
  std::filesystem::path teacher_checkpoint() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Unknown keys anywhere raise ConfigError; missing keys keep defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

}  // namespace ddnet
