#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ddnet/qa_model.hpp"

namespace ddnet {

/// Self-describing binary parameter file:
///
///   "DDNETCKP" | u32 version | u64 n | n bytes JSON metadata
///   u64 count | count x { u32 name_len | name | u32 rank | u64 dims[rank] | f64 values[] }
///
/// Integers and doubles are stored in host byte order (little-endian on every
/// supported target). Values round-trip bit-exactly.
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  NamedParameters tensors;

  const Tensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const QAModelConfig& config);
QAModelConfig model_config_from_json(const nlohmann::json& j);

/// Model parameters plus {"model": config, "fusion": mode name,
/// "tokenizer_fingerprint": hex} in the metadata; `extra` is merged in.
Checkpoint make_checkpoint(const QAModel& model, const nlohmann::json& extra = nlohmann::json::object());
void save_model(const std::filesystem::path& path, const QAModel& model,
                const nlohmann::json& extra = nlohmann::json::object());
QAModel load_model(const std::filesystem::path& path);
QAModel model_from_checkpoint(const Checkpoint& checkpoint);

/// Copies every parameter value of `checkpoint` into `model`. Missing or
/// mis-shaped entries raise ConfigError.
void load_parameters(QAModel& model, const Checkpoint& checkpoint);

std::string hex64(std::uint64_t value);
std::uint64_t parse_hex64(const std::string& text);

}  // namespace ddnet
