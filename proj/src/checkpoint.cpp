#include "ddnet/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "ddnet/errors.hpp"

namespace ddnet {

namespace {
constexpr char kMagic[8] = {'D', 'D', 'N', 'E', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError("truncated checkpoint " + path.string());
  return v;
}
}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put(os, kVersion);
  const std::string meta = checkpoint.metadata.dump();
  put(os, static_cast<std::uint64_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put(os, static_cast<std::uint64_t>(checkpoint.tensors.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    put(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw ConfigError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kMagic)) throw ConfigError(path.string() + " is not a checkpoint");
  if (get<std::uint32_t>(is, path) != kVersion) throw ConfigError("unsupported checkpoint version in " + path.string());
  Checkpoint ck;
  std::string meta(get<std::uint64_t>(is, path), '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta.size()));
  ck.metadata = nlohmann::json::parse(meta);
  const auto count = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(is, path), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is, path);
    std::vector<double> values(shape_numel(shape));
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw ConfigError("truncated checkpoint " + path.string());
    ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return ck;
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads},   {"d_model", c.d_model},
          {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
          {"dropout_rate", c.dropout_rate}, {"seed", c.seed}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "num_layers") c.num_layers = it->get<int>();
    else if (k == "num_heads") c.num_heads = it->get<int>();
    else if (k == "d_model") c.d_model = it->get<int>();
    else if (k == "d_ff") c.d_ff = it->get<int>();
    else if (k == "vocab_size") c.vocab_size = it->get<int>();
    else if (k == "max_len") c.max_len = it->get<int>();
    else if (k == "dropout_rate") c.dropout_rate = it->get<double>();
    else if (k == "seed") c.seed = it->get<std::uint64_t>();
    else throw ConfigError("unknown encoder key '" + k + "'");
  }
  return c;
}

nlohmann::json to_json(const QAModelConfig& c) {
  return {{"text", to_json(c.text)},
          {"speech", to_json(c.speech)},
          {"fusion", to_string(c.fusion)},
          {"num_joint_layers", c.num_joint_layers},
          {"pad_id", c.pad_id}};
}

QAModelConfig model_config_from_json(const nlohmann::json& j) {
  QAModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "text") c.text = encoder_config_from_json(*it);
    else if (k == "speech") c.speech = encoder_config_from_json(*it);
    else if (k == "fusion") c.fusion = parse_fusion_mode(it->get<std::string>());
    else if (k == "num_joint_layers") c.num_joint_layers = it->get<int>();
    else if (k == "pad_id") c.pad_id = it->get<std::size_t>();
    else throw ConfigError("unknown model key '" + k + "'");
  }
  return c;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t parse_hex64(const std::string& text) { return std::stoull(text, nullptr, 16); }

Checkpoint make_checkpoint(const QAModel& model, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.metadata = {{"model", to_json(model.config())},
                 {"fusion", to_string(model.mode())},
                 {"tokenizer_fingerprint", hex64(model.tokenizer_fingerprint)}};
  for (auto it = extra.begin(); it != extra.end(); ++it) ck.metadata[it.key()] = *it;
  ck.tensors = model.parameters();
  return ck;
}

void save_model(const std::filesystem::path& path, const QAModel& model, const nlohmann::json& extra) {
  write_checkpoint(path, make_checkpoint(model, extra));
}

QAModel model_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.metadata.contains("model")) throw ConfigError("checkpoint has no model configuration");
  QAModel model(model_config_from_json(checkpoint.metadata.at("model")));
  load_parameters(model, checkpoint);
  if (checkpoint.metadata.contains("tokenizer_fingerprint")) {
    model.tokenizer_fingerprint = parse_hex64(checkpoint.metadata.at("tokenizer_fingerprint").get<std::string>());
  }
  return model;
}

QAModel load_model(const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); }

void load_parameters(QAModel& model, const Checkpoint& checkpoint) {
  for (auto& [name, param] : model.parameters()) {
    const Tensor* src = checkpoint.find(name);
    if (src == nullptr) throw ConfigError("checkpoint lacks parameter " + name);
    if (src->shape() != param.shape()) {
      throw ConfigError("parameter " + name + " has shape " + shape_str(src->shape()) + " in checkpoint, model expects " +
                        shape_str(param.shape()));
    }
    auto dst = Tensor(param).mutable_data();
    std::copy(src->data().begin(), src->data().end(), dst.begin());
  }
}

}  // namespace ddnet
