#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddnet/tensor.hpp"

namespace ddnet {

using TokenIds = std::vector<std::size_t>;
using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

/// Whether dropout is live, and where its randomness comes from.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;

  static ForwardContext eval() { return {}; }
};

struct EncoderConfig {
  int num_layers = 2;
  int num_heads = 4;
  int d_model = 64;
  int d_ff = 128;
  int vocab_size = 64;
  int max_len = 384;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Parameter initialisation: N(0, 0.02) weights, zero biases, unit norm gains.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor normal(Shape shape, double stddev = 0.02);
  static Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
  static Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

 private:
  Rng rng_;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(int in, int out, Initializer& init);
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
  void collect(const std::string& prefix, NamedParameters& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  explicit LayerNorm(int d);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(const std::string& prefix, NamedParameters& out) const;
};

/// Scaled dot-product attention with the model dimension split into
/// num_heads equal column groups. No projections. A mask, if given, is
/// [n_q x n_k] with 1 for admissible keys. When weights is non-null the
/// per-head attention matrices are appended to it.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, int num_heads,
              std::span<const unsigned char> mask = {}, std::vector<Tensor>* weights = nullptr);

struct MultiHeadAttention {
  int num_heads = 1;
  Linear query, key, value, output;

  MultiHeadAttention() = default;
  MultiHeadAttention(int d_model, int num_heads, Initializer& init);

  /// Queries from `queries`, keys and values both from `memory`.
  Tensor operator()(const Tensor& queries, const Tensor& memory, std::span<const unsigned char> mask = {},
                    std::vector<Tensor>* weights = nullptr) const;
  void collect(const std::string& prefix, NamedParameters& out) const;
};

/// Pre-norm transformer block: x + attn(norm(x)), then x + ffn(norm(x)).
struct EncoderLayer {
  LayerNorm attn_norm;
  MultiHeadAttention attention;
  LayerNorm ffn_norm;
  Linear ffn_in;
  Linear ffn_out;
  double dropout_rate = 0.0;

  EncoderLayer() = default;
  EncoderLayer(int d_model, int num_heads, int d_ff, double dropout_rate, Initializer& init);

  Tensor operator()(const Tensor& x, const ForwardContext& ctx, std::vector<Tensor>* weights = nullptr) const;
  void collect(const std::string& prefix, NamedParameters& out) const;
};

/// Token + learned position embedding followed by a pre-norm transformer
/// stack. Stands in for both the speech-side and the text-side BERT.
class Encoder {
 public:
  explicit Encoder(const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }

  Tensor embed(std::span<const std::size_t> tokens) const;
  /// Contextual embedding [n x d_model]. With num_layers == 0 this is the
  /// embedding itself; otherwise a final layer norm closes the stack.
  Tensor encode(std::span<const std::size_t> tokens, const ForwardContext& ctx = ForwardContext::eval(),
                std::vector<Tensor>* weights = nullptr) const;

  const Tensor& token_embedding() const { return token_embedding_; }
  const Tensor& position_embedding() const { return position_embedding_; }
  std::vector<EncoderLayer>& layers() { return layers_; }
  const std::vector<EncoderLayer>& layers() const { return layers_; }

  void collect(const std::string& prefix, NamedParameters& out) const;

 private:
  EncoderConfig config_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::vector<EncoderLayer> layers_;
  LayerNorm final_norm_;
};

std::size_t parameter_count(const NamedParameters& params);

}  // namespace ddnet
