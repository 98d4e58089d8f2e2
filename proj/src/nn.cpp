#include "ddnet/nn.hpp"

#include <cmath>

#include "ddnet/errors.hpp"

namespace ddnet {

void EncoderConfig::validate() const {
  if (num_layers < 0) throw ParameterError("num_layers must be >= 0");
  if (num_heads <= 0 || d_model <= 0 || d_ff <= 0 || vocab_size <= 0 || max_len <= 0) {
    throw ParameterError("encoder sizes must be positive");
  }
  if (d_model % num_heads != 0) {
    throw ParameterError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                         std::to_string(num_heads));
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ParameterError("dropout_rate must be in [0,1)");
}

Tensor Initializer::normal(Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng_);
  return Tensor(std::move(shape), std::move(v), true);
}

Linear::Linear(int in, int out, Initializer& init)
    : weight(init.normal({static_cast<std::size_t>(in), static_cast<std::size_t>(out)})),
      bias(Initializer::zeros({static_cast<std::size_t>(out)})) {}

void Linear::collect(const std::string& prefix, NamedParameters& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(int d)
    : gain(Initializer::ones({static_cast<std::size_t>(d)})), bias(Initializer::zeros({static_cast<std::size_t>(d)})) {}

void LayerNorm::collect(const std::string& prefix, NamedParameters& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, int num_heads, std::span<const unsigned char> mask,
              std::vector<Tensor>* weights) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionError("attend expects matrices");
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw DimensionError("attend: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()));
  }
  if (num_heads <= 0 || d % static_cast<std::size_t>(num_heads) != 0) {
    throw ParameterError("attend: width " + std::to_string(d) + " not divisible into " + std::to_string(num_heads) +
                         " heads");
  }
  if (k.rows() == 0) throw ContractError("attend: no keys");
  if (!mask.empty() && mask.size() != q.rows() * k.rows()) {
    throw DimensionError("attend: mask size does not match [n_q x n_k]");
  }
  const std::size_t dh = d / static_cast<std::size_t>(num_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(num_heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(num_heads); ++h) {
    const std::size_t b = h * dh, e = b + dh;
    const Tensor qh = num_heads == 1 ? q : slice_cols(q, b, e);
    const Tensor kh = num_heads == 1 ? k : slice_cols(k, b, e);
    const Tensor vh = num_heads == 1 ? v : slice_cols(v, b, e);
    const Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    const Tensor p = mask.empty() ? softmax_t(scores, 1.0) : softmax_masked(scores, mask, 1.0);
    if (weights) weights->push_back(p);
    heads.push_back(matmul(p, vh));
  }
  return num_heads == 1 ? heads.front() : concat_cols(heads);
}

MultiHeadAttention::MultiHeadAttention(int d_model, int heads, Initializer& init)
    : num_heads(heads),
      query(d_model, d_model, init),
      key(d_model, d_model, init),
      value(d_model, d_model, init),
      output(d_model, d_model, init) {}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& memory, std::span<const unsigned char> mask,
                                      std::vector<Tensor>* weights) const {
  return output(attend(query(queries), key(memory), value(memory), num_heads, mask, weights));
}

void MultiHeadAttention::collect(const std::string& prefix, NamedParameters& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

EncoderLayer::EncoderLayer(int d_model, int num_heads, int d_ff, double rate, Initializer& init)
    : attn_norm(d_model),
      attention(d_model, num_heads, init),
      ffn_norm(d_model),
      ffn_in(d_model, d_ff, init),
      ffn_out(d_ff, d_model, init),
      dropout_rate(rate) {}

Tensor EncoderLayer::operator()(const Tensor& x, const ForwardContext& ctx, std::vector<Tensor>* weights) const {
  auto drop = [&](const Tensor& t) {
    return ctx.training && ctx.rng && dropout_rate > 0.0 ? dropout(t, dropout_rate, *ctx.rng) : t;
  };
  const Tensor h = attn_norm(x);
  const Tensor after_attn = add(x, drop(attention(h, h, {}, weights)));
  const Tensor ff = ffn_out(gelu(ffn_in(ffn_norm(after_attn))));
  return add(after_attn, drop(ff));
}

void EncoderLayer::collect(const std::string& prefix, NamedParameters& out) const {
  attn_norm.collect(prefix + ".attn_norm", out);
  attention.collect(prefix + ".attention", out);
  ffn_norm.collect(prefix + ".ffn_norm", out);
  ffn_in.collect(prefix + ".ffn_in", out);
  ffn_out.collect(prefix + ".ffn_out", out);
}

Encoder::Encoder(const EncoderConfig& config) : config_(config) {
  config_.validate();
  Initializer init(config_.seed);
  const auto d = static_cast<std::size_t>(config_.d_model);
  token_embedding_ = init.normal({static_cast<std::size_t>(config_.vocab_size), d});
  position_embedding_ = init.normal({static_cast<std::size_t>(config_.max_len), d});
  for (int i = 0; i < config_.num_layers; ++i) {
    layers_.emplace_back(config_.d_model, config_.num_heads, config_.d_ff, config_.dropout_rate, init);
  }
  final_norm_ = LayerNorm(config_.d_model);
}

Tensor Encoder::embed(std::span<const std::size_t> tokens) const {
  if (tokens.size() > static_cast<std::size_t>(config_.max_len)) {
    throw LengthError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_len " +
                      std::to_string(config_.max_len));
  }
  for (auto id : tokens) {
    if (id >= static_cast<std::size_t>(config_.vocab_size)) {
      throw BoundsError("token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(config_.vocab_size));
    }
  }
  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return add(gather_rows(token_embedding_, tokens), gather_rows(position_embedding_, positions));
}

Tensor Encoder::encode(std::span<const std::size_t> tokens, const ForwardContext& ctx,
                       std::vector<Tensor>* weights) const {
  Tensor x = embed(tokens);
  if (layers_.empty()) return x;
  if (tokens.empty()) throw ContractError("cannot attend over an empty sequence");
  for (const auto& layer : layers_) x = layer(x, ctx, weights);
  return final_norm_(x);
}

void Encoder::collect(const std::string& prefix, NamedParameters& out) const {
  out.emplace_back(prefix + ".token_embedding", token_embedding_);
  out.emplace_back(prefix + ".position_embedding", position_embedding_);
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
  final_norm_.collect(prefix + ".final_norm", out);
}

std::size_t parameter_count(const NamedParameters& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace ddnet
