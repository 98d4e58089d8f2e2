#include "ddnet/qa_model.hpp"

#include <limits>

#include "ddnet/errors.hpp"

namespace ddnet {

void QAModelConfig::validate() const {
  text.validate();
  speech.validate();
  if (text.d_model != speech.d_model) {
    throw ParameterError("text and speech encoders must share d_model");
  }
  if (num_joint_layers < 0) throw ParameterError("num_joint_layers must be >= 0");
  if (pad_id >= static_cast<std::size_t>(text.vocab_size)) throw ParameterError("pad_id outside text vocabulary");
}

std::size_t SpanLogits::slot_of(std::size_t packed_position) const {
  if (packed_position == 0) return 0;
  if (packed_position < doc_offset || packed_position >= doc_offset + doc_len) {
    throw BoundsError("position " + std::to_string(packed_position) + " is outside the document region [" +
                      std::to_string(doc_offset) + "," + std::to_string(doc_offset + doc_len) + ")");
  }
  return packed_position - doc_offset + 1;
}

namespace {
EncoderConfig speech_config_with_offset_seed(EncoderConfig c) {
  // Distinct stream from the text encoder even when both configs carry the same seed.
  c.seed = substream_seed(c.seed, "speech_encoder");
  return c;
}
}  // namespace

QAModel::QAModel(const QAModelConfig& config)
    : config_((config.validate(), config)),
      text_encoder_(config.text),
      speech_encoder_(speech_config_with_offset_seed(config.speech)) {
  Initializer init(substream_seed(config.text.seed, "qa_head"));
  const int d = config.text.d_model;
  if (config.fusion == FusionMode::cross_attention) {
    text_queries_speech_.emplace(d, config.text.num_heads, init);
  }
  fusion_projection_ = Linear(2 * d, d, init);
  for (int i = 0; i < config.num_joint_layers; ++i) {
    joint_layers_.emplace_back(d, config.text.num_heads, config.text.d_ff, config.text.dropout_rate, init);
  }
  joint_norm_ = LayerNorm(d);
  start_head_ = Linear(d, 1, init);
  end_head_ = Linear(d, 1, init);
}

SpanLogits QAModel::forward(const ModelInput& input, const ForwardContext& ctx) const {
  const std::size_t n = input.text_ids.size();
  if (n > static_cast<std::size_t>(config_.text.max_len)) {
    throw LengthError("packed sequence of " + std::to_string(n) + " tokens exceeds max_len " +
                      std::to_string(config_.text.max_len));
  }
  if (input.doc_len == 0 || input.doc_offset == 0 || input.doc_offset + input.doc_len > n) {
    throw ContractError("document region [" + std::to_string(input.doc_offset) + "," +
                        std::to_string(input.doc_offset + input.doc_len) + ") is invalid for a packed sequence of " +
                        std::to_string(n));
  }
  if (input.speech_ids.empty()) throw ContractError("speech stream is empty");

  Tensor contextual;
  if (config_.fusion == FusionMode::speech_only) {
    std::vector<std::size_t> masked(input.text_ids.begin(), input.text_ids.end());
    for (std::size_t i = 0; i < input.doc_len; ++i) masked[input.doc_offset + i] = config_.pad_id;
    contextual = text_encoder_.encode(masked, ctx);
  } else {
    contextual = text_encoder_.encode(input.text_ids, ctx);
  }
  const Tensor speech = speech_encoder_.encode(input.speech_ids, ctx);
  const FusedEmbedding fused =
      fuse(contextual, speech, contextual, config_.fusion, text_queries_speech_ ? &*text_queries_speech_ : nullptr);

  Tensor h = fusion_projection_(fused.sequence);
  for (const auto& layer : joint_layers_) h = layer(h, ctx);
  h = joint_norm_(h);

  std::vector<std::size_t> rows;
  rows.reserve(input.doc_len + 1);
  rows.push_back(0);
  for (std::size_t i = 0; i < input.doc_len; ++i) rows.push_back(input.doc_offset + i);
  const Tensor selected = gather_rows(h, rows);
  SpanLogits out;
  out.start = reshape(start_head_(selected), {rows.size()});
  out.end = reshape(end_head_(selected), {rows.size()});
  out.doc_offset = input.doc_offset;
  out.doc_len = input.doc_len;
  return out;
}

NamedParameters QAModel::parameters() const {
  NamedParameters out;
  text_encoder_.collect("text_encoder", out);
  speech_encoder_.collect("speech_encoder", out);
  if (text_queries_speech_) text_queries_speech_->collect("fusion.text_queries_speech", out);
  fusion_projection_.collect("fusion.projection", out);
  for (std::size_t i = 0; i < joint_layers_.size(); ++i) joint_layers_[i].collect("joint.layer" + std::to_string(i), out);
  joint_norm_.collect("joint.final_norm", out);
  start_head_.collect("span.start", out);
  end_head_.collect("span.end", out);
  return out;
}

std::vector<Tensor> QAModel::parameter_tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : parameters()) out.push_back(t);
  return out;
}

std::size_t QAModel::parameter_count() const { return ddnet::parameter_count(parameters()); }

std::uint64_t QAModel::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : parameters()) {
    h = fnv1a(name, h);
    h = fnv1a(t.data(), h);
  }
  return h;
}

AnswerSpan predict_answer(const SpanLogits& logits, std::span<const std::string> doc_tokens, int max_answer_len) {
  if (max_answer_len < 1) throw ParameterError("max_answer_len must be >= 1");
  const std::size_t n = logits.doc_len;
  if (n == 0 || doc_tokens.empty()) throw ContractError("cannot decode an answer from an empty document");
  if (doc_tokens.size() != n || logits.start.numel() != n + 1 || logits.end.numel() != n + 1) {
    throw DimensionError("predict_answer: logits cover " + std::to_string(logits.start.numel()) + " slots for " +
                         std::to_string(doc_tokens.size()) + " document tokens");
  }
  const auto start = logits.start.data();
  const auto end = logits.end.data();
  double best = -std::numeric_limits<double>::infinity();
  std::size_t bi = 0, bj = 0;
  const auto window = static_cast<std::size_t>(max_answer_len);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n && j < i + window; ++j) {
      const double s = start[i + 1] + end[j + 1];
      if (s > best) {
        best = s;
        bi = i;
        bj = j;
      }
    }
  }
  AnswerSpan span;
  const double null_score = start[0] + end[0];
  if (null_score > best) {
    span.is_no_answer = true;
    span.score = null_score;
    span.text = "unknown";
    return span;
  }
  span.start_token = bi;
  span.end_token = bj;
  span.score = best;
  for (std::size_t k = bi; k <= bj; ++k) {
    if (k > bi) span.text += ' ';
    span.text += doc_tokens[k];
  }
  return span;
}

}  // namespace ddnet
