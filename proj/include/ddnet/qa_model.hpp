#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddnet/fusion.hpp"
#include "ddnet/nn.hpp"

namespace ddnet {

struct QAModelConfig {
  EncoderConfig text;
  EncoderConfig speech;
  FusionMode fusion = FusionMode::cross_attention;
  int num_joint_layers = 2;
  /// Id substituted for document tokens when the text stream is excluded
  /// (speech_only).
  std::size_t pad_id = 0;

  void validate() const;
  bool operator==(const QAModelConfig&) const = default;
};

/// One view of an example as the model consumes it: packed
/// [CLS] question [SEP] document [SEP] ids plus the speech unit ids.
struct ModelInput {
  std::span<const std::size_t> text_ids;
  std::size_t doc_offset = 0;
  std::size_t doc_len = 0;
  std::span<const std::size_t> speech_ids;
};

/// Start/end scores over [sentinel, doc_0, ..., doc_{n-1}]. Slot 0 is the
/// [CLS] position and stands for "no answer".
struct SpanLogits {
  Tensor start;
  Tensor end;
  std::size_t doc_offset = 0;
  std::size_t doc_len = 0;

  /// Logit slot of a packed-sequence position (0 for the sentinel).
  std::size_t slot_of(std::size_t packed_position) const;
};

struct AnswerSpan {
  std::size_t start_token = 0;  // document-relative
  std::size_t end_token = 0;
  std::string text;
  double score = 0.0;
  bool is_no_answer = false;
};

/// Encoding layer (text + speech encoders, fusion, projection), attention
/// layer (joint transformer stack) and output layer (start/end scorers).
class QAModel {
 public:
  explicit QAModel(const QAModelConfig& config);
  // Parameters are shared handles; a copy would alias them.
  QAModel(const QAModel&) = delete;
  QAModel& operator=(const QAModel&) = delete;
  QAModel(QAModel&&) = default;
  QAModel& operator=(QAModel&&) = default;

  const QAModelConfig& config() const { return config_; }
  FusionMode mode() const { return config_.fusion; }

  SpanLogits forward(const ModelInput& input, const ForwardContext& ctx = ForwardContext::eval()) const;

  /// Stable, ordered parameter list; names are checkpoint keys.
  NamedParameters parameters() const;
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;
  /// Content hash of every parameter value.
  std::uint64_t fingerprint() const;

  std::uint64_t tokenizer_fingerprint = 0;

  const Encoder& text_encoder() const { return text_encoder_; }
  const Encoder& speech_encoder() const { return speech_encoder_; }

 private:
  QAModelConfig config_;
  Encoder text_encoder_;
  Encoder speech_encoder_;
  std::optional<MultiHeadAttention> text_queries_speech_;
  Linear fusion_projection_;
  std::vector<EncoderLayer> joint_layers_;
  LayerNorm joint_norm_;
  Linear start_head_;
  Linear end_head_;
};

/// Best span maximising start[i] + end[j] with i <= j < i + max_answer_len
/// over real document positions; ties go to the smaller i, then smaller j.
/// The sentinel wins only when its score is strictly greater.
AnswerSpan predict_answer(const SpanLogits& logits, std::span<const std::string> doc_tokens, int max_answer_len = 30);

}  // namespace ddnet
