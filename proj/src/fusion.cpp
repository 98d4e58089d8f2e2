#include "ddnet/fusion.hpp"

#include "ddnet/errors.hpp"

namespace ddnet {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::cross_attention: return "cross_attention";
    case FusionMode::con_fusion: return "con_fusion";
    case FusionMode::speech_only: return "speech_only";
    case FusionMode::text_only: return "text_only";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(std::string_view name) {
  for (auto mode : kAllFusionModes)
    if (to_string(mode) == name) return mode;
  throw ConfigError("unknown fusion mode '" + std::string(name) + "'");
}

namespace {
void require_nonempty(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.rows() == 0) throw ContractError(std::string(what) + " modality is empty");
}
}  // namespace

std::pair<Tensor, Tensor> cross_attention(const CoAttention& block, const Tensor& speech, const Tensor& text) {
  require_nonempty(speech, "speech");
  require_nonempty(text, "text");
  if (speech.cols() != text.cols()) {
    throw DimensionError("cross_attention: speech " + shape_str(speech.shape()) + " vs text " + shape_str(text.shape()));
  }
  return {block.speech_queries_text(speech, text), block.text_queries_speech(text, speech)};
}

FusedEmbedding fuse(const Tensor& contextual, const Tensor& speech, const Tensor& text, FusionMode mode,
                    const MultiHeadAttention* text_queries_speech) {
  require_nonempty(contextual, "contextual");
  const std::size_t n = contextual.rows();
  const std::size_t d = contextual.cols();
  auto check_width = [&](const Tensor& t, const char* what) {
    if (t.rank() != 2 || t.cols() != d) {
      throw ContractError(std::string("fuse: ") + what + " " + shape_str(t.shape()) + " does not match width " +
                          std::to_string(d));
    }
  };

  Tensor second;
  switch (mode) {
    case FusionMode::cross_attention: {
      if (text_queries_speech == nullptr) throw ContractError("fuse: cross_attention mode needs attention parameters");
      require_nonempty(speech, "speech");
      check_width(speech, "speech");
      check_width(text, "text");
      if (text.rows() != n) throw ContractError("fuse: text stream is not aligned with the contextual embedding");
      second = (*text_queries_speech)(text, speech);
      break;
    }
    case FusionMode::con_fusion:
    case FusionMode::speech_only:
      require_nonempty(speech, "speech");
      check_width(speech, "speech");
      second = broadcast_rows(mean_rows(speech), n);
      break;
    case FusionMode::text_only:
      check_width(text, "text");
      if (text.rows() != n) throw ContractError("fuse: text stream is not aligned with the contextual embedding");
      second = text;
      break;
  }
  const std::array<Tensor, 2> parts{contextual, second};
  return {concat_cols(parts), mode};
}

}  // namespace ddnet
