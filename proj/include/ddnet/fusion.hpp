#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>

#include "ddnet/nn.hpp"

namespace ddnet {

enum class FusionMode { cross_attention, con_fusion, speech_only, text_only };

inline constexpr std::array<FusionMode, 4> kAllFusionModes = {
    FusionMode::cross_attention, FusionMode::con_fusion, FusionMode::speech_only, FusionMode::text_only};

std::string to_string(FusionMode mode);
/// Throws ConfigError on an unknown name.
FusionMode parse_fusion_mode(std::string_view name);

/// Fused sequence aligned to text positions, width 2 * d_model in every mode.
struct FusedEmbedding {
  Tensor sequence;
  FusionMode mode = FusionMode::cross_attention;
};

/// Co-attention block: each modality queries the other with its own
/// projections.
struct CoAttention {
  MultiHeadAttention speech_queries_text;  // Q = speech, K = V = text
  MultiHeadAttention text_queries_speech;  // Q = text, K = V = speech

  CoAttention() = default;
  CoAttention(int d_model, int num_heads, Initializer& init)
      : speech_queries_text(d_model, num_heads, init), text_queries_speech(d_model, num_heads, init) {}

  void collect(const std::string& prefix, NamedParameters& out) const {
    speech_queries_text.collect(prefix + ".speech_queries_text", out);
    text_queries_speech.collect(prefix + ".text_queries_speech", out);
  }
};

/// (speech attending over text [n_s x d], text attending over speech [n_x x d]).
std::pair<Tensor, Tensor> cross_attention(const CoAttention& block, const Tensor& speech, const Tensor& text);

/// Concatenates the contextual embedding with the second stream the mode
/// selects:
///   cross_attention  [E_enc ; text attending over speech]
///   con_fusion       [E_enc ; mean-pooled speech, broadcast]
///   speech_only      [E_enc ; mean-pooled speech, broadcast]
///   text_only        [E_enc ; E_x]
/// `text_queries_speech` is required for cross_attention and ignored otherwise.
FusedEmbedding fuse(const Tensor& contextual, const Tensor& speech, const Tensor& text, FusionMode mode,
                    const MultiHeadAttention* text_queries_speech = nullptr);

}  // namespace ddnet
