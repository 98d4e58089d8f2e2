#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ddnet/dataset.hpp"
#include "ddnet/examples.hpp"
#include "ddnet/hash.hpp"
#include "ddnet/noise.hpp"
#include "ddnet/qa_model.hpp"
#include "ddnet/tensor.hpp"
#include "ddnet/tokenizer.hpp"

namespace ddnet::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0, bool requires_grad = false) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Vocabulary over every text of the corpus, both views.
inline Tokenizer corpus_tokenizer(const std::vector<Story>& stories) {
  std::vector<std::string> texts;
  for (const auto& s : stories) {
    texts.push_back(s.document);
    if (s.asr_document) texts.push_back(*s.asr_document);
    for (const auto& t : s.turns) {
      texts.push_back(t.question);
      if (t.asr_question) texts.push_back(*t.asr_question);
      texts.push_back(t.answer);
    }
  }
  return Tokenizer::build(texts);
}

/// Synthetic stories with ASR views, a tokenizer and the examples built from
/// them: the smallest end-to-end corpus a test can train on.
struct Corpus {
  std::vector<Story> stories;
  Tokenizer tokenizer;
  ExampleConfig example_config;
  std::vector<Example> examples;
};

inline Corpus make_corpus(int num_stories, std::uint64_t seed, int max_len = 128, NoiseSpec noise = {},
                          SyntheticOptions options = {3, 4, 0.1}) {
  Corpus c;
  noise.seed = substream_seed(seed, "noise");
  c.stories = corrupt_dataset(generate_synthetic(num_stories, seed, options), noise);
  c.tokenizer = corpus_tokenizer(c.stories);
  c.example_config.max_len = max_len;
  c.example_config.speech_vocab_size = 64;
  c.example_config.speech_seed = substream_seed(seed, "speech_units");
  c.examples = build_examples(c.stories, c.tokenizer, c.example_config).examples;
  return c;
}

inline QAModelConfig tiny_model_config(const Corpus& c, int d_model = 16, int layers = 1, int heads = 2,
                                       std::uint64_t seed = 1) {
  QAModelConfig m;
  m.text.num_layers = layers;
  m.text.num_heads = heads;
  m.text.d_model = d_model;
  m.text.d_ff = 2 * d_model;
  m.text.vocab_size = static_cast<int>(c.tokenizer.size());
  m.text.max_len = c.example_config.max_len;
  m.text.dropout_rate = 0.0;
  m.text.seed = seed;
  m.speech = m.text;
  m.speech.vocab_size = c.example_config.speech_vocab_size;
  m.speech.max_len = c.example_config.max_len * c.example_config.speech_repeat;
  m.speech.seed = seed + 1000;
  m.num_joint_layers = layers;
  m.pad_id = Tokenizer::kPad;
  return m;
}

}  // namespace ddnet::testing
