#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "murel/params.hpp"
#include "murel/tensor.hpp"

namespace murel {

/// Token <-> index map. Index 0 is <pad>, 1 is <unk>; real tokens start at 2.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary();
  /// Builds from an index-ordered token list whose first two entries are <pad>, <unk>.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  /// Adds `token` if absent; returns its index.
  std::size_t add(const std::string& token);
  std::size_t index(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return index_.contains(token); }
  const std::string& token(std::size_t index) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

/// Lowercase, strip punctuation, split on whitespace, map with <unk> fallback.
std::vector<std::size_t> tokenize(const std::string& text, const Vocabulary& vocab);
/// The normalized words tokenize() would look up.
std::vector<std::string> split_words(const std::string& text);

struct GruConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;
};

/// Single-layer GRU over learned embeddings; the last hidden state is the question embedding.
///
///   z  = sigmoid(x W_z + h U_z + b_z)
///   r  = sigmoid(x W_r + h U_r + b_r)
///   h~ = tanh(x W_h + (r o h) U_h + b_h)
///   h' = (1 - z) o h + z o h~
///
/// h starts at zero; <pad> positions leave h unchanged.
class QuestionEncoder {
 public:
  QuestionEncoder() = default;
  QuestionEncoder(GruConfig config, Rng& rng);
  /// All parameters zero-initialized (used by tests and as a fixed point).
  static QuestionEncoder zeros(GruConfig config);

  const GruConfig& config() const { return config_; }

  /// One sequence -> [d_q].
  Tensor encode(std::span<const std::size_t> tokens) const;
  /// Ragged batch -> [B x d_q].
  Tensor encode_batch(const std::vector<std::vector<std::size_t>>& batch) const;

  void register_params(ParamStore& store, const std::string& prefix = "qencoder") const;
  std::size_t parameter_count() const;

  Tensor embedding;
  Tensor w_z, w_r, w_h;
  Tensor u_z, u_r, u_h;
  Tensor b_z, b_r, b_h;

 private:
  GruConfig config_;
};

}  // namespace murel
