#include "murel/qencoder.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "murel/errors.hpp"
#include "murel/ops.hpp"

namespace murel {

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
    throw DataError("vocabulary must start with <pad>, <unk>");
  }
  Vocabulary v;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw DataError("vocabulary token '" + tokens[i] + "' appears twice");
    v.add(tokens[i]);
  }
  return v;
}

std::size_t Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  index_.emplace(token, tokens_.size());
  tokens_.push_back(token);
  return tokens_.size() - 1;
}

std::size_t Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t index) const {
  if (index >= tokens_.size()) throw IndexError("token index " + std::to_string(index) + " out of vocabulary");
  return tokens_[index];
}

std::vector<std::string> split_words(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    clean.push_back(static_cast<char>(std::tolower(c)));
  }
  std::istringstream in(clean);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

std::vector<std::size_t> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.index(w));
  return ids;
}

QuestionEncoder::QuestionEncoder(GruConfig config, Rng& rng) : config_(config) {
  const auto e = config_.embed_dim, h = config_.hidden_dim;
  if (config_.vocab_size < 2 || e == 0 || h == 0) throw DataError("GRU config has an empty dimension");
  embedding = uniform_param({config_.vocab_size, e}, 0.5, rng);
  w_z = glorot(e, h, rng);
  w_r = glorot(e, h, rng);
  w_h = glorot(e, h, rng);
  u_z = glorot(h, h, rng);
  u_r = glorot(h, h, rng);
  u_h = glorot(h, h, rng);
  b_z = Tensor::zeros({h}, true);
  b_r = Tensor::zeros({h}, true);
  b_h = Tensor::zeros({h}, true);
}

QuestionEncoder QuestionEncoder::zeros(GruConfig config) {
  QuestionEncoder q;
  q.config_ = config;
  const auto e = config.embed_dim, h = config.hidden_dim;
  q.embedding = Tensor::zeros({config.vocab_size, e}, true);
  q.w_z = Tensor::zeros({e, h}, true);
  q.w_r = Tensor::zeros({e, h}, true);
  q.w_h = Tensor::zeros({e, h}, true);
  q.u_z = Tensor::zeros({h, h}, true);
  q.u_r = Tensor::zeros({h, h}, true);
  q.u_h = Tensor::zeros({h, h}, true);
  q.b_z = Tensor::zeros({h}, true);
  q.b_r = Tensor::zeros({h}, true);
  q.b_h = Tensor::zeros({h}, true);
  return q;
}

Tensor QuestionEncoder::encode(std::span<const std::size_t> tokens) const {
  std::vector<std::vector<std::size_t>> batch{{tokens.begin(), tokens.end()}};
  Tensor h = encode_batch(batch);
  return reshape(h, {config_.hidden_dim});
}

Tensor QuestionEncoder::encode_batch(const std::vector<std::vector<std::size_t>>& batch) const {
  if (batch.empty()) throw DomainError("encode: empty batch");
  const std::size_t b = batch.size(), hd = config_.hidden_dim;
  std::size_t length = 0;
  for (const auto& seq : batch) {
    const bool any_token = std::any_of(seq.begin(), seq.end(), [](std::size_t t) { return t != Vocabulary::kPad; });
    if (!any_token) throw DomainError("encode: empty token sequence");
    for (auto t : seq) {
      if (t >= config_.vocab_size) {
        throw IndexError("encode: token index " + std::to_string(t) + " outside vocabulary of size " +
                         std::to_string(config_.vocab_size));
      }
    }
    length = std::max(length, seq.size());
  }

  Tensor h = Tensor::zeros({b, hd});
  std::vector<std::size_t> step_ids(b);
  for (std::size_t t = 0; t < length; ++t) {
    std::vector<double> keep(b * hd, 0.0);
    bool any = false, all = true;
    for (std::size_t i = 0; i < b; ++i) {
      const bool live = t < batch[i].size() && batch[i][t] != Vocabulary::kPad;
      step_ids[i] = live ? batch[i][t] : Vocabulary::kPad;
      any = any || live;
      all = all && live;
      if (live) std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(i * hd), hd, 1.0);
    }
    if (!any) continue;
    Tensor x = gather_rows(embedding, step_ids);
    Tensor z = sigmoid(add(add(matmul(x, w_z), matmul(h, u_z)), b_z));
    Tensor r = sigmoid(add(add(matmul(x, w_r), matmul(h, u_r)), b_r));
    Tensor cand = murel::tanh(add(add(matmul(x, w_h), matmul(mul(r, h), u_h)), b_h));
    Tensor delta = mul(z, sub(cand, h));  // h' - h
    if (!all) delta = mul(delta, Tensor({b, hd}, std::move(keep)));
    h = add(h, delta);
  }
  return h;
}

void QuestionEncoder::register_params(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + ".embedding", embedding);
  store.add(prefix + ".W_z", w_z);
  store.add(prefix + ".W_r", w_r);
  store.add(prefix + ".W_h", w_h);
  store.add(prefix + ".U_z", u_z);
  store.add(prefix + ".U_r", u_r);
  store.add(prefix + ".U_h", u_h);
  store.add(prefix + ".b_z", b_z);
  store.add(prefix + ".b_r", b_r);
  store.add(prefix + ".b_h", b_h);
}

std::size_t QuestionEncoder::parameter_count() const {
  const auto e = config_.embed_dim, h = config_.hidden_dim;
  return config_.vocab_size * e + 3 * (e * h + h * h + h);
}

}  // namespace murel
