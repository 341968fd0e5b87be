#include "chg2cap/decoder.hpp"

#include <cmath>

#include "chg2cap/error.hpp"
#include "chg2cap/ops.hpp"

namespace chg2cap {

namespace o = ops;

AttentionProjections AttentionProjections::init(std::size_t d, Rng& rng) {
  AttentionProjections p;
  p.wq = trainable(glorot_uniform({d, d}, d, d, rng));
  p.wk = trainable(glorot_uniform({d, d}, d, d, rng));
  p.wv = trainable(glorot_uniform({d, d}, d, d, rng));
  p.wo = trainable(glorot_uniform({d, d}, d, d, rng));
  return p;
}

void AttentionProjections::collect(const std::string& prefix, ParameterList& list) const {
  list.push_back({prefix + "wq", wq});
  list.push_back({prefix + "wk", wk});
  list.push_back({prefix + "wv", wv});
  list.push_back({prefix + "wo", wo});
}

DecoderLayerParams DecoderLayerParams::init(std::size_t d, std::size_t ffn, Rng& rng) {
  DecoderLayerParams p;
  p.self_attn = AttentionProjections::init(d, rng);
  p.ln1_gain = trainable(Tensor({d}, 1.0));
  p.ln1_bias = trainable(Tensor({d}, 0.0));
  p.cross_attn = AttentionProjections::init(d, rng);
  p.ln2_gain = trainable(Tensor({d}, 1.0));
  p.ln2_bias = trainable(Tensor({d}, 0.0));
  p.ffn_w1 = trainable(glorot_uniform({d, ffn}, d, ffn, rng));
  p.ffn_b1 = trainable(Tensor({ffn}, 0.0));
  p.ffn_w2 = trainable(glorot_uniform({ffn, d}, ffn, d, rng));
  p.ffn_b2 = trainable(Tensor({d}, 0.0));
  return p;
}

void DecoderLayerParams::collect(const std::string& prefix, ParameterList& list) const {
  self_attn.collect(prefix + "self.", list);
  list.push_back({prefix + "ln1.gain", ln1_gain});
  list.push_back({prefix + "ln1.bias", ln1_bias});
  cross_attn.collect(prefix + "cross.", list);
  list.push_back({prefix + "ln2.gain", ln2_gain});
  list.push_back({prefix + "ln2.bias", ln2_bias});
  list.push_back({prefix + "ffn.w1", ffn_w1});
  list.push_back({prefix + "ffn.b1", ffn_b1});
  list.push_back({prefix + "ffn.w2", ffn_w2});
  list.push_back({prefix + "ffn.b2", ffn_b2});
}

DecoderParams DecoderParams::init(const ModelConfig& cfg, Rng& rng) {
  if (cfg.vocab_size == 0) throw ConfigError("decoder: vocab_size is not set");
  const std::size_t d = cfg.d_emb, m = cfg.vocab_size;
  DecoderParams p;
  p.heads = cfg.heads;
  p.token_embedding = trainable(glorot_uniform({m, d}, m, d, rng));
  for (std::size_t j = 0; j < cfg.decoder_depth; ++j) p.layers.push_back(DecoderLayerParams::init(d, cfg.decoder_ffn_dim, rng));
  p.vocab_proj = trainable(glorot_uniform({d, m}, d, m, rng));
  return p;
}

ParameterList DecoderParams::named_parameters() const {
  ParameterList list;
  list.push_back({"decoder.token_embedding", token_embedding});
  for (std::size_t j = 0; j < layers.size(); ++j) layers[j].collect("decoder.layer." + std::to_string(j) + ".", list);
  list.push_back({"decoder.vocab_proj", vocab_proj});
  return list;
}

Tensor sinusoidal_positions(std::size_t n, std::size_t d_emb) {
  if (d_emb == 0 || d_emb % 2 != 0) throw ConfigError("sinusoidal_positions: d_emb must be even, got " + std::to_string(d_emb));
  Tensor out({n, d_emb});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t k = 0; k < d_emb / 2; ++k) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(d_emb));
      out.at(pos, 2 * k) = std::sin(angle);
      out.at(pos, 2 * k + 1) = std::cos(angle);
    }
  }
  return out;
}

Tensor causal_mask(std::size_t n) {
  if (n == 0) throw DimensionError("causal_mask: n must be >= 1");
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) out.at(i, j) = 1.0;
  return out;
}

Tensor embed_tokens(std::span<const int> ids, const DecoderParams& params) {
  const std::size_t m = params.vocab_size();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= m) {
      throw DataError("token id " + std::to_string(id) + " outside a vocabulary of " + std::to_string(m));
    }
  }
  return o::add(o::gather_rows(params.token_embedding, ids),
                sinusoidal_positions(ids.size(), params.token_embedding.dim(1)));
}

namespace {

Tensor multi_head(const Tensor& queries, const Tensor& keys, const AttentionProjections& p, std::size_t heads,
                  bool causal, std::vector<double>* weights) {
  const Tensor q = o::matmul(queries, p.wq);
  const Tensor k = o::matmul(keys, p.wk);
  const Tensor v = o::matmul(keys, p.wv);
  return o::matmul(o::attention(q, k, v, heads, causal, weights), p.wo);
}

void check_heads(std::size_t d, std::size_t heads) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("decoder: d_emb " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
}

}  // namespace

Tensor masked_self_attention(const Tensor& e, const DecoderLayerParams& layer, std::size_t heads,
                             std::vector<double>* weights) {
  check_heads(e.dim(1), heads);
  return o::layer_norm(o::add(e, multi_head(e, e, layer.self_attn, heads, true, weights)), layer.ln1_gain,
                       layer.ln1_bias);
}

Tensor cross_attention(const Tensor& s, const Tensor& e_img, const DecoderLayerParams& layer, std::size_t heads,
                       std::vector<double>* weights) {
  if (e_img.rank() != 2 || e_img.dim(1) != s.dim(1)) {
    throw DimensionError("cross_attention: image embedding " + shape_str(e_img.shape()) +
                         " does not match text width " + std::to_string(s.dim(1)));
  }
  check_heads(s.dim(1), heads);
  return o::layer_norm(o::add(s, multi_head(s, e_img, layer.cross_attn, heads, false, weights)), layer.ln2_gain,
                       layer.ln2_bias);
}

Tensor decoder_layer(const Tensor& e, const Tensor& e_img, const DecoderLayerParams& layer, std::size_t heads,
                     std::vector<double>* cross_weights) {
  const Tensor s = masked_self_attention(e, layer, heads);
  const Tensor c = cross_attention(s, e_img, layer, heads, cross_weights);
  const Tensor hidden = o::relu(o::add_row(o::matmul(c, layer.ffn_w1), layer.ffn_b1));
  return o::add(o::add_row(o::matmul(hidden, layer.ffn_w2), layer.ffn_b2), e);
}

Tensor decoder_stack(const Tensor& e0, const Tensor& e_img, const DecoderParams& params,
                     std::vector<double>* cross_weights) {
  Tensor e = e0;
  for (std::size_t j = 0; j < params.layers.size(); ++j) {
    const bool last = j + 1 == params.layers.size();
    e = decoder_layer(e, e_img, params.layers[j], params.heads, last ? cross_weights : nullptr);
  }
  return e;
}

Tensor project_vocab(const Tensor& e, const DecoderParams& params) {
  return o::softmax_rows(o::matmul(e, params.vocab_proj));
}

TeacherForcing teacher_forcing(const TokenSequence& t) {
  if (t.valid_len < 2 || t.valid_len > t.ids.size()) {
    throw DataError("teacher forcing needs at least START and one target token (valid_len " +
                    std::to_string(t.valid_len) + ")");
  }
  TeacherForcing tf;
  tf.inputs.assign(t.ids.begin(), t.ids.begin() + static_cast<std::ptrdiff_t>(t.valid_len - 1));
  for (std::size_t i = 1; i < t.valid_len; ++i) tf.targets.push_back(t.ids[i] == kPadId ? -1 : t.ids[i]);
  return tf;
}

Tensor cross_entropy_loss(const Tensor& t_hat, const TokenSequence& t) {
  const auto tf = teacher_forcing(t);
  if (t_hat.rank() != 2 || t_hat.dim(0) != tf.targets.size()) {
    throw DimensionError("cross_entropy_loss: " + shape_str(t_hat.shape()) + " probabilities for " +
                         std::to_string(tf.targets.size()) + " targets");
  }
  bool any = false;
  for (int target : tf.targets) any |= target >= 0;
  if (!any) throw DataError("cross_entropy_loss: every target position is PAD");
  return o::nll_loss(t_hat, tf.targets);
}

Tensor decode_probabilities(std::span<const int> ids, const Tensor& e_img, const DecoderParams& params,
                            std::vector<double>* cross_weights) {
  return project_vocab(decoder_stack(embed_tokens(ids, params), e_img, params, cross_weights), params);
}

GreedyResult greedy_decode(const Tensor& e_img, const DecoderParams& params, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("greedy_decode: max_len must be >= 2");
  const std::size_t m = params.vocab_size(), hw = e_img.dim(0), heads = params.heads;
  GreedyResult result;
  std::vector<int> ids{kStartId};
  while (ids.size() < max_len - 1) {
    std::vector<double> weights;
    const Tensor probs = decode_probabilities(ids, e_img, params, &weights);
    const std::size_t last = ids.size() - 1;
    const auto row = probs.data().subspan(last * m, m);
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (row[j] > row[best]) best = j;

    std::vector<double> attn(hw, 0.0);
    const std::size_t n = ids.size();
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t s = 0; s < hw; ++s) attn[s] += weights[(h * n + last) * hw + s] / static_cast<double>(heads);
    result.attention.push_back(std::move(attn));

    ids.push_back(static_cast<int>(best));
    if (best == static_cast<std::size_t>(kEndId)) break;
  }
  if (ids.back() != kEndId) ids.push_back(kEndId);
  result.tokens.valid_len = ids.size();
  ids.resize(max_len, kPadId);
  result.tokens.ids = std::move(ids);
  return result;
}

}  // namespace chg2cap
