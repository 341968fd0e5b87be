#pragma once

#include <span>
#include <string>
#include <vector>

#include "chg2cap/config.hpp"
#include "chg2cap/parameters.hpp"
#include "chg2cap/vocab.hpp"

namespace chg2cap {

/// Multi-head attention projections. Each matrix is [d x d]; head l uses the
/// column block [l*d/h, (l+1)*d/h) of wq, wk and wv.
struct AttentionProjections {
  Tensor wq, wk, wv, wo;

  static AttentionProjections init(std::size_t d, Rng& rng);
  void collect(const std::string& prefix, ParameterList& list) const;
};

struct DecoderLayerParams {
  AttentionProjections self_attn;
  Tensor ln1_gain, ln1_bias;
  AttentionProjections cross_attn;
  Tensor ln2_gain, ln2_bias;
  Tensor ffn_w1, ffn_b1;  // [d x ffn], [ffn]
  Tensor ffn_w2, ffn_b2;  // [ffn x d], [d]

  static DecoderLayerParams init(std::size_t d, std::size_t ffn, Rng& rng);
  void collect(const std::string& prefix, ParameterList& list) const;
};

struct DecoderParams {
  Tensor token_embedding;  // [m x d_emb]
  std::vector<DecoderLayerParams> layers;
  Tensor vocab_proj;  // [d_emb x m]
  std::size_t heads = 1;

  static DecoderParams init(const ModelConfig& cfg, Rng& rng);
  ParameterList named_parameters() const;
  std::size_t vocab_size() const { return token_embedding.dim(0); }
};

/// (pos, 2k) = sin(pos / 10000^(2k/d)), (pos, 2k+1) = cos of the same angle.
Tensor sinusoidal_positions(std::size_t n, std::size_t d_emb);

/// 1 where key j is visible to query i (j <= i), 0 elsewhere.
Tensor causal_mask(std::size_t n);

/// Token rows plus sinusoidal positions.
Tensor embed_tokens(std::span<const int> ids, const DecoderParams& params);

/// LN(e + MHA_causal(e)).
Tensor masked_self_attention(const Tensor& e, const DecoderLayerParams& layer, std::size_t heads,
                             std::vector<double>* weights = nullptr);

/// LN(s + MHA(s, e_img)), queries from s and keys/values from the image embedding.
Tensor cross_attention(const Tensor& s, const Tensor& e_img, const DecoderLayerParams& layer, std::size_t heads,
                       std::vector<double>* weights = nullptr);

/// FFN(cross_attention(masked_self_attention(e), e_img)) + e.
Tensor decoder_layer(const Tensor& e, const Tensor& e_img, const DecoderLayerParams& layer, std::size_t heads,
                     std::vector<double>* cross_weights = nullptr);

/// All layers in order; `cross_weights` receives the last layer's
/// cross-attention weights, [heads][n][hw].
Tensor decoder_stack(const Tensor& e0, const Tensor& e_img, const DecoderParams& params,
                     std::vector<double>* cross_weights = nullptr);

/// softmax_rows(e * vocab_proj).
Tensor project_vocab(const Tensor& e, const DecoderParams& params);

/// Teacher-forcing split of a caption: the decoder reads ids[0 .. L-2] and
/// row i is scored against ids[i+1]. PAD targets are marked -1.
struct TeacherForcing {
  std::vector<int> inputs;
  std::vector<int> targets;
};
TeacherForcing teacher_forcing(const TokenSequence& t);

/// Mean -log p over positions whose target is not PAD. `t_hat` has one row
/// per decoder input position.
Tensor cross_entropy_loss(const Tensor& t_hat, const TokenSequence& t);

/// Probabilities for every position given an image embedding and input ids.
Tensor decode_probabilities(std::span<const int> ids, const Tensor& e_img, const DecoderParams& params,
                            std::vector<double>* cross_weights = nullptr);

struct GreedyResult {
  TokenSequence tokens;
  /// One hw-length vector per generated token: last-layer cross-attention
  /// weights of the newest position, averaged over heads.
  std::vector<std::vector<double>> attention;
};

/// START, then repeatedly append the argmax of the last position (lowest id on
/// ties) until END. A sequence that reaches max_len - 1 tokens is closed with
/// END so the result is always well formed.
GreedyResult greedy_decode(const Tensor& e_img, const DecoderParams& params, std::size_t max_len);

}  // namespace chg2cap
