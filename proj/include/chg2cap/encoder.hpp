#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chg2cap/config.hpp"
#include "chg2cap/features.hpp"
#include "chg2cap/parameters.hpp"

namespace chg2cap {

/// Weights of one self-attention unit (shared layout for DSA and JSA):
/// fused QKV projection [C x 3C], output projection [C x C], the norm that
/// follows the attention residual, and a two-layer feed-forward net.
struct AttentionUnitParams {
  Tensor qkv;
  Tensor out;
  Tensor ln_gain, ln_bias;
  Tensor ffn_w1, ffn_b1;  // [C x ffn], [ffn]
  Tensor ffn_w2, ffn_b2;  // [ffn x C], [C]

  static AttentionUnitParams init(std::size_t channels, std::size_t ffn_dim, Rng& rng);
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct HsaLayerParams {
  std::optional<AttentionUnitParams> dsa;  // shared by both temporal streams
  std::optional<AttentionUnitParams> jsa;
};

struct ResBlockParams {
  Tensor conv1, conv1_bias;  // 1x1, 2C -> C
  Tensor conv2, conv2_bias;  // 3x3, C -> C
  Tensor conv3, conv3_bias;  // 1x1, C -> 2C
  Tensor ln_gain, ln_bias;   // over 2C

  static ResBlockParams init(std::size_t channels, Rng& rng);
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct EncoderParams {
  Tensor f_pos;  // [h x w x C]; undefined when the positional embedding is ablated
  std::vector<HsaLayerParams> layers;
  std::optional<ResBlockParams> res_block;
  Tensor out_proj;  // [2C x d_emb]

  static EncoderParams init(const ModelConfig& cfg, Rng& rng);
  ParameterList named_parameters() const;
};

struct ImageEmbedding {
  Tensor e_img;  // [hw x d_emb]
  Tensor mask;   // [hw x 1] cosine mask (all zeros when ablated)
};

/// F_i + F_pos for both streams (same addend).
std::pair<Tensor, Tensor> add_positional(const FeaturePair& features, const Tensor& f_pos);

/// Self-attention followed by the feed-forward net:
/// FFN(LN(x + MHA(x))). The caller adds the unit-level residual.
Tensor attention_unit(const Tensor& x, const AttentionUnitParams& p, std::size_t heads,
                      std::vector<double>* weights = nullptr);

/// One stream through the dual self-attention unit, with residual:
/// F^j = unit(F^{j-1}) + F^{j-1}. Input is [hw x C].
Tensor dsa_unit(const Tensor& f, const AttentionUnitParams& p, std::size_t heads);

/// Joint self-attention over the 2hw-token sequence [f1; f2], split back per
/// stream with residuals.
std::pair<Tensor, Tensor> jsa_unit(const Tensor& f1, const Tensor& f2, const AttentionUnitParams& p,
                                   std::size_t heads);

/// N hierarchical blocks: DSA on each stream, then JSA. Ablated units are
/// skipped, so an empty stack is the identity.
std::pair<Tensor, Tensor> hsa_stack(const Tensor& f1, const Tensor& f2, const std::vector<HsaLayerParams>& layers,
                                    std::size_t heads);

/// Cosine mask, channel concatenation, conv residual block, layer norm and the
/// projection to d_emb. Inputs are [hw x C].
ImageEmbedding res_block(const Tensor& f1, const Tensor& f2, const EncoderParams& params, const ModelConfig& cfg);

/// add_positional -> hsa_stack -> res_block.
ImageEmbedding encode(const FeaturePair& features, const EncoderParams& params, const ModelConfig& cfg);

}  // namespace chg2cap
