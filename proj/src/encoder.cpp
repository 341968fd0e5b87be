#include "chg2cap/encoder.hpp"

#include "chg2cap/error.hpp"
#include "chg2cap/ops.hpp"

namespace chg2cap {

namespace o = ops;

AttentionUnitParams AttentionUnitParams::init(std::size_t c, std::size_t ffn, Rng& rng) {
  AttentionUnitParams p;
  p.qkv = trainable(glorot_uniform({c, 3 * c}, c, 3 * c, rng));
  p.out = trainable(glorot_uniform({c, c}, c, c, rng));
  p.ln_gain = trainable(Tensor({c}, 1.0));
  p.ln_bias = trainable(Tensor({c}, 0.0));
  p.ffn_w1 = trainable(glorot_uniform({c, ffn}, c, ffn, rng));
  p.ffn_b1 = trainable(Tensor({ffn}, 0.0));
  p.ffn_w2 = trainable(glorot_uniform({ffn, c}, ffn, c, rng));
  p.ffn_b2 = trainable(Tensor({c}, 0.0));
  return p;
}

void AttentionUnitParams::collect(const std::string& prefix, ParameterList& list) const {
  list.push_back({prefix + "qkv", qkv});
  list.push_back({prefix + "out", out});
  list.push_back({prefix + "ln.gain", ln_gain});
  list.push_back({prefix + "ln.bias", ln_bias});
  list.push_back({prefix + "ffn.w1", ffn_w1});
  list.push_back({prefix + "ffn.b1", ffn_b1});
  list.push_back({prefix + "ffn.w2", ffn_w2});
  list.push_back({prefix + "ffn.b2", ffn_b2});
}

ResBlockParams ResBlockParams::init(std::size_t c, Rng& rng) {
  ResBlockParams p;
  p.conv1 = trainable(glorot_uniform({1, 1, 2 * c, c}, 2 * c, c, rng));
  p.conv1_bias = trainable(Tensor({c}, 0.0));
  p.conv2 = trainable(glorot_uniform({3, 3, c, c}, 9 * c, 9 * c, rng));
  p.conv2_bias = trainable(Tensor({c}, 0.0));
  p.conv3 = trainable(glorot_uniform({1, 1, c, 2 * c}, c, 2 * c, rng));
  p.conv3_bias = trainable(Tensor({2 * c}, 0.0));
  p.ln_gain = trainable(Tensor({2 * c}, 1.0));
  p.ln_bias = trainable(Tensor({2 * c}, 0.0));
  return p;
}

void ResBlockParams::collect(const std::string& prefix, ParameterList& list) const {
  list.push_back({prefix + "conv1.weight", conv1});
  list.push_back({prefix + "conv1.bias", conv1_bias});
  list.push_back({prefix + "conv2.weight", conv2});
  list.push_back({prefix + "conv2.bias", conv2_bias});
  list.push_back({prefix + "conv3.weight", conv3});
  list.push_back({prefix + "conv3.bias", conv3_bias});
  list.push_back({prefix + "ln.gain", ln_gain});
  list.push_back({prefix + "ln.bias", ln_bias});
}

EncoderParams EncoderParams::init(const ModelConfig& cfg, Rng& rng) {
  const std::size_t c = cfg.channels;
  EncoderParams p;
  if (cfg.flags.pos_emb) p.f_pos = trainable(uniform_tensor({cfg.height, cfg.width, c}, -0.1, 0.1, rng));
  if (cfg.flags.dsa || cfg.flags.jsa) {
    for (std::size_t j = 0; j < cfg.encoder_depth; ++j) {
      HsaLayerParams layer;
      if (cfg.flags.dsa) layer.dsa = AttentionUnitParams::init(c, cfg.ffn_dim, rng);
      if (cfg.flags.jsa) layer.jsa = AttentionUnitParams::init(c, cfg.ffn_dim, rng);
      p.layers.push_back(std::move(layer));
    }
  }
  if (cfg.flags.res_block) p.res_block = ResBlockParams::init(c, rng);
  p.out_proj = trainable(glorot_uniform({2 * c, cfg.d_emb}, 2 * c, cfg.d_emb, rng));
  return p;
}

ParameterList EncoderParams::named_parameters() const {
  ParameterList list;
  if (f_pos.defined()) list.push_back({"encoder.f_pos", f_pos});
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const std::string prefix = "encoder.hsa." + std::to_string(j) + ".";
    if (layers[j].dsa) layers[j].dsa->collect(prefix + "dsa.", list);
    if (layers[j].jsa) layers[j].jsa->collect(prefix + "jsa.", list);
  }
  if (res_block) res_block->collect("encoder.res.", list);
  list.push_back({"encoder.out_proj", out_proj});
  return list;
}

std::pair<Tensor, Tensor> add_positional(const FeaturePair& features, const Tensor& f_pos) {
  features.validate();
  if (f_pos.shape() != features.f1.shape()) {
    throw DimensionError("add_positional: position embedding " + shape_str(f_pos.shape()) +
                         " does not match features " + shape_str(features.f1.shape()));
  }
  return {o::add(features.f1, f_pos), o::add(features.f2, f_pos)};
}

Tensor attention_unit(const Tensor& x, const AttentionUnitParams& p, std::size_t heads,
                      std::vector<double>* weights) {
  const std::size_t c = x.dim(1);
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("attention unit: width " + std::to_string(c) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const Tensor qkv = o::matmul(x, p.qkv);
  const Tensor q = o::slice_cols(qkv, 0, c);
  const Tensor k = o::slice_cols(qkv, c, 2 * c);
  const Tensor v = o::slice_cols(qkv, 2 * c, 3 * c);
  const Tensor attended = o::matmul(o::attention(q, k, v, heads, false, weights), p.out);
  const Tensor normed = o::layer_norm(o::add(x, attended), p.ln_gain, p.ln_bias);
  const Tensor hidden = o::relu(o::add_row(o::matmul(normed, p.ffn_w1), p.ffn_b1));
  return o::add_row(o::matmul(hidden, p.ffn_w2), p.ffn_b2);
}

Tensor dsa_unit(const Tensor& f, const AttentionUnitParams& p, std::size_t heads) {
  return o::add(attention_unit(f, p, heads), f);
}

std::pair<Tensor, Tensor> jsa_unit(const Tensor& f1, const Tensor& f2, const AttentionUnitParams& p,
                                   std::size_t heads) {
  if (f1.shape() != f2.shape()) {
    throw DimensionError("jsa_unit: stream shapes differ " + shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
  }
  const std::size_t n = f1.dim(0);
  const Tensor joint = attention_unit(o::concat_rows(f1, f2), p, heads);
  return {o::add(o::slice_rows(joint, 0, n), f1), o::add(o::slice_rows(joint, n, 2 * n), f2)};
}

std::pair<Tensor, Tensor> hsa_stack(const Tensor& f1, const Tensor& f2, const std::vector<HsaLayerParams>& layers,
                                    std::size_t heads) {
  Tensor a = f1, b = f2;
  for (const auto& layer : layers) {
    if (layer.dsa) {
      a = dsa_unit(a, *layer.dsa, heads);
      b = dsa_unit(b, *layer.dsa, heads);
    }
    if (layer.jsa) std::tie(a, b) = jsa_unit(a, b, *layer.jsa, heads);
  }
  return {a, b};
}

ImageEmbedding res_block(const Tensor& f1, const Tensor& f2, const EncoderParams& params, const ModelConfig& cfg) {
  const std::size_t hw = f1.dim(0), c = f1.dim(1);
  ImageEmbedding out;
  Tensor fused = o::concat_cols(f1, f2);
  if (cfg.flags.cos_mask) {
    out.mask = o::cosine_rows(f1, f2);
    fused = o::add_col(fused, out.mask);
  } else {
    out.mask = Tensor({hw, 1}, 0.0);
  }

  if (!params.res_block) {
    out.e_img = o::matmul(fused, params.out_proj);
    return out;
  }
  const auto& rb = *params.res_block;
  const Tensor grid = o::reshape(fused, {cfg.height, cfg.width, 2 * c});
  Tensor y = o::relu(o::add_row(o::conv2d(grid, rb.conv1, 0), rb.conv1_bias));
  y = o::relu(o::add_row(o::conv2d(y, rb.conv2, 1), rb.conv2_bias));
  y = o::add_row(o::conv2d(y, rb.conv3, 0), rb.conv3_bias);
  const Tensor pre = o::layer_norm(o::add(o::reshape(y, {hw, 2 * c}), fused), rb.ln_gain, rb.ln_bias);
  out.e_img = o::matmul(pre, params.out_proj);
  return out;
}

ImageEmbedding encode(const FeaturePair& features, const EncoderParams& params, const ModelConfig& cfg) {
  features.validate();
  if (features.height() != cfg.height || features.width() != cfg.width || features.channels() != cfg.channels) {
    throw DimensionError("encode: features " + shape_str(features.f1.shape()) + " do not match the model's [" +
                         std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + "x" +
                         std::to_string(cfg.channels) + "]");
  }
  const std::size_t hw = cfg.height * cfg.width, c = cfg.channels;
  Tensor f1 = features.f1, f2 = features.f2;
  if (params.f_pos.defined()) std::tie(f1, f2) = add_positional(features, params.f_pos);
  const auto [n1, n2] = hsa_stack(o::reshape(f1, {hw, c}), o::reshape(f2, {hw, c}), params.layers, cfg.heads);
  return res_block(n1, n2, params, cfg);
}

}  // namespace chg2cap
