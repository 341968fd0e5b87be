#include <chrono>
#include <cmath>
#include <vector>

#include "chg2cap/decoder.hpp"
#include "chg2cap/error.hpp"
#include "chg2cap/gradcheck.hpp"
#include "chg2cap/model.hpp"
#include "chg2cap/ops.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace chg2cap;
namespace o = chg2cap::ops;
using oracle::random_tensor;

namespace {

ModelConfig small_config(std::size_t vocab = 12) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.d_emb = 8;
  cfg.heads = 2;
  cfg.decoder_ffn_dim = 6;
  cfg.vocab_size = vocab;
  return cfg;
}

void randomize_norms(DecoderLayerParams& l, Rng& rng) {
  for (Tensor t : {l.ln1_bias, l.ln2_bias, l.ffn_b1, l.ffn_b2})
    for (auto& v : t.data()) v = rng.uniform(-0.5, 0.5);
  for (Tensor t : {l.ln1_gain, l.ln2_gain})
    for (auto& v : t.data()) v = rng.uniform(0.5, 1.5);
}

oracle::Mat mha_oracle(const oracle::Mat& queries, const oracle::Mat& keys, const AttentionProjections& p,
                       std::size_t heads, bool causal) {
  using namespace oracle;
  return matmul(attention(matmul(queries, to_mat(p.wq)), matmul(keys, to_mat(p.wk)), matmul(keys, to_mat(p.wv)), heads,
                          causal),
                to_mat(p.wo));
}

oracle::Mat layer_oracle(const oracle::Mat& e, const oracle::Mat& img, const DecoderLayerParams& l, std::size_t heads) {
  using namespace oracle;
  const Mat s = layer_norm(add(e, mha_oracle(e, e, l.self_attn, heads, true)), vec(l.ln1_gain), vec(l.ln1_bias));
  const Mat c = layer_norm(add(s, mha_oracle(s, img, l.cross_attn, heads, false)), vec(l.ln2_gain), vec(l.ln2_bias));
  const Mat h = relu(add_bias(matmul(c, to_mat(l.ffn_w1)), vec(l.ffn_b1)));
  return add(add_bias(matmul(h, to_mat(l.ffn_w2)), vec(l.ffn_b2)), e);
}

TokenSequence seq(std::vector<int> ids, std::size_t valid) { return {std::move(ids), valid}; }

}  // namespace

TEST_CASE("sinusoidal_positions") {
  const auto p = sinusoidal_positions(6, 8);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(p.at(0, 2 * k) == 0.0);
    CHECK(p.at(0, 2 * k + 1) == 1.0);
  }
  for (double v : p.values()) CHECK(std::abs(v) <= 1.0);
  CHECK(std::abs(p.at(1, 0) - 0.8414709848078965) <= 1e-15);
  CHECK(std::abs(p.at(1, 1) - 0.5403023058681398) <= 1e-15);
  CHECK(std::abs(p.at(3, 2) - std::sin(3.0 / std::pow(10000.0, 2.0 / 8.0))) <= 1e-15);
  CHECK_THROWS_AS(sinusoidal_positions(3, 7), ConfigError);
}

TEST_CASE("causal_mask") {
  CHECK(causal_mask(3).values() == std::vector<double>{1, 0, 0, 1, 1, 0, 1, 1, 1});
  CHECK(causal_mask(1).values() == std::vector<double>{1});
}

TEST_CASE("embed_tokens") {
  const auto cfg = small_config();
  Rng rng(1);
  auto params = DecoderParams::init(cfg, rng);
  const std::vector<int> ids{1, 5, 5, 2};
  const auto e = embed_tokens(ids, params);
  const auto pos = sinusoidal_positions(4, 8);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(e.at(i, j) == params.token_embedding.at(static_cast<std::size_t>(ids[i]), j) + pos.at(i, j));
  // Same token at two positions differs exactly by the position rows.
  for (std::size_t j = 0; j < 8; ++j) CHECK(e.at(2, j) - e.at(1, j) == doctest::Approx(pos.at(2, j) - pos.at(1, j)).epsilon(1e-14));

  for (auto& v : params.token_embedding.data()) v = 0.0;
  CHECK(embed_tokens(ids, params).values() == pos.values());
  const std::vector<int> bad{1, 12};
  CHECK_THROWS_AS(embed_tokens(bad, params), DataError);
}

TEST_CASE("masked_self_attention") {
  Rng rng(2);
  SUBCASE("single token attends to itself only") {
    auto l = DecoderLayerParams::init(4, 4, rng);
    const auto e = random_tensor({1, 4}, rng);
    const auto v = oracle::matmul(oracle::matmul(oracle::to_mat(e), oracle::to_mat(l.self_attn.wv)),
                                  oracle::to_mat(l.self_attn.wo));
    const auto want = oracle::layer_norm(oracle::add(oracle::to_mat(e), v), oracle::vec(l.ln1_gain), oracle::vec(l.ln1_bias));
    CHECK(oracle::max_abs_diff(oracle::to_mat(masked_self_attention(e, l, 2)), want) <= 1e-12);
  }
  SUBCASE("two tokens, one head, against the loop oracle") {
    auto l = DecoderLayerParams::init(2, 4, rng);
    randomize_norms(l, rng);
    const auto e = random_tensor({2, 2}, rng);
    const auto want = oracle::layer_norm(
        oracle::add(oracle::to_mat(e), mha_oracle(oracle::to_mat(e), oracle::to_mat(e), l.self_attn, 1, true)),
        oracle::vec(l.ln1_gain), oracle::vec(l.ln1_bias));
    CHECK(oracle::max_abs_diff(oracle::to_mat(masked_self_attention(e, l, 1)), want) <= 1e-12);
  }
  SUBCASE("softmax support of row i is exactly 0..i") {
    auto l = DecoderLayerParams::init(4, 4, rng);
    std::vector<double> w;
    masked_self_attention(random_tensor({5, 4}, rng), l, 2, &w);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
          const double p = w[(h * 5 + i) * 5 + j];
          if (j <= i) CHECK(p > 0.0);
          else CHECK(p == 0.0);
        }
  }
}

TEST_CASE("cross_attention") {
  Rng rng(3);
  SUBCASE("constant image rows make the weights irrelevant") {
    auto l = DecoderLayerParams::init(4, 4, rng);
    Tensor img({3, 4});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) img.at(i, j) = 0.1 * static_cast<double>(j + 1);
    const auto s = random_tensor({2, 4}, rng);
    const auto out1 = cross_attention(s, img, l, 2);
    for (auto& v : l.cross_attn.wk.data()) v = rng.uniform(-3, 3);
    const auto out2 = cross_attention(s, img, l, 2);
    CHECK(oracle::max_abs_diff(oracle::to_mat(out1), oracle::to_mat(out2)) <= 1e-12);
  }
  SUBCASE("zero weights leave the normed residual") {
    auto l = DecoderLayerParams::init(4, 4, rng);
    for (Tensor t : {l.cross_attn.wq, l.cross_attn.wk, l.cross_attn.wv, l.cross_attn.wo})
      for (auto& v : t.data()) v = 0.0;
    const auto s = random_tensor({2, 4}, rng);
    CHECK(cross_attention(s, random_tensor({3, 4}, rng), l, 2).values() ==
          o::layer_norm(s, l.ln2_gain, l.ln2_bias).values());
  }
  SUBCASE("two queries, three image tokens, against the loop oracle") {
    auto l = DecoderLayerParams::init(2, 4, rng);
    randomize_norms(l, rng);
    const auto s = random_tensor({2, 2}, rng), img = random_tensor({3, 2}, rng);
    const auto want = oracle::layer_norm(
        oracle::add(oracle::to_mat(s), mha_oracle(oracle::to_mat(s), oracle::to_mat(img), l.cross_attn, 1, false)),
        oracle::vec(l.ln2_gain), oracle::vec(l.ln2_bias));
    CHECK(oracle::max_abs_diff(oracle::to_mat(cross_attention(s, img, l, 1)), want) <= 1e-12);
  }
  SUBCASE("width mismatch") {
    auto l = DecoderLayerParams::init(4, 4, rng);
    CHECK_THROWS_AS(cross_attention(random_tensor({2, 4}, rng), random_tensor({3, 6}, rng), l, 2), DimensionError);
  }
}

TEST_CASE("decoder_layer") {
  Rng rng(4);
  auto l = DecoderLayerParams::init(8, 6, rng);
  randomize_norms(l, rng);
  const auto e = random_tensor({4, 8}, rng), img = random_tensor({5, 8}, rng);
  const auto want = layer_oracle(oracle::to_mat(e), oracle::to_mat(img), l, 2);
  CHECK(oracle::max_abs_diff(oracle::to_mat(decoder_layer(e, img, l, 2)), want) <= 1e-12);

  SUBCASE("zero sub-layer weights give the identity") {
    for (Tensor t : {l.self_attn.wq, l.self_attn.wk, l.self_attn.wv, l.self_attn.wo, l.cross_attn.wq, l.cross_attn.wk,
                     l.cross_attn.wv, l.cross_attn.wo, l.ffn_w1, l.ffn_b1, l.ffn_w2, l.ffn_b2})
      for (auto& v : t.data()) v = 0.0;
    CHECK(decoder_layer(e, img, l, 2).values() == e.values());
  }
  SUBCASE("gradient reaches the input through the residual with a zero FFN") {
    for (Tensor t : {l.ffn_w2, l.ffn_b2})
      for (auto& v : t.data()) v = 0.0;
    Tensor x = e.clone();
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = o::sum(decoder_layer(x, img, l, 2));
    }
    backward(loss, tape);
    for (double g : x.grad()) CHECK(g == 1.0);
  }
}

TEST_CASE("project_vocab") {
  const auto cfg = small_config(7);
  Rng rng(5);
  auto params = DecoderParams::init(cfg, rng);
  const auto e = random_tensor({3, 8}, rng);
  const auto p = project_vocab(e, params);
  const auto logits = oracle::matmul(oracle::to_mat(e), oracle::to_mat(params.vocab_proj));
  for (std::size_t i = 0; i < 3; ++i) {
    const auto want = oracle::softmax(logits[i]);
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(std::abs(p.at(i, j) - want[j]) <= 1e-12);
      total += p.at(i, j);
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
  for (auto& v : params.vocab_proj.data()) v = 0.0;
  const auto uniform = project_vocab(e, params);
  for (double v : uniform.values()) CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  for (std::size_t i = 0; i < 8; ++i) params.vocab_proj.at(i, 3) = 100.0;
  const auto sat = project_vocab(Tensor({1, 8}, 1.0), params);
  CHECK(sat.at(0, 3) > 1.0 - 1e-12);
}

TEST_CASE("cross_entropy_loss") {
  const auto t = seq({1, 5, 6, 2, 0, 0}, 4);
  const auto tf = teacher_forcing(t);
  CHECK(tf.inputs == std::vector<int>{1, 5, 6});
  CHECK(tf.targets == std::vector<int>{5, 6, 2});

  Tensor onehot({3, 8});
  onehot.at(0, 5) = onehot.at(1, 6) = onehot.at(2, 2) = 1.0;
  CHECK(cross_entropy_loss(onehot, t).item() == 0.0);
  CHECK(std::abs(cross_entropy_loss(Tensor({3, 8}, 1.0 / 8.0), t).item() - std::log(8.0)) <= 1e-12);

  Rng rng(6);
  auto probs = o::softmax_rows(random_tensor({3, 8}, rng, -2, 2));
  const double want = -(std::log(probs.at(0, 5)) + std::log(probs.at(1, 6)) + std::log(probs.at(2, 2))) / 3.0;
  CHECK(std::abs(cross_entropy_loss(probs, t).item() - want) <= 1e-12);

  // PAD inside the valid region is excluded.
  const auto with_pad = seq({1, 5, 0, 2}, 4);
  const double want_pad = -(std::log(probs.at(0, 5)) + std::log(probs.at(2, 2))) / 2.0;
  CHECK(std::abs(cross_entropy_loss(probs, with_pad).item() - want_pad) <= 1e-12);

  CHECK_THROWS_AS(cross_entropy_loss(Tensor({1, 8}, 0.125), seq({1, 0}, 2)), DataError);
  CHECK_THROWS_AS(teacher_forcing(seq({1, 0, 0}, 1)), DataError);
}

TEST_CASE("causality of the decoder") {
  const auto cfg = small_config();
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto params = DecoderParams::init(cfg, rng);
    const auto img = random_tensor({16, 8}, rng);
    std::vector<int> ids(6);
    for (auto& id : ids) id = static_cast<int>(rng.below(12));
    const auto k = rng.below(6);
    auto changed = ids;
    changed[k] = static_cast<int>((static_cast<std::size_t>(ids[k]) + 1 + rng.below(11)) % 12);
    const auto a = decode_probabilities(ids, img, params), b = decode_probabilities(changed, img, params);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < 12; ++j) CHECK(std::abs(a.at(i, j) - b.at(i, j)) <= 1e-12);
  }
}

TEST_CASE("greedy_decode") {
  auto cfg = small_config();
  Rng rng(8);
  auto params = DecoderParams::init(cfg, rng);
  const auto img = random_tensor({16, 8}, rng);

  SUBCASE("END as the first argmax") {
    // Zero FFN weights with a large bias make every output row positive, and
    // only the END column of the projection is nonzero.
    for (auto& v : params.layers[0].ffn_w2.data()) v = 0.0;
    for (auto& v : params.layers[0].ffn_b2.data()) v = 100.0;
    params.vocab_proj = Tensor({8, 12}, 0.0);
    for (std::size_t i = 0; i < 8; ++i) params.vocab_proj.at(i, kEndId) = 1.0;
    const auto r = greedy_decode(img, params, 10);
    CHECK(r.tokens.valid_len == 2);
    CHECK(r.tokens.ids == std::vector<int>{kStartId, kEndId, 0, 0, 0, 0, 0, 0, 0, 0});
  }
  SUBCASE("uniform scores pick the lowest id and close with END") {
    params.vocab_proj = Tensor({8, 12}, 0.0);
    const auto r = greedy_decode(img, params, 5);
    CHECK(r.tokens.ids == std::vector<int>{kStartId, kPadId, kPadId, kPadId, kEndId});
    CHECK(r.tokens.valid_len == 5);
  }
  SUBCASE("deterministic and well formed") {
    const auto a = greedy_decode(img, params, cfg.max_len);
    const auto b = greedy_decode(img, params, cfg.max_len);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens.ids.size() == cfg.max_len);
    CHECK(a.tokens.ids[0] == kStartId);
    CHECK(a.tokens.ids[a.tokens.valid_len - 1] == kEndId);
    for (std::size_t i = a.tokens.valid_len; i < cfg.max_len; ++i) CHECK(a.tokens.ids[i] == kPadId);
    CHECK(a.attention.size() >= 1);
    for (const auto& row : a.attention) {
      CHECK(row.size() == 16);
      double total = 0.0;
      for (double v : row) total += v;
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
  SUBCASE("PAD embedding never influences decoding") {
    const auto a = greedy_decode(img, params, cfg.max_len);
    for (std::size_t j = 0; j < 8; ++j) params.token_embedding.at(kPadId, j) += rng.uniform(-5, 5);
    CHECK(greedy_decode(img, params, cfg.max_len).tokens == a.tokens);
  }
}

TEST_CASE("forward_teacher_forced") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.vocab_size = 30;
  auto model = Model::init(cfg, 11);
  Rng rng(12);
  const FeaturePair fp{random_tensor({4, 4, 16}, rng), random_tensor({4, 4, 16}, rng)};
  const auto t = seq({1, 7, 8, 9, 2, 0, 0, 0, 0, 0, 0, 0}, 5);

  const auto r = forward_teacher_forced(fp, model, t);
  CHECK(std::isfinite(r.loss.item()));
  CHECK(r.probs.shape() == Shape{4, 30});

  auto zeroed = model;
  zeroed.decoder.vocab_proj = Tensor({32, 30}, 0.0);
  CHECK(std::abs(forward_teacher_forced(fp, zeroed, t).loss.item() - std::log(30.0)) <= 1e-12);

  SUBCASE("backward reaches every parameter") {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = forward_teacher_forced(fp, model, t).loss;
    }
    backward(loss, tape);
    for (const auto& p : model.named_parameters()) {
      INFO(p.name);
      CHECK(p.tensor.has_grad());
    }
  }
}

TEST_CASE("gradient check of the full model") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.vocab_size = 30;
  const auto model = Model::init(cfg, 13);
  Rng rng(14);
  const FeaturePair fp{random_tensor({4, 4, 16}, rng), random_tensor({4, 4, 16}, rng)};
  const auto t = seq({1, 7, 8, 9, 2, 0, 0, 0, 0, 0, 0, 0}, 5);
  std::vector<Tensor> inputs;
  for (const auto& p : model.named_parameters()) inputs.push_back(p.tensor);
  GradCheckOptions opts;
  opts.max_entries_per_tensor = 8;
  opts.seed = 3;
  const auto result = grad_check([&] { return forward_teacher_forced(fp, model, t).loss; }, inputs, opts);
  INFO(result.worst);
  CHECK(result.max_rel_error <= 1e-4);
}
