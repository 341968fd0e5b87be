#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "json.hpp"

namespace chg2cap {

/// Encoder ablation switches (positional embedding, DSA, JSA, cosine mask,
/// residual block).
struct AblationFlags {
  bool pos_emb = true;
  bool dsa = true;
  bool jsa = true;
  bool cos_mask = true;
  bool res_block = true;

  bool operator==(const AblationFlags&) const = default;
};

/// Model shapes. Defaults are the full-scale setting (8x8x2048 backbone
/// features, 8 heads, linear width 512, encoder depth 3, decoder depth 1).
struct ModelConfig {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 2048;
  std::size_t c_t = 2048;  // attention projection width, must equal channels
  std::size_t d_emb = 2048;
  std::size_t ffn_dim = 512;
  std::size_t decoder_ffn_dim = 512;
  std::size_t heads = 8;
  std::size_t encoder_depth = 3;
  std::size_t decoder_depth = 1;
  std::size_t max_len = 41;
  std::size_t vocab_size = 0;  // filled in from the vocabulary
  AblationFlags flags;

  /// h=w=4, C=16, d_emb=32, 4 heads, linear width 64, depths 3/1.
  static ModelConfig toy();

  /// Throws ConfigError on inconsistent shapes. `need_vocab` also requires
  /// vocab_size > kNumSpecialTokens.
  void validate(bool need_vocab = true) const;

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  double lr0 = 1e-4;
  double lr_decay = 0.5;
  std::size_t decay_every = 5;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  int min_freq = 5;
  std::uint64_t seed = 0;
  ModelConfig model;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

}  // namespace chg2cap
