#pragma once

#include <cstdint>

#include "chg2cap/config.hpp"
#include "chg2cap/decoder.hpp"
#include "chg2cap/encoder.hpp"
#include "chg2cap/features.hpp"

namespace chg2cap {

/// Encoder and decoder parameters for one configuration.
struct Model {
  ModelConfig config;
  EncoderParams encoder;
  DecoderParams decoder;

  /// Validates `cfg` (vocab_size must be set) and draws every weight from one
  /// generator seeded with `seed`, encoder first.
  static Model init(const ModelConfig& cfg, std::uint64_t seed);
  ParameterList named_parameters() const;
};

struct ForwardResult {
  Tensor probs;  // [L-1 x m]
  Tensor loss;   // scalar
};

/// encode -> decoder stack -> project_vocab -> cross_entropy_loss. Records on
/// the active tape, if any.
ForwardResult forward_teacher_forced(const FeaturePair& features, const Model& model, const TokenSequence& t);

/// Greedy caption for one feature pair.
GreedyResult caption_features(const FeaturePair& features, const Model& model);

}  // namespace chg2cap
