#include "chg2cap/model.hpp"

#include "chg2cap/random.hpp"

namespace chg2cap {

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate(true);
  Rng rng(seed);
  Model m;
  m.config = cfg;
  m.encoder = EncoderParams::init(cfg, rng);
  m.decoder = DecoderParams::init(cfg, rng);
  return m;
}

ParameterList Model::named_parameters() const {
  ParameterList list = encoder.named_parameters();
  for (auto& p : decoder.named_parameters()) list.push_back(std::move(p));
  return list;
}

ForwardResult forward_teacher_forced(const FeaturePair& features, const Model& model, const TokenSequence& t) {
  const auto tf = teacher_forcing(t);
  const auto image = encode(features, model.encoder, model.config);
  ForwardResult r;
  r.probs = decode_probabilities(tf.inputs, image.e_img, model.decoder);
  r.loss = cross_entropy_loss(r.probs, t);
  return r;
}

GreedyResult caption_features(const FeaturePair& features, const Model& model) {
  const auto image = encode(features, model.encoder, model.config);
  return greedy_decode(image.e_img, model.decoder, model.config.max_len);
}

}  // namespace chg2cap
