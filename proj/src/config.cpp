#include "chg2cap/config.hpp"

#include <fstream>
#include <set>
#include <string>

#include "chg2cap/error.hpp"
#include "chg2cap/vocab.hpp"

namespace chg2cap {

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.height = 4;
  c.width = 4;
  c.channels = 16;
  c.c_t = 16;
  c.d_emb = 32;
  c.ffn_dim = 64;
  c.decoder_ffn_dim = 64;
  c.heads = 4;
  c.encoder_depth = 3;
  c.decoder_depth = 1;
  c.max_len = 12;
  return c;
}

void ModelConfig::validate(bool need_vocab) const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (height == 0 || width == 0 || height * width < 2) fail("need h*w >= 2");
  if (channels < 2) fail("need at least 2 channels");
  if (c_t != channels) fail("c_t (" + std::to_string(c_t) + ") must equal channels (" + std::to_string(channels) + ")");
  if (heads == 0) fail("heads must be positive");
  if (channels % heads != 0) {
    fail("channels " + std::to_string(channels) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (d_emb == 0 || d_emb % 2 != 0) fail("d_emb must be positive and even");
  if (d_emb % heads != 0) fail("d_emb " + std::to_string(d_emb) + " not divisible by " + std::to_string(heads) + " heads");
  if (ffn_dim == 0 || decoder_ffn_dim == 0) fail("feed-forward widths must be positive");
  if (decoder_depth == 0) fail("decoder depth must be >= 1");
  if (max_len < 2) fail("max_len must be >= 2");
  if (need_vocab && vocab_size <= static_cast<std::size_t>(kNumSpecialTokens)) fail("vocabulary has no corpus words");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(lr0 > 0.0)) fail("lr0 must be positive");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) fail("lr_decay must be in (0, 1]");
  if (decay_every == 0) fail("decay_every must be >= 1");
  if (epochs == 0) fail("epochs must be >= 1");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (min_freq < 1) fail("min_freq must be >= 1");
  model.validate(false);
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"h", c.height},
      {"w", c.width},
      {"channels", c.channels},
      {"c_t", c.c_t},
      {"d_emb", c.d_emb},
      {"ffn_dim", c.ffn_dim},
      {"decoder_ffn_dim", c.decoder_ffn_dim},
      {"heads", c.heads},
      {"encoder_depth", c.encoder_depth},
      {"decoder_depth", c.decoder_depth},
      {"max_len", c.max_len},
      {"vocab_size", c.vocab_size},
      {"ablation",
       {{"pos_emb", c.flags.pos_emb},
        {"dsa", c.flags.dsa},
        {"jsa", c.flags.jsa},
        {"cos_mask", c.flags.cos_mask},
        {"res_block", c.flags.res_block}}},
  };
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = to_json(c.model);
  j["lr0"] = c.lr0;
  j["lr_decay"] = c.lr_decay;
  j["decay_every"] = c.decay_every;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["min_freq"] = c.min_freq;
  j["seed"] = c.seed;
  return j;
}

namespace {

const std::set<std::string> kModelKeys{"h",       "w",          "channels",      "c_t",           "d_emb",
                                       "ffn_dim", "decoder_ffn_dim", "heads",   "encoder_depth", "decoder_depth",
                                       "max_len", "vocab_size", "ablation"};
const std::set<std::string> kTrainKeys{"lr0", "lr_decay", "decay_every", "epochs", "batch_size", "min_freq", "seed"};

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

ModelConfig model_from(const nlohmann::json& j) {
  ModelConfig c;
  read(j, "h", c.height);
  read(j, "w", c.width);
  read(j, "channels", c.channels);
  c.c_t = c.channels;
  read(j, "c_t", c.c_t);
  read(j, "d_emb", c.d_emb);
  read(j, "ffn_dim", c.ffn_dim);
  c.decoder_ffn_dim = c.ffn_dim;
  read(j, "decoder_ffn_dim", c.decoder_ffn_dim);
  read(j, "heads", c.heads);
  read(j, "encoder_depth", c.encoder_depth);
  read(j, "decoder_depth", c.decoder_depth);
  read(j, "max_len", c.max_len);
  read(j, "vocab_size", c.vocab_size);
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    if (!a.is_object()) throw ConfigError("config key 'ablation' must be an object");
    for (const auto& [k, v] : a.items()) {
      if (k != "pos_emb" && k != "dsa" && k != "jsa" && k != "cos_mask" && k != "res_block") {
        throw ConfigError("unknown ablation flag '" + k + "'");
      }
    }
    read(a, "pos_emb", c.flags.pos_emb);
    read(a, "dsa", c.flags.dsa);
    read(a, "jsa", c.flags.jsa);
    read(a, "cos_mask", c.flags.cos_mask);
    read(a, "res_block", c.flags.res_block);
  }
  return c;
}

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!kModelKeys.contains(k)) throw ConfigError("unknown model config key '" + k + "'");
  }
  return model_from(j);
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!kModelKeys.contains(k) && !kTrainKeys.contains(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  TrainConfig c;
  c.model = model_from(j);
  read(j, "lr0", c.lr0);
  read(j, "lr_decay", c.lr_decay);
  read(j, "decay_every", c.decay_every);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "min_freq", c.min_freq);
  read(j, "seed", c.seed);
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto cfg = train_config_from_json(j);
  cfg.validate();
  return cfg;
}

}  // namespace chg2cap
