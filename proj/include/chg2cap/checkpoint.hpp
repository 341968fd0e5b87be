#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "chg2cap/config.hpp"
#include "chg2cap/model.hpp"
#include "chg2cap/vocab.hpp"

namespace chg2cap {

// Binary layout, little-endian: "CGCK", u32 version, u32 length + JSON blob
// (training config, epoch, best validation BLEU-4, vocabulary words), then
// {u16 name length, name, u8 rank, u32 dims..., f64 payload} per tensor until
// the end of the file.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;  // config.model.vocab_size matches the vocabulary
  std::size_t epoch = 0;
  double best_bleu4 = 0.0;
  Vocabulary vocab;
  Model model;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies values tensor by tensor, matching on names. Missing names, extra
/// names and shape differences throw ConfigError.
void assign_parameters(Model& model, const ParameterList& source);

/// Deep copy with storage independent of `model`.
Model clone_model(const Model& model);

}  // namespace chg2cap
