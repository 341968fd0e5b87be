#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include "chg2cap/checkpoint.hpp"
#include "chg2cap/features.hpp"
#include "chg2cap/metrics.hpp"

namespace chg2cap {

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean teacher-forced loss over the epoch's samples
  double val_bleu4 = 0.0;
};

struct TrainResult {
  Checkpoint best;     // highest validation BLEU-4, earliest epoch on ties
  Checkpoint final;    // parameters after the last epoch
  std::vector<EpochLog> log;
};

using Records = std::vector<const DatasetRecord*>;

/// Adam with the step schedule; one sampled reference per record per epoch;
/// greedy validation BLEU-4 after every epoch. `vocab` sets the vocabulary
/// size. Throws ConfigError on an empty split and NumericError on a NaN loss.
TrainResult train(const Records& train_set, const Records& val_set, const Vocabulary& vocab, TrainConfig cfg,
                  std::ostream* progress = nullptr);

/// Selects the train and val splits of `records`.
TrainResult train(const std::vector<DatasetRecord>& records, const Vocabulary& vocab, const TrainConfig& cfg,
                  std::ostream* progress = nullptr);

/// Vocabulary over every caption of every record, all splits included.
Vocabulary build_vocab(const std::vector<DatasetRecord>& records, int min_freq);

/// Greedy captions for each record, in input order.
std::vector<Sentence> caption_records(const Model& model, const Vocabulary& vocab, const Records& records);

/// Greedy decoding scored against every reference of each record.
EvalReport evaluate(const Model& model, const Vocabulary& vocab, const Records& records, bool per_image = true);

/// Mean teacher-forced loss over every (record, caption) pair.
double mean_caption_loss(const Model& model, const Vocabulary& vocab, const Records& records);

struct CaptionResult {
  Sentence words;
  TokenSequence tokens;
  std::vector<std::vector<double>> attention;  // per generated token, hw weights
};
CaptionResult caption(const Model& model, const Vocabulary& vocab, const FeaturePair& features);

}  // namespace chg2cap
