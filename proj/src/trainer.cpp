#include "chg2cap/trainer.hpp"

#include <cmath>

#include "chg2cap/error.hpp"
#include "chg2cap/ops.hpp"
#include "chg2cap/optim.hpp"

namespace chg2cap {

namespace {

Checkpoint snapshot(const Model& model, const Vocabulary& vocab, const TrainConfig& cfg, std::size_t epoch,
                    double bleu4) {
  return Checkpoint{cfg, epoch, bleu4, vocab, clone_model(model)};
}

}  // namespace

std::vector<Sentence> caption_records(const Model& model, const Vocabulary& vocab, const Records& records) {
  std::vector<Sentence> out;
  out.reserve(records.size());
  for (const auto* r : records) out.push_back(caption(model, vocab, r->features).words);
  return out;
}

EvalReport evaluate(const Model& model, const Vocabulary& vocab, const Records& records, bool per_image) {
  if (records.empty()) throw ConfigError("evaluate: no records in the selected split");
  ReferenceSets refs;
  std::vector<std::string> ids;
  for (const auto* r : records) {
    refs.push_back(r->captions);
    ids.push_back(r->id);
  }
  return evaluate_corpus(caption_records(model, vocab, records), refs, per_image ? &ids : nullptr);
}

double mean_caption_loss(const Model& model, const Vocabulary& vocab, const Records& records) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto* r : records) {
    for (const auto& c : r->captions) {
      total += forward_teacher_forced(r->features, model, encode_caption(c, vocab, model.config.max_len)).loss.item();
      ++n;
    }
  }
  if (n == 0) throw DataError("mean_caption_loss: no captions");
  return total / static_cast<double>(n);
}

CaptionResult caption(const Model& model, const Vocabulary& vocab, const FeaturePair& features) {
  auto g = caption_features(features, model);
  CaptionResult out;
  out.words = decode_caption(g.tokens, vocab).words;
  out.tokens = std::move(g.tokens);
  out.attention = std::move(g.attention);
  return out;
}

TrainResult train(const Records& train_set, const Records& val_set, const Vocabulary& vocab, TrainConfig cfg,
                  std::ostream* progress) {
  if (train_set.empty()) throw ConfigError("train: the train split is empty");
  if (val_set.empty()) throw ConfigError("train: the validation split is empty");
  cfg.model.vocab_size = vocab.size();
  cfg.validate();
  cfg.model.validate(true);

  Model model = Model::init(cfg.model, cfg.seed);
  const auto params = model.named_parameters();
  Adam adam(params);
  // Separate stream from the weight initialization so changing one does not shift the other.
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  auto validate = [&] {
    ReferenceSets refs;
    for (const auto* r : val_set) refs.push_back(r->captions);
    return bleu(caption_records(model, vocab, val_set), refs, 4);
  };

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      adam.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const auto* rec = train_set[order[b]];
        if (rec->captions.empty()) throw DataError("record " + rec->id + " has no captions");
        const auto& ref = rec->captions[rng.below(rec->captions.size())];
        const auto tokens = encode_caption(ref, vocab, cfg.model.max_len);
        Tape tape;
        Tensor loss;
        {
          TapeScope scope(tape);
          loss = forward_teacher_forced(rec->features, model, tokens).loss;
          if (!std::isfinite(loss.item())) {
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on record " + rec->id);
          }
          loss_sum += loss.item();
          loss = ops::scale(loss, inv_batch);
        }
        backward(loss, tape);
      }
      adam.step(lr);
    }

    EpochLog entry{epoch, lr, loss_sum / static_cast<double>(order.size()), validate()};
    result.log.push_back(entry);
    if (progress) {
      *progress << "epoch " << epoch << " lr " << lr << " loss " << entry.train_loss << " val_bleu4 "
                << entry.val_bleu4 << "\n";
    }
    if (epoch == 0 || entry.val_bleu4 > result.best.best_bleu4) {
      result.best = snapshot(model, vocab, cfg, epoch, entry.val_bleu4);
    }
  }
  result.final = snapshot(model, vocab, cfg, cfg.epochs - 1, result.best.best_bleu4);
  return result;
}

TrainResult train(const std::vector<DatasetRecord>& records, const Vocabulary& vocab, const TrainConfig& cfg,
                  std::ostream* progress) {
  return train(select_split(records, Split::kTrain), select_split(records, Split::kVal), vocab, cfg, progress);
}

Vocabulary build_vocab(const std::vector<DatasetRecord>& records, int min_freq) {
  std::vector<Sentence> captions;
  for (const auto& r : records) captions.insert(captions.end(), r.captions.begin(), r.captions.end());
  return Vocabulary::build(captions, min_freq);
}

}  // namespace chg2cap
