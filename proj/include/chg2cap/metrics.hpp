#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "chg2cap/vocab.hpp"
#include "json.hpp"

namespace chg2cap {

/// One reference set per image.
using ReferenceSets = std::vector<std::vector<Sentence>>;

inline constexpr double kRougeBeta = 1.2;
inline constexpr double kCiderSigma = 6.0;

/// Corpus BLEU from pooled clipped n-gram counts over orders 1..max_order,
/// brevity penalty against the closest reference length per image (shorter
/// reference on ties). No smoothing: an order with no matches scores 0.
double bleu(const std::vector<Sentence>& candidates, const ReferenceSets& references, int max_order);

/// Mean over images of the best LCS F-measure against any reference.
double rouge_l(const std::vector<Sentence>& candidates, const ReferenceSets& references);

struct CiderResult {
  double corpus = 0.0;
  std::vector<double> per_image;
  bool degenerate_idf = false;  // fewer than two images: every idf is 0
};
/// CIDEr-D with document frequencies over the reference sets, per-reference
/// clipping, Gaussian length penalty and the factor 10.
CiderResult cider_d_scores(const std::vector<Sentence>& candidates, const ReferenceSets& references);
double cider_d(const std::vector<Sentence>& candidates, const ReferenceSets& references);

/// Exact-match METEOR: leftmost unigram alignment, F_mean = 10PR/(R+9P),
/// fragmentation penalty 0.5 (chunks/matches)^3, best reference per image.
double meteor_x(const std::vector<Sentence>& candidates, const ReferenceSets& references);

// Per-sentence building blocks, exposed for reports and tests.
double rouge_l_sentence(const Sentence& candidate, const std::vector<Sentence>& references);
double meteor_x_sentence(const Sentence& candidate, const std::vector<Sentence>& references);

struct ImageScore {
  std::string id;
  Sentence candidate;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  double meteor_x = 0.0;
};

struct EvalReport {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider_d = 0.0;
  double meteor_x = 0.0;
  std::optional<std::vector<ImageScore>> per_image;

  bool operator==(const EvalReport& other) const;
};

/// Every metric at once. `ids`, when given, fills the per-image breakdown.
EvalReport evaluate_corpus(const std::vector<Sentence>& candidates, const ReferenceSets& references,
                           const std::vector<std::string>* ids = nullptr);

nlohmann::json to_json(const EvalReport& report);

}  // namespace chg2cap
