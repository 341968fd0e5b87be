#include "chg2cap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>

#include "chg2cap/error.hpp"

namespace chg2cap {

namespace {

using NGram = std::vector<std::string>;
using Counts = std::map<NGram, int>;

Counts ngram_counts(const Sentence& s, std::size_t n) {
  Counts c;
  if (s.size() < n) return c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[NGram(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                              s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

void check_corpus(const std::vector<Sentence>& candidates, const ReferenceSets& references, const char* metric) {
  if (candidates.empty()) throw DataError(std::string(metric) + ": empty candidate set");
  if (candidates.size() != references.size()) {
    throw DataError(std::string(metric) + ": " + std::to_string(candidates.size()) + " candidates for " +
                    std::to_string(references.size()) + " reference sets");
  }
  for (const auto& refs : references) {
    if (refs.empty()) throw DataError(std::string(metric) + ": an image has no references");
  }
}

std::size_t lcs(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu(const std::vector<Sentence>& candidates, const ReferenceSets& references, int max_order) {
  check_corpus(candidates, references, "bleu");
  if (max_order < 1 || max_order > 4) throw ConfigError("bleu: order must be 1..4");
  const auto orders = static_cast<std::size_t>(max_order);
  std::vector<double> matched(orders, 0.0), total(orders, 0.0);
  double c_len = 0.0, r_len = 0.0;

  for (std::size_t img = 0; img < candidates.size(); ++img) {
    const auto& cand = candidates[img];
    const auto& refs = references[img];
    c_len += static_cast<double>(cand.size());
    std::size_t best = refs[0].size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) {
        return std::abs(static_cast<long>(len) - static_cast<long>(cand.size()));
      };
      if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
    }
    r_len += static_cast<double>(best);

    for (std::size_t n = 1; n <= orders; ++n) {
      const auto cc = ngram_counts(cand, n);
      Counts max_ref;
      for (const auto& r : refs)
        for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : cc) {
        total[n - 1] += k;
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(k, it->second);
      }
    }
  }

  double log_sum = 0.0;
  for (std::size_t n = 0; n < orders; ++n) {
    if (matched[n] == 0.0) return 0.0;
    log_sum += std::log(matched[n] / total[n]);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - r_len / c_len));
  return bp * std::exp(log_sum / static_cast<double>(orders));
}

double rouge_l_sentence(const Sentence& candidate, const std::vector<Sentence>& references) {
  double best = 0.0;
  if (candidate.empty()) return 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    const double l = static_cast<double>(lcs(candidate, ref));
    if (l == 0.0) continue;
    const double r = l / static_cast<double>(ref.size());
    const double p = l / static_cast<double>(candidate.size());
    const double b2 = kRougeBeta * kRougeBeta;
    best = std::max(best, (1.0 + b2) * r * p / (r + b2 * p));
  }
  return best;
}

double rouge_l(const std::vector<Sentence>& candidates, const ReferenceSets& references) {
  check_corpus(candidates, references, "rouge_l");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_l_sentence(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

namespace {

struct TfIdf {
  std::array<std::map<NGram, double>, 4> vec;
  std::array<double, 4> norm{};
  std::size_t length = 0;
};

TfIdf tfidf(const Sentence& s, const std::map<NGram, double>& df, double log_docs) {
  TfIdf out;
  out.length = s.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& [g, tf] : ngram_counts(s, n)) {
      const auto it = df.find(g);
      const double d = it == df.end() ? 0.0 : it->second;
      const double v = static_cast<double>(tf) * (log_docs - std::log(std::max(1.0, d)));
      out.vec[n - 1][g] = v;
      out.norm[n - 1] += v * v;
    }
    out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
  }
  return out;
}

double cider_sim(const TfIdf& hyp, const TfIdf& ref, std::size_t n) {
  double val = 0.0;
  for (const auto& [g, v] : hyp.vec[n]) {
    const auto it = ref.vec[n].find(g);
    if (it != ref.vec[n].end()) val += std::min(v, it->second) * it->second;
  }
  if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
  const double delta = static_cast<double>(hyp.length) - static_cast<double>(ref.length);
  return val * std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
}

}  // namespace

CiderResult cider_d_scores(const std::vector<Sentence>& candidates, const ReferenceSets& references) {
  check_corpus(candidates, references, "cider_d");
  CiderResult result;
  result.degenerate_idf = candidates.size() < 2;
  if (result.degenerate_idf) std::cerr << "warning: cider_d on a single-image corpus; every idf weight is 0\n";

  std::map<NGram, double> df;
  for (const auto& refs : references) {
    std::set<NGram> seen;
    for (const auto& r : refs)
      for (std::size_t n = 1; n <= 4; ++n)
        for (const auto& [g, k] : ngram_counts(r, n)) seen.insert(g);
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_docs = std::log(static_cast<double>(candidates.size()));

  double total = 0.0;
  for (std::size_t img = 0; img < candidates.size(); ++img) {
    const auto hyp = tfidf(candidates[img], df, log_docs);
    double score = 0.0;
    for (const auto& r : references[img]) {
      const auto ref = tfidf(r, df, log_docs);
      for (std::size_t n = 0; n < 4; ++n) score += cider_sim(hyp, ref, n);
    }
    score = score / static_cast<double>(references[img].size()) / 4.0 * 10.0;
    result.per_image.push_back(score);
    total += score;
  }
  result.corpus = total / static_cast<double>(candidates.size());
  return result;
}

double cider_d(const std::vector<Sentence>& candidates, const ReferenceSets& references) {
  return cider_d_scores(candidates, references).corpus;
}

double meteor_x_sentence(const Sentence& candidate, const std::vector<Sentence>& references) {
  double best = 0.0;
  for (const auto& ref : references) {
    std::vector<bool> used(ref.size(), false);
    // (candidate position, reference position) per match, in candidate order.
    std::vector<std::pair<std::size_t, std::size_t>> align;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && ref[j] == candidate[i]) {
          used[j] = true;
          align.emplace_back(i, j);
          break;
        }
      }
    }
    if (align.empty()) continue;
    const double m = static_cast<double>(align.size());
    std::size_t chunks = 1;
    for (std::size_t k = 1; k < align.size(); ++k) {
      if (align[k].first != align[k - 1].first + 1 || align[k].second != align[k - 1].second + 1) ++chunks;
    }
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(ref.size());
    const double f = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / m;
    best = std::max(best, f * (1.0 - 0.5 * frag * frag * frag));
  }
  return best;
}

double meteor_x(const std::vector<Sentence>& candidates, const ReferenceSets& references) {
  check_corpus(candidates, references, "meteor_x");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += meteor_x_sentence(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

bool EvalReport::operator==(const EvalReport& other) const {
  return bleu == other.bleu && rouge_l == other.rouge_l && cider_d == other.cider_d && meteor_x == other.meteor_x;
}

EvalReport evaluate_corpus(const std::vector<Sentence>& candidates, const ReferenceSets& references,
                           const std::vector<std::string>* ids) {
  EvalReport report;
  for (int n = 1; n <= 4; ++n) report.bleu[static_cast<std::size_t>(n - 1)] = bleu(candidates, references, n);
  report.rouge_l = rouge_l(candidates, references);
  const auto cider = cider_d_scores(candidates, references);
  report.cider_d = cider.corpus;
  report.meteor_x = meteor_x(candidates, references);
  if (ids) {
    if (ids->size() != candidates.size()) throw DataError("evaluate_corpus: id count does not match candidates");
    std::vector<ImageScore> rows;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      rows.push_back({(*ids)[i], candidates[i], rouge_l_sentence(candidates[i], references[i]), cider.per_image[i],
                      meteor_x_sentence(candidates[i], references[i])});
    }
    report.per_image = std::move(rows);
  }
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j{{"bleu", report.bleu},
                   {"rouge_l", report.rouge_l},
                   {"cider_d", report.cider_d},
                   {"meteor_x", report.meteor_x}};
  if (report.per_image) {
    auto rows = nlohmann::json::array();
    for (const auto& r : *report.per_image) {
      rows.push_back({{"id", r.id},
                      {"caption", join_words(r.candidate)},
                      {"rouge_l", r.rouge_l},
                      {"cider_d", r.cider_d},
                      {"meteor_x", r.meteor_x}});
    }
    j["per_image"] = rows;
  }
  return j;
}

}  // namespace chg2cap
