#pragma once

// Brute-force metric oracles shared by the metric tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "chg2cap/metrics.hpp"
#include "chg2cap/random.hpp"

namespace metric_oracle {

using chg2cap::ReferenceSets;
using chg2cap::Rng;
using chg2cap::Sentence;

inline Sentence words(const std::string& s) { return chg2cap::tokenize(s); }

// ---- brute-force oracles -------------------------------------------------
// Keys are n-grams joined with a separator; counting is done with hash maps.

inline std::unordered_map<std::string, int> grams(const Sentence& s, std::size_t n) {
  std::unordered_map<std::string, int> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key;
    for (std::size_t k = i; k < i + n; ++k) key += s[k] + "\x1f";
    out[key]++;
  }
  return out;
}

inline double bleu_oracle(const std::vector<Sentence>& cands, const ReferenceSets& refs, int order) {
  double log_p = 0.0, c = 0.0, r = 0.0;
  for (int n = 1; n <= order; ++n) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const auto cg = grams(cands[i], static_cast<std::size_t>(n));
      for (const auto& [key, count] : cg) {
        int cap = 0;
        for (const auto& ref : refs[i]) {
          const auto rg = grams(ref, static_cast<std::size_t>(n));
          const auto it = rg.find(key);
          if (it != rg.end()) cap = std::max(cap, it->second);
        }
        num += std::min(count, cap);
        den += count;
      }
    }
    if (num == 0.0) return 0.0;
    log_p += std::log(num / den) / order;
  }
  for (std::size_t i = 0; i < cands.size(); ++i) {
    c += static_cast<double>(cands[i].size());
    std::vector<std::pair<long, long>> options;
    for (const auto& ref : refs[i]) {
      const long len = static_cast<long>(ref.size());
      options.emplace_back(std::labs(len - static_cast<long>(cands[i].size())), len);
    }
    r += static_cast<double>(std::min_element(options.begin(), options.end())->second);
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_p);
}

inline std::size_t lcs_recursive(const Sentence& a, const Sentence& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    return memo[key] = v;
  };
  return go(0, 0);
}

inline double rouge_oracle(const std::vector<Sentence>& cands, const ReferenceSets& refs) {
  double total = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double best = 0.0;
    for (const auto& ref : refs[i]) {
      const double l = static_cast<double>(lcs_recursive(cands[i], ref));
      if (l == 0.0) continue;
      const double R = l / static_cast<double>(ref.size()), P = l / static_cast<double>(cands[i].size());
      best = std::max(best, (1 + 1.44) * R * P / (R + 1.44 * P));
    }
    total += best;
  }
  return total / static_cast<double>(cands.size());
}

// Dense tf-idf vectors over an explicit n-gram index covering the whole corpus.
inline double cider_oracle(const std::vector<Sentence>& cands, const ReferenceSets& refs) {
  const double N = static_cast<double>(cands.size());
  double corpus = 0.0;
  std::vector<double> per_image(cands.size(), 0.0);
  for (std::size_t n = 1; n <= 4; ++n) {
    std::vector<std::string> index;
    auto add_all = [&](const Sentence& s) {
      for (const auto& [k, c] : grams(s, n))
        if (std::find(index.begin(), index.end(), k) == index.end()) index.push_back(k);
    };
    for (const auto& s : cands) add_all(s);
    for (const auto& rs : refs)
      for (const auto& s : rs) add_all(s);
    std::vector<double> idf(index.size());
    for (std::size_t g = 0; g < index.size(); ++g) {
      double df = 0.0;
      for (const auto& rs : refs) {
        bool present = false;
        for (const auto& s : rs) present |= grams(s, n).count(index[g]) > 0;
        df += present ? 1.0 : 0.0;
      }
      idf[g] = std::log(N) - std::log(std::max(1.0, df));
    }
    auto dense = [&](const Sentence& s) {
      const auto gs = grams(s, n);
      std::vector<double> v(index.size(), 0.0);
      for (std::size_t g = 0; g < index.size(); ++g) {
        const auto it = gs.find(index[g]);
        if (it != gs.end()) v[g] = it->second * idf[g];
      }
      return v;
    };
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const auto h = dense(cands[i]);
      double acc = 0.0;
      for (const auto& ref : refs[i]) {
        const auto r = dense(ref);
        double dot = 0.0, nh = 0.0, nr = 0.0;
        for (std::size_t g = 0; g < h.size(); ++g) {
          dot += std::min(h[g], r[g]) * r[g];
          nh += h[g] * h[g];
          nr += r[g] * r[g];
        }
        double sim = (nh > 0 && nr > 0) ? dot / (std::sqrt(nh) * std::sqrt(nr)) : dot;
        const double d = static_cast<double>(cands[i].size()) - static_cast<double>(ref.size());
        sim *= std::exp(-d * d / 72.0);
        acc += sim;
      }
      per_image[i] += 10.0 * acc / static_cast<double>(refs[i].size()) / 4.0;
    }
  }
  for (double v : per_image) corpus += v;
  return corpus / N;
}

inline double meteor_oracle(const std::vector<Sentence>& cands, const ReferenceSets& refs) {
  double total = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double best = 0.0;
    for (const auto& ref : refs[i]) {
      // ref_pos[k] is the reference index matched by candidate word k, or -1.
      std::vector<long> ref_pos(cands[i].size(), -1);
      std::vector<int> taken(ref.size(), 0);
      for (std::size_t k = 0; k < cands[i].size(); ++k) {
        const auto it = std::find_if(ref.begin(), ref.end(), [&, j = std::size_t{0}](const std::string& w) mutable {
          return !taken[j++] && w == cands[i][k];
        });
        if (it != ref.end()) {
          const auto j = static_cast<std::size_t>(it - ref.begin());
          taken[j] = 1;
          ref_pos[k] = static_cast<long>(j);
        }
      }
      double m = 0.0, chunks = 0.0;
      for (std::size_t k = 0; k < ref_pos.size(); ++k) {
        if (ref_pos[k] < 0) continue;
        m += 1.0;
        const bool continues = k > 0 && ref_pos[k - 1] >= 0 && ref_pos[k - 1] + 1 == ref_pos[k];
        if (!continues) chunks += 1.0;
      }
      if (m == 0.0) continue;
      const double P = m / static_cast<double>(cands[i].size()), R = m / static_cast<double>(ref.size());
      const double f = 10 * P * R / (R + 9 * P);
      best = std::max(best, f * (1 - 0.5 * std::pow(chunks / m, 3)));
    }
    total += best;
  }
  return total / static_cast<double>(cands.size());
}

struct Corpus {
  std::vector<Sentence> cands;
  ReferenceSets refs;
};

inline Corpus random_corpus(Rng& rng) {
  const std::vector<std::string> lexicon{"a", "b", "c", "d", "e", "f", "g"};
  auto sentence = [&] {
    Sentence s;
    const auto len = 2 + rng.below(8);
    for (std::size_t i = 0; i < len; ++i) s.push_back(lexicon[rng.below(lexicon.size())]);
    return s;
  };
  Corpus c;
  for (int img = 0; img < 5; ++img) {
    c.cands.push_back(sentence());
    std::vector<Sentence> rs;
    for (int r = 0; r < 5; ++r) rs.push_back(sentence());
    c.refs.push_back(rs);
  }
  return c;
}

}  // namespace metric_oracle
