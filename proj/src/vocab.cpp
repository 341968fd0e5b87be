#include "chg2cap/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "chg2cap/error.hpp"

namespace chg2cap {

Sentence tokenize(std::string_view text) {
  Sentence words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else if (std::ispunct(c)) {
      continue;
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string join_words(const Sentence& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<start>", "<end>", "<unk>"}) add(s);
}

void Vocabulary::add(std::string word) {
  word_to_id_.emplace(word, static_cast<int>(id_to_word_.size()));
  id_to_word_.push_back(std::move(word));
}

Vocabulary Vocabulary::build(const std::vector<Sentence>& captions, int min_freq) {
  if (min_freq < 1) throw ConfigError("build_vocab: min_freq must be >= 1, got " + std::to_string(min_freq));
  std::map<std::string, long> freq;
  std::size_t total = 0;
  for (const auto& caption : captions) {
    for (const auto& w : caption) {
      ++freq[w];
      ++total;
    }
  }
  if (total == 0) throw DataError("build_vocab: empty caption corpus");

  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [w, f] : freq)
    if (f >= min_freq) kept.emplace_back(w, f);
  // std::map iteration is already lexicographic; a stable sort keeps that
  // order among equal frequencies.
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary v;
  for (auto& [w, f] : kept) {
    if (v.contains(w)) continue;  // a literal "<unk>" in the corpus
    v.add(w);
  }
  return v;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) {
    if (w.empty()) throw DataError("vocabulary: empty word");
    if (v.contains(w)) throw DataError("vocabulary: duplicate word '" + w + "'");
    v.add(w);
  }
  return v;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kVocabHeader) {
    throw DataError("vocabulary: missing header line '" + std::string(kVocabHeader) + "'");
  }
  std::vector<std::string> words;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    words.push_back(line);
  }
  return from_words(words);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("vocabulary: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Vocabulary::serialize() const {
  std::string out(kVocabHeader);
  out.push_back('\n');
  for (std::size_t i = kNumSpecialTokens; i < id_to_word_.size(); ++i) {
    out += id_to_word_[i];
    out.push_back('\n');
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("vocabulary: cannot write " + path.string());
  out << serialize();
}

int Vocabulary::id(std::string_view word) const {
  const auto it = word_to_id_.find(std::string(word));
  return it == word_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_word_.size()) {
    throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return id_to_word_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view word) const { return word_to_id_.contains(std::string(word)); }

std::vector<std::string> Vocabulary::corpus_words() const {
  return {id_to_word_.begin() + kNumSpecialTokens, id_to_word_.end()};
}

TokenSequence encode_caption(const Sentence& words, const Vocabulary& vocab, std::size_t max_len) {
  if (words.size() + 2 > max_len) {
    throw DataError("encode_caption: sentence of " + std::to_string(words.size()) +
                    " words does not fit max length " + std::to_string(max_len));
  }
  TokenSequence seq;
  seq.ids.assign(max_len, kPadId);
  seq.ids[0] = kStartId;
  for (std::size_t i = 0; i < words.size(); ++i) seq.ids[i + 1] = vocab.id(words[i]);
  seq.ids[words.size() + 1] = kEndId;
  seq.valid_len = words.size() + 2;
  return seq;
}

DecodedCaption decode_caption(const TokenSequence& seq, const Vocabulary& vocab) {
  DecodedCaption out;
  out.truncated = true;
  const std::size_t begin = (!seq.ids.empty() && seq.ids[0] == kStartId) ? 1 : 0;
  for (std::size_t i = begin; i < seq.ids.size(); ++i) {
    const int id = seq.ids[i];
    if (id == kEndId) {
      out.truncated = false;
      break;
    }
    if (id == kPadId || id == kStartId) continue;
    out.words.push_back(vocab.word(id));
  }
  return out;
}

}  // namespace chg2cap
