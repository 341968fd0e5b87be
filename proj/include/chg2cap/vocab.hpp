#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace chg2cap {

inline constexpr int kPadId = 0;
inline constexpr int kStartId = 1;
inline constexpr int kEndId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecialTokens = 4;

inline constexpr std::string_view kVocabHeader = "CHG2CAP-VOCAB v1";

using Sentence = std::vector<std::string>;

/// Lowercases, strips punctuation and splits on whitespace.
Sentence tokenize(std::string_view text);
std::string join_words(const Sentence& words);

/// Immutable word <-> id mapping. Ids 0..3 are PAD, START, END, UNK; corpus
/// words follow in descending frequency, ties broken lexicographically.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary build(const std::vector<Sentence>& captions, int min_freq);
  /// Corpus words in id order (ids start at 4).
  static Vocabulary from_words(const std::vector<std::string>& words);

  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;

  /// UNK for out-of-vocabulary words.
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  bool contains(std::string_view word) const;

  std::size_t size() const { return id_to_word_.size(); }
  const std::vector<std::string>& id_to_word() const { return id_to_word_; }
  /// Corpus words only (without the specials), in id order.
  std::vector<std::string> corpus_words() const;

  bool operator==(const Vocabulary& other) const { return id_to_word_ == other.id_to_word_; }

 private:
  void add(std::string word);

  std::vector<std::string> id_to_word_;
  std::unordered_map<std::string, int> word_to_id_;
};

/// Fixed-length caption: START, words, END, then PAD up to the length.
struct TokenSequence {
  std::vector<int> ids;
  std::size_t valid_len = 0;  // non-PAD positions

  std::size_t max_len() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

TokenSequence encode_caption(const Sentence& words, const Vocabulary& vocab, std::size_t max_len);

struct DecodedCaption {
  Sentence words;
  bool truncated = false;  // no END was found
};

DecodedCaption decode_caption(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace chg2cap
