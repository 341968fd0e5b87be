#include <filesystem>

#include "chg2cap/error.hpp"
#include "chg2cap/features.hpp"
#include "chg2cap/random.hpp"
#include "chg2cap/vocab.hpp"
#include "doctest.h"

using namespace chg2cap;

TEST_CASE("build_vocab frequency ordering") {
  const std::vector<Sentence> corpus{tokenize("a b"), tokenize("a c")};

  const auto v1 = Vocabulary::build(corpus, 1);
  CHECK(v1.size() == 7);
  CHECK(v1.id("a") == 4);  // most frequent first
  CHECK(v1.id("b") == 5);  // ties broken lexicographically
  CHECK(v1.id("c") == 6);

  const auto v2 = Vocabulary::build(corpus, 2);
  CHECK(v2.size() == 5);
  CHECK(v2.id("a") == 4);
  CHECK(v2.id("b") == kUnkId);
  CHECK(encode_caption(tokenize("a b c"), v2, 6).ids == std::vector<int>{kStartId, 4, kUnkId, kUnkId, kEndId, kPadId});

  CHECK_THROWS_AS(Vocabulary::build(corpus, 0), ConfigError);
  CHECK_THROWS_AS(Vocabulary::build({}, 1), DataError);
  CHECK_THROWS_AS(Vocabulary::build({Sentence{}}, 1), DataError);
}

TEST_CASE("special ids and inverse maps") {
  const auto v = Vocabulary::build({tokenize("z y y x x x")}, 1);
  CHECK(v.word(kPadId) == "<pad>");
  CHECK(v.word(kStartId) == "<start>");
  CHECK(v.word(kEndId) == "<end>");
  CHECK(v.word(kUnkId) == "<unk>");
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.id(v.word(static_cast<int>(i))) == static_cast<int>(i));
  CHECK(v.corpus_words() == std::vector<std::string>{"x", "y", "z"});
}

TEST_CASE("build_vocab is deterministic") {
  const auto records = gen_synthetic(3, 20);
  std::vector<Sentence> corpus;
  for (const auto& r : records) corpus.insert(corpus.end(), r.captions.begin(), r.captions.end());
  CHECK(Vocabulary::build(corpus, 1) == Vocabulary::build(corpus, 1));
}

TEST_CASE("tokenize normalizes case and punctuation") {
  CHECK(tokenize("  Many Houses, are built.  ") == Sentence{"many", "houses", "are", "built"});
  CHECK(tokenize("").empty());
}

TEST_CASE("encode_caption") {
  const auto v = Vocabulary::from_words({"w1", "w2", "w3"});
  const auto seq = encode_caption({"w1", "w2", "w3"}, v, 6);
  CHECK(seq.ids == std::vector<int>{kStartId, v.id("w1"), v.id("w2"), v.id("w3"), kEndId, 0});
  CHECK(seq.valid_len == 5);

  const auto empty = encode_caption({}, v, 2);
  CHECK(empty.ids == std::vector<int>{kStartId, kEndId});

  try {
    encode_caption({"w1", "w1", "w1", "w1", "w1"}, v, 6);
    FAIL("expected a length error");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('5') != std::string::npos);
    CHECK(msg.find('6') != std::string::npos);
  }
}

TEST_CASE("decode_caption") {
  const auto v = Vocabulary::from_words({"a", "b"});
  CHECK(decode_caption(encode_caption({"a", "b"}, v, 6), v).words == Sentence{"a", "b"});

  const auto empty = decode_caption(TokenSequence{{kStartId, kEndId, 0, 0}, 2}, v);
  CHECK(empty.words.empty());
  CHECK_FALSE(empty.truncated);

  CHECK(decode_caption(TokenSequence{{kStartId, kUnkId, 4, kEndId}, 4}, v).words == Sentence{"<unk>", "a"});

  const auto cut = decode_caption(TokenSequence{{kStartId, 4, 5, 4}, 4}, v);
  CHECK(cut.truncated);
  CHECK(cut.words == Sentence{"a", "b", "a"});
}

TEST_CASE("round trip over random grammar sentences") {
  const auto records = gen_synthetic(11, 40);
  std::vector<Sentence> corpus;
  for (const auto& r : records) corpus.insert(corpus.end(), r.captions.begin(), r.captions.end());
  const auto v = Vocabulary::build(corpus, 1);

  Rng rng(99);
  const auto words = v.corpus_words();
  for (int trial = 0; trial < 200; ++trial) {
    Sentence s;
    const auto len = rng.below(11);
    for (std::uint64_t i = 0; i < len; ++i) s.push_back(words[rng.below(words.size())]);
    const auto seq = encode_caption(s, v, 12);
    CHECK(seq.ids[0] == kStartId);
    CHECK(seq.ids[seq.valid_len - 1] == kEndId);
    for (std::size_t i = seq.valid_len; i < seq.ids.size(); ++i) CHECK(seq.ids[i] == kPadId);
    const auto back = decode_caption(seq, v);
    CHECK_FALSE(back.truncated);
    CHECK(back.words == s);
  }
}

TEST_CASE("vocabulary file round trip") {
  const auto v = Vocabulary::build({tokenize("the scene is unchanged"), tokenize("a road is built")}, 1);
  const std::string text = v.serialize();
  CHECK(text.rfind("CHG2CAP-VOCAB v1\n", 0) == 0);
  CHECK(Vocabulary::parse(text) == v);

  const auto path = std::filesystem::temp_directory_path() / "chg2cap_vocab_test.txt";
  v.save(path);
  CHECK(Vocabulary::load(path) == v);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(Vocabulary::parse("not a vocab\nword\n"), DataError);
  CHECK_THROWS_AS(Vocabulary::parse("CHG2CAP-VOCAB v1\na\na\n"), DataError);
}
