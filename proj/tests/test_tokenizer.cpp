#include <doctest.h>

#include <cstdio>

#include "spatialkd/tokenizer.hpp"

using namespace skd;

TEST_CASE("build_vocab orders by frequency then lexicographic") {
  Vocab v = Vocab::build({"a b", "a"});
  CHECK(v.id_of("a") < v.id_of("b"));
  CHECK(v.id_of("a") == 4);  // first slot after the specials
  CHECK(v.size() == 6);
}

TEST_CASE("build_vocab ignores empty strings and counts distinct words") {
  std::vector<std::string> corpus{""};
  for (int i = 0; i < 50; ++i) corpus.push_back("w" + std::to_string(i));
  Vocab v = Vocab::build(corpus);
  CHECK(v.size() == 54);  // 50 words + 4 specials
}

TEST_CASE("encode empty string yields BOS EOS") {
  Vocab v = Vocab::build({"the box"});
  auto ids = v.encode("");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == Vocab::kBos);
  CHECK(ids[1] == Vocab::kEos);
}

TEST_CASE("round trip on in-vocab text") {
  Vocab v = Vocab::build({"the box is near the chair"});
  CHECK(v.decode(v.encode("the box")) == "the box");
  CHECK(v.decode(v.encode("The, Box!")) == "the box");  // normalization
}

TEST_CASE("unseen word maps to UNK") {
  Vocab v = Vocab::build({"the box"});
  auto ids = v.encode("the zeppelin");
  bool has_unk = false;
  for (int id : ids) has_unk |= (id == Vocab::kUnk);
  CHECK(has_unk);
}

TEST_CASE("encode distinct sentences differ") {
  Vocab v = Vocab::build({"a b c d"});
  CHECK(v.encode("a b") != v.encode("a c"));
  CHECK(v.encode("a b") != v.encode("b a"));
}

TEST_CASE("vocab save/load round trip") {
  Vocab v = Vocab::build({"the box is near the chair", "yes no left right"});
  std::string path = "vocab_test_tmp.txt";
  v.save(path);
  Vocab w = Vocab::load(path);
  std::remove(path.c_str());
  CHECK(w.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(w.token_of(i) == v.token_of(i));
}
