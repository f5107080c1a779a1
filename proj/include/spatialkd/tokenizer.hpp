#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "spatialkd/common.hpp"

namespace skd {

// Word-level vocabulary. Tokens are lowercased, punctuation-stripped words;
// ids 0..3 are reserved for PAD/BOS/EOS/UNK.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  // Lowercase and keep [a-z0-9] runs as words; everything else separates.
  static std::vector<std::string> normalize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
      unsigned char uc = static_cast<unsigned char>(c);
      if (std::isalnum(uc)) {
        cur.push_back(static_cast<char>(std::tolower(uc)));
      } else if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
  }

  // Deterministic order: frequency descending, then lexicographic.
  static Vocab build(const std::vector<std::string>& corpus) {
    check(!corpus.empty(), "build_vocab: empty corpus");
    std::map<std::string, int64_t> freq;
    for (const auto& line : corpus)
      for (const auto& w : normalize(line)) ++freq[w];
    std::vector<std::pair<std::string, int64_t>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    for (const auto& [word, count] : items) v.add_token(word);
    return v;
  }

  Vocab() {
    id_to_token_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (size_t i = 0; i < id_to_token_.size(); ++i)
      token_to_id_[id_to_token_[i]] = static_cast<int>(i);
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  int id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token_of(int id) const {
    check(id >= 0 && id < size(), "vocab: id ", id, " out of range [0,", size(), ")");
    return id_to_token_[id];
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  // [BOS, words..., EOS]; unknown words map to UNK.
  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids{kBos};
    for (const auto& w : normalize(text)) ids.push_back(id_of(w));
    ids.push_back(kEos);
    return ids;
  }

  // Words only, no BOS/EOS wrapper.
  std::vector<int> encode_words(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : normalize(text)) ids.push_back(id_of(w));
    return ids;
  }

  // Joins non-special tokens with single spaces.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id == kPad || id == kBos || id == kEos) continue;
      if (!out.empty()) out.push_back(' ');
      out += token_of(id);
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    check(out.good(), "vocab: cannot open '", path, "' for writing");
    for (const auto& t : id_to_token_) out << t << "\n";
    check(out.good(), "vocab: write failed for '", path, "'");
  }

  // One token per line, line index = id. Specials must occupy lines 0-3.
  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "vocab: cannot open '", path, "'");
    Vocab v;
    std::string line;
    int idx = 0;
    while (std::getline(in, line)) {
      if (idx < 4) {
        check(line == v.id_to_token_[idx], "vocab: line ", idx, " must be '", v.id_to_token_[idx],
              "', got '", line, "'");
      } else {
        check(!line.empty(), "vocab: empty token at line ", idx);
        v.add_token(line);
      }
      ++idx;
    }
    check(idx >= 4, "vocab: file '", path, "' too short");
    return v;
  }

 private:
  void add_token(const std::string& t) {
    check(!token_to_id_.count(t), "vocab: duplicate token '", t, "'");
    token_to_id_[t] = size();
    id_to_token_.push_back(t);
  }

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

}  // namespace skd
