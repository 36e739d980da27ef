#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace latact {

/// Word-level vocabulary over lowercased, whitespace-split text.
/// Special tokens come first, in the order listed below; one token per
/// line in the file form, line index = id.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kUsr = 4;
  static constexpr int kSys = 5;
  static constexpr int kSor = 6;  // separates act prefix from response in baseline mode
  static constexpr int kDb0 = 7;  // <db:0> .. <db:3>, then <db:many>, <db:nodb>
  static constexpr int kDbMany = 11;
  static constexpr int kDbNoDb = 12;
  static constexpr int kNumSpecial = 13;

  Vocabulary() = default;

  /// Builds from a word list; specials are prepended automatically.
  static Vocabulary from_words(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnk for unknown
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;  // skips pad/bos/eos

  std::uint64_t hash() const;
  std::string to_text() const;
  static Vocabulary from_text(const std::string& text);

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  void rebuild_index();
};

/// Lowercases and splits on runs of whitespace.
std::vector<std::string> split_words(const std::string& text);

std::uint64_t fnv1a(const std::string& text);

}  // namespace latact
