#include "latact/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace latact {

namespace {

const char* kSpecials[] = {"<pad>", "<bos>",  "<eos>",  "<unk>",  "<usr>",  "<sys>",   "<sor>",
                           "<db:0>", "<db:1>", "<db:2>", "<db:3>", "<db:many>", "<db:nodb>"};

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const char* s : kSpecials) v.tokens_.emplace_back(s);
  std::vector<std::string> sorted = words;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (const auto& w : sorted) {
    if (w.empty()) continue;
    bool special = false;
    for (const char* s : kSpecials) {
      if (w == s) special = true;
    }
    if (!special) v.tokens_.push_back(w);
  }
  v.rebuild_index();
  return v;
}

void Vocabulary::rebuild_index() {
  index_.clear();
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) index_[tokens_[i]] = i;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return index_.count(token) > 0; }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::runtime_error("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::from_text(const std::string& text) {
  Vocabulary v;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.tokens_.push_back(line);
  }
  if (static_cast<int>(v.tokens_.size()) < kNumSpecial) {
    throw std::runtime_error("vocab: file too short to contain the special tokens");
  }
  for (int i = 0; i < kNumSpecial; ++i) {
    if (v.tokens_[static_cast<std::size_t>(i)] != kSpecials[i]) {
      throw std::runtime_error("vocab: expected special token " + std::string(kSpecials[i]) +
                               " at line " + std::to_string(i));
    }
  }
  v.rebuild_index();
  return v;
}

std::uint64_t Vocabulary::hash() const { return fnv1a(to_text()); }

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("vocab: cannot write " + path);
  out << to_text();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("vocab: cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

}  // namespace latact
