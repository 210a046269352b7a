#include "penrec/alphabet.hpp"

namespace penrec {

Alphabet::Alphabet(std::string characters) : characters_(std::move(characters)) {
  if (characters_.empty()) throw Error("alphabet must not be empty");
  lookup_.fill(-1);
  for (int i = 0; i < static_cast<int>(characters_.size()); ++i) {
    auto c = static_cast<unsigned char>(characters_[static_cast<std::size_t>(i)]);
    if (lookup_[c] != -1) throw Error("alphabet has duplicate character");
    lookup_[c] = i;
  }
}

Alphabet Alphabet::latin() {
  std::string chars;
  for (char c = 'A'; c <= 'Z'; ++c) chars.push_back(c);
  for (char c = 'a'; c <= 'z'; ++c) chars.push_back(c);
  return Alphabet(chars);
}

bool Alphabet::contains(char c) const {
  return lookup_[static_cast<unsigned char>(c)] >= 0;
}

int Alphabet::index_of(char c) const {
  int idx = lookup_[static_cast<unsigned char>(c)];
  if (idx < 0) throw DataError(std::string("character '") + c + "' not in alphabet");
  return idx;
}

char Alphabet::char_at(int index) const {
  if (index < 0 || index >= size()) throw Error("class index out of range");
  return characters_[static_cast<std::size_t>(index)];
}

LabelSequence Alphabet::encode(const std::string& word) const {
  if (word.empty()) throw DataError("empty label");
  LabelSequence seq;
  seq.indices.reserve(word.size());
  for (char c : word) seq.indices.push_back(index_of(c));
  return seq;
}

std::string Alphabet::decode(const std::vector<int>& indices) const {
  std::string out;
  out.reserve(indices.size());
  for (int idx : indices) out.push_back(char_at(idx));
  return out;
}

}  // namespace penrec
