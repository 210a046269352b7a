#pragma once

#include <array>
#include <string>
#include <vector>

#include "penrec/common.hpp"

namespace penrec {

/// Integer-encoded label characters. Never contains the blank class.
struct LabelSequence {
  std::vector<int> indices;

  int length() const { return static_cast<int>(indices.size()); }
};

/// Ordered character inventory plus the reserved CTC blank, which is always
/// the last class. The production inventory is the 52 Latin letters (A-Z then
/// a-z, 53 classes total); tests use smaller inventories.
class Alphabet {
 public:
  explicit Alphabet(std::string characters);

  /// A-Z then a-z; blank index 52, 53 classes.
  static Alphabet latin();

  int size() const { return static_cast<int>(characters_.size()); }
  int num_classes() const { return size() + 1; }
  int blank_index() const { return size(); }
  const std::string& characters() const { return characters_; }

  bool contains(char c) const;
  /// Class index of a character; throws if absent.
  int index_of(char c) const;
  char char_at(int index) const;

  /// Word -> class indices. Throws DataError on empty words or characters
  /// outside the inventory.
  LabelSequence encode(const std::string& word) const;
  /// Non-blank class indices -> string.
  std::string decode(const std::vector<int>& indices) const;

 private:
  std::string characters_;
  std::array<int, 256> lookup_;
};

}  // namespace penrec
