#pragma once

#include <cctype>
#include <stdexcept>
#include <string>
#include <vector>

namespace rare {

// 37-symbol label space: 26 letters, 10 digits, EOS. Case-insensitive.
constexpr int kNumLetters = 26;
constexpr int kNumDigits = 10;
constexpr int kEos = 36;
constexpr int kNumClasses = 37;
// start-of-sequence sentinel; an embedding row only, never an output class
constexpr int kSos = 37;

inline bool char_valid(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

inline int char_to_label(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= '0' && c <= '9') return kNumLetters + (c - '0');
  throw std::invalid_argument(std::string("character '") + c + "' outside the label alphabet");
}

inline char label_to_char(int label) {
  if (label >= 0 && label < kNumLetters) return static_cast<char>('a' + label);
  if (label >= kNumLetters && label < kNumLetters + kNumDigits)
    return static_cast<char>('0' + (label - kNumLetters));
  throw std::invalid_argument("label " + std::to_string(label) + " is not a character class");
}

using LabelSequence = std::vector<int>;

/// Lowercased label indices, excluding EOS.
inline LabelSequence string_to_labels(const std::string& s) {
  LabelSequence out;
  out.reserve(s.size());
  for (char c : s) out.push_back(char_to_label(c));
  return out;
}

inline std::string labels_to_string(const LabelSequence& l) {
  std::string out;
  out.reserve(l.size());
  for (int v : l) out.push_back(label_to_char(v));
  return out;
}

inline std::string fold_case(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace rare
