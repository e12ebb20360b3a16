#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "resyn/ingest.hpp"

namespace resyn {

struct SerializedEvent {
  std::string text;
};

// Token type channel labels.
enum class TokenType : int { Pad = 0, Table = 1, Column = 2, Value = 3 };
constexpr int kTypeVocabSize = 4;

// Digit-place channel: 0 = not a digit; 1..10 integer places (ones place = 1,
// clamped at 10); 11..16 decimal places (tenths = 11, clamped at 16);
// 17 = decimal point.
constexpr int kDpeNone = 0;
constexpr int kDpeIntBase = 0;   // integer place p -> id p
constexpr int kDpeIntMax = 10;
constexpr int kDpeDecBase = 10;  // decimal place p -> id 10 + p
constexpr int kDpeDecMax = 16;
constexpr int kDpePoint = 17;
constexpr int kDpeVocabSize = 18;

struct TokenizedEvent {
  std::vector<int> text_ids;
  std::vector<int> type_ids;
  std::vector<int> dpe_ids;
};

struct Vocabulary {
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;

  std::vector<std::string> id_to_token;  // [0]="<pad>", [1]="<unk>"
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int id_of(const std::string& token) const;
  const std::string& token(int id) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
};

// "<table> <col> <val> <col> <val> ..." with null columns absent.
SerializedEvent serialize_event(const EventRecord& e);

// Whitespace split with unsigned numeric literals exploded character-wise
// ("123.45" -> 1 2 3 . 4 5). Shared by vocabulary construction and tokenize.
std::vector<std::string> split_tokens(const std::string& text);

// Deterministic: count desc, then token lexicographic; tokens under min_count
// fall through to UNK; digits 0-9 and "." are always present.
Vocabulary build_vocabulary(const std::vector<SerializedEvent>& corpus,
                            int min_count);

TokenizedEvent tokenize(const SerializedEvent& s, const Vocabulary& vocab,
                        int length);

// Inverse of tokenize for in-vocabulary serializations shorter than L:
// PAD stripped, digit runs of a single literal re-joined without spaces.
std::string detokenize(const TokenizedEvent& t, const Vocabulary& vocab);

}  // namespace resyn
