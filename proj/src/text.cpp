#include "resyn/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace resyn {

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) +
                            " outside [0, " + std::to_string(size()) + ")");
  }
  return id_to_token[id];
}

void Vocabulary::save(const std::string& path) const {
  nlohmann::ordered_json doc;
  for (int i = 0; i < size(); ++i) doc[id_to_token[i]] = i;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("vocab: cannot write " + path);
  out << doc.dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocab: cannot open " + path);
  nlohmann::json doc;
  in >> doc;
  Vocabulary v;
  v.id_to_token.resize(doc.size());
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const int id = it.value().get<int>();
    if (id < 0 || id >= static_cast<int>(doc.size())) {
      throw std::runtime_error("vocab: id out of range in " + path);
    }
    v.id_to_token[id] = it.key();
    v.token_to_id[it.key()] = id;
  }
  if (v.size() < 2 || v.id_to_token[kPadId] != "<pad>" ||
      v.id_to_token[kUnkId] != "<unk>") {
    throw std::runtime_error("vocab: " + path + " lacks <pad>/<unk> layout");
  }
  return v;
}

SerializedEvent serialize_event(const EventRecord& e) {
  if (e.pairs.empty()) {
    throw std::runtime_error("serialize_event: event from table '" +
                             e.table_name + "' has no column-value pairs");
  }
  std::string text = e.table_name;
  for (const auto& [col, val] : e.pairs) {
    text += ' ';
    text += col;
    text += ' ';
    text += val;
  }
  return {text};
}

static bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Unsigned decimal literal: digits with at most one interior point.
static bool is_numeric_literal(const std::string& w) {
  if (w.empty()) return false;
  bool digit = false, point = false;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const char c = w[i];
    if (is_digit(c)) {
      digit = true;
    } else if (c == '.') {
      if (point || i == 0 || i + 1 == w.size()) return false;
      point = true;
    } else {
      return false;
    }
  }
  return digit;
}

static std::vector<std::string> split_fields(const std::string& text) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) fields.push_back(std::move(cur));
  return fields;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  for (const auto& field : split_fields(text)) {
    if (is_numeric_literal(field)) {
      for (char c : field) tokens.emplace_back(1, c);
    } else {
      tokens.push_back(field);
    }
  }
  return tokens;
}

Vocabulary build_vocabulary(const std::vector<SerializedEvent>& corpus,
                            int min_count) {
  if (corpus.empty()) {
    throw std::runtime_error("build_vocabulary: empty corpus");
  }
  std::map<std::string, long long> counts;
  for (const auto& s : corpus) {
    for (const auto& tok : split_tokens(s.text)) ++counts[tok];
  }
  std::vector<std::pair<std::string, long long>> order(counts.begin(),
                                                       counts.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.id_to_token = {"<pad>", "<unk>"};
  auto add = [&v](const std::string& tok) {
    if (!v.token_to_id.count(tok)) {
      v.token_to_id[tok] = v.size();
      v.id_to_token.push_back(tok);
    }
  };
  for (const auto& [tok, count] : order) {
    if (count >= min_count) add(tok);
  }
  for (char d = '0'; d <= '9'; ++d) add(std::string(1, d));
  add(".");
  return v;
}

// Digit-place ids for one exploded numeric literal of n_int integer digits.
static int dpe_for_position(std::size_t pos, std::size_t n_int) {
  if (pos < n_int) {
    const std::size_t place = n_int - pos;  // ones place = 1
    return kDpeIntBase + static_cast<int>(std::min<std::size_t>(place, 10));
  }
  if (pos == n_int) return kDpePoint;
  const std::size_t place = pos - n_int;  // tenths = 1
  return kDpeDecBase + static_cast<int>(std::min<std::size_t>(place, 6));
}

TokenizedEvent tokenize(const SerializedEvent& s, const Vocabulary& vocab,
                        int length) {
  TokenizedEvent out;
  out.text_ids.assign(length, Vocabulary::kPadId);
  out.type_ids.assign(length, static_cast<int>(TokenType::Pad));
  out.dpe_ids.assign(length, kDpeNone);

  int pos = 0;
  std::size_t field_index = 0;
  for (const auto& field : split_fields(s.text)) {
    TokenType type = TokenType::Value;
    if (field_index == 0) {
      type = TokenType::Table;
    } else if (field_index % 2 == 1) {
      type = TokenType::Column;
    }
    if (is_numeric_literal(field)) {
      const std::size_t n_int = field.find('.') == std::string::npos
                                    ? field.size()
                                    : field.find('.');
      for (std::size_t i = 0; i < field.size() && pos < length; ++i, ++pos) {
        out.text_ids[pos] = vocab.id_of(std::string(1, field[i]));
        out.type_ids[pos] = static_cast<int>(type);
        out.dpe_ids[pos] = dpe_for_position(i, n_int);
      }
    } else if (pos < length) {
      out.text_ids[pos] = vocab.id_of(field);
      out.type_ids[pos] = static_cast<int>(type);
      ++pos;
    }
    ++field_index;
    if (pos >= length) break;
  }
  return out;
}

// True when the dpe id at the current position continues the literal that
// ended with prev: integer places descend to 1, then the point, then decimal
// places ascend. Clamped outermost places may repeat.
static bool dpe_continues(int prev, int cur) {
  const bool prev_int = prev >= 1 && prev <= kDpeIntMax;
  const bool cur_int = cur >= 1 && cur <= kDpeIntMax;
  const bool prev_dec = prev > kDpeDecBase && prev <= kDpeDecMax;
  const bool cur_dec = cur > kDpeDecBase && cur <= kDpeDecMax;
  if (prev_int && cur_int) {
    return cur == prev - 1 || (prev == kDpeIntMax && cur == kDpeIntMax);
  }
  if (prev_int && cur == kDpePoint) return prev == 1;
  if (prev == kDpePoint && cur_dec) return cur == kDpeDecBase + 1;
  if (prev_dec && cur_dec) {
    return cur == prev + 1 || (prev == kDpeDecMax && cur == kDpeDecMax);
  }
  return false;
}

std::string detokenize(const TokenizedEvent& t, const Vocabulary& vocab) {
  std::string out;
  int prev_type = -1;
  int prev_dpe = kDpeNone;
  bool first = true;
  for (std::size_t i = 0; i < t.text_ids.size(); ++i) {
    const int id = t.text_ids[i];
    if (id == Vocabulary::kPadId) continue;
    const int type = t.type_ids[i];
    const int dpe = t.dpe_ids[i];
    const bool same_field = !first && type == prev_type;
    const bool join = same_field && prev_dpe != kDpeNone && dpe != kDpeNone &&
                      dpe_continues(prev_dpe, dpe);
    if (!first && !join) out.push_back(' ');
    out += vocab.token(id);
    prev_type = type;
    prev_dpe = dpe;
    first = false;
  }
  return out;
}

}  // namespace resyn
