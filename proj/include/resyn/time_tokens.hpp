#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "resyn/codec.hpp"

namespace resyn {

struct TimeTokens {
  std::vector<int> digits;  // each in 0..9, most significant first
};

// Token id plan for the sequence model. Digits, event codes and specials
// occupy disjoint ranges: digit d -> d, code k (1-based) -> 9 + k,
// then SOS, EOS, PAD; vocab = K + 10 + 3.
struct SequenceLayout {
  int l_t = 2;                   // time digits per block
  int l_z = 4;                   // latent positions per event
  int depth = 2;                 // D
  int codebook_size = 1024;      // K
  int resolution_minutes = 10;

  int block_len() const { return l_t + l_z * depth; }
  int vocab_size() const { return codebook_size + 10 + 3; }
  int digit_id(int d) const { return d; }
  int code_id(int k) const { return 9 + k; }  // k in [1, K]
  int sos_id() const { return codebook_size + 10; }
  int eos_id() const { return codebook_size + 11; }
  int pad_id() const { return codebook_size + 12; }
  bool is_digit_id(int id) const { return id >= 0 && id <= 9; }
  bool is_code_id(int id) const {
    return id >= 10 && id < 10 + codebook_size;
  }
  int code_of_id(int id) const { return id - 9; }
};

// floor(t / resolution) decomposed into exactly l_t digits; throws when the
// quotient needs more digits than l_t allows.
TimeTokens tokenize_time(std::int64_t t_minutes, const SequenceLayout& layout);

// digits -> minutes; inverse of tokenize_time up to resolution flooring.
std::int64_t detokenize_time(const TimeTokens& digits,
                             const SequenceLayout& layout);

// [SOS, tau_1, k_1, ..., tau_n, k_n, EOS]; codes are flattened
// position-major (all depths of position 0, then position 1, ...).
// Total length is 2 + n * (l_t + l_z * depth).
std::vector<int> assemble_sequence(
    const std::vector<std::pair<TimeTokens, LatentCode>>& traj,
    const SequenceLayout& layout);

// Strict inverse of assemble_sequence; throws on structural violations.
std::vector<std::pair<TimeTokens, LatentCode>> disassemble_sequence(
    const std::vector<int>& ids, const SequenceLayout& layout);

}  // namespace resyn
