#include "resyn/time_tokens.hpp"

#include <stdexcept>

namespace resyn {

TimeTokens tokenize_time(std::int64_t t_minutes, const SequenceLayout& layout) {
  if (t_minutes < 0) {
    throw std::invalid_argument("tokenize_time: negative timestamp");
  }
  std::int64_t value = t_minutes / layout.resolution_minutes;
  TimeTokens out;
  out.digits.assign(layout.l_t, 0);
  for (int i = layout.l_t - 1; i >= 0; --i) {
    out.digits[i] = static_cast<int>(value % 10);
    value /= 10;
  }
  if (value != 0) {
    throw std::invalid_argument(
        "tokenize_time: " + std::to_string(t_minutes) + " min needs more than " +
        std::to_string(layout.l_t) + " digits at resolution " +
        std::to_string(layout.resolution_minutes));
  }
  return out;
}

std::int64_t detokenize_time(const TimeTokens& tokens,
                             const SequenceLayout& layout) {
  std::int64_t value = 0;
  for (int d : tokens.digits) {
    if (d < 0 || d > 9) {
      throw std::invalid_argument("detokenize_time: digit out of range");
    }
    value = value * 10 + d;
  }
  return value * layout.resolution_minutes;
}

std::vector<int> assemble_sequence(
    const std::vector<std::pair<TimeTokens, LatentCode>>& traj,
    const SequenceLayout& layout) {
  std::vector<int> out;
  out.reserve(2 + traj.size() * static_cast<std::size_t>(layout.block_len()));
  out.push_back(layout.sos_id());
  for (const auto& [tau, code] : traj) {
    if (static_cast<int>(tau.digits.size()) != layout.l_t) {
      throw std::invalid_argument("assemble_sequence: wrong time width");
    }
    for (int d : tau.digits) {
      if (d < 0 || d > 9) {
        throw std::invalid_argument("assemble_sequence: digit out of range");
      }
      out.push_back(layout.digit_id(d));
    }
    if (static_cast<int>(code.indices.size()) != layout.l_z) {
      throw std::invalid_argument("assemble_sequence: wrong latent length");
    }
    for (const auto& depths : code.indices) {
      if (static_cast<int>(depths.size()) != layout.depth) {
        throw std::invalid_argument("assemble_sequence: wrong depth");
      }
      for (int k : depths) {
        if (k < 1 || k > layout.codebook_size) {
          throw std::invalid_argument("assemble_sequence: code out of range");
        }
        out.push_back(layout.code_id(k));
      }
    }
  }
  out.push_back(layout.eos_id());
  return out;
}

std::vector<std::pair<TimeTokens, LatentCode>> disassemble_sequence(
    const std::vector<int>& ids, const SequenceLayout& layout) {
  if (ids.size() < 2 || ids.front() != layout.sos_id() ||
      ids.back() != layout.eos_id()) {
    throw std::invalid_argument("disassemble_sequence: missing SOS/EOS frame");
  }
  const std::size_t body = ids.size() - 2;
  const std::size_t block = static_cast<std::size_t>(layout.block_len());
  if (body % block != 0) {
    throw std::invalid_argument("disassemble_sequence: ragged block");
  }
  std::vector<std::pair<TimeTokens, LatentCode>> out;
  out.reserve(body / block);
  std::size_t pos = 1;
  for (std::size_t b = 0; b < body / block; ++b) {
    TimeTokens tau;
    for (int i = 0; i < layout.l_t; ++i) {
      const int id = ids[pos++];
      if (!layout.is_digit_id(id)) {
        throw std::invalid_argument(
            "disassemble_sequence: expected time digit");
      }
      tau.digits.push_back(id);
    }
    LatentCode code;
    code.indices.assign(layout.l_z, std::vector<int>(layout.depth, 0));
    for (int p = 0; p < layout.l_z; ++p) {
      for (int d = 0; d < layout.depth; ++d) {
        const int id = ids[pos++];
        if (!layout.is_code_id(id)) {
          throw std::invalid_argument(
              "disassemble_sequence: expected event code");
        }
        code.indices[p][d] = layout.code_of_id(id);
      }
    }
    out.emplace_back(std::move(tau), std::move(code));
  }
  return out;
}

}  // namespace resyn
