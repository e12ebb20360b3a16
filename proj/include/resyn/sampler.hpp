#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "resyn/time_tokens.hpp"
#include "resyn/transformer.hpp"

namespace resyn {

struct SampleParams {
  int top_k = 250;
  double temperature = 1.0;
  int max_events = 64;
};

// Ids admissible at a block phase (0-based index inside a block): the ten
// time digits during the first l_t positions, event codes afterwards. EOS is
// admissible only at phase 0, so an event is never cut off mid-block.
std::vector<int> allowed_ids(const SequenceLayout& layout, int phase);

// Autoregressive constrained sampling: invalid ids are masked to zero
// probability, the rest renormalized, top-k filtered, then drawn. Returns the
// full token sequence including SOS and, when the model terminated itself,
// EOS. Always structurally valid.
std::vector<int> sample_sequence_ids(const TransformerLM& model,
                                     const SequenceLayout& layout,
                                     const SampleParams& params,
                                     std::uint64_t seed);

std::vector<std::pair<TimeTokens, LatentCode>> sample_trajectory(
    const TransformerLM& model, const SequenceLayout& layout,
    const SampleParams& params, std::uint64_t seed);

// n trajectories with per-trajectory seeds derive(seed, i); trajectories are
// independent, so the loop may run in parallel with results kept in order.
std::vector<std::vector<int>> sample_many(const TransformerLM& model,
                                          const SequenceLayout& layout,
                                          const SampleParams& params,
                                          std::uint64_t seed, int n);

}  // namespace resyn
