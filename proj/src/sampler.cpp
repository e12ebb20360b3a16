#include "resyn/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace resyn {

std::vector<int> allowed_ids(const SequenceLayout& layout, int phase) {
  std::vector<int> ids;
  if (phase < 0 || phase >= layout.block_len()) {
    throw std::invalid_argument("sampler: phase outside block");
  }
  if (phase < layout.l_t) {
    for (int d = 0; d <= 9; ++d) ids.push_back(layout.digit_id(d));
    if (phase == 0) ids.push_back(layout.eos_id());
  } else {
    ids.reserve(layout.codebook_size);
    for (int k = 1; k <= layout.codebook_size; ++k) {
      ids.push_back(layout.code_id(k));
    }
  }
  return ids;
}

namespace {

// Draw one id from the masked, temperature-scaled, top-k-filtered
// distribution. Ties within the top-k cutoff keep the lower id.
int draw(const Eigen::VectorXd& logits, const std::vector<int>& allowed,
         int top_k, double temperature, rng::Engine& rng) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("sampler: temperature must be positive");
  }
  std::vector<std::pair<double, int>> pool;
  pool.reserve(allowed.size());
  for (int id : allowed) pool.emplace_back(logits(id) / temperature, id);
  if (top_k > 0 && top_k < static_cast<int>(pool.size())) {
    std::stable_sort(pool.begin(), pool.end(),
                     [](const auto& a, const auto& b) {
                       if (a.first != b.first) return a.first > b.first;
                       return a.second < b.second;
                     });
    pool.resize(static_cast<std::size_t>(top_k));
  }
  double mx = pool.front().first;
  for (const auto& [logit, id] : pool) mx = std::max(mx, logit);
  double total = 0.0;
  std::vector<double> weights(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    weights[i] = std::exp(pool[i].first - mx);
    total += weights[i];
  }
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i + 1 < pool.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return pool[i].second;
  }
  return pool.back().second;
}

}  // namespace

std::vector<int> sample_sequence_ids(const TransformerLM& model,
                                     const SequenceLayout& layout,
                                     const SampleParams& params,
                                     std::uint64_t seed) {
  rng::Engine rng(seed);
  const int block = layout.block_len();
  const int capacity = 2 + params.max_events * block;
  if (capacity > model.config().max_len) {
    throw std::invalid_argument(
        "sampler: max_events exceeds the model context window");
  }
  TransformerLM::KvCache cache = model.make_cache(capacity);

  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(capacity));
  out.push_back(layout.sos_id());
  Eigen::VectorXd logits = model.step(cache, layout.sos_id(), 0);

  int events = 0;
  while (events < params.max_events) {
    bool saw_eos = false;
    for (int phase = 0; phase < block; ++phase) {
      const std::vector<int> allowed = allowed_ids(layout, phase);
      const int id =
          draw(logits, allowed, params.top_k, params.temperature, rng);
      out.push_back(id);
      if (id == layout.eos_id()) {
        saw_eos = true;
        break;
      }
      logits = model.step(cache, id, static_cast<int>(out.size()) - 1);
    }
    if (saw_eos) return out;
    ++events;
  }
  out.push_back(layout.eos_id());
  return out;
}

std::vector<std::pair<TimeTokens, LatentCode>> sample_trajectory(
    const TransformerLM& model, const SequenceLayout& layout,
    const SampleParams& params, std::uint64_t seed) {
  return disassemble_sequence(sample_sequence_ids(model, layout, params, seed),
                              layout);
}

std::vector<std::vector<int>> sample_many(const TransformerLM& model,
                                          const SequenceLayout& layout,
                                          const SampleParams& params,
                                          std::uint64_t seed, int n) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = sample_sequence_ids(
        model, layout, params, rng::derive(seed, static_cast<std::uint64_t>(i)));
  }
  return out;
}

}  // namespace resyn
