#include "resyn/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace resyn {

void ARConfig::validate() const {
  if (vocab < 2) throw std::runtime_error("transformer: vocab unset");
  if (layers < 1) throw std::runtime_error("transformer: layers must be >= 1");
  if (hidden < 1 || heads < 1 || hidden % heads != 0) {
    throw std::runtime_error("transformer: hidden must divide into heads");
  }
  if (max_len < 2) throw std::runtime_error("transformer: max_len too small");
}

TransformerLM::TransformerLM(const ARConfig& config, std::uint64_t init_seed)
    : cfg_(config) {
  cfg_.validate();
  rng::Engine rng(rng::derive(init_seed, "ar-init"));
  const int h = cfg_.hidden;
  const double sd = 0.02;

  tok_emb_ = nn::Embedding("tok_emb", cfg_.vocab, h);
  pos_emb_ = nn::Embedding("pos_emb", cfg_.max_len, h);
  tok_emb_.table.init_normal(rng, sd);
  pos_emb_.table.init_normal(rng, sd);

  blocks_.reserve(cfg_.layers);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.ln1 = nn::LayerNorm(p + "ln1", h);
    b.ln2 = nn::LayerNorm(p + "ln2", h);
    b.wq = nn::Linear(p + "wq", h, h);
    b.wk = nn::Linear(p + "wk", h, h);
    b.wv = nn::Linear(p + "wv", h, h);
    b.wo = nn::Linear(p + "wo", h, h);
    b.fc1 = nn::Linear(p + "fc1", h, cfg_.ff);
    b.fc2 = nn::Linear(p + "fc2", cfg_.ff, h);
    for (nn::Linear* lin : {&b.wq, &b.wk, &b.wv, &b.wo, &b.fc1, &b.fc2}) {
      lin->w.init_normal(rng, sd);
    }
    blocks_.push_back(std::move(b));
  }
  ln_f_ = nn::LayerNorm("ln_f", h);
  out_ = nn::Linear("out", h, cfg_.vocab);
  out_.w.init_normal(rng, sd);
  gather_params();
}

void TransformerLM::gather_params() {
  params_.clear();
  params_.push_back(&tok_emb_.table);
  params_.push_back(&pos_emb_.table);
  for (auto& b : blocks_) {
    for (nn::LayerNorm* ln : {&b.ln1, &b.ln2}) {
      params_.push_back(&ln->gamma);
      params_.push_back(&ln->beta);
    }
    for (nn::Linear* lin : {&b.wq, &b.wk, &b.wv, &b.wo, &b.fc1, &b.fc2}) {
      params_.push_back(&lin->w);
      params_.push_back(&lin->b);
    }
  }
  params_.push_back(&ln_f_.gamma);
  params_.push_back(&ln_f_.beta);
  params_.push_back(&out_.w);
  params_.push_back(&out_.b);
}

namespace {

struct BlockCache {
  nn::LayerNorm::Cache ln1, ln2;
  nn::Linear::Cache q, k, v, o, fc1, fc2;
  nn::Gelu::Cache gelu;
  std::vector<nn::Matrix> probs;  // per (batch item * head), T x T
  nn::Matrix qm, km, vm;
};

struct ForwardCaches {
  std::vector<BlockCache> blocks;
  nn::LayerNorm::Cache ln_f;
  nn::Linear::Cache out;
  std::vector<int> ids, positions;
};

}  // namespace

struct TransformerLM::ForwardState {
  ForwardCaches caches;
};

nn::Matrix TransformerLM::forward_batch(const std::vector<int>& ids,
                                        const std::vector<int>& positions,
                                        int bsz, int t_max,
                                        ForwardState* state) {
  const int h = cfg_.hidden;
  const int nh = cfg_.heads;
  const int dh = cfg_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ForwardCaches* fc = state ? &state->caches : nullptr;
  if (fc) {
    fc->blocks.resize(blocks_.size());
    fc->ids = ids;
    fc->positions = positions;
  }

  nn::Matrix x = tok_emb_.forward(ids) + pos_emb_.forward(positions);

  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Block& blk = blocks_[l];
    BlockCache* c = fc ? &fc->blocks[l] : nullptr;

    nn::Matrix ln1 = blk.ln1.forward(x, c ? &c->ln1 : nullptr);
    nn::Matrix q = blk.wq.forward(ln1, c ? &c->q : nullptr);
    nn::Matrix k = blk.wk.forward(ln1, c ? &c->k : nullptr);
    nn::Matrix v = blk.wv.forward(ln1, c ? &c->v : nullptr);

    nn::Matrix ctx(q.rows(), h);
    if (c) c->probs.assign(static_cast<std::size_t>(bsz) * nh, nn::Matrix());
    for (int b = 0; b < bsz; ++b) {
      for (int hd = 0; hd < nh; ++hd) {
        auto qb = q.block(b * t_max, hd * dh, t_max, dh);
        auto kb = k.block(b * t_max, hd * dh, t_max, dh);
        auto vb = v.block(b * t_max, hd * dh, t_max, dh);
        nn::Matrix scores = qb * kb.transpose() * scale;
        for (int i = 0; i < t_max; ++i) {
          for (int j = i + 1; j < t_max; ++j) {
            scores(i, j) = -std::numeric_limits<double>::infinity();
          }
        }
        nn::softmax_rows(scores);
        ctx.block(b * t_max, hd * dh, t_max, dh) = scores * vb;
        if (c) c->probs[b * nh + hd] = std::move(scores);
      }
    }
    if (c) {
      c->qm = std::move(q);
      c->km = std::move(k);
      c->vm = std::move(v);
    }
    x += blk.wo.forward(ctx, c ? &c->o : nullptr);

    nn::Matrix ln2 = blk.ln2.forward(x, c ? &c->ln2 : nullptr);
    nn::Matrix ff = blk.fc1.forward(ln2, c ? &c->fc1 : nullptr);
    ff = nn::Gelu::forward(ff, c ? &c->gelu : nullptr);
    x += blk.fc2.forward(ff, c ? &c->fc2 : nullptr);
  }

  nn::Matrix hfin = ln_f_.forward(x, fc ? &fc->ln_f : nullptr);
  return out_.forward(hfin, fc ? &fc->out : nullptr);
}

void TransformerLM::backward_batch(const nn::Matrix& dlogits, int bsz,
                                   int t_max, ForwardState& state) {
  ForwardCaches& fc = state.caches;
  const int h = cfg_.hidden;
  const int nh = cfg_.heads;
  const int dh = cfg_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  nn::Matrix dx = ln_f_.backward(out_.backward(dlogits, fc.out), fc.ln_f);
  for (int l = static_cast<int>(blocks_.size()) - 1; l >= 0; --l) {
    Block& blk = blocks_[l];
    BlockCache& c = fc.blocks[l];

    // x3 = x2 + fc2(gelu(fc1(ln2(x2))))
    nn::Matrix dff = blk.fc2.backward(dx, c.fc2);
    dff = nn::Gelu::backward(dff, c.gelu);
    dff = blk.fc1.backward(dff, c.fc1);
    dx += blk.ln2.backward(dff, c.ln2);

    // x2 = x1 + wo(attn(ln1(x1)))
    nn::Matrix dctx = blk.wo.backward(dx, c.o);
    nn::Matrix dq = nn::Matrix::Zero(dctx.rows(), h);
    nn::Matrix dk = nn::Matrix::Zero(dctx.rows(), h);
    nn::Matrix dv = nn::Matrix::Zero(dctx.rows(), h);
    for (int b = 0; b < bsz; ++b) {
      for (int hd = 0; hd < nh; ++hd) {
        const nn::Matrix& probs = c.probs[b * nh + hd];
        auto dctxb = dctx.block(b * t_max, hd * dh, t_max, dh);
        auto qb = c.qm.block(b * t_max, hd * dh, t_max, dh);
        auto kb = c.km.block(b * t_max, hd * dh, t_max, dh);
        auto vb = c.vm.block(b * t_max, hd * dh, t_max, dh);

        dv.block(b * t_max, hd * dh, t_max, dh) = probs.transpose() * dctxb;
        nn::Matrix dprobs = dctxb * vb.transpose();
        nn::Matrix dscores(t_max, t_max);
        for (int i = 0; i < t_max; ++i) {
          const double dot = dprobs.row(i).cwiseProduct(probs.row(i)).sum();
          dscores.row(i) =
              probs.row(i).cwiseProduct((dprobs.row(i).array() - dot).matrix());
        }
        dq.block(b * t_max, hd * dh, t_max, dh) = dscores * kb * scale;
        dk.block(b * t_max, hd * dh, t_max, dh) =
            dscores.transpose() * qb * scale;
      }
    }
    nn::Matrix dln1 = blk.wq.backward(dq, c.q);
    dln1 += blk.wk.backward(dk, c.k);
    dln1 += blk.wv.backward(dv, c.v);
    dx += blk.ln1.backward(dln1, c.ln1);
  }
  tok_emb_.backward(fc.ids, dx);
  pos_emb_.backward(fc.positions, dx);
}

double TransformerLM::batch_nll(const std::vector<std::vector<int>>& batch,
                                int pad_id, bool with_grad) {
  if (batch.empty()) throw std::invalid_argument("transformer: empty batch");
  const int bsz = static_cast<int>(batch.size());
  int t_max = 0;
  for (const auto& seq : batch) {
    t_max = std::max(t_max, static_cast<int>(seq.size()));
  }
  if (t_max > cfg_.max_len) {
    throw std::invalid_argument("transformer: sequence longer than max_len");
  }

  std::vector<int> ids(static_cast<std::size_t>(bsz) * t_max, pad_id);
  std::vector<int> positions(ids.size(), 0);
  std::vector<int> targets(ids.size(), -1);
  for (int b = 0; b < bsz; ++b) {
    const auto& seq = batch[b];
    for (int t = 0; t < t_max; ++t) {
      positions[b * t_max + t] = t;
      if (t < static_cast<int>(seq.size())) ids[b * t_max + t] = seq[t];
    }
    for (int t = 0; t + 1 < static_cast<int>(seq.size()); ++t) {
      if (seq[t + 1] != pad_id) targets[b * t_max + t] = seq[t + 1];
    }
  }

  if (with_grad) {
    for (nn::Param* p : params_) p->zero_grad();
    ForwardState state;
    nn::Matrix logits = forward_batch(ids, positions, bsz, t_max, &state);
    nn::Matrix dlogits;
    const double loss = nn::cross_entropy(logits, targets, &dlogits);
    backward_batch(dlogits, bsz, t_max, state);
    return loss;
  }
  nn::Matrix logits = forward_batch(ids, positions, bsz, t_max, nullptr);
  return nn::cross_entropy(logits, targets, nullptr);
}

nn::Matrix TransformerLM::logits(const std::vector<int>& ids) {
  const int t = static_cast<int>(ids.size());
  std::vector<int> positions(ids.size());
  for (int i = 0; i < t; ++i) positions[i] = i;
  return forward_batch(ids, positions, 1, t, nullptr);
}

TransformerLM::KvCache TransformerLM::make_cache(int capacity) const {
  KvCache cache;
  cache.k.assign(blocks_.size(), nn::Matrix::Zero(capacity, cfg_.hidden));
  cache.v.assign(blocks_.size(), nn::Matrix::Zero(capacity, cfg_.hidden));
  cache.len = 0;
  return cache;
}

Eigen::VectorXd TransformerLM::step(KvCache& cache, int token_id,
                                    int position) const {
  if (position >= cfg_.max_len) {
    throw std::invalid_argument("transformer: position beyond max_len");
  }
  if (cache.len >= cache.k.front().rows()) {
    throw std::invalid_argument("transformer: KV cache exhausted");
  }
  const int nh = cfg_.heads;
  const int dh = cfg_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  nn::Matrix x = tok_emb_.table.value.row(token_id) +
                 pos_emb_.table.value.row(position);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& blk = blocks_[l];
    nn::Matrix ln1 = blk.ln1.forward(x, nullptr);
    nn::Matrix q = blk.wq.forward(ln1, nullptr);
    cache.k[l].row(cache.len) = blk.wk.forward(ln1, nullptr).row(0);
    cache.v[l].row(cache.len) = blk.wv.forward(ln1, nullptr).row(0);
    const int len = cache.len + 1;

    nn::Matrix ctx(1, cfg_.hidden);
    for (int hd = 0; hd < nh; ++hd) {
      auto kb = cache.k[l].block(0, hd * dh, len, dh);
      auto vb = cache.v[l].block(0, hd * dh, len, dh);
      Eigen::RowVectorXd scores =
          q.block(0, hd * dh, 1, dh) * kb.transpose() * scale;
      const double mx = scores.maxCoeff();
      scores = (scores.array() - mx).exp();
      scores /= scores.sum();
      ctx.block(0, hd * dh, 1, dh) = scores * vb;
    }
    x += blk.wo.forward(ctx, nullptr);

    nn::Matrix ln2 = blk.ln2.forward(x, nullptr);
    nn::Matrix ff = blk.fc1.forward(ln2, nullptr);
    ff = nn::Gelu::forward(ff, nullptr);
    x += blk.fc2.forward(ff, nullptr);
  }
  ++cache.len;
  nn::Matrix hfin = ln_f_.forward(x, nullptr);
  return out_.forward(hfin, nullptr).row(0).transpose();
}

static nlohmann::ordered_json ar_config_to_json(const ARConfig& c) {
  return {{"vocab", c.vocab},           {"max_len", c.max_len},
          {"layers", c.layers},         {"heads", c.heads},
          {"hidden", c.hidden},         {"ff", c.ff},
          {"lr", c.lr},                 {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},     {"val_fraction", c.val_fraction}};
}

static ARConfig ar_config_from_json(const nlohmann::json& j) {
  ARConfig c;
  c.vocab = j.at("vocab").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.ff = j.at("ff").get<int>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.val_fraction = j.at("val_fraction").get<double>();
  return c;
}

void TransformerLM::save(const std::string& dir,
                         const nlohmann::ordered_json& meta) const {
  nlohmann::ordered_json full = meta;
  full["ar_config"] = ar_config_to_json(cfg_);
  nn::save_checkpoint(dir, params_, full);
}

TransformerLM TransformerLM::load(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("transformer: missing manifest in " + dir);
  nlohmann::json manifest;
  mf >> manifest;
  ARConfig cfg = ar_config_from_json(manifest.at("meta").at("ar_config"));
  TransformerLM model(cfg, /*init_seed=*/0);
  nn::load_checkpoint(dir, model.params_);
  return model;
}

std::vector<AREpochStats> train_ar(TransformerLM& model,
                                   const std::vector<std::vector<int>>& sequences,
                                   int pad_id, std::uint64_t seed) {
  const ARConfig& cfg = model.config();
  if (sequences.empty()) throw std::runtime_error("train_ar: empty corpus");

  std::vector<std::size_t> order(sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng::Engine split_rng(rng::derive(seed, "ar-split"));
  split_rng.shuffle(order);
  const std::size_t val_n = static_cast<std::size_t>(
      cfg.val_fraction * static_cast<double>(order.size()));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + val_n);
  std::vector<std::size_t> train_idx(order.begin() + val_n, order.end());
  if (train_idx.empty()) {
    throw std::runtime_error("train_ar: no training sequences after split");
  }

  nn::AdamW opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  const std::uint64_t epoch_base = rng::derive(seed, "ar-epoch");

  auto run_set = [&](const std::vector<std::size_t>& idx, bool with_grad,
                     nn::AdamW* optimizer) {
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<int>> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(sequences[idx[i]]);
      }
      const double nll = model.batch_nll(batch, pad_id, with_grad);
      if (!std::isfinite(nll)) {
        throw std::runtime_error("train_ar: divergence at batch " +
                                 std::to_string(batches));
      }
      if (optimizer) optimizer->step(model.params());
      total += nll;
      ++batches;
    }
    return batches == 0 ? 0.0 : total / static_cast<double>(batches);
  };

  std::vector<AREpochStats> history;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng::Engine epoch_rng(
        rng::derive(epoch_base, static_cast<std::uint64_t>(epoch)));
    epoch_rng.shuffle(train_idx);

    AREpochStats stats;
    stats.epoch = epoch;
    stats.train_nll = run_set(train_idx, true, &opt);
    stats.val_nll =
        val_idx.empty() ? stats.train_nll : run_set(val_idx, false, nullptr);
    history.push_back(stats);

    if (stats.val_nll < best_val) {
      best_val = stats.val_nll;
      best_epoch = epoch;
    } else if (epoch - best_epoch >= cfg.patience) {
      break;
    }
  }
  return history;
}

}  // namespace resyn
