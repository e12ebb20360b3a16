#pragma once

#include <string>
#include <vector>

#include "resyn/nn.hpp"

namespace resyn {

struct ARConfig {
  int vocab = 0;
  int max_len = 512;
  int layers = 12;
  int heads = 8;
  int hidden = 512;
  int ff = 2048;
  double lr = 3e-4;
  double weight_decay = 0.01;
  int batch_size = 32;
  int max_epochs = 200;
  int patience = 10;
  double val_fraction = 0.1;

  int head_dim() const { return hidden / heads; }
  void validate() const;
};

struct AREpochStats {
  int epoch = 0;
  double train_nll = 0.0;  // mean per-token
  double val_nll = 0.0;
};

// Decoder-only transformer: learned token and position embeddings, pre-norm
// blocks with causal multi-head attention and a GELU feed-forward, a final
// layer norm and a vocab projection. Backward passes are explicit.
class TransformerLM {
 public:
  TransformerLM(const ARConfig& config, std::uint64_t init_seed);

  const ARConfig& config() const { return cfg_; }
  const std::vector<nn::Param*>& params() const { return params_; }

  // Mean next-token cross-entropy over a padded batch; positions whose
  // target is pad_id (or past the end) are excluded. Fills gradients when
  // with_grad is set.
  double batch_nll(const std::vector<std::vector<int>>& batch, int pad_id,
                   bool with_grad);

  // Full logits for one sequence, eval mode; row t scores token t+1.
  nn::Matrix logits(const std::vector<int>& ids);

  // Incremental decoding state: per-layer key/value rows appended as tokens
  // are consumed.
  struct KvCache {
    std::vector<nn::Matrix> k, v;  // per layer, capacity x hidden
    int len = 0;
  };
  KvCache make_cache(int capacity) const;
  // Feeds one token at the given position and returns the logits row.
  Eigen::VectorXd step(KvCache& cache, int token_id, int position) const;

  void save(const std::string& dir, const nlohmann::ordered_json& meta) const;
  static TransformerLM load(const std::string& dir);

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear wq, wk, wv, wo;
    nn::Linear fc1, fc2;
  };
  struct ForwardState;
  nn::Matrix forward_batch(const std::vector<int>& ids,
                           const std::vector<int>& positions, int bsz,
                           int t_max, ForwardState* state);
  void backward_batch(const nn::Matrix& dlogits, int bsz, int t_max,
                      ForwardState& state);
  void gather_params();

  ARConfig cfg_;
  nn::Embedding tok_emb_, pos_emb_;
  std::vector<Block> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear out_;
  std::vector<nn::Param*> params_;
};

// AdamW training with validation-NLL early stopping; deterministic for a
// fixed seed. Throws on divergence.
std::vector<AREpochStats> train_ar(TransformerLM& model,
                                   const std::vector<std::vector<int>>& sequences,
                                   int pad_id, std::uint64_t seed);

}  // namespace resyn
