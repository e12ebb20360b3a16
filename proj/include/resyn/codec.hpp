#pragma once

#include <string>
#include <vector>

#include "resyn/nn.hpp"
#include "resyn/quantizer.hpp"
#include "resyn/text.hpp"

namespace resyn {

struct CodecConfig {
  int length = 128;         // L, must be divisible by 32 (five stride-2 layers)
  int embed_dim = 256;      // F
  int latent_dim = 256;     // F_z
  int codebook_size = 1024; // K
  int depth = 2;            // D
  double beta = 1.0;        // commitment cost
  double ema_decay = 0.8;
  double dropout = 0.2;
  double lr = 5e-4;
  double weight_decay = 0.01;
  int batch_size = 256;
  int max_epochs = 200;
  int patience = 10;
  double val_fraction = 0.1;
  int text_vocab = 0;       // filled in from the vocabulary

  int latent_len() const { return length / 32; }  // L_z
  void validate() const;
};

// Per-event grid of 1-based codebook indices, position-major.
struct LatentCode {
  std::vector<std::vector<int>> indices;  // [L_z][D]
};

struct CodecLoss {
  double recon_text = 0.0;
  double recon_type = 0.0;
  double recon_dpe = 0.0;
  double commitment = 0.0;
  double total = 0.0;
};

struct CodecEpochStats {
  int epoch = 0;
  CodecLoss train;
  double val_total = 0.0;
  int reseeded = 0;
};

// Event compressor: summed three-channel embeddings, five stride-2 conv
// layers with batch norm and ReLU down to L_z latent vectors, residual
// quantization against a shared EMA codebook, and a mirrored transposed-conv
// decoder with one output head per channel. Token recovery is nearest
// neighbor against the channel embedding tables.
class Codec {
 public:
  Codec(const CodecConfig& config, std::uint64_t init_seed);

  const CodecConfig& config() const { return cfg_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }
  const std::vector<nn::Param*>& params() const { return params_; }

  // x = x_text + x_type + x_dpe, one row per token position.
  nn::Matrix embed(const std::vector<TokenizedEvent>& batch) const;
  nn::Matrix embed(const TokenizedEvent& event) const;

  // Deterministic eval-mode encoder; input rows = batch * L, output rows =
  // batch * L_z. Throws on non-finite input.
  nn::Matrix encode(const nn::Matrix& x, int batch);

  // Full compression of a batch of events (eval mode).
  std::vector<LatentCode> compress(const std::vector<TokenizedEvent>& batch);

  // Decodes index grids back to per-channel token ids (eval mode).
  std::vector<TokenizedEvent> decode(const std::vector<LatentCode>& codes);

  // One training step over a batch; fills grads, updates the EMA codebook,
  // reseeds dead entries. Exposed for tests; train_codec drives it.
  CodecLoss train_step(const std::vector<TokenizedEvent>& batch,
                       rng::Engine& dropout_rng, rng::Engine& codebook_rng,
                       int* reseeded = nullptr);

  // Loss and gradients with the quantizer bypassed (identity bottleneck) so
  // every parameter is reachable by finite differences. Used by the gradient
  // checks; dropout is inactive.
  double loss_for_gradient_check(const std::vector<TokenizedEvent>& batch);

  // Eval-mode loss on a held-out set (no parameter updates).
  CodecLoss eval_loss(const std::vector<TokenizedEvent>& batch);

  void save(const std::string& dir, const nlohmann::ordered_json& meta) const;
  static Codec load(const std::string& dir);

 private:
  struct ForwardResult;
  nn::Matrix encoder_forward(const nn::Matrix& x, int batch, bool train,
                             rng::Engine* dropout_rng, ForwardResult* fr);
  nn::Matrix decoder_forward(const nn::Matrix& z, int batch, bool train,
                             rng::Engine* dropout_rng, ForwardResult* fr);
  void gather_params();

  CodecConfig cfg_;
  nn::Embedding emb_text_, emb_type_, emb_dpe_;
  std::vector<nn::Conv1d> enc_convs_;
  std::vector<nn::BatchNorm1d> enc_bns_;
  std::vector<nn::ConvTranspose1d> dec_convs_;
  std::vector<nn::BatchNorm1d> dec_bns_;
  nn::Linear head_text_, head_type_, head_dpe_;
  Codebook codebook_;
  std::vector<nn::Param*> params_;
};

// Mini-batch AdamW with straight-through quantization, EMA codebook updates,
// dead-entry reseeding and validation-loss early stopping. Deterministic for
// a fixed seed. Throws on divergence, naming the failing step.
std::vector<CodecEpochStats> train_codec(Codec& codec,
                                         const std::vector<TokenizedEvent>& corpus,
                                         std::uint64_t seed);

}  // namespace resyn
