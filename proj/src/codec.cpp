#include "resyn/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace resyn {

void CodecConfig::validate() const {
  if (length <= 0 || length % 32 != 0) {
    throw std::runtime_error("codec: length must be a positive multiple of 32");
  }
  if (embed_dim <= 0 || latent_dim <= 0) {
    throw std::runtime_error("codec: embedding dimensions must be positive");
  }
  if (codebook_size < 2) throw std::runtime_error("codec: K must be >= 2");
  if (depth < 1) throw std::runtime_error("codec: depth must be >= 1");
  if (text_vocab < 2) throw std::runtime_error("codec: text vocab unset");
  if (batch_size < 1) throw std::runtime_error("codec: batch_size must be >= 1");
}

struct Codec::ForwardResult {
  std::vector<nn::Conv1d::Cache> conv;
  std::vector<nn::BatchNorm1d::Cache> bn;
  std::vector<nn::Relu::Cache> relu;
  std::vector<nn::Dropout::Cache> drop;
  std::vector<nn::ConvTranspose1d::Cache> tconv;
  std::vector<nn::BatchNorm1d::Cache> dbn;
  std::vector<nn::Relu::Cache> drelu;
  std::vector<nn::Dropout::Cache> ddrop;
  nn::Linear::Cache htext, htype, hdpe;

  ForwardResult()
      : conv(5), bn(5), relu(5), drop(5), tconv(5), dbn(4), drelu(4),
        ddrop(4) {}
};

Codec::Codec(const CodecConfig& config, std::uint64_t init_seed) : cfg_(config) {
  cfg_.validate();
  rng::Engine rng(rng::derive(init_seed, "codec-init"));
  const int f = cfg_.embed_dim;
  const int fz = cfg_.latent_dim;

  emb_text_ = nn::Embedding("emb_text", cfg_.text_vocab, f);
  emb_type_ = nn::Embedding("emb_type", kTypeVocabSize, f);
  emb_dpe_ = nn::Embedding("emb_dpe", kDpeVocabSize, f);
  const double emb_sd = 1.0 / std::sqrt(static_cast<double>(f));
  emb_text_.table.init_normal(rng, emb_sd);
  emb_type_.table.init_normal(rng, emb_sd);
  emb_dpe_.table.init_normal(rng, emb_sd);

  for (int i = 0; i < 5; ++i) {
    const int in_ch = i == 0 ? f : fz;
    enc_convs_.emplace_back("enc" + std::to_string(i), in_ch, fz, 5, 2, 2);
    enc_convs_.back().w.init_normal(
        rng, std::sqrt(2.0 / static_cast<double>(in_ch * 5)));
    enc_bns_.emplace_back("enc" + std::to_string(i) + ".bn", fz);
  }
  // Decoder mirrors the encoder; the last layer projects back to F channels
  // and carries no normalization or activation.
  for (int i = 0; i < 5; ++i) {
    const int out_ch = i == 4 ? f : fz;
    dec_convs_.emplace_back("dec" + std::to_string(i), fz, out_ch, 5, 2);
    dec_convs_.back().w.init_normal(
        rng, std::sqrt(2.0 / static_cast<double>(fz * 5)));
    if (i < 4) dec_bns_.emplace_back("dec" + std::to_string(i) + ".bn", fz);
  }
  head_text_ = nn::Linear("head_text", f, f);
  head_type_ = nn::Linear("head_type", f, f);
  head_dpe_ = nn::Linear("head_dpe", f, f);
  const double head_sd = 1.0 / std::sqrt(static_cast<double>(f));
  head_text_.w.init_normal(rng, head_sd);
  head_type_.w.init_normal(rng, head_sd);
  head_dpe_.w.init_normal(rng, head_sd);

  codebook_ = Codebook(cfg_.codebook_size, fz, cfg_.ema_decay);
  gather_params();
}

void Codec::gather_params() {
  params_.clear();
  params_.push_back(&emb_text_.table);
  params_.push_back(&emb_type_.table);
  params_.push_back(&emb_dpe_.table);
  for (auto& c : enc_convs_) {
    params_.push_back(&c.w);
    params_.push_back(&c.b);
  }
  for (auto& b : enc_bns_) {
    params_.push_back(&b.gamma);
    params_.push_back(&b.beta);
    params_.push_back(&b.running_mean);
    params_.push_back(&b.running_var);
  }
  for (auto& c : dec_convs_) {
    params_.push_back(&c.w);
    params_.push_back(&c.b);
  }
  for (auto& b : dec_bns_) {
    params_.push_back(&b.gamma);
    params_.push_back(&b.beta);
    params_.push_back(&b.running_mean);
    params_.push_back(&b.running_var);
  }
  for (nn::Linear* l : {&head_text_, &head_type_, &head_dpe_}) {
    params_.push_back(&l->w);
    params_.push_back(&l->b);
  }
  params_.push_back(&codebook_.entries);
  params_.push_back(&codebook_.ema_count);
  params_.push_back(&codebook_.ema_sum);
}

static void flatten_ids(const std::vector<TokenizedEvent>& batch, int length,
                        std::vector<int>& text, std::vector<int>& type,
                        std::vector<int>& dpe) {
  text.clear();
  type.clear();
  dpe.clear();
  for (const auto& e : batch) {
    if (static_cast<int>(e.text_ids.size()) != length) {
      throw std::invalid_argument("codec: event length mismatch");
    }
    text.insert(text.end(), e.text_ids.begin(), e.text_ids.end());
    type.insert(type.end(), e.type_ids.begin(), e.type_ids.end());
    dpe.insert(dpe.end(), e.dpe_ids.begin(), e.dpe_ids.end());
  }
}

nn::Matrix Codec::embed(const std::vector<TokenizedEvent>& batch) const {
  std::vector<int> text, type, dpe;
  flatten_ids(batch, cfg_.length, text, type, dpe);
  nn::Matrix x = emb_text_.forward(text);
  x += emb_type_.forward(type);
  x += emb_dpe_.forward(dpe);
  return x;
}

nn::Matrix Codec::embed(const TokenizedEvent& event) const {
  return embed(std::vector<TokenizedEvent>{event});
}

nn::Matrix Codec::encoder_forward(const nn::Matrix& x, int batch, bool train,
                                  rng::Engine* dropout_rng, ForwardResult* fr) {
  nn::Matrix cur = x;
  int l_cur = cfg_.length;
  for (int i = 0; i < 5; ++i) {
    cur = enc_convs_[i].forward(cur, batch, l_cur, fr ? &fr->conv[i] : nullptr);
    l_cur = enc_convs_[i].l_out(l_cur);
    cur = enc_bns_[i].forward(cur, train, fr ? &fr->bn[i] : nullptr);
    cur = nn::Relu::forward(cur, fr ? &fr->relu[i] : nullptr);
    if (train && dropout_rng) {
      cur = nn::Dropout::forward(cur, cfg_.dropout, true, *dropout_rng,
                                 fr ? &fr->drop[i] : nullptr);
    }
  }
  return cur;
}

nn::Matrix Codec::decoder_forward(const nn::Matrix& z, int batch, bool train,
                                  rng::Engine* dropout_rng, ForwardResult* fr) {
  nn::Matrix cur = z;
  int l_cur = cfg_.latent_len();
  for (int i = 0; i < 5; ++i) {
    cur = dec_convs_[i].forward(cur, batch, l_cur,
                                fr ? &fr->tconv[i] : nullptr);
    l_cur = dec_convs_[i].l_out(l_cur);
    if (i < 4) {
      cur = dec_bns_[i].forward(cur, train, fr ? &fr->dbn[i] : nullptr);
      cur = nn::Relu::forward(cur, fr ? &fr->drelu[i] : nullptr);
      if (train && dropout_rng) {
        cur = nn::Dropout::forward(cur, cfg_.dropout, true, *dropout_rng,
                                   fr ? &fr->ddrop[i] : nullptr);
      }
    }
  }
  return cur;
}

nn::Matrix Codec::encode(const nn::Matrix& x, int batch) {
  if (!x.allFinite()) {
    throw std::invalid_argument("codec: non-finite encoder input");
  }
  return encoder_forward(x, batch, /*train=*/false, nullptr, nullptr);
}

std::vector<LatentCode> Codec::compress(
    const std::vector<TokenizedEvent>& batch) {
  const int b = static_cast<int>(batch.size());
  const int lz = cfg_.latent_len();
  nn::Matrix z = encode(embed(batch), b);
  std::vector<LatentCode> out(batch.size());
  for (int i = 0; i < b; ++i) {
    LatentCode& code = out[i];
    code.indices.assign(lz, std::vector<int>(cfg_.depth, 0));
    for (int p = 0; p < lz; ++p) {
      RqResult rq = rq_quantize(z.row(i * lz + p).transpose(), codebook_,
                                cfg_.depth);
      code.indices[p] = rq.indices;
    }
  }
  return out;
}

// Nearest row of `table` for each row of x under squared Euclidean distance;
// ties resolve to the lowest id.
static std::vector<int> nearest_rows(const nn::Matrix& x,
                                     const nn::Matrix& table) {
  const nn::Matrix scores = x * table.transpose();  // N x V
  Eigen::VectorXd norms = table.rowwise().squaredNorm();
  std::vector<int> ids(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double best_val = norms(0) - 2.0 * scores(i, 0);
    for (Eigen::Index v = 1; v < table.rows(); ++v) {
      const double val = norms(v) - 2.0 * scores(i, v);
      if (val < best_val) {
        best_val = val;
        best = static_cast<int>(v);
      }
    }
    ids[static_cast<std::size_t>(i)] = best;
  }
  return ids;
}

std::vector<TokenizedEvent> Codec::decode(const std::vector<LatentCode>& codes) {
  const int b = static_cast<int>(codes.size());
  const int lz = cfg_.latent_len();
  nn::Matrix z(static_cast<Eigen::Index>(b) * lz, cfg_.latent_dim);
  for (int i = 0; i < b; ++i) {
    if (static_cast<int>(codes[i].indices.size()) != lz) {
      throw std::invalid_argument("codec: latent grid has wrong length");
    }
    for (int p = 0; p < lz; ++p) {
      const auto& depths = codes[i].indices[p];
      if (static_cast<int>(depths.size()) != cfg_.depth) {
        throw std::invalid_argument("codec: latent grid has wrong depth");
      }
      Eigen::VectorXd composed = Eigen::VectorXd::Zero(cfg_.latent_dim);
      for (int idx : depths) composed += codebook_.lut(idx);
      z.row(i * lz + p) = composed.transpose();
    }
  }
  nn::Matrix h = decoder_forward(z, b, /*train=*/false, nullptr, nullptr);
  const nn::Matrix xt = head_text_.forward(h, nullptr);
  const nn::Matrix xy = head_type_.forward(h, nullptr);
  const nn::Matrix xd = head_dpe_.forward(h, nullptr);
  const std::vector<int> text = nearest_rows(xt, emb_text_.table.value);
  const std::vector<int> type = nearest_rows(xy, emb_type_.table.value);
  const std::vector<int> dpe = nearest_rows(xd, emb_dpe_.table.value);

  std::vector<TokenizedEvent> out(codes.size());
  const int l = cfg_.length;
  for (int i = 0; i < b; ++i) {
    out[i].text_ids.assign(text.begin() + i * l, text.begin() + (i + 1) * l);
    out[i].type_ids.assign(type.begin() + i * l, type.begin() + (i + 1) * l);
    out[i].dpe_ids.assign(dpe.begin() + i * l, dpe.begin() + (i + 1) * l);
  }
  return out;
}

namespace {

struct QuantizeStats {
  nn::Matrix composed;      // rows x F_z
  nn::Matrix commit_grad;   // d(commitment)/dz per row
  double commitment = 0.0;  // mean over rows, depths, dims
  Eigen::VectorXd counts;   // assignments per entry
  nn::Matrix sums;          // summed inputs per entry
};

QuantizeStats quantize_batch(const nn::Matrix& z, const Codebook& codebook,
                             int depth) {
  QuantizeStats st;
  const Eigen::Index rows = z.rows();
  const int fz = static_cast<int>(z.cols());
  st.composed = nn::Matrix::Zero(rows, fz);
  st.commit_grad = nn::Matrix::Zero(rows, fz);
  st.counts = Eigen::VectorXd::Zero(codebook.size());
  st.sums = nn::Matrix::Zero(codebook.size(), fz);
  double commit = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    Eigen::VectorXd residual = z.row(r).transpose();
    for (int d = 0; d < depth; ++d) {
      VqResult vq = vq_quantize(residual, codebook);
      st.counts(vq.index - 1) += 1.0;
      st.sums.row(vq.index - 1) += residual.transpose();
      residual -= vq.vector;
      st.composed.row(r) += vq.vector.transpose();
      commit += residual.squaredNorm();
      st.commit_grad.row(r) += residual.transpose();
    }
  }
  const double norm = static_cast<double>(rows) * depth * fz;
  st.commitment = commit / norm;
  st.commit_grad *= 2.0 / norm;
  return st;
}

}  // namespace

CodecLoss Codec::train_step(const std::vector<TokenizedEvent>& batch,
                            rng::Engine& dropout_rng,
                            rng::Engine& codebook_rng, int* reseeded) {
  for (nn::Param* p : params_) p->zero_grad();
  const int b = static_cast<int>(batch.size());
  std::vector<int> text, type, dpe;
  flatten_ids(batch, cfg_.length, text, type, dpe);

  const nn::Matrix x_text = emb_text_.forward(text);
  const nn::Matrix x_type = emb_type_.forward(type);
  const nn::Matrix x_dpe = emb_dpe_.forward(dpe);
  nn::Matrix x = x_text + x_type + x_dpe;

  ForwardResult fr;
  nn::Matrix z = encoder_forward(x, b, true, &dropout_rng, &fr);

  const double batch_mass = static_cast<double>(z.rows()) * cfg_.depth;
  if (!codebook_.initialized) {
    codebook_.init_from_batch(z, batch_mass, codebook_rng);
  }
  QuantizeStats qs = quantize_batch(z, codebook_, cfg_.depth);

  // Straight-through: the decoder consumes the composed codes and the
  // encoder receives the decoder gradient unchanged.
  nn::Matrix h = decoder_forward(qs.composed, b, true, &dropout_rng, &fr);
  nn::Matrix yt = head_text_.forward(h, &fr.htext);
  nn::Matrix yy = head_type_.forward(h, &fr.htype);
  nn::Matrix yd = head_dpe_.forward(h, &fr.hdpe);

  const double numel = static_cast<double>(yt.rows() * yt.cols());
  CodecLoss loss;
  loss.recon_text = (yt - x_text).squaredNorm() / numel;
  loss.recon_type = (yy - x_type).squaredNorm() / numel;
  loss.recon_dpe = (yd - x_dpe).squaredNorm() / numel;
  loss.commitment = qs.commitment;
  loss.total = loss.recon_text + loss.recon_type + loss.recon_dpe +
               cfg_.beta * loss.commitment;

  nn::Matrix dh = head_text_.backward((yt - x_text) * (2.0 / numel), fr.htext);
  dh += head_type_.backward((yy - x_type) * (2.0 / numel), fr.htype);
  dh += head_dpe_.backward((yd - x_dpe) * (2.0 / numel), fr.hdpe);

  nn::Matrix dcur = dh;
  for (int i = 4; i >= 0; --i) {
    if (i < 4) {
      dcur = nn::Dropout::backward(dcur, fr.ddrop[i]);
      dcur = nn::Relu::backward(dcur, fr.drelu[i]);
      dcur = dec_bns_[i].backward(dcur, fr.dbn[i]);
    }
    dcur = dec_convs_[i].backward(dcur, fr.tconv[i]);
  }
  nn::Matrix dz = dcur + cfg_.beta * qs.commit_grad;
  for (int i = 4; i >= 0; --i) {
    dz = nn::Dropout::backward(dz, fr.drop[i]);
    dz = nn::Relu::backward(dz, fr.relu[i]);
    dz = enc_bns_[i].backward(dz, fr.bn[i]);
    dz = enc_convs_[i].backward(dz, fr.conv[i]);
  }
  emb_text_.backward(text, dz);
  emb_type_.backward(type, dz);
  emb_dpe_.backward(dpe, dz);

  codebook_.ema_update(qs.counts, qs.sums);
  const int n = codebook_.reseed_dead(z, batch_mass, codebook_rng);
  if (reseeded) *reseeded = n;
  return loss;
}

double Codec::loss_for_gradient_check(const std::vector<TokenizedEvent>& batch) {
  for (nn::Param* p : params_) p->zero_grad();
  const int b = static_cast<int>(batch.size());
  std::vector<int> text, type, dpe;
  flatten_ids(batch, cfg_.length, text, type, dpe);

  const nn::Matrix x_text = emb_text_.forward(text);
  const nn::Matrix x_type = emb_type_.forward(type);
  const nn::Matrix x_dpe = emb_dpe_.forward(dpe);
  nn::Matrix x = x_text + x_type + x_dpe;

  ForwardResult fr;
  nn::Matrix z = encoder_forward(x, b, true, nullptr, &fr);
  nn::Matrix h = decoder_forward(z, b, true, nullptr, &fr);
  nn::Matrix yt = head_text_.forward(h, &fr.htext);
  nn::Matrix yy = head_type_.forward(h, &fr.htype);
  nn::Matrix yd = head_dpe_.forward(h, &fr.hdpe);

  const double numel = static_cast<double>(yt.rows() * yt.cols());
  const double loss =
      ((yt - x_text).squaredNorm() + (yy - x_type).squaredNorm() +
       (yd - x_dpe).squaredNorm()) /
      numel;

  nn::Matrix dh = head_text_.backward((yt - x_text) * (2.0 / numel), fr.htext);
  dh += head_type_.backward((yy - x_type) * (2.0 / numel), fr.htype);
  dh += head_dpe_.backward((yd - x_dpe) * (2.0 / numel), fr.hdpe);
  nn::Matrix dcur = dh;
  for (int i = 4; i >= 0; --i) {
    if (i < 4) {
      dcur = nn::Relu::backward(dcur, fr.drelu[i]);
      dcur = dec_bns_[i].backward(dcur, fr.dbn[i]);
    }
    dcur = dec_convs_[i].backward(dcur, fr.tconv[i]);
  }
  for (int i = 4; i >= 0; --i) {
    dcur = nn::Relu::backward(dcur, fr.relu[i]);
    dcur = enc_bns_[i].backward(dcur, fr.bn[i]);
    dcur = enc_convs_[i].backward(dcur, fr.conv[i]);
  }
  emb_text_.backward(text, dcur);
  emb_type_.backward(type, dcur);
  emb_dpe_.backward(dpe, dcur);
  return loss;
}

CodecLoss Codec::eval_loss(const std::vector<TokenizedEvent>& batch) {
  const int b = static_cast<int>(batch.size());
  std::vector<int> text, type, dpe;
  flatten_ids(batch, cfg_.length, text, type, dpe);
  const nn::Matrix x_text = emb_text_.forward(text);
  const nn::Matrix x_type = emb_type_.forward(type);
  const nn::Matrix x_dpe = emb_dpe_.forward(dpe);
  nn::Matrix x = x_text + x_type + x_dpe;
  nn::Matrix z = encoder_forward(x, b, false, nullptr, nullptr);
  QuantizeStats qs = quantize_batch(z, codebook_, cfg_.depth);
  nn::Matrix h = decoder_forward(qs.composed, b, false, nullptr, nullptr);
  nn::Matrix yt = head_text_.forward(h, nullptr);
  nn::Matrix yy = head_type_.forward(h, nullptr);
  nn::Matrix yd = head_dpe_.forward(h, nullptr);
  const double numel = static_cast<double>(yt.rows() * yt.cols());
  CodecLoss loss;
  loss.recon_text = (yt - x_text).squaredNorm() / numel;
  loss.recon_type = (yy - x_type).squaredNorm() / numel;
  loss.recon_dpe = (yd - x_dpe).squaredNorm() / numel;
  loss.commitment = qs.commitment;
  loss.total = loss.recon_text + loss.recon_type + loss.recon_dpe +
               cfg_.beta * loss.commitment;
  return loss;
}

static nlohmann::ordered_json config_to_json(const CodecConfig& c) {
  return {{"length", c.length},
          {"embed_dim", c.embed_dim},
          {"latent_dim", c.latent_dim},
          {"codebook_size", c.codebook_size},
          {"depth", c.depth},
          {"beta", c.beta},
          {"ema_decay", c.ema_decay},
          {"dropout", c.dropout},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"val_fraction", c.val_fraction},
          {"text_vocab", c.text_vocab}};
}

static CodecConfig config_from_json(const nlohmann::json& j) {
  CodecConfig c;
  c.length = j.at("length").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.codebook_size = j.at("codebook_size").get<int>();
  c.depth = j.at("depth").get<int>();
  c.beta = j.at("beta").get<double>();
  c.ema_decay = j.at("ema_decay").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.text_vocab = j.at("text_vocab").get<int>();
  return c;
}

void Codec::save(const std::string& dir,
                 const nlohmann::ordered_json& meta) const {
  nlohmann::ordered_json full = meta;
  full["codec_config"] = config_to_json(cfg_);
  nn::save_checkpoint(dir, params_, full);
}

Codec Codec::load(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("codec: missing manifest in " + dir);
  nlohmann::json manifest;
  mf >> manifest;
  CodecConfig cfg = config_from_json(manifest.at("meta").at("codec_config"));
  Codec codec(cfg, /*init_seed=*/0);
  nn::load_checkpoint(dir, codec.params_);
  codec.codebook_.initialized = true;
  return codec;
}

std::vector<CodecEpochStats> train_codec(
    Codec& codec, const std::vector<TokenizedEvent>& corpus,
    std::uint64_t seed) {
  const CodecConfig& cfg = codec.config();
  if (corpus.empty()) throw std::runtime_error("train_codec: empty corpus");

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng::Engine split_rng(rng::derive(seed, "codec-split"));
  split_rng.shuffle(order);
  const std::size_t val_n = static_cast<std::size_t>(
      cfg.val_fraction * static_cast<double>(order.size()));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + val_n);
  std::vector<std::size_t> train_idx(order.begin() + val_n, order.end());
  if (train_idx.empty()) {
    throw std::runtime_error("train_codec: no training examples after split");
  }

  nn::AdamW opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;

  rng::Engine dropout_rng(rng::derive(seed, "codec-dropout"));
  rng::Engine codebook_rng(rng::derive(seed, "codec-codebook"));
  const std::uint64_t epoch_base = rng::derive(seed, "codec-epoch");

  auto eval_set = [&](const std::vector<std::size_t>& idx) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TokenizedEvent> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(corpus[idx[i]]);
      total += codec.eval_loss(batch).total * static_cast<double>(end - start);
      count += end - start;
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
  };

  std::vector<CodecEpochStats> history;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  long step = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng::Engine epoch_rng(
        rng::derive(epoch_base, static_cast<std::uint64_t>(epoch)));
    epoch_rng.shuffle(train_idx);

    CodecEpochStats stats;
    stats.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TokenizedEvent> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(corpus[train_idx[i]]);
      }
      int reseeded = 0;
      CodecLoss loss =
          codec.train_step(batch, dropout_rng, codebook_rng, &reseeded);
      ++step;
      if (!std::isfinite(loss.total)) {
        throw std::runtime_error("train_codec: divergence at step " +
                                 std::to_string(step));
      }
      opt.step(codec.params());
      stats.train.recon_text += loss.recon_text;
      stats.train.recon_type += loss.recon_type;
      stats.train.recon_dpe += loss.recon_dpe;
      stats.train.commitment += loss.commitment;
      stats.train.total += loss.total;
      stats.reseeded += reseeded;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    stats.train.recon_text /= nb;
    stats.train.recon_type /= nb;
    stats.train.recon_dpe /= nb;
    stats.train.commitment /= nb;
    stats.train.total /= nb;
    stats.val_total = val_idx.empty() ? stats.train.total : eval_set(val_idx);
    history.push_back(stats);

    if (stats.val_total < best_val) {
      best_val = stats.val_total;
      best_epoch = epoch;
    } else if (epoch - best_epoch >= cfg.patience) {
      break;
    }
  }
  return history;
}

}  // namespace resyn
