#include "resyn/nn.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace resyn::nn {

void Param::init_normal(rng::Engine& rng, double sd) {
  for (Eigen::Index i = 0; i < value.rows(); ++i) {
    for (Eigen::Index j = 0; j < value.cols(); ++j) {
      value(i, j) = rng.normal(0.0, sd);
    }
  }
}

Matrix Embedding::forward(const std::vector<int>& ids) const {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= table.value.rows()) {
      throw std::out_of_range("embedding '" + table.name + "': id " +
                              std::to_string(id) + " outside vocab " +
                              std::to_string(table.value.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value.row(id);
  }
  return out;
}

void Embedding::backward(const std::vector<int>& ids, const Matrix& dout) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    table.grad.row(ids[i]) += dout.row(static_cast<Eigen::Index>(i));
  }
}

// im2col for row-blocked batches: out row (b*l_out + o) holds the receptive
// field of output position o of item b, laid out tap-major (tap t, channel c)
// at column t*in_ch + c.
static Matrix im2col(const Matrix& x, int batch, int l_in, int in_ch,
                     int kernel, int stride, int pad, int l_out) {
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(batch) * l_out,
                             static_cast<Eigen::Index>(in_ch) * kernel);
  for (int b = 0; b < batch; ++b) {
    const int in_base = b * l_in;
    const int out_base = b * l_out;
    for (int o = 0; o < l_out; ++o) {
      const int start = o * stride - pad;
      for (int t = 0; t < kernel; ++t) {
        const int src = start + t;
        if (src < 0 || src >= l_in) continue;
        cols.block(out_base + o, t * in_ch, 1, in_ch) =
            x.block(in_base + src, 0, 1, in_ch);
      }
    }
  }
  return cols;
}

static Matrix col2im(const Matrix& dcols, int batch, int l_in, int in_ch,
                     int kernel, int stride, int pad, int l_out) {
  Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(batch) * l_in, in_ch);
  for (int b = 0; b < batch; ++b) {
    const int in_base = b * l_in;
    const int out_base = b * l_out;
    for (int o = 0; o < l_out; ++o) {
      const int start = o * stride - pad;
      for (int t = 0; t < kernel; ++t) {
        const int src = start + t;
        if (src < 0 || src >= l_in) continue;
        dx.block(in_base + src, 0, 1, in_ch) +=
            dcols.block(out_base + o, t * in_ch, 1, in_ch);
      }
    }
  }
  return dx;
}

Matrix Conv1d::forward(const Matrix& x, int batch, int l_in,
                       Cache* cache) const {
  if (x.rows() != static_cast<Eigen::Index>(batch) * l_in ||
      x.cols() != in_ch) {
    throw std::invalid_argument("conv '" + w.name + "': bad input shape");
  }
  const int lo = l_out(l_in);
  Matrix cols = im2col(x, batch, l_in, in_ch, kernel, stride, pad, lo);
  Matrix y = cols * w.value;
  y.rowwise() += b.value.row(0);
  if (cache) {
    cache->cols = std::move(cols);
    cache->batch = batch;
    cache->l_in = l_in;
  }
  return y;
}

Matrix Conv1d::backward(const Matrix& dy, const Cache& cache) {
  w.grad.noalias() += cache.cols.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  Matrix dcols = dy * w.value.transpose();
  return col2im(dcols, cache.batch, cache.l_in, in_ch, kernel, stride, pad,
                l_out(cache.l_in));
}

// Zero-stuffing: input position i lands at stuffed position 2i; stuffed
// length is 2*l_in (one trailing zero), so the stride-1 convolution keeps
// the doubled length exactly.
static Matrix stuff_rows(const Matrix& x, int batch, int l_in) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(batch) * 2 * l_in,
                            x.cols());
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < l_in; ++i) {
      out.row(b * 2 * l_in + 2 * i) = x.row(b * l_in + i);
    }
  }
  return out;
}

static Matrix unstuff_rows(const Matrix& dstuffed, int batch, int l_in,
                           int cols) {
  Matrix dx(static_cast<Eigen::Index>(batch) * l_in, cols);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < l_in; ++i) {
      dx.row(b * l_in + i) = dstuffed.row(b * 2 * l_in + 2 * i);
    }
  }
  return dx;
}

Matrix ConvTranspose1d::forward(const Matrix& x, int batch, int l_in,
                                Cache* cache) const {
  if (x.rows() != static_cast<Eigen::Index>(batch) * l_in ||
      x.cols() != in_ch) {
    throw std::invalid_argument("convT '" + w.name + "': bad input shape");
  }
  const int m = 2 * l_in;
  Matrix stuffed = stuff_rows(x, batch, l_in);
  Matrix cols = im2col(stuffed, batch, m, in_ch, kernel, /*stride=*/1, pad, m);
  Matrix y = cols * w.value;
  y.rowwise() += b.value.row(0);
  if (cache) {
    cache->cols = std::move(cols);
    cache->batch = batch;
    cache->l_in = l_in;
  }
  return y;
}

Matrix ConvTranspose1d::backward(const Matrix& dy, const Cache& cache) {
  const int m = 2 * cache.l_in;
  w.grad.noalias() += cache.cols.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  Matrix dcols = dy * w.value.transpose();
  Matrix dstuffed =
      col2im(dcols, cache.batch, m, in_ch, kernel, /*stride=*/1, pad, m);
  return unstuff_rows(dstuffed, cache.batch, cache.l_in, in_ch);
}

Matrix BatchNorm1d::forward(const Matrix& x, bool train, Cache* cache) {
  const double n = static_cast<double>(x.rows());
  Eigen::RowVectorXd mean, var;
  if (train) {
    mean = x.colwise().mean();
    Matrix centered = x.rowwise() - mean;
    var = centered.array().square().colwise().mean();
    running_mean.value.row(0) =
        (1.0 - momentum) * running_mean.value.row(0) + momentum * mean;
    running_var.value.row(0) =
        (1.0 - momentum) * running_var.value.row(0) + momentum * var;
    Eigen::RowVectorXd invstd = (var.array() + eps).rsqrt();
    Matrix xhat = centered.array().rowwise() * invstd.array();
    Matrix y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
    y.rowwise() += beta.value.row(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->invstd = std::move(invstd);
      cache->centered = std::move(centered);
    }
    (void)n;
    return y;
  }
  Eigen::RowVectorXd invstd =
      (running_var.value.row(0).array() + eps).rsqrt();
  Matrix xhat =
      (x.rowwise() - running_mean.value.row(0)).array().rowwise() *
      invstd.array();
  Matrix y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
  y.rowwise() += beta.value.row(0);
  return y;
}

Matrix BatchNorm1d::backward(const Matrix& dy, const Cache& cache) {
  const double n = static_cast<double>(dy.rows());
  gamma.grad.row(0) +=
      (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();

  // Gradient through batch statistics.
  Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
  Eigen::RowVectorXd sum_dxhat_xhat =
      (dxhat.array() * cache.xhat.array()).colwise().sum();
  Matrix dx =
      ((dxhat * n).rowwise() - sum_dxhat -
       (cache.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix())
          .array()
          .rowwise() *
      (cache.invstd.array() / n);
  return dx;
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const double c = static_cast<double>(x.cols());
  Vector mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  Vector var = centered.array().square().rowwise().sum() / c;
  Vector invstd = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().colwise() * invstd.array();
  Matrix y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
  y.rowwise() += beta.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->invstd = std::move(invstd);
  }
  return y;
}

Matrix LayerNorm::backward(const Matrix& dy, const Cache& cache) {
  const double c = static_cast<double>(dy.cols());
  gamma.grad.row(0) +=
      (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();

  Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  Vector sum_dxhat = dxhat.rowwise().sum();
  Vector sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().sum();
  Matrix dx =
      ((dxhat * c).colwise() - sum_dxhat -
       (cache.xhat.array().colwise() * sum_dxhat_xhat.array()).matrix())
          .array()
          .colwise() *
      (cache.invstd.array() / c);
  return dx;
}

Matrix Linear::forward(const Matrix& x, Cache* cache) const {
  Matrix y = x * w.value;
  y.rowwise() += b.value.row(0);
  if (cache) cache->x = x;
  return y;
}

Matrix Linear::backward(const Matrix& dy, const Cache& cache) {
  w.grad.noalias() += cache.x.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  return dy * w.value.transpose();
}

Matrix Relu::forward(const Matrix& x, Cache* cache) {
  Matrix mask = (x.array() > 0.0).cast<double>();
  Matrix y = x.cwiseProduct(mask);
  if (cache) cache->mask = std::move(mask);
  return y;
}

Matrix Relu::backward(const Matrix& dy, const Cache& cache) {
  return dy.cwiseProduct(cache.mask);
}

static double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

static double gelu_grad_scalar(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
  return cdf + x * pdf;
}

Matrix Gelu::forward(const Matrix& x, Cache* cache) {
  if (cache) cache->x = x;
  return x.unaryExpr(&gelu_scalar);
}

Matrix Gelu::backward(const Matrix& dy, const Cache& cache) {
  return dy.cwiseProduct(cache.x.unaryExpr(&gelu_grad_scalar));
}

Matrix Dropout::forward(const Matrix& x, double p, bool train,
                        rng::Engine& rng, Cache* cache) {
  if (!train || p <= 0.0) {
    if (cache) cache->active = false;
    return x;
  }
  const double scale = 1.0 / (1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      mask(i, j) = rng.uniform() < p ? 0.0 : scale;
    }
  }
  Matrix y = x.cwiseProduct(mask);
  if (cache) {
    cache->mask = std::move(mask);
    cache->active = true;
  }
  return y;
}

Matrix Dropout::backward(const Matrix& dy, const Cache& cache) {
  if (!cache.active) return dy;
  return dy.cwiseProduct(cache.mask);
}

void softmax_rows(Matrix& x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    x.row(i) = (x.row(i).array() - mx).exp();
    x.row(i) /= x.row(i).sum();
  }
}

double cross_entropy(const Matrix& logits, const std::vector<int>& targets,
                     Matrix* dlogits) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw std::invalid_argument("cross_entropy: target count mismatch");
  }
  Matrix probs = logits;
  softmax_rows(probs);
  double loss = 0.0;
  long counted = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (targets[i] < 0) continue;
    loss -= std::log(std::max(probs(i, targets[i]), 1e-300));
    ++counted;
  }
  if (counted == 0) {
    if (dlogits) *dlogits = Matrix::Zero(logits.rows(), logits.cols());
    return 0.0;
  }
  loss /= static_cast<double>(counted);
  if (dlogits) {
    *dlogits = probs;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      if (targets[i] < 0) {
        dlogits->row(i).setZero();
      } else {
        (*dlogits)(i, targets[i]) -= 1.0;
        dlogits->row(i) /= static_cast<double>(counted);
      }
    }
  }
  return loss;
}

void AdamW::step(const std::vector<Param*>& params) {
  if (slots_.empty()) {
    slots_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      slots_[i].m = Matrix::Zero(params[i]->value.rows(),
                                 params[i]->value.cols());
      slots_[i].v = slots_[i].m;
    }
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1, step_count_);
  const double bc2 = 1.0 - std::pow(beta2, step_count_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (!p.trainable) continue;
    Slot& s = slots_[i];
    s.m = beta1 * s.m + (1.0 - beta1) * p.grad;
    s.v = beta2 * s.v.array() + (1.0 - beta2) * p.grad.array().square();
    Matrix mhat = s.m / bc1;
    Matrix vhat = s.v / bc2;
    p.value.array() -=
        lr * (mhat.array() / (vhat.array().sqrt() + eps) +
              weight_decay * p.value.array());
  }
}

// --------------------------- checkpoint IO ---------------------------------

void save_checkpoint(const std::string& dir, const std::vector<Param*>& params,
                     const nlohmann::ordered_json& meta) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "resyn-checkpoint-v1";
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::ordered_json::object();

  std::string blob;
  for (const Param* p : params) {
    nlohmann::ordered_json entry;
    entry["shape"] = {p->value.rows(), p->value.cols()};
    entry["dtype"] = "float32";
    entry["offset"] = blob.size();
    manifest["tensors"][p->name] = entry;
    // Row-major little-endian float32.
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        const float f = static_cast<float>(p->value(i, j));
        blob.append(reinterpret_cast<const char*>(&f), sizeof(float));
      }
    }
  }

  std::ofstream bin(dir + "/weights.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot write " + dir);
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream mf(dir + "/manifest.json", std::ios::binary);
  mf << manifest.dump(2) << "\n";
}

nlohmann::json load_checkpoint(const std::string& dir,
                               const std::vector<Param*>& params) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) {
    throw std::runtime_error("checkpoint: missing manifest in " + dir);
  }
  nlohmann::json manifest;
  mf >> manifest;
  std::ifstream bin(dir + "/weights.bin", std::ios::binary);
  if (!bin) {
    throw std::runtime_error("checkpoint: missing weights.bin in " + dir);
  }
  std::string blob((std::istreambuf_iterator<char>(bin)),
                   std::istreambuf_iterator<char>());

  const auto& tensors = manifest.at("tensors");
  for (Param* p : params) {
    if (!tensors.contains(p->name)) {
      throw std::runtime_error("checkpoint: tensor '" + p->name +
                               "' absent from " + dir);
    }
    const auto& entry = tensors.at(p->name);
    const auto shape = entry.at("shape").get<std::vector<long>>();
    if (shape.size() != 2 || shape[0] != p->value.rows() ||
        shape[1] != p->value.cols()) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + p->name +
                               "'");
    }
    std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t need =
        offset + sizeof(float) * static_cast<std::size_t>(shape[0]) *
                     static_cast<std::size_t>(shape[1]);
    if (blob.size() < need) {
      throw std::runtime_error("checkpoint: blob too small for '" + p->name +
                               "'");
    }
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        float f;
        std::memcpy(&f, blob.data() + offset, sizeof(float));
        offset += sizeof(float);
        p->value(i, j) = static_cast<double>(f);
      }
    }
  }
  return manifest.value("meta", nlohmann::json::object());
}

}  // namespace resyn::nn
