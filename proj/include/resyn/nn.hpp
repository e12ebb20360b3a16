#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "resyn/rng.hpp"

namespace resyn::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Array = Eigen::ArrayXXd;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool train = true)
      : name(std::move(n)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)),
        trainable(train) {}

  void zero_grad() { grad.setZero(); }
  void init_normal(rng::Engine& rng, double sd);
};

// ---------------------------------------------------------------------------
// Layers. Activations are (rows = batch*positions, cols = channels); each
// layer caches what its backward pass needs in a per-call Cache object so a
// layer instance stays reusable across concurrent forward evaluations.
// ---------------------------------------------------------------------------

struct Embedding {
  Param table;  // vocab x dim

  Embedding() = default;
  Embedding(std::string name, int vocab, int dim)
      : table(std::move(name), vocab, dim) {}

  Matrix forward(const std::vector<int>& ids) const;
  void backward(const std::vector<int>& ids, const Matrix& dout);
};

// 1D convolution over per-item sequences; X holds batch items stacked
// row-blockwise, each of length l_in.
struct Conv1d {
  int in_ch = 0, out_ch = 0, kernel = 5, stride = 2, pad = 2;
  Param w;  // (in_ch*kernel) x out_ch
  Param b;  // 1 x out_ch

  struct Cache {
    Matrix cols;
    int batch = 0;
    int l_in = 0;
  };

  Conv1d() = default;
  Conv1d(std::string name, int in_channels, int out_channels, int k, int s,
         int p)
      : in_ch(in_channels), out_ch(out_channels), kernel(k), stride(s), pad(p),
        w(name + ".w", in_channels * k, out_channels),
        b(name + ".b", 1, out_channels) {}

  int l_out(int l_in) const { return (l_in + 2 * pad - kernel) / stride + 1; }
  Matrix forward(const Matrix& x, int batch, int l_in, Cache* cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
};

// Fractionally-strided counterpart that exactly doubles the length: zeros are
// interleaved (plus one trailing) and a stride-1 convolution is applied.
struct ConvTranspose1d {
  int in_ch = 0, out_ch = 0, kernel = 5, pad = 2;
  Param w;  // (in_ch*kernel) x out_ch
  Param b;  // 1 x out_ch

  struct Cache {
    Matrix cols;
    int batch = 0;
    int l_in = 0;
  };

  ConvTranspose1d() = default;
  ConvTranspose1d(std::string name, int in_channels, int out_channels, int k,
                  int p)
      : in_ch(in_channels), out_ch(out_channels), kernel(k), pad(p),
        w(name + ".w", in_channels * k, out_channels),
        b(name + ".b", 1, out_channels) {}

  int l_out(int l_in) const { return 2 * l_in; }
  Matrix forward(const Matrix& x, int batch, int l_in, Cache* cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
};

// Channel-wise batch normalization; batch statistics while training, running
// statistics at evaluation.
struct BatchNorm1d {
  Param gamma, beta;
  Param running_mean, running_var;  // non-trainable buffers
  double momentum = 0.1;
  double eps = 1e-5;

  struct Cache {
    Matrix xhat;
    Eigen::RowVectorXd invstd;
    Matrix centered;
  };

  BatchNorm1d() = default;
  BatchNorm1d(std::string name, int channels)
      : gamma(name + ".gamma", 1, channels),
        beta(name + ".beta", 1, channels),
        running_mean(name + ".running_mean", 1, channels, false),
        running_var(name + ".running_var", 1, channels, false) {
    gamma.value.setOnes();
    running_var.value.setOnes();
  }

  Matrix forward(const Matrix& x, bool train, Cache* cache);
  Matrix backward(const Matrix& dy, const Cache& cache);
};

struct LayerNorm {
  Param gamma, beta;
  double eps = 1e-5;

  struct Cache {
    Matrix xhat;
    Vector invstd;
  };

  LayerNorm() = default;
  LayerNorm(std::string name, int dim)
      : gamma(name + ".gamma", 1, dim), beta(name + ".beta", 1, dim) {
    gamma.value.setOnes();
  }

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
};

struct Linear {
  Param w;  // in x out
  Param b;  // 1 x out

  struct Cache {
    Matrix x;
  };

  Linear() = default;
  Linear(std::string name, int in, int out)
      : w(name + ".w", in, out), b(name + ".b", 1, out) {}

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
};

struct Relu {
  struct Cache {
    Matrix mask;
  };
  static Matrix forward(const Matrix& x, Cache* cache);
  static Matrix backward(const Matrix& dy, const Cache& cache);
};

struct Gelu {
  struct Cache {
    Matrix x;
  };
  static Matrix forward(const Matrix& x, Cache* cache);
  static Matrix backward(const Matrix& dy, const Cache& cache);
};

struct Dropout {
  struct Cache {
    Matrix mask;
    bool active = false;
  };
  // Inverted dropout; identity when train is false or p == 0.
  static Matrix forward(const Matrix& x, double p, bool train,
                        rng::Engine& rng, Cache* cache);
  static Matrix backward(const Matrix& dy, const Cache& cache);
};

// Row-wise softmax in place.
void softmax_rows(Matrix& x);

// Mean cross-entropy over rows whose target is >= 0 (negative = ignored).
// dlogits is filled with the gradient of that mean.
double cross_entropy(const Matrix& logits, const std::vector<int>& targets,
                     Matrix* dlogits);

struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;

  void step(const std::vector<Param*>& params);

 private:
  struct Slot {
    Matrix m, v;
  };
  std::vector<Slot> slots_;
  long step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/manifest.json maps tensor name -> {shape, dtype, offset}
// into <dir>/weights.bin, a flat little-endian IEEE-754 float32 blob stored
// row-major. Arbitrary metadata (hyperparameters, seed, config hash) is
// echoed under manifest["meta"].
// ---------------------------------------------------------------------------
void save_checkpoint(const std::string& dir, const std::vector<Param*>& params,
                     const nlohmann::ordered_json& meta);
// Loads values into the given params (matched by name; shapes must agree) and
// returns the stored metadata.
nlohmann::json load_checkpoint(const std::string& dir,
                               const std::vector<Param*>& params);

}  // namespace resyn::nn
