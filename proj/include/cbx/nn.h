// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CBX_NN_H_
#define CBX_NN_H_

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbx/common.h"

namespace cbx {
namespace nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
};

enum class BlockKind : uint32_t {
  kDense = 1,
  kBiRecurrent = 2,
  kConv1dStrided = 3,
  kSelfAttention = 4,
  kRelu = 5,
};

// Everything a backward pass needs from its matching forward. block_id guards
// against pairing a cache with the wrong block.
struct Cache {
  uint64_t block_id = 0;
  Mat x;
  std::vector<Mat> aux;
};

// Sequence map on T x D matrices (rows are time steps). forward is pure;
// backward accumulates parameter gradients and returns the input gradient.
class Block {
 public:
  Block();
  virtual ~Block() = default;

  virtual BlockKind kind() const = 0;
  virtual int in_dim() const = 0;
  virtual int out_dim() const = 0;
  virtual Mat Forward(const Mat& x, Cache* cache) const = 0;
  virtual Mat Backward(const Cache& cache, const Mat& grad_out) = 0;
  virtual std::vector<Param*> Params() = 0;

  void ZeroGrad();
  uint64_t id() const { return id_; }

 protected:
  void CheckCache(const Cache& cache) const;

 private:
  uint64_t id_;
};

class Dense : public Block {
 public:
  // y = x W^T + b
  Dense(int in, int out, Rng* rng);

  BlockKind kind() const override { return BlockKind::kDense; }
  int in_dim() const override { return in_; }
  int out_dim() const override { return out_; }
  Mat Forward(const Mat& x, Cache* cache) const override;
  Mat Backward(const Cache& cache, const Mat& grad_out) override;
  std::vector<Param*> Params() override { return {&w_, &b_}; }

  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  int in_, out_;
  Param w_, b_;
};

class Relu : public Block {
 public:
  explicit Relu(int dim) : dim_(dim) {}

  BlockKind kind() const override { return BlockKind::kRelu; }
  int in_dim() const override { return dim_; }
  int out_dim() const override { return dim_; }
  Mat Forward(const Mat& x, Cache* cache) const override;
  Mat Backward(const Cache& cache, const Mat& grad_out) override;
  std::vector<Param*> Params() override { return {}; }

 private:
  int dim_;
};

// Bidirectional gated recurrent sequence map with a linear projection
// combining the two directions, as one unit.
class BiRecurrent : public Block {
 public:
  BiRecurrent(int in, int hidden, int out, Rng* rng);

  BlockKind kind() const override { return BlockKind::kBiRecurrent; }
  int in_dim() const override { return in_; }
  int out_dim() const override { return out_; }
  int hidden_dim() const { return hidden_; }
  Mat Forward(const Mat& x, Cache* cache) const override;
  Mat Backward(const Cache& cache, const Mat& grad_out) override;
  std::vector<Param*> Params() override;

 private:
  // gates stacked [z; r; n]
  Mat RunDirection(const Mat& x, bool backward_dir, const Param& wx, const Param& wh,
                   const Param& bx, const Param& bh, Mat* gates, Mat* ghn) const;

  int in_, hidden_, out_;
  Param wx_f_, wh_f_, bx_f_, bh_f_;
  Param wx_b_, wh_b_, bx_b_, bh_b_;
  Param proj_w_, proj_b_;
};

// 1-D convolution over time with stride; T_out = ceil(T / stride).
class Conv1dStrided : public Block {
 public:
  Conv1dStrided(int in_ch, int out_ch, int kernel, int stride, Rng* rng);

  BlockKind kind() const override { return BlockKind::kConv1dStrided; }
  int in_dim() const override { return in_ch_; }
  int out_dim() const override { return out_ch_; }
  int stride() const { return stride_; }
  Mat Forward(const Mat& x, Cache* cache) const override;
  Mat Backward(const Cache& cache, const Mat& grad_out) override;
  std::vector<Param*> Params() override { return {&w_, &b_}; }

 private:
  int in_ch_, out_ch_, kernel_, stride_;
  Param w_, b_;  // w: out_ch x (in_ch * kernel)
};

// Single-head dot-product attention over time. With uniform attention
// weights every output row is the temporal mean of the values.
class SelfAttention : public Block {
 public:
  SelfAttention(int in, int dim, Rng* rng);

  BlockKind kind() const override { return BlockKind::kSelfAttention; }
  int in_dim() const override { return in_; }
  int out_dim() const override { return dim_; }
  Mat Forward(const Mat& x, Cache* cache) const override;
  Mat Backward(const Cache& cache, const Mat& grad_out) override;
  std::vector<Param*> Params() override { return {&wq_, &wk_, &wv_}; }

  Param& query_weight() { return wq_; }

 private:
  int in_, dim_;
  Param wq_, wk_, wv_;
};

// Plain sequential container.
class Stack {
 public:
  Stack() = default;
  Stack(Stack&&) = default;
  Stack& operator=(Stack&&) = default;

  template <typename T, typename... Args>
  T* Add(Args&&... args) {
    auto b = std::make_unique<T>(std::forward<Args>(args)...);
    T* raw = b.get();
    blocks_.push_back(std::move(b));
    return raw;
  }

  Mat Forward(const Mat& x, std::vector<Cache>* caches) const;
  Mat Backward(const std::vector<Cache>& caches, const Mat& grad_out);
  std::vector<Param*> Params();
  std::vector<Block*> blocks();
  std::vector<const Block*> blocks() const;
  void ZeroGrad();
  bool empty() const { return blocks_.empty(); }

 private:
  std::vector<std::unique_ptr<Block>> blocks_;
};

// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|,
// 1e-8), with central differences of step h against the scalar probe
// sum(forward(x) .* R) for a fixed random R.
double GradCheck(Block* block, const Mat& x, double h, uint64_t seed);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg);

  // Clips the global gradient norm, then applies one bias-corrected update.
  // Throws on non-finite gradients.
  void Step();
  void ZeroGrad();
  int step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Param*> params_;
  std::vector<Mat> m_, v_;
  AdamConfig cfg_;
  int step_ = 0;
};

// Checkpoint: magic, version, block manifest (kind + parameter shapes), then
// row-major float32 payloads in manifest order.
void SaveCheckpoint(const std::string& path, const std::vector<const Block*>& blocks);
void LoadCheckpoint(const std::string& path, const std::vector<Block*>& blocks);

// Single-matrix cache file: magic, rows, cols, row-major float32 payload.
// Used for embedding caches and image feature grids.
void WriteMatrixCache(const std::string& path, const Mat& m);
Mat ReadMatrixCache(const std::string& path);

}  // namespace nn
}  // namespace cbx

#endif  // CBX_NN_H_
