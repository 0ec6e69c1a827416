// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cbx/nn.h"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>

namespace cbx {
namespace nn {

namespace {

std::atomic<uint64_t> g_block_ids{1};

void XavierInit(Mat* m, Rng* rng) {
  const double s = std::sqrt(6.0 / (m->rows() + m->cols()));
  for (Eigen::Index i = 0; i < m->rows(); i++)
    for (Eigen::Index j = 0; j < m->cols(); j++) (*m)(i, j) = rng->Uniform(-s, s);
}

inline double Sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

Mat ReverseRows(const Mat& x) { return x.colwise().reverse(); }

}  // namespace

Block::Block() : id_(g_block_ids.fetch_add(1)) {}

void Block::ZeroGrad() {
  for (Param* p : Params()) p->grad.setZero();
}

void Block::CheckCache(const Cache& cache) const {
  Require(cache.block_id == id_, "Block::Backward: cache does not belong to this block");
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(int in, int out, Rng* rng)
    : in_(in), out_(out), w_("w", out, in), b_("b", out, 1) {
  XavierInit(&w_.value, rng);
}

Mat Dense::Forward(const Mat& x, Cache* cache) const {
  Require(x.cols() == in_, "Dense: input width mismatch");
  if (cache) {
    cache->block_id = id();
    cache->x = x;
  }
  return (x * w_.value.transpose()).rowwise() + b_.value.col(0).transpose();
}

Mat Dense::Backward(const Cache& cache, const Mat& grad_out) {
  CheckCache(cache);
  w_.grad.noalias() += grad_out.transpose() * cache.x;
  b_.grad.col(0) += grad_out.colwise().sum().transpose();
  return grad_out * w_.value;
}

// ---------------------------------------------------------------------------
// Relu

Mat Relu::Forward(const Mat& x, Cache* cache) const {
  Require(x.cols() == dim_, "Relu: input width mismatch");
  if (cache) {
    cache->block_id = id();
    cache->x = x;
  }
  return x.cwiseMax(0.0);
}

Mat Relu::Backward(const Cache& cache, const Mat& grad_out) {
  CheckCache(cache);
  return ((cache.x.array() > 0.0).cast<double>() * grad_out.array()).matrix();
}

// ---------------------------------------------------------------------------
// BiRecurrent: gated recurrent unit in each direction plus a projection.

BiRecurrent::BiRecurrent(int in, int hidden, int out, Rng* rng)
    : in_(in),
      hidden_(hidden),
      out_(out),
      wx_f_("wx_f", 3 * hidden, in),
      wh_f_("wh_f", 3 * hidden, hidden),
      bx_f_("bx_f", 3 * hidden, 1),
      bh_f_("bh_f", 3 * hidden, 1),
      wx_b_("wx_b", 3 * hidden, in),
      wh_b_("wh_b", 3 * hidden, hidden),
      bx_b_("bx_b", 3 * hidden, 1),
      bh_b_("bh_b", 3 * hidden, 1),
      proj_w_("proj_w", out, 2 * hidden),
      proj_b_("proj_b", out, 1) {
  XavierInit(&wx_f_.value, rng);
  XavierInit(&wh_f_.value, rng);
  XavierInit(&wx_b_.value, rng);
  XavierInit(&wh_b_.value, rng);
  XavierInit(&proj_w_.value, rng);
}

std::vector<Param*> BiRecurrent::Params() {
  return {&wx_f_, &wh_f_, &bx_f_, &bh_f_, &wx_b_, &wh_b_, &bx_b_, &bh_b_, &proj_w_, &proj_b_};
}

// Runs one direction over x (already reversed for the backward direction).
// gates rows hold [z, r, n] post-activation; ghn holds the recurrent input to
// the candidate gate before the reset product.
Mat BiRecurrent::RunDirection(const Mat& x, bool, const Param& wx, const Param& wh,
                              const Param& bx, const Param& bh, Mat* gates, Mat* ghn) const {
  const int t_len = static_cast<int>(x.rows());
  const int h = hidden_;
  Mat gx = x * wx.value.transpose();
  gx.rowwise() += bx.value.col(0).transpose();

  gates->resize(t_len, 3 * h);
  ghn->resize(t_len, h);
  Mat hs(t_len, h);
  Vec hprev = Vec::Zero(h);
  for (int t = 0; t < t_len; t++) {
    Vec gh = wh.value * hprev + bh.value.col(0);
    for (int i = 0; i < h; i++) {
      const double z = Sigmoid(gx(t, i) + gh(i));
      const double r = Sigmoid(gx(t, h + i) + gh(h + i));
      const double gn = gh(2 * h + i);
      const double n = std::tanh(gx(t, 2 * h + i) + r * gn);
      (*gates)(t, i) = z;
      (*gates)(t, h + i) = r;
      (*gates)(t, 2 * h + i) = n;
      (*ghn)(t, i) = gn;
      hs(t, i) = (1.0 - z) * n + z * hprev(i);
    }
    hprev = hs.row(t).transpose();
  }
  return hs;
}

Mat BiRecurrent::Forward(const Mat& x, Cache* cache) const {
  Require(x.cols() == in_, "BiRecurrent: input width mismatch");
  Require(x.rows() >= 1, "BiRecurrent: empty sequence");
  Mat gates_f, ghn_f, gates_b, ghn_b;
  Mat hf = RunDirection(x, false, wx_f_, wh_f_, bx_f_, bh_f_, &gates_f, &ghn_f);
  Mat xr = ReverseRows(x);
  Mat hb_rev = RunDirection(xr, true, wx_b_, wh_b_, bx_b_, bh_b_, &gates_b, &ghn_b);

  Mat concat(x.rows(), 2 * hidden_);
  concat.leftCols(hidden_) = hf;
  concat.rightCols(hidden_) = ReverseRows(hb_rev);

  if (cache) {
    cache->block_id = id();
    cache->x = x;
    cache->aux = {gates_f, ghn_f, hf, gates_b, ghn_b, hb_rev, concat};
  }
  return (concat * proj_w_.value.transpose()).rowwise() + proj_b_.value.col(0).transpose();
}

namespace {

// BPTT for one direction. x and dh are in this direction's processing order.
// Accumulates wx/wh/bias grads, returns grad wrt x.
Mat GruDirBackward(const Mat& x, const Mat& gates, const Mat& ghn, const Mat& hs, const Mat& dh_seq,
                   Param* wx, Param* wh, Param* bx, Param* bh) {
  const int t_len = static_cast<int>(x.rows());
  const int h = static_cast<int>(hs.cols());
  Mat dg(t_len, 3 * h);   // grads wrt [a_z, a_r, gx_n]
  Mat dgh(t_len, 3 * h);  // grads wrt recurrent-side [a_z, a_r, ghn]
  Vec carry = Vec::Zero(h);
  for (int t = t_len - 1; t >= 0; t--) {
    Vec dh = dh_seq.row(t).transpose() + carry;
    Vec hprev = t > 0 ? Vec(hs.row(t - 1).transpose()) : Vec(Vec::Zero(h));
    for (int i = 0; i < h; i++) {
      const double z = gates(t, i);
      const double r = gates(t, h + i);
      const double n = gates(t, 2 * h + i);
      const double gn = ghn(t, i);
      const double dz = dh(i) * (hprev(i) - n);
      const double da_z = dz * z * (1.0 - z);
      const double dn = dh(i) * (1.0 - z);
      const double da_n = dn * (1.0 - n * n);
      const double dghn = da_n * r;
      const double dr = da_n * gn;
      const double da_r = dr * r * (1.0 - r);
      dg(t, i) = da_z;
      dg(t, h + i) = da_r;
      dg(t, 2 * h + i) = da_n;
      dgh(t, i) = da_z;
      dgh(t, h + i) = da_r;
      dgh(t, 2 * h + i) = dghn;
    }
    carry = wh->value.transpose() * dgh.row(t).transpose();
    carry += (dh.array() * gates.row(t).head(h).transpose().array()).matrix();
  }
  Mat hprev_seq = Mat::Zero(t_len, h);
  if (t_len > 1) hprev_seq.bottomRows(t_len - 1) = hs.topRows(t_len - 1);
  wx->grad.noalias() += dg.transpose() * x;
  wh->grad.noalias() += dgh.transpose() * hprev_seq;
  bx->grad.col(0) += dg.colwise().sum().transpose();
  bh->grad.col(0) += dgh.colwise().sum().transpose();
  return dg * wx->value;
}

}  // namespace

Mat BiRecurrent::Backward(const Cache& cache, const Mat& grad_out) {
  CheckCache(cache);
  const Mat& gates_f = cache.aux[0];
  const Mat& ghn_f = cache.aux[1];
  const Mat& hf = cache.aux[2];
  const Mat& gates_b = cache.aux[3];
  const Mat& ghn_b = cache.aux[4];
  const Mat& hb_rev = cache.aux[5];
  const Mat& concat = cache.aux[6];

  proj_w_.grad.noalias() += grad_out.transpose() * concat;
  proj_b_.grad.col(0) += grad_out.colwise().sum().transpose();
  Mat dconcat = grad_out * proj_w_.value;

  Mat dx = GruDirBackward(cache.x, gates_f, ghn_f, hf, dconcat.leftCols(hidden_), &wx_f_, &wh_f_,
                          &bx_f_, &bh_f_);
  Mat xr = ReverseRows(cache.x);
  Mat dhb_rev = ReverseRows(Mat(dconcat.rightCols(hidden_)));
  Mat dxr = GruDirBackward(xr, gates_b, ghn_b, hb_rev, dhb_rev, &wx_b_, &wh_b_, &bx_b_, &bh_b_);
  dx += ReverseRows(dxr);
  return dx;
}

// ---------------------------------------------------------------------------
// Conv1dStrided

Conv1dStrided::Conv1dStrided(int in_ch, int out_ch, int kernel, int stride, Rng* rng)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      w_("w", out_ch, in_ch * kernel),
      b_("b", out_ch, 1) {
  Require(kernel >= 1 && stride >= 1, "Conv1dStrided: bad kernel/stride");
  XavierInit(&w_.value, rng);
}

Mat Conv1dStrided::Forward(const Mat& x, Cache* cache) const {
  Require(x.cols() == in_ch_, "Conv1dStrided: input width mismatch");
  const int t_in = static_cast<int>(x.rows());
  const int t_out = (t_in + stride_ - 1) / stride_;
  const int pad_total = std::max(0, (t_out - 1) * stride_ + kernel_ - t_in);
  const int pad_left = pad_total / 2;

  Mat xcol = Mat::Zero(t_out, in_ch_ * kernel_);
  for (int to = 0; to < t_out; to++) {
    for (int j = 0; j < kernel_; j++) {
      const int t = to * stride_ + j - pad_left;
      if (t < 0 || t >= t_in) continue;
      xcol.row(to).segment(j * in_ch_, in_ch_) = x.row(t);
    }
  }
  if (cache) {
    cache->block_id = id();
    cache->x = x;
    cache->aux = {xcol};
  }
  return (xcol * w_.value.transpose()).rowwise() + b_.value.col(0).transpose();
}

Mat Conv1dStrided::Backward(const Cache& cache, const Mat& grad_out) {
  CheckCache(cache);
  const Mat& xcol = cache.aux[0];
  const int t_in = static_cast<int>(cache.x.rows());
  const int t_out = static_cast<int>(grad_out.rows());
  const int pad_total = std::max(0, (t_out - 1) * stride_ + kernel_ - t_in);
  const int pad_left = pad_total / 2;

  w_.grad.noalias() += grad_out.transpose() * xcol;
  b_.grad.col(0) += grad_out.colwise().sum().transpose();
  Mat dxcol = grad_out * w_.value;
  Mat dx = Mat::Zero(t_in, in_ch_);
  for (int to = 0; to < t_out; to++) {
    for (int j = 0; j < kernel_; j++) {
      const int t = to * stride_ + j - pad_left;
      if (t < 0 || t >= t_in) continue;
      dx.row(t) += dxcol.row(to).segment(j * in_ch_, in_ch_);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// SelfAttention

SelfAttention::SelfAttention(int in, int dim, Rng* rng)
    : in_(in), dim_(dim), wq_("wq", dim, in), wk_("wk", dim, in), wv_("wv", dim, in) {
  XavierInit(&wq_.value, rng);
  XavierInit(&wk_.value, rng);
  XavierInit(&wv_.value, rng);
}

Mat SelfAttention::Forward(const Mat& x, Cache* cache) const {
  Require(x.cols() == in_, "SelfAttention: input width mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  Mat q = x * wq_.value.transpose();
  Mat k = x * wk_.value.transpose();
  Mat v = x * wv_.value.transpose();
  Mat scores = q * k.transpose() * scale;
  Mat attn(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); i++) {
    const double mx = scores.row(i).maxCoeff();
    Eigen::ArrayXd e = (scores.row(i).array() - mx).exp();
    attn.row(i) = (e / e.sum()).matrix();
  }
  if (cache) {
    cache->block_id = id();
    cache->x = x;
    cache->aux = {q, k, v, attn};
  }
  return attn * v;
}

Mat SelfAttention::Backward(const Cache& cache, const Mat& grad_out) {
  CheckCache(cache);
  const Mat& q = cache.aux[0];
  const Mat& k = cache.aux[1];
  const Mat& v = cache.aux[2];
  const Mat& attn = cache.aux[3];
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));

  Mat dv = attn.transpose() * grad_out;
  Mat dattn = grad_out * v.transpose();
  Mat dscores(attn.rows(), attn.cols());
  for (Eigen::Index i = 0; i < attn.rows(); i++) {
    const double dot = dattn.row(i).dot(attn.row(i));
    dscores.row(i) = (attn.row(i).array() * (dattn.row(i).array() - dot)).matrix();
  }
  Mat dq = dscores * k * scale;
  Mat dk = dscores.transpose() * q * scale;

  wq_.grad.noalias() += dq.transpose() * cache.x;
  wk_.grad.noalias() += dk.transpose() * cache.x;
  wv_.grad.noalias() += dv.transpose() * cache.x;
  return dq * wq_.value + dk * wk_.value + dv * wv_.value;
}

// ---------------------------------------------------------------------------
// Stack

Mat Stack::Forward(const Mat& x, std::vector<Cache>* caches) const {
  if (caches) caches->resize(blocks_.size());
  Mat cur = x;
  for (size_t i = 0; i < blocks_.size(); i++) {
    cur = blocks_[i]->Forward(cur, caches ? &(*caches)[i] : nullptr);
  }
  return cur;
}

Mat Stack::Backward(const std::vector<Cache>& caches, const Mat& grad_out) {
  Require(caches.size() == blocks_.size(), "Stack::Backward: cache count mismatch");
  Mat g = grad_out;
  for (size_t i = blocks_.size(); i-- > 0;) {
    g = blocks_[i]->Backward(caches[i], g);
  }
  return g;
}

std::vector<Param*> Stack::Params() {
  std::vector<Param*> out;
  for (auto& b : blocks_) {
    auto p = b->Params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Block*> Stack::blocks() {
  std::vector<Block*> out;
  for (auto& b : blocks_) out.push_back(b.get());
  return out;
}

std::vector<const Block*> Stack::blocks() const {
  std::vector<const Block*> out;
  for (auto& b : blocks_) out.push_back(b.get());
  return out;
}

void Stack::ZeroGrad() {
  for (auto& b : blocks_) b->ZeroGrad();
}

// ---------------------------------------------------------------------------
// Gradient checking

double GradCheck(Block* block, const Mat& x, double h, uint64_t seed) {
  Rng rng(seed);
  Cache cache;
  Mat y0 = block->Forward(x, &cache);
  Mat probe(y0.rows(), y0.cols());
  for (Eigen::Index i = 0; i < probe.rows(); i++)
    for (Eigen::Index j = 0; j < probe.cols(); j++) probe(i, j) = rng.Uniform(-1.0, 1.0);

  block->ZeroGrad();
  block->Backward(cache, probe);

  double max_rel = 0.0;
  for (Param* p : block->Params()) {
    for (Eigen::Index i = 0; i < p->value.rows(); i++) {
      for (Eigen::Index j = 0; j < p->value.cols(); j++) {
        const double saved = p->value(i, j);
        p->value(i, j) = saved + h;
        const double lp = (block->Forward(x, nullptr).array() * probe.array()).sum();
        p->value(i, j) = saved - h;
        const double lm = (block->Forward(x, nullptr).array() * probe.array()).sum();
        p->value(i, j) = saved;
        const double numeric = (lp - lm) / (2.0 * h);
        const double analytic = p->grad(i, j);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
      }
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Param* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::Step() {
  double sq = 0.0;
  for (Param* p : params_) {
    Require(p->grad.allFinite(), "Adam: non-finite gradient in " + p->name);
    sq += p->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double scale = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  step_++;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
  for (size_t i = 0; i < params_.size(); i++) {
    const Mat g = params_[i]->grad * scale;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Mat mhat = m_[i] / bc1;
    const Mat vhat = v_[i] / bc2;
    params_[i]->value -=
        cfg_.lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps)).matrix();
  }
}

void Adam::ZeroGrad() {
  for (Param* p : params_) p->grad.setZero();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'B', 'X', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

void PutU32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<char*>(b), 4);
}

uint32_t GetU32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  Require(f.good(), "checkpoint: truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void SaveCheckpoint(const std::string& path, const std::vector<const Block*>& blocks) {
  std::ofstream f(path, std::ios::binary);
  Require(f.good(), "SaveCheckpoint: cannot open " + path);
  f.write(kMagic, 8);
  PutU32(f, kVersion);
  PutU32(f, static_cast<uint32_t>(blocks.size()));
  for (const Block* b : blocks) {
    auto params = const_cast<Block*>(b)->Params();
    PutU32(f, static_cast<uint32_t>(b->kind()));
    PutU32(f, static_cast<uint32_t>(params.size()));
    for (const Param* p : params) {
      PutU32(f, static_cast<uint32_t>(p->name.size()));
      f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      PutU32(f, static_cast<uint32_t>(p->value.rows()));
      PutU32(f, static_cast<uint32_t>(p->value.cols()));
    }
  }
  for (const Block* b : blocks) {
    auto params = const_cast<Block*>(b)->Params();
    for (const Param* p : params) {
      for (Eigen::Index i = 0; i < p->value.rows(); i++) {
        for (Eigen::Index j = 0; j < p->value.cols(); j++) {
          const float v = static_cast<float>(p->value(i, j));
          f.write(reinterpret_cast<const char*>(&v), 4);
        }
      }
    }
  }
  Require(f.good(), "SaveCheckpoint: write failed for " + path);
}

void LoadCheckpoint(const std::string& path, const std::vector<Block*>& blocks) {
  std::ifstream f(path, std::ios::binary);
  Require(f.good(), "LoadCheckpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  Require(f.good() && std::memcmp(magic, kMagic, 8) == 0,
          "LoadCheckpoint: bad magic in " + path);
  Require(GetU32(f) == kVersion, "LoadCheckpoint: unsupported version in " + path);
  Require(GetU32(f) == blocks.size(), "LoadCheckpoint: block count mismatch in " + path);
  for (Block* b : blocks) {
    Require(GetU32(f) == static_cast<uint32_t>(b->kind()),
            "LoadCheckpoint: block kind mismatch in " + path);
    auto params = b->Params();
    Require(GetU32(f) == params.size(), "LoadCheckpoint: param count mismatch in " + path);
    for (const Param* p : params) {
      const uint32_t name_len = GetU32(f);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      Require(name == p->name, "LoadCheckpoint: param name mismatch: " + name + " vs " + p->name);
      Require(GetU32(f) == static_cast<uint32_t>(p->value.rows()) &&
                  GetU32(f) == static_cast<uint32_t>(p->value.cols()),
              "LoadCheckpoint: shape mismatch for " + p->name);
    }
  }
  for (Block* b : blocks) {
    for (Param* p : b->Params()) {
      for (Eigen::Index i = 0; i < p->value.rows(); i++) {
        for (Eigen::Index j = 0; j < p->value.cols(); j++) {
          float v;
          f.read(reinterpret_cast<char*>(&v), 4);
          Require(f.good(), "LoadCheckpoint: truncated payload in " + path);
          p->value(i, j) = static_cast<double>(v);
        }
      }
    }
  }
}

void WriteMatrixCache(const std::string& path, const Mat& m) {
  std::ofstream f(path, std::ios::binary);
  Require(f.good(), "WriteMatrixCache: cannot open " + path);
  f.write("CBXMAT1\0", 8);
  PutU32(f, static_cast<uint32_t>(m.rows()));
  PutU32(f, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); i++) {
    for (Eigen::Index j = 0; j < m.cols(); j++) {
      const float v = static_cast<float>(m(i, j));
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  Require(f.good(), "WriteMatrixCache: write failed for " + path);
}

Mat ReadMatrixCache(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  Require(f.good(), "ReadMatrixCache: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  Require(f.good() && std::memcmp(magic, "CBXMAT1\0", 8) == 0,
          "ReadMatrixCache: bad magic in " + path);
  const uint32_t rows = GetU32(f);
  const uint32_t cols = GetU32(f);
  Mat m(rows, cols);
  for (uint32_t i = 0; i < rows; i++) {
    for (uint32_t j = 0; j < cols; j++) {
      float v;
      f.read(reinterpret_cast<char*>(&v), 4);
      Require(f.good(), "ReadMatrixCache: truncated payload in " + path);
      m(i, j) = static_cast<double>(v);
    }
  }
  return m;
}

}  // namespace nn
}  // namespace cbx
