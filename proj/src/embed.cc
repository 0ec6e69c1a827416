// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cbx/embed.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

namespace cbx {
namespace embed {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double HzToMel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double MelToHz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

Mat MelFilterbank(int bands, int bins, int window_len, int sample_rate) {
  const double f_max = sample_rate / 2.0;
  const double m_lo = HzToMel(0.0), m_hi = HzToMel(f_max);
  std::vector<double> centers(bands + 2);
  for (int i = 0; i < bands + 2; i++) {
    centers[i] = MelToHz(m_lo + (m_hi - m_lo) * i / (bands + 1));
  }
  Mat fb = Mat::Zero(bands, bins);
  for (int b = 0; b < bands; b++) {
    const double lo = centers[b], mid = centers[b + 1], hi = centers[b + 2];
    for (int k = 0; k < bins; k++) {
      const double f = static_cast<double>(k) * sample_rate / window_len;
      if (f > lo && f < mid) {
        fb(b, k) = (f - lo) / (mid - lo);
      } else if (f >= mid && f < hi) {
        fb(b, k) = (hi - f) / (hi - mid);
      }
    }
  }
  return fb;
}

}  // namespace

Mat LogMel(const Waveform& w, const StftConfig& stft, int bands, int sample_rate) {
  auto spec = Stft(w, stft);
  const Mat power = spec.frames.cwiseAbs2();
  static thread_local Mat fb;
  static thread_local int fb_key = 0;
  const int key = bands * 1000000 + stft.window_len * 100 + sample_rate / 1000;
  if (fb_key != key) {
    fb = MelFilterbank(bands, stft.window_len / 2 + 1, stft.window_len, sample_rate);
    fb_key = key;
  }
  Mat mel = power * fb.transpose();  // T x bands
  return ((mel.array() + 1e-10).log() + 10.0) / 8.0;
}

AudioEncoder::AudioEncoder(const EmbedConfig& cfg) : cfg_(cfg) {
  Require(cfg.downsample == 16, "AudioEncoder: conv stack realizes downsampling 16");
  Rng rng(SplitMix64(cfg.seed ^ 0x61656e63ULL));
  const int c = cfg.conv_channels;
  net_.Add<nn::Conv1dStrided>(cfg.logmel_bands, c, 5, 2, &rng);
  net_.Add<nn::Relu>(c);
  net_.Add<nn::Conv1dStrided>(c, c, 5, 2, &rng);
  net_.Add<nn::Relu>(c);
  net_.Add<nn::Conv1dStrided>(c, c, 3, 2, &rng);
  net_.Add<nn::Relu>(c);
  net_.Add<nn::Conv1dStrided>(c, cfg.dim, 3, 2, &rng);
}

AudioFrameEmbedding AudioEncoder::EncodeFeatures(const Mat& logmel,
                                                 std::vector<nn::Cache>* caches) const {
  Require(logmel.cols() == cfg_.logmel_bands, "AudioEncoder: feature width mismatch");
  Require(logmel.rows() >= 1, "AudioEncoder: empty feature sequence");
  Mat y = net_.Forward(logmel, caches);  // T'' x D
  AudioFrameEmbedding out;
  out.downsample_factor = cfg_.downsample;
  out.mat = y.transpose();
  return out;
}

AudioFrameEmbedding AudioEncoder::Encode(const Waveform& w) const {
  Require(trained_, "AudioEncoder: encoder is untrained");
  return EncodeFeatures(Features(w), nullptr);
}

ImageEncoder::ImageEncoder(const EmbedConfig& cfg) : cfg_(cfg) {
  Rng rng(SplitMix64(cfg.seed ^ 0x69656e63ULL));
  net_.Add<nn::Dense>(cfg.patch_dim, cfg.image_hidden, &rng);
  net_.Add<nn::Relu>(cfg.image_hidden);
  net_.Add<nn::Dense>(cfg.image_hidden, cfg.dim, &rng);
}

Mat ImageEncoder::EncodePatches(const Mat& patches, std::vector<nn::Cache>* caches) const {
  Require(patches.cols() == cfg_.patch_dim, "ImageEncoder: patch dim mismatch");
  return net_.Forward(patches, caches);
}

SemanticEmbedding ImageEncoder::Encode(const corpus::ImageGrid& g) const {
  Require(trained_, "ImageEncoder: encoder is untrained");
  Require(g.grid_h * g.grid_w == g.patches.rows(), "ImageEncoder: grid dims mismatch");
  SemanticEmbedding e;
  e.source = SemanticEmbedding::Source::kImage;
  e.mat = EncodePatches(g.patches, nullptr).transpose();  // D x K
  return e;
}

Matchmap ComputeMatchmap(const SemanticEmbedding& e, const AudioFrameEmbedding& a) {
  Require(e.mat.rows() == a.mat.rows(), "ComputeMatchmap: embedding dimensions differ");
  Matchmap p;
  p.mat = e.mat.transpose() * a.mat;
  return p;
}

ConceptActivity ComputeConceptActivity(const Matchmap& p) {
  ConceptActivity out;
  out.values.resize(p.mat.cols());
  for (Eigen::Index t = 0; t < p.mat.cols(); t++) out.values[t] = p.mat.col(t).maxCoeff();
  return out;
}

double PooledSimilarity(const SemanticEmbedding& e, const AudioFrameEmbedding& a) {
  Require(e.mat.rows() == a.mat.rows(), "PooledSimilarity: embedding dimensions differ");
  return e.mat.rowwise().mean().dot(a.mat.rowwise().mean());
}

EmbedTrainResult TrainEmbed(const std::vector<corpus::PairSample>& pairs, AudioEncoder* audio,
                            ImageEncoder* image, const EmbedConfig& cfg) {
  Require(pairs.size() >= 2, "TrainEmbed: need at least two pairs");
  std::set<int> concept_ids;
  for (const auto& p : pairs) concept_ids.insert(p.utterance.concept_id);
  Require(concept_ids.size() >= 2, "TrainEmbed: degenerate corpus with one concept");

  const int n = static_cast<int>(pairs.size());
  std::vector<Mat> logmels(n);
  for (int i = 0; i < n; i++) logmels[i] = audio->Features(pairs[i].utterance.waveform);

  std::vector<nn::Param*> params = audio->net().Params();
  {
    auto ip = image->net().Params();
    params.insert(params.end(), ip.begin(), ip.end());
  }
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.clip_norm = cfg.clip_norm;
  nn::Adam opt(params, acfg);

  Rng rng(SplitMix64(cfg.seed ^ 0x74726e65ULL));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  EmbedTrainResult result;
  const double tau = cfg.temperature;
  for (int epoch = 0; epoch < cfg.epochs; epoch++) {
    // deterministic shuffle
    for (int i = n - 1; i > 0; i--) std::swap(order[i], order[rng.UniformInt(0, i)]);
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    for (int start = 0; start + 2 <= n; start += cfg.batch) {
      const int b = std::min(cfg.batch, n - start);
      if (b < 2) break;

      std::vector<std::vector<nn::Cache>> a_caches(b), i_caches(b);
      std::vector<Mat> a_out(b), i_out(b);  // T'' x D, K x D
      Mat a_mean(b, cfg.dim), i_mean(b, cfg.dim);
      for (int k = 0; k < b; k++) {
        const int idx = order[start + k];
        a_out[k] = audio->net().Forward(logmels[idx], &a_caches[k]);
        i_out[k] = image->EncodePatches(pairs[idx].image.patches, &i_caches[k]);
        a_mean.row(k) = a_out[k].colwise().mean();
        i_mean.row(k) = i_out[k].colwise().mean();
      }

      // scores s(i, j) = pooled_similarity(image_i, audio_j) / tau
      Mat scores = i_mean * a_mean.transpose() / tau;
      Mat p_row(b, b), p_col(b, b);
      double loss = 0.0;
      for (int i = 0; i < b; i++) {
        Eigen::ArrayXd r = scores.row(i).array();
        r -= r.maxCoeff();
        Eigen::ArrayXd er = r.exp();
        p_row.row(i) = (er / er.sum()).matrix().transpose();
        loss -= std::log(std::max(p_row(i, i), 1e-300));
      }
      for (int j = 0; j < b; j++) {
        Eigen::ArrayXd c = scores.col(j).array();
        c -= c.maxCoeff();
        Eigen::ArrayXd ec = c.exp();
        p_col.col(j) = (ec / ec.sum()).matrix();
        loss -= std::log(std::max(p_col(j, j), 1e-300));
      }
      loss /= 2.0 * b;
      loss += cfg.norm_reg * (a_mean.squaredNorm() + i_mean.squaredNorm()) / b;

      Mat g = (p_row - Mat::Identity(b, b) + p_col - Mat::Identity(b, b)) / (2.0 * b);
      Mat d_i_mean = g * a_mean / tau + 2.0 * cfg.norm_reg / b * i_mean;
      Mat d_a_mean = g.transpose() * i_mean / tau + 2.0 * cfg.norm_reg / b * a_mean;

      audio->net().ZeroGrad();
      image->net().ZeroGrad();
      for (int k = 0; k < b; k++) {
        const Eigen::Index ta = a_out[k].rows();
        Mat da = (Mat::Ones(ta, 1) / static_cast<double>(ta)) * d_a_mean.row(k);
        audio->net().Backward(a_caches[k], da);
        const Eigen::Index ki = i_out[k].rows();
        Mat di = (Mat::Ones(ki, 1) / static_cast<double>(ki)) * d_i_mean.row(k);
        image->net().Backward(i_caches[k], di);
      }
      opt.Step();
      epoch_loss += loss;
      epoch_batches++;
    }
    result.loss_trace.push_back(epoch_loss / std::max(1, epoch_batches));
  }
  audio->set_trained(true);
  image->set_trained(true);
  return result;
}

std::pair<double, double> RecallAtK(const AudioEncoder& audio, const ImageEncoder& image,
                                    const std::vector<corpus::PairSample>& eval_pairs, int k) {
  Require(!eval_pairs.empty(), "RecallAtK: empty evaluation set");
  const int n = static_cast<int>(eval_pairs.size());
  Mat a_mean(n, audio.dim()), i_mean(n, image.dim());
  for (int i = 0; i < n; i++) {
    auto a = audio.Encode(eval_pairs[i].utterance.waveform);
    auto e = image.Encode(eval_pairs[i].image);
    a_mean.row(i) = a.mat.rowwise().mean().transpose();
    i_mean.row(i) = e.mat.rowwise().mean().transpose();
  }
  Mat scores = i_mean * a_mean.transpose();  // image query rows, audio columns

  auto recall = [&](bool image_to_audio) {
    int hit = 0;
    for (int q = 0; q < n; q++) {
      const double truth = scores(q, q);
      int rank = 1;
      for (int j = 0; j < n; j++) {
        if (j == q) continue;
        const double s = image_to_audio ? scores(q, j) : scores(j, q);
        if (s > truth) rank++;
      }
      if (rank <= k) hit++;
    }
    return static_cast<double>(hit) / n;
  };
  return {recall(true), recall(false)};
}

EmbedSpace EmbedSpace::Create(const EmbedConfig& cfg) {
  EmbedSpace s;
  s.cfg = cfg;
  s.audio = std::make_unique<AudioEncoder>(cfg);
  s.image = std::make_unique<ImageEncoder>(cfg);
  return s;
}

void EmbedSpace::Save(const std::string& dir) const {
  fs::create_directories(dir);
  nn::SaveCheckpoint((fs::path(dir) / "audio.ckpt").string(), audio->net().blocks());
  nn::SaveCheckpoint((fs::path(dir) / "image.ckpt").string(), image->net().blocks());
  json j;
  j["sample_rate"] = cfg.sample_rate;
  j["window_len"] = cfg.stft.window_len;
  j["hop"] = cfg.stft.hop;
  j["logmel_bands"] = cfg.logmel_bands;
  j["dim"] = cfg.dim;
  j["conv_channels"] = cfg.conv_channels;
  j["image_hidden"] = cfg.image_hidden;
  j["patch_dim"] = cfg.patch_dim;
  j["downsample"] = cfg.downsample;
  std::ofstream f(fs::path(dir) / "embed.json");
  f << j.dump(2) << "\n";
}

EmbedSpace EmbedSpace::Load(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "embed.json");
  Require(f.good(), "EmbedSpace::Load: missing embed.json in " + dir);
  json j = json::parse(f);
  EmbedConfig cfg;
  cfg.sample_rate = j["sample_rate"];
  cfg.stft.window_len = j["window_len"];
  cfg.stft.hop = j["hop"];
  cfg.logmel_bands = j["logmel_bands"];
  cfg.dim = j["dim"];
  cfg.conv_channels = j["conv_channels"];
  cfg.image_hidden = j["image_hidden"];
  cfg.patch_dim = j["patch_dim"];
  cfg.downsample = j["downsample"];
  EmbedSpace s = Create(cfg);
  nn::LoadCheckpoint((fs::path(dir) / "audio.ckpt").string(), s.audio->net().blocks());
  nn::LoadCheckpoint((fs::path(dir) / "image.ckpt").string(), s.image->net().blocks());
  s.audio->set_trained(true);
  s.image->set_trained(true);
  return s;
}

uint64_t EmbedSpace::Checksum(const std::string& dir) const {
  return ChecksumFile((fs::path(dir) / "audio.ckpt").string()) ^
         (ChecksumFile((fs::path(dir) / "image.ckpt").string()) * 0x9e3779b97f4a7c15ULL);
}

}  // namespace embed
}  // namespace cbx
