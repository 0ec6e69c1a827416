// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CBX_EMBED_H_
#define CBX_EMBED_H_

#include <string>
#include <utility>
#include <vector>

#include "cbx/corpus.h"
#include "cbx/nn.h"
#include "cbx/signal.h"

namespace cbx {
namespace embed {

using nn::Mat;

struct SemanticEmbedding {
  enum class Source { kImage, kSpeech };
  Mat mat;  // D x K
  Source source = Source::kImage;
};

struct AudioFrameEmbedding {
  Mat mat;  // D x T''
  int downsample_factor = 16;
};

struct Matchmap {
  Mat mat;  // K x T''
};

struct ConceptActivity {
  std::vector<double> values;  // length T''
  int hop_samples = 1024;      // analysis hop * downsample
};

struct EmbedConfig {
  int sample_rate = 8000;
  StftConfig stft;  // framing for the log-mel front end
  int logmel_bands = 40;
  int dim = 24;  // D
  int conv_channels = 48;
  int image_hidden = 32;
  int patch_dim = 12;
  int downsample = 16;

  // training
  int batch = 16;
  int epochs = 20;
  double lr = 1e-3;
  double temperature = 0.07;
  double norm_reg = 1e-3;
  double clip_norm = 5.0;
  uint64_t seed = 1;
};

// 40-band log-mel features, T x bands, shifted/scaled to roughly unit range.
Mat LogMel(const Waveform& w, const StftConfig& stft, int bands, int sample_rate);

// Strided temporal conv stack over log-mel frames; total downsampling 16.
class AudioEncoder {
 public:
  explicit AudioEncoder(const EmbedConfig& cfg);

  // Requires a trained encoder.
  AudioFrameEmbedding Encode(const Waveform& w) const;
  // Same map on precomputed log-mel features (training and shape probes).
  AudioFrameEmbedding EncodeFeatures(const Mat& logmel, std::vector<nn::Cache>* caches) const;
  Mat Features(const Waveform& w) const { return LogMel(w, cfg_.stft, cfg_.logmel_bands, cfg_.sample_rate); }

  nn::Stack& net() { return net_; }
  const nn::Stack& net() const { return net_; }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }
  int dim() const { return cfg_.dim; }
  int downsample() const { return cfg_.downsample; }
  const EmbedConfig& config() const { return cfg_; }

 private:
  EmbedConfig cfg_;
  nn::Stack net_;
  bool trained_ = false;
};

// Per-patch dense map into the shared space.
class ImageEncoder {
 public:
  explicit ImageEncoder(const EmbedConfig& cfg);

  SemanticEmbedding Encode(const corpus::ImageGrid& g) const;
  Mat EncodePatches(const Mat& patches, std::vector<nn::Cache>* caches) const;  // K x D

  nn::Stack& net() { return net_; }
  const nn::Stack& net() const { return net_; }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }
  int dim() const { return cfg_.dim; }

 private:
  EmbedConfig cfg_;
  nn::Stack net_;
  bool trained_ = false;
};

// P[k, t] = dot(E[:, k], A[:, t])
Matchmap ComputeMatchmap(const SemanticEmbedding& e, const AudioFrameEmbedding& a);

// p[t] = max over k of P[k, t]
ConceptActivity ComputeConceptActivity(const Matchmap& p);

// dot(mean_k E, mean_t A); equals the mean of the matchmap.
double PooledSimilarity(const SemanticEmbedding& e, const AudioFrameEmbedding& a);

struct EmbedTrainResult {
  std::vector<double> loss_trace;  // one point per epoch
};

// Symmetric contrastive training over in-batch negatives with
// PooledSimilarity scores. Both encoders are trained jointly and frozen by
// callers afterwards.
EmbedTrainResult TrainEmbed(const std::vector<corpus::PairSample>& pairs, AudioEncoder* audio,
                            ImageEncoder* image, const EmbedConfig& cfg);

// Fraction of queries whose true partner ranks in the top k, image-to-audio
// and audio-to-image.
std::pair<double, double> RecallAtK(const AudioEncoder& audio, const ImageEncoder& image,
                                    const std::vector<corpus::PairSample>& eval_pairs, int k);

// Encoder pair persistence: audio.ckpt + image.ckpt + embed.json.
struct EmbedSpace {
  EmbedConfig cfg;
  std::unique_ptr<AudioEncoder> audio;
  std::unique_ptr<ImageEncoder> image;

  static EmbedSpace Create(const EmbedConfig& cfg);
  void Save(const std::string& dir) const;
  static EmbedSpace Load(const std::string& dir);
  uint64_t Checksum(const std::string& dir) const;
};

}  // namespace embed
}  // namespace cbx

#endif  // CBX_EMBED_H_
