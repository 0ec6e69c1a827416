// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CBX_CONCEPTBEAM_H_
#define CBX_CONCEPTBEAM_H_

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cbx/corpus.h"
#include "cbx/embed.h"
#include "cbx/nn.h"
#include "cbx/signal.h"

namespace cbx {
namespace beam {

using nn::Mat;

struct AcousticEmbedding {
  Eigen::VectorXd vector;  // D'
};

struct ConceptBeamConfig {
  StftConfig stft;
  int sample_rate = 8000;
  int embed_hidden = 64;  // first FC width in the acoustic embedding block
  int dprime = 48;        // D', adaptation channel count
  int hidden = 36;        // recurrent hidden width
  std::string modality = "image";  // one model per specifier modality

  // training
  double lr = 1e-3;
  double clip_norm = 5.0;
  int epochs = 30;
  int patience = 5;
  bool oracle_from_reference = true;  // activity and embedding input from the
                                      // clean reference during training
  bool normalize_weights = false;     // divide by sum(w)+eps instead of T
  uint64_t seed = 1;

  int feat_dim() const { return 2 * stft.bins(); }
};

// Mask-estimation model: an acoustic embedding block (dense, dense,
// self-attention), a mixture trunk (1 birecurrent), a target trunk
// (3 birecurrent) conditioned by elementwise multiplication with the
// acoustic embedding, and a nonnegative mask head.
class ConceptBeamModel {
 public:
  explicit ConceptBeamModel(const ConceptBeamConfig& cfg);

  const ConceptBeamConfig& config() const { return cfg_; }
  nn::Stack& embed_block() { return embed_block_; }
  nn::Stack& mix_block() { return mix_block_; }
  nn::Stack& tgt_block() { return tgt_block_; }
  nn::Stack& mask_head() { return mask_head_; }
  const nn::Stack& embed_block() const { return embed_block_; }
  const nn::Stack& mix_block() const { return mix_block_; }
  const nn::Stack& tgt_block() const { return tgt_block_; }
  const nn::Stack& mask_head() const { return mask_head_; }

  std::vector<nn::Param*> Params();
  std::vector<const nn::Block*> Blocks() const;
  std::vector<nn::Block*> Blocks();

  void Save(const std::string& dir, uint64_t embed_checksum) const;
  static ConceptBeamModel Load(const std::string& dir);

 private:
  ConceptBeamConfig cfg_;
  nn::Stack embed_block_, mix_block_, tgt_block_, mask_head_;
};

// Piecewise-linear resampling of the activity onto n_frames points spanning
// the same interval.
std::vector<double> InterpolateActivity(const embed::ConceptActivity& p, int n_frames);

// e^c = (1/T) sum_t w_t Z'_t with Z' from the embedding block. The 1/T
// normalization is deliberate; normalize_weights switches to sum(w)+eps.
AcousticEmbedding AcousticEmbed(const ConceptBeamModel& model, const Mat& features,
                                const std::vector<double>& weights);

// Mask, apply, decode; output length equals the mixture length.
Waveform Extract(const ConceptBeamModel& model, const Waveform& mixture,
                 const AcousticEmbedding& e);
// Same, also exposing the mask.
Waveform ExtractWithMask(const ConceptBeamModel& model, const Waveform& mixture,
                         const AcousticEmbedding& e, TimeFrequencyMask* mask_out);

// -10 log10(||ref||^2 / ||ref - est||^2), clamped at -60 dB near est == ref.
double NegSdrLoss(const Waveform& est, const Waveform& ref);
double NegSdrLossGrad(const Waveform& est, const Waveform& ref, Eigen::VectorXd* grad_est);

// One differentiable training step, shared by the trainer and the
// end-to-end gradient check.
struct StepInput {
  Mat mix_feats;                 // T x 2F
  SpectrogramComplex mix_spec;   // T x F
  Mat emb_feats;                 // T x 2F, reference or mixture features
  std::vector<double> weights;   // length T
  Waveform ref;
};

StepInput PrepareStep(const ConceptBeamConfig& cfg, const embed::EmbedSpace& space,
                      const corpus::MixtureSample& sample);
double StepLoss(const ConceptBeamModel& model, const StepInput& in);
double StepLossAndGrads(ConceptBeamModel* model, const StepInput& in);

struct TrainTrace {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> valid_loss;  // per epoch
  double initial_valid_loss = 0;
  double best_valid_loss = 0;
};

// Trains on mixtures at ratio 1.0 with oracle concept activity; the encoder
// pair stays frozen throughout.
TrainTrace TrainConceptBeam(ConceptBeamModel* model, const embed::EmbedSpace& space,
                            const std::vector<corpus::ManifestRow>& train_rows,
                            const std::vector<corpus::ManifestRow>& valid_rows,
                            const std::string& root_dir);

using Specifier = std::variant<corpus::ImageGrid, Waveform>;

// Inference computes activity and the acoustic embedding from the mixture
// itself; there is no hard decision, so the output is never forced to zero.
Waveform Infer(const ConceptBeamModel& model, const embed::EmbedSpace& space,
               const Waveform& mixture, const Specifier& specifier);

// Concept activity of a mixture against a specifier embedding, exposed for
// evaluation and analysis.
embed::ConceptActivity MixtureActivity(const embed::EmbedSpace& space,
                                       const embed::SemanticEmbedding& e,
                                       const Waveform& mixture);

embed::SemanticEmbedding EncodeSpecifier(const embed::EmbedSpace& space,
                                         const Specifier& specifier);

}  // namespace beam
}  // namespace cbx

#endif  // CBX_CONCEPTBEAM_H_
