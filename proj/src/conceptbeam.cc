// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cbx/conceptbeam.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace cbx {
namespace beam {

namespace fs = std::filesystem;
using nlohmann::json;

ConceptBeamModel::ConceptBeamModel(const ConceptBeamConfig& cfg) : cfg_(cfg) {
  Rng rng(SplitMix64(cfg.seed ^ 0x6362656dULL));
  const int f2 = cfg.feat_dim();
  const int f = cfg.stft.bins();
  embed_block_.Add<nn::Dense>(f2, cfg.embed_hidden, &rng);
  embed_block_.Add<nn::Relu>(cfg.embed_hidden);
  embed_block_.Add<nn::Dense>(cfg.embed_hidden, cfg.dprime, &rng);
  embed_block_.Add<nn::Relu>(cfg.dprime);
  embed_block_.Add<nn::SelfAttention>(cfg.dprime, cfg.dprime, &rng);

  mix_block_.Add<nn::BiRecurrent>(f2, cfg.hidden, cfg.dprime, &rng);

  for (int i = 0; i < 3; i++) {
    tgt_block_.Add<nn::BiRecurrent>(cfg.dprime, cfg.hidden, cfg.dprime, &rng);
  }

  mask_head_.Add<nn::Dense>(cfg.dprime, f, &rng);
  mask_head_.Add<nn::Relu>(f);
}

std::vector<nn::Param*> ConceptBeamModel::Params() {
  std::vector<nn::Param*> out;
  for (nn::Stack* s : {&embed_block_, &mix_block_, &tgt_block_, &mask_head_}) {
    auto p = s->Params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const nn::Block*> ConceptBeamModel::Blocks() const {
  std::vector<const nn::Block*> out;
  for (const nn::Stack* s : {&embed_block_, &mix_block_, &tgt_block_, &mask_head_}) {
    auto b = s->blocks();
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

std::vector<nn::Block*> ConceptBeamModel::Blocks() {
  std::vector<nn::Block*> out;
  for (nn::Stack* s : {&embed_block_, &mix_block_, &tgt_block_, &mask_head_}) {
    auto b = s->blocks();
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

void ConceptBeamModel::Save(const std::string& dir, uint64_t embed_checksum) const {
  fs::create_directories(dir);
  nn::SaveCheckpoint((fs::path(dir) / "model.ckpt").string(), Blocks());
  json j;
  j["modality"] = cfg_.modality;
  j["window_len"] = cfg_.stft.window_len;
  j["hop"] = cfg_.stft.hop;
  j["sample_rate"] = cfg_.sample_rate;
  j["embed_hidden"] = cfg_.embed_hidden;
  j["dprime"] = cfg_.dprime;
  j["hidden"] = cfg_.hidden;
  j["normalize_weights"] = cfg_.normalize_weights;
  j["embed_checksum"] = embed_checksum;
  std::ofstream f(fs::path(dir) / "model.json");
  f << j.dump(2) << "\n";
}

ConceptBeamModel ConceptBeamModel::Load(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "model.json");
  Require(f.good(), "ConceptBeamModel::Load: missing model.json in " + dir);
  json j = json::parse(f);
  ConceptBeamConfig cfg;
  cfg.modality = j["modality"];
  cfg.stft.window_len = j["window_len"];
  cfg.stft.hop = j["hop"];
  cfg.sample_rate = j["sample_rate"];
  cfg.embed_hidden = j["embed_hidden"];
  cfg.dprime = j["dprime"];
  cfg.hidden = j["hidden"];
  cfg.normalize_weights = j["normalize_weights"];
  ConceptBeamModel model(cfg);
  nn::LoadCheckpoint((fs::path(dir) / "model.ckpt").string(), model.Blocks());
  return model;
}

std::vector<double> InterpolateActivity(const embed::ConceptActivity& p, int n_frames) {
  Require(!p.values.empty(), "InterpolateActivity: empty activity");
  Require(n_frames >= 1, "InterpolateActivity: n_frames must be positive");
  const int n_in = static_cast<int>(p.values.size());
  std::vector<double> out(n_frames);
  if (n_in == 1) {
    std::fill(out.begin(), out.end(), p.values[0]);
    return out;
  }
  for (int i = 0; i < n_frames; i++) {
    const double pos = n_frames == 1
                           ? 0.5 * (n_in - 1)
                           : static_cast<double>(i) * (n_in - 1) / (n_frames - 1);
    const int lo = std::min(static_cast<int>(pos), n_in - 2);
    const double frac = pos - lo;
    out[i] = (1.0 - frac) * p.values[lo] + frac * p.values[lo + 1];
  }
  return out;
}

namespace {

Eigen::RowVectorXd PoolWeighted(const Mat& z, const std::vector<double>& weights,
                                bool normalize_weights) {
  Require(static_cast<int>(weights.size()) == z.rows(),
          "acoustic embedding: weight length must match the frame count");
  Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(z.cols());
  for (int t = 0; t < z.rows(); t++) e += weights[t] * z.row(t);
  if (normalize_weights) {
    double s = std::accumulate(weights.begin(), weights.end(), 0.0);
    e /= (s + 1e-8);
  } else {
    e /= static_cast<double>(z.rows());
  }
  return e;
}

}  // namespace

AcousticEmbedding AcousticEmbed(const ConceptBeamModel& model, const Mat& features,
                                const std::vector<double>& weights) {
  Mat zprime = model.embed_block().Forward(features, nullptr);
  AcousticEmbedding e;
  e.vector = PoolWeighted(zprime, weights, model.config().normalize_weights).transpose();
  return e;
}

Waveform ExtractWithMask(const ConceptBeamModel& model, const Waveform& mixture,
                         const AcousticEmbedding& e, TimeFrequencyMask* mask_out) {
  Require(e.vector.size() == model.config().dprime,
          "Extract: acoustic embedding dimension mismatch");
  auto spec = Stft(mixture, model.config().stft);
  Mat feats = FeaturesFromSpec(spec);
  Mat z = model.mix_block().Forward(feats, nullptr);
  Mat zc = z.array().rowwise() * e.vector.transpose().array();
  Mat h = model.tgt_block().Forward(zc, nullptr);
  Mat mask = model.mask_head().Forward(h, nullptr);
  if (mask_out) mask_out->values = mask;
  auto masked = ApplyMask(spec, TimeFrequencyMask{mask});
  return Istft(masked);
}

Waveform Extract(const ConceptBeamModel& model, const Waveform& mixture,
                 const AcousticEmbedding& e) {
  return ExtractWithMask(model, mixture, e, nullptr);
}

double NegSdrLossGrad(const Waveform& est, const Waveform& ref, Eigen::VectorXd* grad_est) {
  Require(est.size() == ref.size(), "NegSdrLoss: length mismatch");
  const int n = ref.size();
  double ref_sq = 0.0, diff_sq = 0.0;
  for (int i = 0; i < n; i++) {
    ref_sq += ref.samples[i] * ref.samples[i];
    const double d = ref.samples[i] - est.samples[i];
    diff_sq += d * d;
  }
  Require(ref_sq > 1e-12, "NegSdrLoss: silent reference");
  const double cap = 60.0;
  if (diff_sq <= ref_sq * 1e-6) {  // est == ref within the cap
    if (grad_est) grad_est->setZero(n);
    return -cap;
  }
  const double loss = -10.0 * std::log10(ref_sq / diff_sq);
  if (grad_est) {
    grad_est->resize(n);
    const double c = -20.0 / std::log(10.0) / diff_sq;
    for (int i = 0; i < n; i++) (*grad_est)(i) = c * (ref.samples[i] - est.samples[i]);
  }
  return loss;
}

double NegSdrLoss(const Waveform& est, const Waveform& ref) {
  return NegSdrLossGrad(est, ref, nullptr);
}

embed::SemanticEmbedding EncodeSpecifier(const embed::EmbedSpace& space,
                                         const Specifier& specifier) {
  if (std::holds_alternative<corpus::ImageGrid>(specifier)) {
    return space.image->Encode(std::get<corpus::ImageGrid>(specifier));
  }
  embed::SemanticEmbedding e;
  e.source = embed::SemanticEmbedding::Source::kSpeech;
  e.mat = space.audio->Encode(std::get<Waveform>(specifier)).mat;
  return e;
}

embed::ConceptActivity MixtureActivity(const embed::EmbedSpace& space,
                                       const embed::SemanticEmbedding& e,
                                       const Waveform& mixture) {
  auto a = space.audio->Encode(mixture);
  auto act = embed::ComputeConceptActivity(embed::ComputeMatchmap(e, a));
  act.hop_samples = space.cfg.stft.hop * space.cfg.downsample;
  return act;
}

StepInput PrepareStep(const ConceptBeamConfig& cfg, const embed::EmbedSpace& space,
                      const corpus::MixtureSample& sample) {
  StepInput in;
  in.mix_spec = Stft(sample.mixture, cfg.stft);
  in.mix_feats = FeaturesFromSpec(in.mix_spec);
  in.ref = sample.target;

  const Waveform& oracle_wav = cfg.oracle_from_reference ? sample.target : sample.mixture;
  embed::SemanticEmbedding e;
  if (cfg.modality == "image") {
    e = space.image->Encode(sample.image_specifier);
  } else {
    e.source = embed::SemanticEmbedding::Source::kSpeech;
    e.mat = space.audio->Encode(sample.speech_specifier.waveform).mat;
  }
  auto oracle_act = embed::ComputeConceptActivity(
      embed::ComputeMatchmap(e, space.audio->Encode(oracle_wav)));
  in.weights = InterpolateActivity(oracle_act, in.mix_spec.frame_count());

  if (cfg.oracle_from_reference) {
    in.emb_feats = FeaturesFromSpec(Stft(sample.target, cfg.stft));
  } else {
    in.emb_feats = in.mix_feats;
  }
  return in;
}

namespace {

double RunStep(ConceptBeamModel* model, const StepInput& in, bool with_grads) {
  const auto& cfg = model->config();
  const int t_frames = in.mix_spec.frame_count();
  Require(static_cast<int>(in.weights.size()) == t_frames, "RunStep: weight length mismatch");

  std::vector<nn::Cache> c_embed, c_mix, c_tgt, c_mask;
  Mat zprime = model->embed_block().Forward(in.emb_feats, with_grads ? &c_embed : nullptr);
  Eigen::RowVectorXd e = PoolWeighted(zprime, in.weights, cfg.normalize_weights);
  Mat z = model->mix_block().Forward(in.mix_feats, with_grads ? &c_mix : nullptr);
  Mat zc = z.array().rowwise() * e.array();
  Mat h = model->tgt_block().Forward(zc, with_grads ? &c_tgt : nullptr);
  Mat mask = model->mask_head().Forward(h, with_grads ? &c_mask : nullptr);

  auto masked = ApplyMask(in.mix_spec, TimeFrequencyMask{mask});
  Waveform est = Istft(masked);

  Eigen::VectorXd g_est;
  const double loss = NegSdrLossGrad(est, in.ref, with_grads ? &g_est : nullptr);
  if (!with_grads) return loss;

  Eigen::MatrixXcd g_spec = IstftAdjoint(g_est, cfg.stft, in.mix_spec.source_len, t_frames);
  Mat g_mask = in.mix_spec.frames.real().cwiseProduct(g_spec.real()) +
               in.mix_spec.frames.imag().cwiseProduct(g_spec.imag());

  Mat g_h = model->mask_head().Backward(c_mask, g_mask);
  Mat g_zc = model->tgt_block().Backward(c_tgt, g_h);
  Mat g_z = g_zc.array().rowwise() * e.array();
  Eigen::RowVectorXd g_e = (g_zc.array() * z.array()).colwise().sum();
  model->mix_block().Backward(c_mix, g_z);

  Mat g_zprime(t_frames, cfg.dprime);
  double denom;
  if (cfg.normalize_weights) {
    denom = std::accumulate(in.weights.begin(), in.weights.end(), 0.0) + 1e-8;
  } else {
    denom = static_cast<double>(t_frames);
  }
  for (int t = 0; t < t_frames; t++) g_zprime.row(t) = (in.weights[t] / denom) * g_e;
  model->embed_block().Backward(c_embed, g_zprime);
  return loss;
}

}  // namespace

double StepLoss(const ConceptBeamModel& model, const StepInput& in) {
  return RunStep(const_cast<ConceptBeamModel*>(&model), in, false);
}

double StepLossAndGrads(ConceptBeamModel* model, const StepInput& in) {
  return RunStep(model, in, true);
}

TrainTrace TrainConceptBeam(ConceptBeamModel* model, const embed::EmbedSpace& space,
                            const std::vector<corpus::ManifestRow>& train_rows,
                            const std::vector<corpus::ManifestRow>& valid_rows,
                            const std::string& root_dir) {
  const auto& cfg = model->config();
  Require(!train_rows.empty(), "TrainConceptBeam: empty training set");
  Require(space.audio->trained() && space.image->trained(),
          "TrainConceptBeam: the embedding space must be trained first");
  for (const auto& r : train_rows) {
    Require(r.overlap_ratio == 1.0, "TrainConceptBeam: training mixtures must be at ratio 1.0");
  }

  const int n = static_cast<int>(train_rows.size());
  std::vector<StepInput> steps(n);
  const int threads = EnvThreads();
  ParallelFor(n, threads, [&](int i) {
    steps[i] = PrepareStep(cfg, space, corpus::LoadSample(train_rows[i], root_dir));
  });
  std::vector<StepInput> val_steps(valid_rows.size());
  ParallelFor(static_cast<int>(valid_rows.size()), threads, [&](int i) {
    val_steps[i] = PrepareStep(cfg, space, corpus::LoadSample(valid_rows[i], root_dir));
  });

  auto valid_loss = [&]() {
    if (val_steps.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : val_steps) total += StepLoss(*model, s);
    return total / val_steps.size();
  };

  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.clip_norm = cfg.clip_norm;
  auto params = model->Params();
  nn::Adam opt(params, acfg);

  TrainTrace trace;
  trace.initial_valid_loss = valid_loss();
  double best = trace.initial_valid_loss;
  std::vector<Mat> best_params;
  for (auto* p : params) best_params.push_back(p->value);
  int since_best = 0;

  Rng rng(SplitMix64(cfg.seed ^ 0x74726366ULL));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; epoch++) {
    for (int i = n - 1; i > 0; i--) std::swap(order[i], order[rng.UniformInt(0, i)]);
    double train_total = 0.0;
    for (int i : order) {
      for (auto* p : params) p->grad.setZero();
      const double loss = StepLossAndGrads(model, steps[i]);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("TrainConceptBeam: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", sample " + train_rows[i].id);
      }
      train_total += loss;
      opt.Step();
    }
    trace.train_loss.push_back(train_total / n);
    const double vl = valid_loss();
    trace.valid_loss.push_back(vl);
    if (vl < best - 1e-6) {
      best = vl;
      for (size_t k = 0; k < params.size(); k++) best_params[k] = params[k]->value;
      since_best = 0;
    } else {
      since_best++;
      if (since_best >= cfg.patience) break;
    }
  }
  if (!val_steps.empty()) {
    for (size_t k = 0; k < params.size(); k++) params[k]->value = best_params[k];
  }
  trace.best_valid_loss = best;
  return trace;
}

Waveform Infer(const ConceptBeamModel& model, const embed::EmbedSpace& space,
               const Waveform& mixture, const Specifier& specifier) {
  const auto& cfg = model.config();
  const bool is_image = std::holds_alternative<corpus::ImageGrid>(specifier);
  Require(is_image == (cfg.modality == "image"),
          "Infer: specifier modality does not match the trained model");
  auto e_spec = EncodeSpecifier(space, specifier);
  auto act = MixtureActivity(space, e_spec, mixture);

  auto spec = Stft(mixture, cfg.stft);
  const auto weights = InterpolateActivity(act, spec.frame_count());
  AcousticEmbedding e = AcousticEmbed(model, FeaturesFromSpec(spec), weights);
  return Extract(model, mixture, e);
}

}  // namespace beam
}  // namespace cbx
