// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CBX_CORPUS_H_
#define CBX_CORPUS_H_

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbx/signal.h"

namespace cbx {
namespace corpus {

using Mat = Eigen::MatrixXd;

// A concept is a spectral-envelope class with its own token vocabulary.
// Token vocabularies of distinct concepts are disjoint.
struct ConceptClass {
  struct Formant {
    double center_hz = 0;
    double bandwidth_hz = 0;
  };
  struct TokenParams {
    int token_id = 0;
    double center_offset_hz = 0;  // shifts the formant comb for this token
    double tilt = 0;              // harmonic rolloff exponent
    double gain = 1.0;
    double duration_scale = 1.0;
  };

  int concept_id = 0;
  std::vector<Formant> signature;
  std::vector<TokenParams> token_vocab;
};

struct SpeakerProfile {
  int speaker_id = 0;
  double f0_base = 120.0;      // Hz, in [80, 300]
  double formant_shift = 1.0;  // ratio applied to concept centers
  double tempo = 3.0;          // tokens per second
};

struct TokenSpan {
  int token_id = 0;
  double start_s = 0;
  double end_s = 0;
};

struct Utterance {
  Waveform waveform;
  int concept_id = 0;
  int speaker_id = 0;
  std::vector<TokenSpan> tokens;  // non-overlapping, sorted
};

struct ImageGrid {
  Mat patches;  // K x patch_dim
  int grid_h = 7;
  int grid_w = 7;
  int concept_id = 0;
};

struct MixtureSpec {
  int scenario = 1;  // 1: 2 sources 2 concepts; 2: 4 sources 2 concepts; 3: shared speaker
  int n_sources = 2;
  double overlap_ratio = 1.0;  // one of {0, 0.25, 0.5, 1.0}
  double sir_db = 0.0;
  std::vector<int> concepts;  // per source; concepts[0] is the target concept
  std::vector<int> speakers;  // per source
  uint64_t seed = 0;

  void Validate() const;
};

struct PlacedSource {
  int concept_id = 0;
  int speaker_id = 0;
  Waveform wav;
  int offset_samples = 0;
  std::vector<TokenSpan> tokens;  // relative to the source waveform
  bool is_target = false;
};

struct MixtureSample {
  Waveform mixture;
  Waveform target;  // sum of concept-c sources, zero-padded to mixture length
  std::vector<PlacedSource> sources;
  std::optional<Waveform> noise;
  ImageGrid image_specifier;
  Utterance speech_specifier;  // held out, never part of the mixture
  std::vector<uint8_t> truth_activity;
  int activity_hop = 1024;  // samples per activity frame
  MixtureSpec spec;
  std::string diff_same;  // "Diff" or "Same"
};

struct CorpusConfig {
  int sample_rate = 8000;
  int n_concepts = 8;
  int tokens_per_concept = 6;
  int n_speakers = 24;
  int patch_dim = 12;
  int grid_h = 7;
  int grid_w = 7;
  double bg_ratio = 0.15;
  int n_tokens_min = 3;
  int n_tokens_max = 4;
  double f0_min_hz = 90.0;
  double f0_max_hz = 260.0;
  double tempo_min = 2.4;
  double tempo_max = 3.2;
  double min_spectral_distance_hz = 150.0;
  int n_harmonics = 24;
  double token_peak = 0.22;
  int activity_hop = 1024;  // stft hop * encoder downsampling
};

// Deterministically derived concept/speaker pools plus the patch-space
// prototypes used for image synthesis.
struct CorpusModel {
  CorpusConfig cfg;
  std::vector<ConceptClass> concepts;
  std::vector<SpeakerProfile> speakers;
  Mat concept_prototypes;  // n_concepts x patch_dim, orthonormal rows
  Mat token_components;    // (n_concepts * tokens_per_concept) x patch_dim
  Eigen::VectorXd background_proto;

  static CorpusModel Build(const CorpusConfig& cfg, uint64_t seed);
  const ConceptClass& Concept(int id) const;
  const SpeakerProfile& Speaker(int id) const;
};

// Tokens realized as harmonic bursts at the speaker's f0 filtered by the
// concept envelope, separated by short gaps.
Utterance SynthUtterance(const CorpusModel& model, const ConceptClass& c,
                         const SpeakerProfile& s, int n_tokens, uint64_t seed);

// Majority of patches from the concept distribution (optionally restricted to
// a token subset), a bg_ratio minority from the background distribution.
ImageGrid SynthImage(const CorpusModel& model, const ConceptClass& c, uint64_t seed,
                     const std::vector<int>& token_subset = {});

// Paired sample for metric learning; the image patches carry the utterance's
// token content, mirroring captions that describe their image.
struct PairSample {
  ImageGrid image;
  Utterance utterance;
};
PairSample MakePair(const CorpusModel& model, int concept_id, int speaker_id, uint64_t seed);

// Returns the interference scaled so that 10*log10(P_target/P_interf) equals
// sir_db over the given segments.
Waveform ScaleToSir(const Waveform& target, const Waveform& interference, double sir_db);

struct PlacementOffsets {
  int target_offset = 0;
  int interf_offset = 0;
};
// Offsets (in samples) such that overlap / target_len == ratio; ratio 0 abuts
// the signals. Throws when the interferer is shorter than the required
// overlap.
PlacementOffsets PlaceWithOverlap(int target_len, int interf_len, double ratio);

MixtureSample MakeMixture(const CorpusModel& model, const MixtureSpec& spec);

// --------------------------------------------------------------------------
// Dataset building

struct DatasetConfig {
  int n_sources = 2;
  int train_mixtures = 2000;
  int valid_mixtures = 100;
  int test_mixtures = 400;       // split evenly over test_ratios
  int test_same_mixtures = 0;    // extra scenario-3 rows at ratio 0
  std::vector<double> test_ratios = {0.0, 0.25, 0.5, 1.0};
  double same_speaker_fraction = 0.0;  // scenario-3 share in train/valid
  int test_speakers = 8;               // taken from the end of the pool
  uint64_t seed = 1;
  int threads = 1;
};

struct ManifestSource {
  int concept_id = 0;
  int speaker_id = 0;
  std::string wav;
  int offset_samples = 0;
  bool is_target = false;
  std::vector<TokenSpan> tokens;
};

struct ManifestRow {
  std::string id;
  std::string split;    // train / valid / test
  std::string testset;  // 2mix / 4mix
  int scenario = 1;
  double overlap_ratio = 1.0;
  double sir_db = 0.0;
  int target_concept = 0;
  std::string mix_wav;
  int mix_len = 0;
  std::vector<ManifestSource> sources;
  std::string image_bin;
  std::string enroll_wav;
  std::vector<TokenSpan> enroll_tokens;
  std::vector<std::pair<int, int>> activity_rle;  // (value, run) pairs
  int activity_hop = 1024;
  std::string diff_same;
  double scale = 1.0;
  uint64_t seed = 0;

  std::string ToJson() const;
  static ManifestRow FromJson(const std::string& line);
};

// Writes WAVs, image grids and manifest.jsonl under out_dir. Train/valid are
// mixed at ratio 1.0 only; test covers test_ratios with speakers disjoint
// from train/valid.
std::vector<ManifestRow> BuildDataset(const CorpusModel& model, const DatasetConfig& dcfg,
                                      const std::string& out_dir);

std::vector<ManifestRow> ReadManifest(const std::string& path);
void WriteManifest(const std::string& path, const std::vector<ManifestRow>& rows);

// Rebuilds the in-memory sample from its on-disk assets. The target reference
// is the sum of the placed target-concept sources.
MixtureSample LoadSample(const ManifestRow& row, const std::string& root_dir);

std::vector<uint8_t> RleDecode(const std::vector<std::pair<int, int>>& rle);
std::vector<std::pair<int, int>> RleEncode(const std::vector<uint8_t>& v);

}  // namespace corpus
}  // namespace cbx

#endif  // CBX_CORPUS_H_
