// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cbx/corpus.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cbx/common.h"
#include "cbx/nn.h"

namespace cbx {
namespace corpus {

namespace fs = std::filesystem;
using nlohmann::json;

void MixtureSpec::Validate() const {
  Require(n_sources == 2 || n_sources == 4, "MixtureSpec: n_sources must be 2 or 4");
  Require(static_cast<int>(concepts.size()) == n_sources &&
              static_cast<int>(speakers.size()) == n_sources,
          "MixtureSpec: concept/speaker assignment must cover every source");
  Require(overlap_ratio >= 0.0 && overlap_ratio <= 1.0, "MixtureSpec: ratio out of [0,1]");
  std::set<int> concept_set(concepts.begin(), concepts.end());
  Require(concept_set.size() == 2, "MixtureSpec: mixtures carry exactly two concepts");
  if (scenario == 1) {
    Require(n_sources == 2, "MixtureSpec: scenario 1 has two sources");
  } else if (scenario == 2) {
    Require(n_sources == 4, "MixtureSpec: scenario 2 has four sources");
    Require(concepts[0] == concepts[1] && concepts[2] == concepts[3],
            "MixtureSpec: scenario 2 pairs two sources per concept");
  } else if (scenario == 3) {
    // one speaker appears under both concepts
    bool shared = false;
    for (int i = 0; i < n_sources; i++) {
      for (int j = 0; j < n_sources; j++) {
        if (concepts[i] != concepts[j] && speakers[i] == speakers[j]) shared = true;
      }
    }
    Require(shared, "MixtureSpec: scenario 3 needs a speaker under both concepts");
    if (n_sources == 4) {
      Require(concepts[0] == concepts[1] && concepts[2] == concepts[3],
              "MixtureSpec: four-source mixtures pair two sources per concept");
    }
  } else {
    Require(false, "MixtureSpec: scenario must be 1, 2 or 3");
  }
}

CorpusModel CorpusModel::Build(const CorpusConfig& cfg, uint64_t seed) {
  Require(cfg.n_concepts >= 2, "CorpusModel: need at least two concepts");
  Require(cfg.patch_dim > cfg.n_concepts, "CorpusModel: patch_dim must exceed n_concepts");
  Rng rng(SplitMix64(seed ^ 0x636f7270ULL));

  CorpusModel model;
  model.cfg = cfg;

  // Formant combs on separated bands; spacing enforces the configured minimum
  // spectral distance between concept signatures.
  const double lo = 420.0, hi = 3520.0;
  const double spacing = (hi - lo) / cfg.n_concepts;
  Require(spacing >= cfg.min_spectral_distance_hz,
          "CorpusModel: too many concepts for the required spectral distance");
  int next_token_id = 0;
  for (int c = 0; c < cfg.n_concepts; c++) {
    ConceptClass cc;
    cc.concept_id = c;
    const double base = lo + spacing * c;
    cc.signature.push_back({base, 80.0 + rng.Uniform(0.0, 30.0)});
    cc.signature.push_back({base + spacing * 0.45, 90.0 + rng.Uniform(0.0, 30.0)});
    for (int t = 0; t < cfg.tokens_per_concept; t++) {
      ConceptClass::TokenParams tp;
      tp.token_id = next_token_id++;
      tp.center_offset_hz = rng.Uniform(-0.18, 0.18) * spacing;
      tp.tilt = rng.Uniform(-0.6, 0.6);
      tp.gain = rng.Uniform(0.85, 1.15);
      tp.duration_scale = rng.Uniform(0.85, 1.2);
      cc.token_vocab.push_back(tp);
    }
    model.concepts.push_back(cc);
  }

  for (int s = 0; s < cfg.n_speakers; s++) {
    SpeakerProfile sp;
    sp.speaker_id = s;
    sp.f0_base = rng.Uniform(cfg.f0_min_hz, cfg.f0_max_hz);
    sp.formant_shift = rng.Uniform(0.95, 1.05);
    sp.tempo = rng.Uniform(cfg.tempo_min, cfg.tempo_max);
    model.speakers.push_back(sp);
  }

  // Orthonormal patch prototypes via Gram-Schmidt on a random Gaussian basis;
  // the extra row is the background prototype.
  const int d = cfg.patch_dim;
  Mat raw(cfg.n_concepts + 1, d);
  for (int i = 0; i < raw.rows(); i++)
    for (int j = 0; j < d; j++) raw(i, j) = rng.Normal();
  for (int i = 0; i < raw.rows(); i++) {
    for (int j = 0; j < i; j++) raw.row(i) -= raw.row(i).dot(raw.row(j)) * raw.row(j);
    raw.row(i) /= raw.row(i).norm();
  }
  model.concept_prototypes = raw.topRows(cfg.n_concepts);
  model.background_proto = raw.row(cfg.n_concepts).transpose();

  model.token_components.resize(cfg.n_concepts * cfg.tokens_per_concept, d);
  for (int i = 0; i < model.token_components.rows(); i++) {
    for (int j = 0; j < d; j++) model.token_components(i, j) = rng.Normal() / std::sqrt(d);
  }
  return model;
}

const ConceptClass& CorpusModel::Concept(int id) const {
  Require(id >= 0 && id < static_cast<int>(concepts.size()), "CorpusModel: bad concept id");
  return concepts[id];
}

const SpeakerProfile& CorpusModel::Speaker(int id) const {
  Require(id >= 0 && id < static_cast<int>(speakers.size()), "CorpusModel: bad speaker id");
  return speakers[id];
}

namespace {

double ConceptEnvelope(const ConceptClass& c, double freq_hz, double formant_shift,
                       double center_offset_hz) {
  double v = 0.0;
  for (const auto& fm : c.signature) {
    const double center = fm.center_hz * formant_shift + center_offset_hz;
    const double z = (freq_hz - center) / fm.bandwidth_hz;
    v += std::exp(-0.5 * z * z);
  }
  return v + 0.02;
}

}  // namespace

Utterance SynthUtterance(const CorpusModel& model, const ConceptClass& c,
                         const SpeakerProfile& s, int n_tokens, uint64_t seed) {
  Require(n_tokens >= 1, "SynthUtterance: need at least one token");
  Require(!c.token_vocab.empty(), "SynthUtterance: concept has an empty vocabulary");
  const int sr = model.cfg.sample_rate;
  Rng rng(SplitMix64(seed ^ 0x75747421ULL));

  Utterance utt;
  utt.concept_id = c.concept_id;
  utt.speaker_id = s.speaker_id;
  utt.waveform.sample_rate = sr;

  std::vector<double> samples;
  for (int i = 0; i < n_tokens; i++) {
    const auto& tp = c.token_vocab[rng.UniformInt(0, static_cast<int>(c.token_vocab.size()) - 1)];
    const double f0 = s.f0_base * (1.0 + rng.Uniform(-0.03, 0.03));
    const double dur = tp.duration_scale * 0.72 / s.tempo;
    const int n = std::max(1, static_cast<int>(std::lround(dur * sr)));
    const int ramp = std::min(n / 4, sr * 15 / 1000);

    // Harmonic amplitudes from the concept envelope with per-token tilt.
    const int n_h = model.cfg.n_harmonics;
    std::vector<double> amp(n_h), phase(n_h);
    for (int k = 0; k < n_h; k++) {
      const double f = f0 * (k + 1);
      if (f >= sr / 2.0 * 0.95) {
        amp[k] = 0.0;
        phase[k] = 0.0;
        continue;
      }
      amp[k] = ConceptEnvelope(c, f, s.formant_shift, tp.center_offset_hz) *
               std::pow(static_cast<double>(k + 1), tp.tilt * 0.5);
      phase[k] = rng.Uniform(0.0, 2.0 * M_PI);
    }
    std::vector<double> tok(n, 0.0);
    double peak = 0.0;
    for (int j = 0; j < n; j++) {
      double v = 0.0;
      const double t = static_cast<double>(j) / sr;
      for (int k = 0; k < n_h; k++) {
        if (amp[k] == 0.0) continue;
        v += amp[k] * std::sin(2.0 * M_PI * f0 * (k + 1) * t + phase[k]);
      }
      tok[j] = v;
      peak = std::max(peak, std::abs(v));
    }
    const double norm = peak > 0 ? model.cfg.token_peak * tp.gain / peak : 0.0;
    for (int j = 0; j < n; j++) {
      double env = 1.0;
      if (j < ramp) env = 0.5 - 0.5 * std::cos(M_PI * j / ramp);
      if (n - 1 - j < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(M_PI * (n - 1 - j) / ramp));
      tok[j] *= norm * env;
    }

    const int start = static_cast<int>(samples.size());
    samples.insert(samples.end(), tok.begin(), tok.end());
    utt.tokens.push_back({tp.token_id, static_cast<double>(start) / sr,
                          static_cast<double>(start + n) / sr});
    if (i + 1 < n_tokens) {
      const double gap = rng.Uniform(0.18, 0.38) / s.tempo;
      samples.resize(samples.size() + static_cast<size_t>(std::lround(gap * sr)), 0.0);
    }
  }
  utt.waveform.samples = std::move(samples);
  return utt;
}

ImageGrid SynthImage(const CorpusModel& model, const ConceptClass& c, uint64_t seed,
                     const std::vector<int>& token_subset) {
  Rng rng(SplitMix64(seed ^ 0x696d6721ULL));
  const auto& cfg = model.cfg;
  ImageGrid g;
  g.grid_h = cfg.grid_h;
  g.grid_w = cfg.grid_w;
  g.concept_id = c.concept_id;
  const int k = cfg.grid_h * cfg.grid_w;
  g.patches.resize(k, cfg.patch_dim);

  std::vector<int> tokens = token_subset;
  if (tokens.empty()) {
    for (const auto& tp : c.token_vocab) tokens.push_back(tp.token_id);
  }
  const double token_weight = 0.35;
  const double noise = 0.12;
  for (int i = 0; i < k; i++) {
    Eigen::VectorXd v;
    if (rng.Bernoulli(cfg.bg_ratio)) {
      v = model.background_proto;
    } else {
      const int tok = tokens[rng.UniformInt(0, static_cast<int>(tokens.size()) - 1)];
      v = model.concept_prototypes.row(c.concept_id).transpose() +
          token_weight * model.token_components.row(tok).transpose();
    }
    for (int j = 0; j < cfg.patch_dim; j++) v(j) += noise * rng.Normal();
    g.patches.row(i) = v.transpose();
  }
  return g;
}

PairSample MakePair(const CorpusModel& model, int concept_id, int speaker_id, uint64_t seed) {
  Rng rng(SplitMix64(seed ^ 0x70616972ULL));
  const auto& c = model.Concept(concept_id);
  const auto& s = model.Speaker(speaker_id);
  const int n_tokens = rng.UniformInt(model.cfg.n_tokens_min, model.cfg.n_tokens_max);
  PairSample pair;
  pair.utterance = SynthUtterance(model, c, s, n_tokens, rng.NextU64());
  std::vector<int> subset;
  for (const auto& t : pair.utterance.tokens) subset.push_back(t.token_id);
  std::sort(subset.begin(), subset.end());
  subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
  pair.image = SynthImage(model, c, rng.NextU64(), subset);
  return pair;
}

namespace {

double Power(const std::vector<double>& x, int begin, int end) {
  double p = 0.0;
  for (int i = std::max(0, begin); i < std::min<int>(end, x.size()); i++) p += x[i] * x[i];
  return p;
}

}  // namespace

Waveform ScaleToSir(const Waveform& target, const Waveform& interference, double sir_db) {
  const double pt = Power(target.samples, 0, target.size());
  const double pi = Power(interference.samples, 0, interference.size());
  Require(pt > 1e-12 && pi > 1e-12, "ScaleToSir: silent input");
  const double scale = std::sqrt(pt / (pi * std::pow(10.0, sir_db / 10.0)));
  Waveform out = interference;
  for (double& v : out.samples) v *= scale;
  return out;
}

PlacementOffsets PlaceWithOverlap(int target_len, int interf_len, double ratio) {
  Require(ratio >= 0.0 && ratio <= 1.0, "PlaceWithOverlap: ratio out of [0,1]");
  Require(target_len > 0 && interf_len > 0, "PlaceWithOverlap: empty signal");
  const int overlap = static_cast<int>(std::lround(ratio * target_len));
  if (overlap == 0) return {0, target_len};
  Require(interf_len >= overlap,
          "PlaceWithOverlap: interferer shorter than the required overlap");
  return {0, target_len - overlap};
}

namespace {

void AddPlaced(std::vector<double>* mix, const std::vector<double>& src, int offset) {
  if (static_cast<int>(mix->size()) < offset + static_cast<int>(src.size())) {
    mix->resize(offset + src.size(), 0.0);
  }
  for (size_t i = 0; i < src.size(); i++) (*mix)[offset + i] += src[i];
}

struct Stream {
  std::vector<Utterance> utts;
  std::vector<int> utt_offsets;  // within the stream
  std::vector<double> samples;

  int size() const { return static_cast<int>(samples.size()); }
};

Stream ConcatStream(const std::vector<Utterance>& utts) {
  Stream st;
  st.utts = utts;
  for (const auto& u : utts) {
    st.utt_offsets.push_back(st.size());
    st.samples.insert(st.samples.end(), u.waveform.samples.begin(), u.waveform.samples.end());
  }
  return st;
}

}  // namespace

MixtureSample MakeMixture(const CorpusModel& model, const MixtureSpec& spec) {
  spec.Validate();
  const int sr = model.cfg.sample_rate;
  Rng rng(SplitMix64(spec.seed ^ 0x6d697821ULL));
  const int per_stream = spec.n_sources / 2;

  // Synthesize per-source utterances; the first stream carries the target
  // concept.
  auto synth_one = [&](int src) {
    const int n_tokens = rng.UniformInt(model.cfg.n_tokens_min, model.cfg.n_tokens_max);
    return SynthUtterance(model, model.Concept(spec.concepts[src]),
                          model.Speaker(spec.speakers[src]), n_tokens, rng.NextU64());
  };
  std::vector<Utterance> utts;
  for (int i = 0; i < spec.n_sources; i++) utts.push_back(synth_one(i));

  Stream target_stream = ConcatStream({utts.begin(), utts.begin() + per_stream});
  Stream interf_stream = ConcatStream({utts.begin() + per_stream, utts.end()});

  // The interferer must cover the requested overlap; extend it with extra
  // tokens if the draw came out short.
  const int needed = static_cast<int>(std::lround(spec.overlap_ratio * target_stream.size()));
  for (int bump = 0; interf_stream.size() < needed && bump < 12; bump++) {
    const int last = spec.n_sources - 1;
    const int n_tokens = model.cfg.n_tokens_max + 1 + bump;
    utts[last] = SynthUtterance(model, model.Concept(spec.concepts[last]),
                                model.Speaker(spec.speakers[last]), n_tokens, rng.NextU64());
    interf_stream = ConcatStream({utts.begin() + per_stream, utts.end()});
  }
  Require(interf_stream.size() >= needed, "MakeMixture: infeasible overlap spec");

  PlacementOffsets off = PlaceWithOverlap(target_stream.size(), interf_stream.size(),
                                          spec.overlap_ratio);
  const bool target_first = rng.Bernoulli(0.5);
  int extent = std::max(off.target_offset + target_stream.size(),
                        off.interf_offset + interf_stream.size());
  if (!target_first) {
    const int t = extent - (off.target_offset + target_stream.size());
    const int i = extent - (off.interf_offset + interf_stream.size());
    off = {t, i};
  }

  // SIR is set over the overlapped region; without overlap the full extents
  // are used.
  int ov_lo = std::max(off.target_offset, off.interf_offset);
  int ov_hi = std::min(off.target_offset + target_stream.size(),
                       off.interf_offset + interf_stream.size());
  double pt, pi;
  if (ov_hi > ov_lo) {
    pt = Power(target_stream.samples, ov_lo - off.target_offset, ov_hi - off.target_offset);
    pi = Power(interf_stream.samples, ov_lo - off.interf_offset, ov_hi - off.interf_offset);
  } else {
    pt = Power(target_stream.samples, 0, target_stream.size());
    pi = Power(interf_stream.samples, 0, interf_stream.size());
  }
  Require(pt > 1e-12 && pi > 1e-12, "MakeMixture: silent stream");
  const double sir_scale = std::sqrt(pt / (pi * std::pow(10.0, spec.sir_db / 10.0)));
  for (double& v : interf_stream.samples) v *= sir_scale;

  std::vector<double> mix;
  AddPlaced(&mix, target_stream.samples, off.target_offset);
  AddPlaced(&mix, interf_stream.samples, off.interf_offset);
  mix.resize(extent, 0.0);

  // Keep everything inside [-1, 1) for 16-bit storage; the same factor is
  // applied to every source so additivity is preserved.
  double peak = 0.0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  const double norm = peak > 0.98 ? 0.98 / peak : 1.0;

  MixtureSample sample;
  sample.spec = spec;
  sample.mixture.sample_rate = sr;
  sample.mixture.samples = mix;
  for (double& v : sample.mixture.samples) v *= norm;

  auto emit_sources = [&](const Stream& st, int stream_off, double gain) {
    for (size_t i = 0; i < st.utts.size(); i++) {
      PlacedSource ps;
      ps.concept_id = st.utts[i].concept_id;
      ps.speaker_id = st.utts[i].speaker_id;
      ps.offset_samples = stream_off + st.utt_offsets[i];
      ps.tokens = st.utts[i].tokens;
      ps.is_target = st.utts[i].concept_id == spec.concepts[0];
      ps.wav = st.utts[i].waveform;
      for (double& v : ps.wav.samples) v *= gain;
      sample.sources.push_back(ps);
    }
  };
  emit_sources(target_stream, off.target_offset, norm);
  emit_sources(interf_stream, off.interf_offset, norm * sir_scale);

  sample.target.sample_rate = sr;
  sample.target.samples.assign(sample.mixture.samples.size(), 0.0);
  for (const auto& src : sample.sources) {
    if (!src.is_target) continue;
    for (int i = 0; i < src.wav.size(); i++) {
      sample.target.samples[src.offset_samples + i] += src.wav.samples[i];
    }
  }

  // Truth activity: frame centers inside any target token interval.
  sample.activity_hop = model.cfg.activity_hop;
  const int n_frames =
      (static_cast<int>(sample.mixture.samples.size()) + sample.activity_hop - 1) /
      sample.activity_hop;
  sample.truth_activity.assign(n_frames, 0);
  for (const auto& src : sample.sources) {
    if (!src.is_target) continue;
    for (const auto& tok : src.tokens) {
      const double lo = src.offset_samples + tok.start_s * sr;
      const double hi = src.offset_samples + tok.end_s * sr;
      for (int t = 0; t < n_frames; t++) {
        const double center = (t + 0.5) * sample.activity_hop;
        if (center >= lo && center < hi) sample.truth_activity[t] = 1;
      }
    }
  }

  // Specifiers: the image carries the target stream's token content; the
  // enrollment utterance is freshly drawn from a speaker outside the mixture.
  std::vector<int> target_tokens;
  for (const auto& src : sample.sources) {
    if (!src.is_target) continue;
    for (const auto& t : src.tokens) target_tokens.push_back(t.token_id);
  }
  std::sort(target_tokens.begin(), target_tokens.end());
  target_tokens.erase(std::unique(target_tokens.begin(), target_tokens.end()),
                      target_tokens.end());
  sample.image_specifier =
      SynthImage(model, model.Concept(spec.concepts[0]), rng.NextU64(), target_tokens);

  std::set<int> used(spec.speakers.begin(), spec.speakers.end());
  std::vector<int> candidates;
  for (const auto& sp : model.speakers) {
    if (!used.count(sp.speaker_id)) candidates.push_back(sp.speaker_id);
  }
  Require(!candidates.empty(), "MakeMixture: no held-out speaker for the enrollment");
  const int enr_speaker = candidates[rng.UniformInt(0, static_cast<int>(candidates.size()) - 1)];
  sample.speech_specifier = SynthUtterance(
      model, model.Concept(spec.concepts[0]), model.Speaker(enr_speaker),
      rng.UniformInt(model.cfg.n_tokens_min, model.cfg.n_tokens_max), rng.NextU64());

  std::set<int> speaker_set(spec.speakers.begin(), spec.speakers.end());
  sample.diff_same =
      speaker_set.size() == static_cast<size_t>(spec.n_sources) ? "Diff" : "Same";
  return sample;
}

// ---------------------------------------------------------------------------
// Manifest and dataset

std::vector<std::pair<int, int>> RleEncode(const std::vector<uint8_t>& v) {
  std::vector<std::pair<int, int>> out;
  size_t i = 0;
  while (i < v.size()) {
    size_t j = i;
    while (j < v.size() && v[j] == v[i]) j++;
    out.push_back({static_cast<int>(v[i]), static_cast<int>(j - i)});
    i = j;
  }
  return out;
}

std::vector<uint8_t> RleDecode(const std::vector<std::pair<int, int>>& rle) {
  std::vector<uint8_t> out;
  for (const auto& [val, run] : rle) {
    out.insert(out.end(), run, static_cast<uint8_t>(val));
  }
  return out;
}

namespace {

json TokensToJson(const std::vector<TokenSpan>& tokens) {
  json arr = json::array();
  for (const auto& t : tokens) arr.push_back({t.token_id, t.start_s, t.end_s});
  return arr;
}

std::vector<TokenSpan> TokensFromJson(const json& arr) {
  std::vector<TokenSpan> out;
  for (const auto& t : arr) out.push_back({t[0].get<int>(), t[1].get<double>(), t[2].get<double>()});
  return out;
}

}  // namespace

std::string ManifestRow::ToJson() const {
  json j;
  j["id"] = id;
  j["split"] = split;
  j["testset"] = testset;
  j["scenario"] = scenario;
  j["overlap_ratio"] = overlap_ratio;
  j["sir_db"] = sir_db;
  j["target_concept"] = target_concept;
  j["mix_wav"] = mix_wav;
  j["mix_len"] = mix_len;
  json srcs = json::array();
  for (const auto& s : sources) {
    json sj;
    sj["concept"] = s.concept_id;
    sj["speaker"] = s.speaker_id;
    sj["wav"] = s.wav;
    sj["offset_samples"] = s.offset_samples;
    sj["is_target"] = s.is_target;
    sj["tokens"] = TokensToJson(s.tokens);
    srcs.push_back(sj);
  }
  j["sources"] = srcs;
  j["image_bin"] = image_bin;
  j["enroll_wav"] = enroll_wav;
  j["enroll_tokens"] = TokensToJson(enroll_tokens);
  json rle = json::array();
  for (const auto& [v, run] : activity_rle) rle.push_back({v, run});
  j["activity_rle"] = rle;
  j["activity_hop"] = activity_hop;
  j["diff_same"] = diff_same;
  j["scale"] = scale;
  j["seed"] = seed;
  return j.dump();
}

ManifestRow ManifestRow::FromJson(const std::string& line) {
  json j = json::parse(line);
  ManifestRow r;
  r.id = j["id"];
  r.split = j["split"];
  r.testset = j["testset"];
  r.scenario = j["scenario"];
  r.overlap_ratio = j["overlap_ratio"];
  r.sir_db = j["sir_db"];
  r.target_concept = j["target_concept"];
  r.mix_wav = j["mix_wav"];
  r.mix_len = j["mix_len"];
  for (const auto& sj : j["sources"]) {
    ManifestSource s;
    s.concept_id = sj["concept"];
    s.speaker_id = sj["speaker"];
    s.wav = sj["wav"];
    s.offset_samples = sj["offset_samples"];
    s.is_target = sj["is_target"];
    s.tokens = TokensFromJson(sj["tokens"]);
    r.sources.push_back(s);
  }
  r.image_bin = j["image_bin"];
  r.enroll_wav = j["enroll_wav"];
  r.enroll_tokens = TokensFromJson(j["enroll_tokens"]);
  for (const auto& e : j["activity_rle"]) {
    r.activity_rle.push_back({e[0].get<int>(), e[1].get<int>()});
  }
  r.activity_hop = j["activity_hop"];
  r.diff_same = j["diff_same"];
  r.scale = j["scale"];
  r.seed = j["seed"];
  return r;
}

void WriteManifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  Require(f.good(), "WriteManifest: cannot open " + path);
  for (const auto& r : rows) f << r.ToJson() << "\n";
  Require(f.good(), "WriteManifest: write failed");
}

std::vector<ManifestRow> ReadManifest(const std::string& path) {
  std::ifstream f(path);
  Require(f.good(), "ReadManifest: cannot open " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) rows.push_back(ManifestRow::FromJson(line));
  }
  return rows;
}

namespace {

struct SampleDraw {
  MixtureSpec spec;
  std::string split;
};

// Concepts and speakers for one mixture, drawn from the given speaker pool.
MixtureSpec DrawSpec(const CorpusModel& model, Rng* rng, int n_sources,
                     const std::vector<int>& pool, double ratio, bool force_same,
                     uint64_t sample_seed, double sir_lo, double sir_hi) {
  MixtureSpec spec;
  spec.n_sources = n_sources;
  spec.overlap_ratio = ratio;
  spec.sir_db = rng->Uniform(sir_lo, sir_hi);
  spec.seed = sample_seed;
  const int n_concepts = static_cast<int>(model.concepts.size());
  const int c1 = rng->UniformInt(0, n_concepts - 1);
  int c2 = rng->UniformInt(0, n_concepts - 2);
  if (c2 >= c1) c2++;
  const int per_stream = n_sources / 2;
  for (int i = 0; i < per_stream; i++) spec.concepts.push_back(c1);
  for (int i = 0; i < per_stream; i++) spec.concepts.push_back(c2);

  // distinct speakers, then optionally collapse one pair across concepts
  std::vector<int> pool_copy = pool;
  for (int i = 0; i < n_sources; i++) {
    Require(!pool_copy.empty(), "DrawSpec: speaker pool too small");
    const int pick = rng->UniformInt(0, static_cast<int>(pool_copy.size()) - 1);
    spec.speakers.push_back(pool_copy[pick]);
    pool_copy.erase(pool_copy.begin() + pick);
  }
  if (force_same) {
    spec.speakers[per_stream] = spec.speakers[0];  // one speaker, both concepts
    spec.scenario = 3;
  } else {
    spec.scenario = n_sources == 2 ? 1 : 2;
  }
  return spec;
}

}  // namespace

std::vector<ManifestRow> BuildDataset(const CorpusModel& model, const DatasetConfig& dcfg,
                                      const std::string& out_dir) {
  Require(dcfg.test_speakers >= dcfg.n_sources + 1,
          "BuildDataset: test speaker pool too small");
  Require(static_cast<int>(model.speakers.size()) - dcfg.test_speakers >= dcfg.n_sources + 1,
          "BuildDataset: train speaker pool too small");
  const std::string testset = dcfg.n_sources == 2 ? "2mix" : "4mix";

  std::vector<int> train_pool, test_pool;
  for (int i = 0; i < static_cast<int>(model.speakers.size()); i++) {
    if (i < static_cast<int>(model.speakers.size()) - dcfg.test_speakers) {
      train_pool.push_back(i);
    } else {
      test_pool.push_back(i);
    }
  }

  Rng rng(SplitMix64(dcfg.seed ^ 0x64736574ULL));
  std::vector<SampleDraw> draws;
  auto draw_block = [&](int count, const std::string& split, const std::vector<int>& pool,
                        double ratio, bool force_same) {
    for (int i = 0; i < count; i++) {
      const uint64_t sample_seed = rng.NextU64();
      const bool same = force_same || (split != "test" && rng.Bernoulli(dcfg.same_speaker_fraction));
      draws.push_back({DrawSpec(model, &rng, dcfg.n_sources, pool, ratio, same, sample_seed,
                                0.0, 5.0),
                       split});
    }
  };
  draw_block(dcfg.train_mixtures, "train", train_pool, 1.0, false);
  draw_block(dcfg.valid_mixtures, "valid", train_pool, 1.0, false);
  const int per_ratio = dcfg.test_mixtures / static_cast<int>(dcfg.test_ratios.size());
  for (double ratio : dcfg.test_ratios) draw_block(per_ratio, "test", test_pool, ratio, false);
  draw_block(dcfg.test_same_mixtures, "test", test_pool, 0.0, true);

  for (const std::string& d : {"train", "valid", "test"}) {
    fs::create_directories(fs::path(out_dir) / d);
  }

  std::vector<ManifestRow> rows(draws.size());
  ParallelFor(static_cast<int>(draws.size()), dcfg.threads, [&](int i) {
    const auto& draw = draws[i];
    MixtureSample sample = MakeMixture(model, draw.spec);
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%06d", draw.split.c_str(), i);

    ManifestRow r;
    r.id = id;
    r.split = draw.split;
    r.testset = testset;
    r.scenario = draw.spec.scenario;
    r.overlap_ratio = draw.spec.overlap_ratio;
    r.sir_db = draw.spec.sir_db;
    r.target_concept = draw.spec.concepts[0];
    r.mix_len = sample.mixture.size();
    r.activity_hop = sample.activity_hop;
    r.activity_rle = RleEncode(sample.truth_activity);
    r.diff_same = sample.diff_same;
    r.seed = draw.spec.seed;

    const std::string stem = draw.split + "/" + std::string(id);
    r.mix_wav = stem + "_mix.wav";
    WriteWav((fs::path(out_dir) / r.mix_wav).string(), sample.mixture);
    for (size_t s = 0; s < sample.sources.size(); s++) {
      ManifestSource ms;
      ms.concept_id = sample.sources[s].concept_id;
      ms.speaker_id = sample.sources[s].speaker_id;
      ms.offset_samples = sample.sources[s].offset_samples;
      ms.is_target = sample.sources[s].is_target;
      ms.tokens = sample.sources[s].tokens;
      ms.wav = stem + "_s" + std::to_string(s) + ".wav";
      WriteWav((fs::path(out_dir) / ms.wav).string(), sample.sources[s].wav);
      r.sources.push_back(ms);
    }
    r.image_bin = stem + "_img.bin";
    nn::WriteMatrixCache((fs::path(out_dir) / r.image_bin).string(),
                         sample.image_specifier.patches);
    r.enroll_wav = stem + "_enr.wav";
    WriteWav((fs::path(out_dir) / r.enroll_wav).string(), sample.speech_specifier.waveform);
    r.enroll_tokens = sample.speech_specifier.tokens;
    rows[i] = r;
  });

  WriteManifest((fs::path(out_dir) / "manifest.jsonl").string(), rows);
  return rows;
}

MixtureSample LoadSample(const ManifestRow& row, const std::string& root_dir) {
  MixtureSample sample;
  sample.mixture = ReadWav((fs::path(root_dir) / row.mix_wav).string());
  sample.activity_hop = row.activity_hop;
  sample.truth_activity = RleDecode(row.activity_rle);
  sample.diff_same = row.diff_same;
  sample.spec.scenario = row.scenario;
  sample.spec.n_sources = static_cast<int>(row.sources.size());
  sample.spec.overlap_ratio = row.overlap_ratio;
  sample.spec.sir_db = row.sir_db;
  sample.spec.seed = row.seed;

  sample.target.sample_rate = sample.mixture.sample_rate;
  sample.target.samples.assign(sample.mixture.samples.size(), 0.0);
  for (const auto& ms : row.sources) {
    PlacedSource ps;
    ps.concept_id = ms.concept_id;
    ps.speaker_id = ms.speaker_id;
    ps.offset_samples = ms.offset_samples;
    ps.is_target = ms.is_target;
    ps.tokens = ms.tokens;
    ps.wav = ReadWav((fs::path(root_dir) / ms.wav).string());
    sample.spec.concepts.push_back(ms.concept_id);
    sample.spec.speakers.push_back(ms.speaker_id);
    if (ms.is_target) {
      for (int i = 0; i < ps.wav.size(); i++) {
        sample.target.samples[ps.offset_samples + i] += ps.wav.samples[i];
      }
    }
    sample.sources.push_back(std::move(ps));
  }

  sample.image_specifier.patches = nn::ReadMatrixCache((fs::path(root_dir) / row.image_bin).string());
  sample.image_specifier.concept_id = row.target_concept;
  sample.speech_specifier.waveform = ReadWav((fs::path(root_dir) / row.enroll_wav).string());
  sample.speech_specifier.concept_id = row.target_concept;
  sample.speech_specifier.tokens = row.enroll_tokens;
  return sample;
}

}  // namespace corpus
}  // namespace cbx
