// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "cbx/corpus.h"

using namespace cbx;
using namespace cbx::corpus;
namespace fs = std::filesystem;

namespace {

CorpusModel ToyModel(uint64_t seed = 11) {
  CorpusConfig cfg;
  return CorpusModel::Build(cfg, seed);
}

MixtureSpec TwoMixSpec(const CorpusModel&, double ratio, uint64_t seed,
                       bool same_speaker = false) {
  MixtureSpec spec;
  spec.scenario = same_speaker ? 3 : 1;
  spec.n_sources = 2;
  spec.overlap_ratio = ratio;
  spec.sir_db = 2.5;
  spec.concepts = {0, 3};
  spec.speakers = same_speaker ? std::vector<int>{1, 1} : std::vector<int>{1, 2};
  spec.seed = seed;
  return spec;
}

double BandCentroid(const Waveform& w, double lo_hz, double hi_hz) {
  StftConfig cfg;
  auto s = Stft(w, cfg);
  double num = 0, den = 0;
  for (int t = 0; t < s.frame_count(); t++) {
    for (int k = 0; k < s.bins(); k++) {
      const double f = k * 8000.0 / cfg.window_len;
      if (f < lo_hz || f > hi_hz) continue;
      const double e = std::norm(s.frames(t, k));
      num += f * e;
      den += e;
    }
  }
  return den > 0 ? num / den : 0.0;
}

}  // namespace

TEST_CASE("utterance synthesis is deterministic") {
  auto model = ToyModel();
  auto a = SynthUtterance(model, model.Concept(0), model.Speaker(0), 4, 77);
  auto b = SynthUtterance(model, model.Concept(0), model.Speaker(0), 4, 77);
  REQUIRE(a.waveform.size() == b.waveform.size());
  CHECK(a.waveform.samples == b.waveform.samples);
  CHECK(a.tokens.size() == 4);
}

TEST_CASE("token count and tempo set the utterance duration") {
  auto model = ToyModel();
  SpeakerProfile sp = model.Speaker(0);
  sp.tempo = 2.0;
  auto u = SynthUtterance(model, model.Concept(1), sp, 5, 5);
  // 5 tokens at 2 tokens/s, give or take the gap budget
  CHECK(u.waveform.duration_s() > 1.5);
  CHECK(u.waveform.duration_s() < 3.4);
  for (size_t i = 1; i < u.tokens.size(); i++) {
    CHECK(u.tokens[i].start_s >= u.tokens[i - 1].end_s);  // sorted, non-overlapping
  }
  CHECK(u.tokens.back().end_s <= u.waveform.duration_s() + 1e-9);
}

TEST_CASE("concept band is stable across speakers relative to f0 spread") {
  auto model = ToyModel();
  SpeakerProfile a = model.Speaker(0), b = model.Speaker(1);
  a.f0_base = 100.0;
  b.f0_base = 220.0;
  auto ua = SynthUtterance(model, model.Concept(2), a, 4, 31);
  auto ub = SynthUtterance(model, model.Concept(2), b, 4, 32);
  const double ca = BandCentroid(ua.waveform, 300.0, 3800.0);
  const double cb = BandCentroid(ub.waveform, 300.0, 3800.0);
  CHECK(std::abs(ca - cb) < std::abs(a.f0_base - b.f0_base));
}

TEST_CASE("empty vocabulary is rejected") {
  auto model = ToyModel();
  ConceptClass empty = model.Concept(0);
  empty.token_vocab.clear();
  CHECK_THROWS(SynthUtterance(model, empty, model.Speaker(0), 3, 1));
}

TEST_CASE("image grid determinism and background ratio zero") {
  auto model = ToyModel();
  auto g1 = SynthImage(model, model.Concept(0), 9);
  auto g2 = SynthImage(model, model.Concept(0), 9);
  CHECK((g1.patches - g2.patches).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g1.patches.rows() == 49);

  CorpusConfig cfg;
  cfg.bg_ratio = 0.0;
  auto model0 = CorpusModel::Build(cfg, 3);
  auto g = SynthImage(model0, model0.Concept(1), 4);
  // all patches from the concept distribution: every patch leans toward the
  // concept prototype, none toward the background
  for (int i = 0; i < g.patches.rows(); i++) {
    const double to_concept = g.patches.row(i).dot(model0.concept_prototypes.row(1));
    const double to_bg = g.patches.row(i).dot(model0.background_proto);
    CHECK(to_concept > to_bg);
  }
}

TEST_CASE("mean patch is closest to its own concept prototype") {
  auto model = ToyModel();
  int ok = 0;
  const int trials = 1000;
  for (int i = 0; i < trials; i++) {
    const int c = i % model.cfg.n_concepts;
    auto g = SynthImage(model, model.Concept(c), 1000 + i);
    Eigen::VectorXd mean = g.patches.colwise().mean().transpose();
    mean /= mean.norm();
    int best = -1;
    double best_cos = -2;
    for (int j = 0; j < model.cfg.n_concepts; j++) {
      const double cos = mean.dot(model.concept_prototypes.row(j).transpose());
      if (cos > best_cos) {
        best_cos = cos;
        best = j;
      }
    }
    if (best == c) ok++;
  }
  CHECK(ok >= 990);
}

TEST_CASE("sir scaling: closed-form factors and round trip") {
  Waveform t, i;
  t.samples.assign(1000, 0.1);
  i.samples.assign(1000, 0.1);
  auto s0 = ScaleToSir(t, i, 0.0);
  CHECK(s0.samples[0] == doctest::Approx(0.1).epsilon(1e-12));

  auto s5 = ScaleToSir(t, i, 5.0);
  CHECK(s5.samples[0] / 0.1 == doctest::Approx(std::pow(10.0, -0.25)).epsilon(1e-10));

  // definitional round trip
  double pt = 0, pi = 0;
  for (int k = 0; k < 1000; k++) {
    pt += t.samples[k] * t.samples[k];
    pi += s5.samples[k] * s5.samples[k];
  }
  CHECK(10.0 * std::log10(pt / pi) == doctest::Approx(5.0).epsilon(1e-9));

  Waveform silent;
  silent.samples.assign(100, 0.0);
  CHECK_THROWS(ScaleToSir(silent, i, 0.0));
}

TEST_CASE("placement offsets realize the requested overlap") {
  // 4 s target at 8 kHz, ratio 0.25 -> 1 s overlap
  auto off = PlaceWithOverlap(32000, 32000, 0.25);
  CHECK(off.target_offset == 0);
  CHECK(off.interf_offset == 24000);

  auto full = PlaceWithOverlap(16000, 20000, 1.0);
  CHECK(full.interf_offset == 0);  // target inside the interferer span

  auto abut = PlaceWithOverlap(16000, 9000, 0.0);
  CHECK(abut.interf_offset == 16000);

  CHECK_THROWS(PlaceWithOverlap(16000, 3000, 0.5));
}

TEST_CASE("mixture additivity and target definition") {
  auto model = ToyModel();
  for (double ratio : {1.0, 0.5, 0.0}) {
    auto sample = MakeMixture(model, TwoMixSpec(model, ratio, 555 + ratio * 10));
    std::vector<double> acc(sample.mixture.samples.size(), 0.0);
    for (const auto& src : sample.sources) {
      for (int i = 0; i < src.wav.size(); i++) acc[src.offset_samples + i] += src.wav.samples[i];
    }
    double err = 0;
    for (size_t i = 0; i < acc.size(); i++) {
      err = std::max(err, std::abs(acc[i] - sample.mixture.samples[i]));
    }
    CHECK(err < 1e-9);

    // target is exactly the concept-c sources
    std::vector<double> tgt(sample.mixture.samples.size(), 0.0);
    for (const auto& src : sample.sources) {
      if (src.concept_id != sample.spec.concepts[0]) continue;
      for (int i = 0; i < src.wav.size(); i++) tgt[src.offset_samples + i] += src.wav.samples[i];
    }
    for (size_t i = 0; i < tgt.size(); i++) {
      CHECK(std::abs(tgt[i] - sample.target.samples[i]) < 1e-12);
    }
  }
}

TEST_CASE("realized overlap matches the request within one hop") {
  auto model = ToyModel();
  for (double ratio : {0.0, 0.25, 0.5, 1.0}) {
    auto sample = MakeMixture(model, TwoMixSpec(model, ratio, 777));
    // reconstruct stream extents from the sources
    int t_lo = 1 << 30, t_hi = 0, i_lo = 1 << 30, i_hi = 0;
    for (const auto& src : sample.sources) {
      const int lo = src.offset_samples, hi = src.offset_samples + src.wav.size();
      if (src.is_target) {
        t_lo = std::min(t_lo, lo);
        t_hi = std::max(t_hi, hi);
      } else {
        i_lo = std::min(i_lo, lo);
        i_hi = std::max(i_hi, hi);
      }
    }
    const int overlap = std::max(0, std::min(t_hi, i_hi) - std::max(t_lo, i_lo));
    const double realized = static_cast<double>(overlap) / (t_hi - t_lo);
    CHECK(std::abs(realized - ratio) < 64.0 / (t_hi - t_lo) + 1e-9);
  }
}

TEST_CASE("measured sir matches the spec") {
  auto model = ToyModel();
  auto sample = MakeMixture(model, TwoMixSpec(model, 1.0, 888));
  int ov_lo = 1 << 30, ov_hi = 0;
  double pt = 0, pi = 0;
  // full-overlap case: intersect target and interferer extents
  int t_lo = 1 << 30, t_hi = 0, i_lo = 1 << 30, i_hi = 0;
  for (const auto& src : sample.sources) {
    if (src.is_target) {
      t_lo = std::min(t_lo, src.offset_samples);
      t_hi = std::max(t_hi, src.offset_samples + src.wav.size());
    } else {
      i_lo = std::min(i_lo, src.offset_samples);
      i_hi = std::max(i_hi, src.offset_samples + src.wav.size());
    }
  }
  ov_lo = std::max(t_lo, i_lo);
  ov_hi = std::min(t_hi, i_hi);
  for (const auto& src : sample.sources) {
    for (int i = 0; i < src.wav.size(); i++) {
      const int pos = src.offset_samples + i;
      if (pos < ov_lo || pos >= ov_hi) continue;
      if (src.is_target) {
        pt += src.wav.samples[i] * src.wav.samples[i];
      } else {
        pi += src.wav.samples[i] * src.wav.samples[i];
      }
    }
  }
  CHECK(10.0 * std::log10(pt / pi) == doctest::Approx(sample.spec.sir_db).epsilon(1e-6));
}

TEST_CASE("scenario 2: four sources, target is the concept pair") {
  auto model = ToyModel();
  MixtureSpec spec;
  spec.scenario = 2;
  spec.n_sources = 4;
  spec.overlap_ratio = 1.0;
  spec.sir_db = 1.0;
  spec.concepts = {2, 2, 5, 5};
  spec.speakers = {0, 1, 2, 3};
  spec.seed = 91;
  auto sample = MakeMixture(model, spec);
  int n_target = 0;
  for (const auto& src : sample.sources) n_target += src.is_target ? 1 : 0;
  CHECK(n_target == 2);
  // x^c equals the sum of exactly the two concept-c source waveforms
  std::vector<double> tgt(sample.mixture.samples.size(), 0.0);
  for (const auto& src : sample.sources) {
    if (!src.is_target) continue;
    for (int i = 0; i < src.wav.size(); i++) tgt[src.offset_samples + i] += src.wav.samples[i];
  }
  double err = 0;
  for (size_t i = 0; i < tgt.size(); i++) err = std::max(err, std::abs(tgt[i] - sample.target.samples[i]));
  CHECK(err == 0.0);
}

TEST_CASE("scenario 3: shared speaker, other-concept source excluded from target") {
  auto model = ToyModel();
  auto sample = MakeMixture(model, TwoMixSpec(model, 0.0, 95, /*same_speaker=*/true));
  CHECK(sample.diff_same == "Same");
  CHECK(sample.sources[0].speaker_id == sample.sources[1].speaker_id);
  CHECK(sample.sources[0].is_target);
  CHECK(!sample.sources[1].is_target);
}

TEST_CASE("truth activity marks exactly the frames with target tokens") {
  auto model = ToyModel();
  auto sample = MakeMixture(model, TwoMixSpec(model, 0.0, 123));
  REQUIRE(!sample.truth_activity.empty());
  int active = 0;
  for (uint8_t v : sample.truth_activity) active += v;
  CHECK(active > 0);
  CHECK(active < static_cast<int>(sample.truth_activity.size()));
  // every active frame center lies inside some target token
  const int sr = sample.mixture.sample_rate;
  for (size_t t = 0; t < sample.truth_activity.size(); t++) {
    const double center = (t + 0.5) * sample.activity_hop;
    bool inside = false;
    for (const auto& src : sample.sources) {
      if (!src.is_target) continue;
      for (const auto& tok : src.tokens) {
        if (center >= src.offset_samples + tok.start_s * sr &&
            center < src.offset_samples + tok.end_s * sr) {
          inside = true;
        }
      }
    }
    CHECK(static_cast<bool>(sample.truth_activity[t]) == inside);
  }
}

TEST_CASE("enrollment is a held-out utterance of the target concept") {
  auto model = ToyModel();
  auto sample = MakeMixture(model, TwoMixSpec(model, 1.0, 321));
  CHECK(sample.speech_specifier.concept_id == sample.spec.concepts[0]);
  for (const auto& src : sample.sources) {
    CHECK(sample.speech_specifier.speaker_id != src.speaker_id);
  }
}

TEST_CASE("dataset build: counts, splits, determinism") {
  auto model = ToyModel(21);
  DatasetConfig dcfg;
  dcfg.train_mixtures = 6;
  dcfg.valid_mixtures = 2;
  dcfg.test_mixtures = 8;
  dcfg.test_same_mixtures = 2;
  dcfg.seed = 5;
  const auto dir1 = fs::temp_directory_path() / "cbx_ds_a";
  const auto dir2 = fs::temp_directory_path() / "cbx_ds_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  auto rows1 = BuildDataset(model, dcfg, dir1.string());
  auto rows2 = BuildDataset(model, dcfg, dir2.string());
  CHECK(rows1.size() == 6 + 2 + 8 + 2);

  int train = 0, valid = 0, test = 0;
  std::set<int> train_speakers, test_speakers;
  for (const auto& r : rows1) {
    if (r.split == "train") train++;
    if (r.split == "valid") valid++;
    if (r.split == "test") test++;
    for (const auto& s : r.sources) {
      (r.split == "test" ? test_speakers : train_speakers).insert(s.speaker_id);
    }
    if (r.split != "test") CHECK(r.overlap_ratio == 1.0);
  }
  CHECK(train == 6);
  CHECK(valid == 2);
  CHECK(test == 10);
  for (int s : test_speakers) CHECK(train_speakers.count(s) == 0);

  // byte-identical manifests and audio across runs
  std::ifstream m1(dir1 / "manifest.jsonl"), m2(dir2 / "manifest.jsonl");
  std::string s1((std::istreambuf_iterator<char>(m1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(m2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(ChecksumFile((dir1 / rows1[0].mix_wav).string()) ==
        ChecksumFile((dir2 / rows2[0].mix_wav).string()));

  // round trip through the manifest
  auto rows_back = ReadManifest((dir1 / "manifest.jsonl").string());
  REQUIRE(rows_back.size() == rows1.size());
  auto sample = LoadSample(rows_back[0], dir1.string());
  CHECK(sample.mixture.size() == rows_back[0].mix_len);
  CHECK(!sample.truth_activity.empty());
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("dataset errors on tiny speaker pools") {
  CorpusConfig cfg;
  cfg.n_speakers = 5;
  auto model = CorpusModel::Build(cfg, 1);
  DatasetConfig dcfg;
  dcfg.test_speakers = 3;
  CHECK_THROWS(BuildDataset(model, dcfg, (fs::temp_directory_path() / "cbx_ds_tiny").string()));
}

TEST_CASE("rle round trip") {
  std::vector<uint8_t> v = {0, 0, 1, 1, 1, 0, 1};
  CHECK(RleDecode(RleEncode(v)) == v);
  CHECK(RleEncode(v).size() == 4);
}
