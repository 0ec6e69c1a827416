// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "cbx/signal.h"

using namespace cbx;

namespace {

Waveform RandomWave(int n, uint64_t seed) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(n);
  for (int i = 0; i < n; i++) w.samples[i] = rng.Uniform(-0.5, 0.5);
  return w;
}

double MaxAbs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST_CASE("stft shape and feature width at defaults") {
  StftConfig cfg;
  Waveform w = RandomWave(8000, 1);
  auto s = Stft(w, cfg);
  CHECK(s.bins() == 129);
  CHECK(s.frame_count() == 8000 / 64 + 1);
  auto feats = FeaturesFromSpec(s);
  CHECK(feats.cols() == 258);
  CHECK(feats.rows() == s.frame_count());
}

TEST_CASE("stft of zero waveform is zero") {
  Waveform w;
  w.samples.assign(3000, 0.0);
  auto s = Stft(w, StftConfig{});
  CHECK(s.frames.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stft errors") {
  Waveform w;
  CHECK_THROWS(Stft(w, StftConfig{}));
  w.samples.assign(100, 0.1);
  StftConfig bad;
  bad.hop = 100;  // does not divide window_len
  CHECK_THROWS(Stft(w, bad));
  bad = StftConfig{};
  bad.window_len = 255;
  CHECK_THROWS(Stft(w, bad));
}

TEST_CASE("istft round trip is near-exact") {
  StftConfig cfg;
  for (uint64_t seed : {7u, 8u, 9u}) {
    Waveform w = RandomWave(5000 + 117 * static_cast<int>(seed), seed);
    Waveform r = Istft(Stft(w, cfg));
    REQUIRE(r.size() == w.size());
    double err = 0;
    for (int i = 0; i < w.size(); i++) err = std::max(err, std::abs(r.samples[i] - w.samples[i]));
    CHECK(err < 1e-6 * MaxAbs(w.samples));
  }
}

TEST_CASE("istft of zero spectrogram is zero") {
  Waveform w = RandomWave(4000, 3);
  auto s = Stft(w, StftConfig{});
  s.frames.setZero();
  Waveform r = Istft(s);
  CHECK(MaxAbs(r.samples) == 0.0);
}

TEST_CASE("round trip SI-SDR on 1s noise is over 60 dB") {
  Waveform w = RandomWave(8000, 21);
  Waveform r = Istft(Stft(w, StftConfig{}));
  double num = 0, den = 0;
  for (int i = 0; i < w.size(); i++) {
    num += w.samples[i] * w.samples[i];
    const double d = w.samples[i] - r.samples[i];
    den += d * d;
  }
  CHECK(10.0 * std::log10(num / std::max(den, 1e-300)) > 60.0);
}

TEST_CASE("stft linearity") {
  StftConfig cfg;
  Waveform a = RandomWave(3000, 31), b = RandomWave(3000, 32);
  Waveform mix;
  mix.samples.resize(3000);
  for (int i = 0; i < 3000; i++) mix.samples[i] = 2.0 * a.samples[i] - 0.5 * b.samples[i];
  auto sa = Stft(a, cfg), sb = Stft(b, cfg), sm = Stft(mix, cfg);
  Eigen::MatrixXcd lin = 2.0 * sa.frames - 0.5 * sb.frames;
  double rel = (sm.frames - lin).cwiseAbs().maxCoeff() / lin.cwiseAbs().maxCoeff();
  CHECK(rel < 1e-9);
}

TEST_CASE("windowed-frame energy matches spectral energy on white noise") {
  // Parseval per frame, and total windowed energy ~ ||x||^2 * sum(w^2)/hop.
  StftConfig cfg;
  Waveform w = RandomWave(8000, 77);
  auto s = Stft(w, cfg);
  const int n = cfg.window_len;
  double spec_energy = 0.0;
  for (int t = 0; t < s.frame_count(); t++) {
    for (int k = 0; k < s.bins(); k++) {
      const double c = (k == 0 || k == n / 2) ? 1.0 : 2.0;
      spec_energy += c * std::norm(s.frames(t, k));
    }
  }
  spec_energy /= n;
  auto window = HannPeriodic(n);
  double wsq = 0;
  for (double x : window) wsq += x * x;
  double sig_energy = 0;
  for (double x : w.samples) sig_energy += x * x;
  const double expected = sig_energy * wsq / cfg.hop;
  CHECK(spec_energy / expected == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("bin-center sinusoid concentrates around its bin") {
  // Periodic Hann spreads a bin-centered tone over bins k-1..k+1 with weights
  // (-1/4, 1/2, -1/4); the center bin holds 2/3 of that energy. Frozen from a
  // direct windowed-DFT computation.
  StftConfig cfg;
  const int k = 20;
  const double freq = static_cast<double>(k) * 8000.0 / cfg.window_len;
  Waveform w;
  w.samples.resize(8000);
  for (int i = 0; i < 8000; i++) w.samples[i] = std::sin(2.0 * M_PI * freq * i / 8000.0);
  auto s = Stft(w, cfg);
  for (int t = 40; t < 80; t++) {
    double total = 0, local = 0;
    int argmax = 0;
    double best = -1;
    for (int b = 0; b < s.bins(); b++) {
      const double e = std::norm(s.frames(t, b));
      total += e;
      if (b >= k - 1 && b <= k + 1) local += e;
      if (e > best) {
        best = e;
        argmax = b;
      }
    }
    CHECK(argmax == k);
    CHECK(local / total > 0.99);
    const double center_frac = std::norm(s.frames(t, k)) / total;
    CHECK(center_frac == doctest::Approx(2.0 / 3.0).epsilon(0.02));
  }
}

TEST_CASE("apply_mask identity, zero, and shape errors") {
  Waveform w = RandomWave(2000, 5);
  auto s = Stft(w, StftConfig{});
  TimeFrequencyMask ones{Eigen::MatrixXd::Ones(s.frame_count(), s.bins())};
  auto masked = ApplyMask(s, ones);
  CHECK((masked.frames - s.frames).cwiseAbs().maxCoeff() == 0.0);

  TimeFrequencyMask zeros{Eigen::MatrixXd::Zero(s.frame_count(), s.bins())};
  CHECK(ApplyMask(s, zeros).frames.cwiseAbs().maxCoeff() == 0.0);

  TimeFrequencyMask bad{Eigen::MatrixXd::Ones(3, 3)};
  CHECK_THROWS(ApplyMask(s, bad));
}

TEST_CASE("feature round trip is the identity") {
  Waveform w = RandomWave(2000, 6);
  auto s = Stft(w, StftConfig{});
  auto feats = FeaturesFromSpec(s);
  auto back = SpecFromFeatures(feats, s.config, s.source_len);
  CHECK((back.frames - s.frames).cwiseAbs().maxCoeff() == 0.0);
  auto feats2 = FeaturesFromSpec(back);
  CHECK((feats2 - feats).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("istft adjoint passes the dot-product test") {
  StftConfig cfg;
  cfg.window_len = 64;
  cfg.hop = 16;
  const int len = 300;
  Rng rng(99);
  SpectrogramComplex s;
  s.config = cfg;
  s.source_len = len;
  s.frames.resize(len / cfg.hop + 1, cfg.bins());
  for (Eigen::Index t = 0; t < s.frames.rows(); t++)
    for (Eigen::Index k = 0; k < s.frames.cols(); k++)
      s.frames(t, k) = std::complex<double>(rng.Uniform(-1, 1),
                                            (k == 0 || k == cfg.window_len / 2)
                                                ? 0.0
                                                : rng.Uniform(-1, 1));
  Waveform y = Istft(s);
  Eigen::VectorXd g(len);
  for (int i = 0; i < len; i++) g(i) = rng.Uniform(-1, 1);

  Eigen::MatrixXcd adj = IstftAdjoint(g, cfg, len, s.frame_count());
  double lhs = 0;
  for (int i = 0; i < len; i++) lhs += y.samples[i] * g(i);
  double rhs = (s.frames.real().cwiseProduct(adj.real()) +
                s.frames.imag().cwiseProduct(adj.imag()))
                   .sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("wav io round trip and amplitude mapping") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "cbx_test_io.wav").string();
  Waveform w;
  w.sample_rate = 8000;
  w.samples = {0.0, 0.5, -0.5, 0.25, -1.0, 32767.0 / 32768.0};
  WriteWav(path, w);
  Waveform r = ReadWav(path);
  REQUIRE(r.size() == w.size());
  CHECK(r.sample_rate == 8000);
  for (int i = 0; i < w.size(); i++) {
    CHECK(std::abs(r.samples[i] - w.samples[i]) <= 0.5 / 32768.0 + 1e-12);
  }
  std::remove(path.c_str());
}
