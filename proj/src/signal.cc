// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cbx/signal.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>

namespace cbx {

void StftConfig::Validate() const {
  Require(window_len > 0 && hop > 0, "StftConfig: window_len and hop must be positive");
  Require(window_len % 2 == 0, "StftConfig: window_len must be even");
  Require(hop <= window_len, "StftConfig: hop must not exceed window_len");
  Require(window_len % hop == 0 && window_len / hop >= 2,
          "StftConfig: hop must divide window_len with overlap >= 2x");
}

std::vector<double> HannPeriodic(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; i++) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

namespace {

bool IsPow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, in place. inverse applies 1/n.
void FftInplace(std::vector<std::complex<double>>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  for (int i = 1, j = 0; i < n; i++) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / len * (inverse ? 1.0 : -1.0);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int j = 0; j < len / 2; j++) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= n;
  }
}

}  // namespace

std::vector<std::complex<double>> Rfft(const double* x, int n) {
  const int f = n / 2 + 1;
  std::vector<std::complex<double>> out(f);
  if (IsPow2(n)) {
    std::vector<std::complex<double>> a(n);
    for (int i = 0; i < n; i++) a[i] = x[i];
    FftInplace(a, false);
    for (int k = 0; k < f; k++) out[k] = a[k];
  } else {
    for (int k = 0; k < f; k++) {
      std::complex<double> acc(0.0, 0.0);
      for (int i = 0; i < n; i++) {
        double ang = -2.0 * M_PI * k * i / n;
        acc += x[i] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      out[k] = acc;
    }
  }
  return out;
}

std::vector<double> Irfft(const std::complex<double>* spec, int n) {
  const int f = n / 2 + 1;
  std::vector<double> out(n);
  if (IsPow2(n)) {
    std::vector<std::complex<double>> a(n);
    a[0] = std::complex<double>(spec[0].real(), 0.0);
    a[n / 2] = std::complex<double>(spec[n / 2].real(), 0.0);
    for (int k = 1; k < n / 2; k++) {
      a[k] = spec[k];
      a[n - k] = std::conj(spec[k]);
    }
    FftInplace(a, true);
    for (int i = 0; i < n; i++) out[i] = a[i].real();
  } else {
    for (int i = 0; i < n; i++) {
      double acc = spec[0].real();
      for (int k = 1; k < f; k++) {
        double ang = 2.0 * M_PI * k * i / n;
        double c = (k == n - k) ? 1.0 : 2.0;  // unreachable for odd n; kept for clarity
        acc += c * (spec[k].real() * std::cos(ang) - spec[k].imag() * std::sin(ang));
      }
      out[i] = acc / n;
    }
  }
  return out;
}

SpectrogramComplex Stft(const Waveform& w, const StftConfig& cfg) {
  cfg.Validate();
  Require(!w.samples.empty(), "Stft: empty waveform");
  const int len = w.size();
  const int win = cfg.window_len;
  const int hop = cfg.hop;
  const int pad = win / 2;
  const int t_frames = len / hop + 1;
  const int f = cfg.bins();

  std::vector<double> padded(len + 2 * pad, 0.0);
  std::copy(w.samples.begin(), w.samples.end(), padded.begin() + pad);

  const std::vector<double> window = HannPeriodic(win);
  SpectrogramComplex out;
  out.config = cfg;
  out.source_len = len;
  out.sample_rate = w.sample_rate;
  out.frames.resize(t_frames, f);

  std::vector<double> frame(win);
  for (int t = 0; t < t_frames; t++) {
    const int start = t * hop;
    for (int i = 0; i < win; i++) {
      double x = (start + i < static_cast<int>(padded.size())) ? padded[start + i] : 0.0;
      frame[i] = window[i] * x;
    }
    auto spec = Rfft(frame.data(), win);
    for (int k = 0; k < f; k++) out.frames(t, k) = spec[k];
  }
  return out;
}

namespace {

// Squared-window overlap-add normalizer over the padded buffer.
std::vector<double> WindowPowerSum(const StftConfig& cfg, int padded_len, int n_frames) {
  const std::vector<double> window = HannPeriodic(cfg.window_len);
  std::vector<double> wsum(padded_len, 0.0);
  for (int t = 0; t < n_frames; t++) {
    const int start = t * cfg.hop;
    for (int i = 0; i < cfg.window_len && start + i < padded_len; i++) {
      wsum[start + i] += window[i] * window[i];
    }
  }
  return wsum;
}

}  // namespace

Waveform Istft(const SpectrogramComplex& s) {
  s.config.Validate();
  const int win = s.config.window_len;
  const int hop = s.config.hop;
  const int f = s.config.bins();
  Require(s.bins() == f, "Istft: spectrogram width inconsistent with config");
  Require(s.frame_count() > 0, "Istft: no frames");
  const int len = s.source_len;
  const int pad = win / 2;
  const int padded_len = len + 2 * pad;

  const std::vector<double> window = HannPeriodic(win);
  std::vector<double> acc(padded_len, 0.0);
  std::vector<std::complex<double>> row(f);
  for (int t = 0; t < s.frame_count(); t++) {
    for (int k = 0; k < f; k++) row[k] = s.frames(t, k);
    std::vector<double> frame = Irfft(row.data(), win);
    const int start = t * hop;
    for (int i = 0; i < win && start + i < padded_len; i++) {
      acc[start + i] += window[i] * frame[i];
    }
  }
  const std::vector<double> wsum = WindowPowerSum(s.config, padded_len, s.frame_count());

  Waveform out;
  out.sample_rate = s.sample_rate;
  out.samples.resize(len);
  for (int i = 0; i < len; i++) {
    const double d = wsum[pad + i];
    out.samples[i] = d > 1e-10 ? acc[pad + i] / d : 0.0;
  }
  return out;
}

Eigen::MatrixXcd IstftAdjoint(const Eigen::VectorXd& grad_wav, const StftConfig& cfg,
                              int source_len, int n_frames) {
  cfg.Validate();
  Require(grad_wav.size() == source_len, "IstftAdjoint: gradient length mismatch");
  const int win = cfg.window_len;
  const int hop = cfg.hop;
  const int f = cfg.bins();
  const int pad = win / 2;
  const int padded_len = source_len + 2 * pad;

  const std::vector<double> window = HannPeriodic(win);
  const std::vector<double> wsum = WindowPowerSum(cfg, padded_len, n_frames);

  std::vector<double> gacc(padded_len, 0.0);
  for (int i = 0; i < source_len; i++) {
    const double d = wsum[pad + i];
    gacc[pad + i] = d > 1e-10 ? grad_wav(i) / d : 0.0;
  }

  Eigen::MatrixXcd out(n_frames, f);
  std::vector<double> gframe(win);
  for (int t = 0; t < n_frames; t++) {
    const int start = t * hop;
    for (int i = 0; i < win; i++) {
      double g = (start + i < padded_len) ? gacc[start + i] : 0.0;
      gframe[i] = window[i] * g;
    }
    // Adjoint of Irfft: scaled forward transform, with the imaginary parts of
    // the two real-valued bins pinned to zero.
    auto spec = Rfft(gframe.data(), win);
    for (int k = 0; k < f; k++) {
      const double c = (k == 0 || k == win / 2) ? 1.0 : 2.0;
      double re = c / win * spec[k].real();
      double im = (k == 0 || k == win / 2) ? 0.0 : c / win * spec[k].imag();
      out(t, k) = std::complex<double>(re, im);
    }
  }
  return out;
}

SpectrogramComplex ApplyMask(const SpectrogramComplex& s, const TimeFrequencyMask& m) {
  Require(m.values.rows() == s.frames.rows() && m.values.cols() == s.frames.cols(),
          "ApplyMask: shape mismatch");
  SpectrogramComplex out = s;
  out.frames = s.frames.cwiseProduct(m.values.cast<std::complex<double>>());
  return out;
}

Eigen::MatrixXd FeaturesFromSpec(const SpectrogramComplex& s) {
  const int t = s.frame_count();
  const int f = s.bins();
  Eigen::MatrixXd out(t, 2 * f);
  out.leftCols(f) = s.frames.real();
  out.rightCols(f) = s.frames.imag();
  return out;
}

SpectrogramComplex SpecFromFeatures(const Eigen::MatrixXd& feats, const StftConfig& cfg,
                                    int source_len) {
  const int f = cfg.bins();
  Require(feats.cols() == 2 * f, "SpecFromFeatures: feature width must be 2F");
  SpectrogramComplex out;
  out.config = cfg;
  out.source_len = source_len;
  out.frames.resize(feats.rows(), f);
  out.frames.real() = feats.leftCols(f);
  out.frames.imag() = feats.rightCols(f);
  return out;
}

namespace {

void PutU32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; i++) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void PutU16(std::string& s, uint16_t v) {
  for (int i = 0; i < 2; i++) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t GetU32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t GetU16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Waveform ReadWav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), "ReadWav: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Require(bytes.size() >= 44, "ReadWav: truncated file " + path);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
  Require(std::memcmp(p, "RIFF", 4) == 0 && std::memcmp(p + 8, "WAVE", 4) == 0,
          "ReadWav: not a RIFF/WAVE file: " + path);

  int sample_rate = 0;
  int bits = 0;
  int channels = 0;
  size_t data_off = 0, data_len = 0;
  size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const uint32_t chunk_len = GetU32(p + off + 4);
    if (std::memcmp(p + off, "fmt ", 4) == 0 && off + 8 + 16 <= bytes.size()) {
      const uint16_t fmt = GetU16(p + off + 8);
      Require(fmt == 1, "ReadWav: only PCM supported: " + path);
      channels = GetU16(p + off + 10);
      sample_rate = static_cast<int>(GetU32(p + off + 12));
      bits = GetU16(p + off + 22);
    } else if (std::memcmp(p + off, "data", 4) == 0) {
      data_off = off + 8;
      data_len = chunk_len;
    }
    off += 8 + chunk_len + (chunk_len & 1);
  }
  Require(channels == 1, "ReadWav: only mono supported: " + path);
  Require(bits == 16, "ReadWav: only 16-bit PCM supported: " + path);
  Require(sample_rate > 0, "ReadWav: bad sample rate: " + path);
  Require(data_off != 0 && data_off + data_len <= bytes.size(), "ReadWav: bad data chunk: " + path);

  Waveform w;
  w.sample_rate = sample_rate;
  const size_t n = data_len / 2;
  w.samples.resize(n);
  for (size_t i = 0; i < n; i++) {
    const int16_t v = static_cast<int16_t>(GetU16(p + data_off + 2 * i));
    w.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return w;
}

void WriteWav(const std::string& path, const Waveform& w) {
  Require(w.sample_rate > 0, "WriteWav: bad sample rate");
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_len = n * 2;
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  PutU32(out, 36 + data_len);
  out += "WAVE";
  out += "fmt ";
  PutU32(out, 16);
  PutU16(out, 1);  // PCM
  PutU16(out, 1);  // mono
  PutU32(out, static_cast<uint32_t>(w.sample_rate));
  PutU32(out, static_cast<uint32_t>(w.sample_rate) * 2);
  PutU16(out, 2);
  PutU16(out, 16);
  out += "data";
  PutU32(out, data_len);
  for (uint32_t i = 0; i < n; i++) {
    double v = w.samples[i] * 32768.0;
    long q = std::lround(v);
    q = std::clamp(q, -32768L, 32767L);
    PutU16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  Require(f.good(), "WriteWav: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  Require(f.good(), "WriteWav: write failed for " + path);
}

uint64_t ChecksumFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), "ChecksumFile: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = Fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    if (!in) break;
  }
  return h;
}

void ParallelFor(int n, int n_threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (n_threads <= 1 || n == 1) {
    for (int i = 0; i < n; i++) fn(i);
    return;
  }
  const int workers = std::min(n_threads, n);
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (int wi = 0; wi < workers; wi++) {
    pool.emplace_back([&, wi]() {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[wi] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

int EnvThreads() {
  const char* v = std::getenv("CBX_THREADS");
  if (!v) return 1;
  int n = std::atoi(v);
  return n > 0 ? n : 1;
}

}  // namespace cbx
