// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CBX_SIGNAL_H_
#define CBX_SIGNAL_H_

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbx/common.h"

namespace cbx {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 8000;

  int size() const { return static_cast<int>(samples.size()); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Analysis/synthesis framing. The window is a periodic Hann; hop must divide
// window_len with at least 2x overlap so the frames tile exactly.
struct StftConfig {
  int window_len = 256;
  int hop = 64;

  int bins() const { return window_len / 2 + 1; }
  void Validate() const;
};

struct SpectrogramComplex {
  Eigen::MatrixXcd frames;  // T x F
  StftConfig config;
  int source_len = 0;  // pre-padding length, so istft can trim
  int sample_rate = 8000;

  int frame_count() const { return static_cast<int>(frames.rows()); }
  int bins() const { return static_cast<int>(frames.cols()); }
};

struct TimeFrequencyMask {
  Eigen::MatrixXd values;  // T x F, nonnegative
};

std::vector<double> HannPeriodic(int n);

// rfft/irfft on real frames; n power of two uses radix-2, otherwise a direct
// transform (exact, slower).
std::vector<std::complex<double>> Rfft(const double* x, int n);
std::vector<double> Irfft(const std::complex<double>* spec, int n);

// Frames start at t*hop in a buffer zero-padded by window_len/2 on each end,
// so T = floor(len/hop) + 1.
SpectrogramComplex Stft(const Waveform& w, const StftConfig& cfg);

// Windowed overlap-add with per-sample window-power normalization; exact
// round trip for unmodified spectrograms.
Waveform Istft(const SpectrogramComplex& s);

// Adjoint of the linear map (Re S, Im S) -> Istft output, for backprop through
// the decoder. grad_wav has source_len entries; result is T x F with the
// gradient packed as (d/dRe) + i*(d/dIm).
Eigen::MatrixXcd IstftAdjoint(const Eigen::VectorXd& grad_wav, const StftConfig& cfg,
                              int source_len, int n_frames);

SpectrogramComplex ApplyMask(const SpectrogramComplex& s, const TimeFrequencyMask& m);

// Per-frame [real; imag] concatenation, T x 2F.
Eigen::MatrixXd FeaturesFromSpec(const SpectrogramComplex& s);
SpectrogramComplex SpecFromFeatures(const Eigen::MatrixXd& feats, const StftConfig& cfg,
                                    int source_len);

// RIFF PCM, 16-bit signed little-endian, mono. Amplitudes map to [-1, 1) by
// division by 32768.
Waveform ReadWav(const std::string& path);
void WriteWav(const std::string& path, const Waveform& w);

}  // namespace cbx

#endif  // CBX_SIGNAL_H_
