// Copyright 2026 The mrsv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Waveform -> log-mel spectrogram front end and the per-segment random crop
// into three audio subsegments.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include <fftw3.h>

#include "mrsv/common.hpp"

namespace mrsv::signal {

inline constexpr int kSampleRate = 22050;
inline constexpr std::size_t kWindow = 1536;
inline constexpr std::size_t kHop = 588;
inline constexpr std::size_t kMels = 64;
inline constexpr std::size_t kSegmentHops = 192;
inline constexpr std::size_t kSubsegmentHops = 60;
inline constexpr std::size_t kSubsegments = 3;
inline constexpr std::size_t kHeldOutHops = kSegmentHops - kSubsegments * kSubsegmentHops;  // 12
inline constexpr double kLogFloor = 1e-5;

// Samples needed to produce `hops` analysis windows.
constexpr std::size_t samples_for_hops(std::size_t hops) { return (hops - 1) * kHop + kWindow; }
constexpr double hops_to_seconds(double hops) { return hops * static_cast<double>(kHop) / kSampleRate; }
inline constexpr std::size_t kSegmentSamples = samples_for_hops(kSegmentHops);
// Segment-to-segment stride: 192 hops, i.e. 5.12 s.
inline constexpr std::size_t kSegmentStride = kSegmentHops * kHop;
inline constexpr double kSegmentSeconds = static_cast<double>(kSegmentStride) / kSampleRate;

// Real-input DFT of a fixed size backed by FFTW. The plan is shared and
// created once; execution uses caller buffers, so concurrent use is safe.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n), plan_(shared_plan(n)) {}

  std::size_t size() const { return n_; }

  // out[k] = sum_j in[j] exp(-2 pi i jk / n), k = 0..n/2.
  void forward(std::span<const double> in, std::span<std::complex<double>> out) const {
    if (in.size() != n_ || out.size() != n_ / 2 + 1) throw ShapeError(cat("RealFft: expected ", n_, " points"));
    std::vector<double> buf(in.begin(), in.end());
    fftw_execute_dft_r2c(plan_, buf.data(), reinterpret_cast<fftw_complex*>(out.data()));
  }

 private:
  static fftw_plan shared_plan(std::size_t n) {
    static std::mutex mu;
    static std::map<std::size_t, fftw_plan> plans;
    std::lock_guard lock(mu);
    auto& p = plans[n];
    if (!p) {
      std::vector<double> in(n);
      std::vector<std::complex<double>> out(n / 2 + 1);
      p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
      if (!p) throw std::runtime_error(cat("fftw: cannot plan size ", n));
    }
    return p;
  }

  std::size_t n_;
  fftw_plan plan_;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

// Triangular HTK-mel filters spanning 0 Hz to Nyquist, defined on linear
// frequency. Filter m rises from edge m to its center (edge m+1) and falls to
// edge m+2.
struct MelFilterbank {
  std::size_t bins = kWindow / 2 + 1;
  std::vector<double> edges_hz;  // kMels + 2 points
  std::vector<double> weights;   // kMels x bins
  std::vector<std::size_t> first, last;  // nonzero bin range [first, last) per filter

  static MelFilterbank make() {
    MelFilterbank fb;
    const double top = hz_to_mel(kSampleRate / 2.0);
    for (std::size_t i = 0; i < kMels + 2; ++i)
      fb.edges_hz.push_back(mel_to_hz(top * static_cast<double>(i) / static_cast<double>(kMels + 1)));
    fb.weights.assign(kMels * fb.bins, 0.0);
    for (std::size_t m = 0; m < kMels; ++m) {
      const double lo = fb.edges_hz[m], mid = fb.edges_hz[m + 1], hi = fb.edges_hz[m + 2];
      for (std::size_t k = 0; k < fb.bins; ++k) {
        const double f = bin_hz(k);
        double w = 0;
        if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
        else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
        fb.weights[m * fb.bins + k] = w;
      }
      std::size_t f = 0, l = fb.bins;
      while (f < fb.bins && fb.weights[m * fb.bins + f] == 0) ++f;
      while (l > f && fb.weights[m * fb.bins + l - 1] == 0) --l;
      fb.first.push_back(f);
      fb.last.push_back(l);
    }
    return fb;
  }

  static double bin_hz(std::size_t k) {
    return static_cast<double>(k) * kSampleRate / static_cast<double>(kWindow);
  }
  double center_hz(std::size_t m) const { return edges_hz[m + 1]; }
};

inline const MelFilterbank& mel_filterbank() {
  static const MelFilterbank fb = MelFilterbank::make();
  return fb;
}

// 64 x hops log-mel matrix, mel-major.
struct Spectrogram {
  std::size_t hops = 0;
  std::vector<float> values;

  static constexpr std::size_t mels() { return kMels; }
  float at(std::size_t mel, std::size_t hop) const { return values[mel * hops + hop]; }
  float& at(std::size_t mel, std::size_t hop) { return values[mel * hops + hop]; }
};

// Power spectrum |X_k|^2 of one Hann-windowed frame.
inline std::vector<double> power_spectrum(std::span<const float> frame, const RealFft& fft) {
  static const std::vector<double> window = hann_window(kWindow);
  if (frame.size() != kWindow) throw ShapeError(cat("power_spectrum: frame of ", frame.size(), " samples"));
  std::vector<double> in(kWindow);
  std::vector<std::complex<double>> out(kWindow / 2 + 1);
  for (std::size_t i = 0; i < kWindow; ++i) in[i] = static_cast<double>(frame[i]) * window[i];
  fft.forward(in, out);
  std::vector<double> p(kWindow / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::norm(out[k]);
  return p;
}

inline Spectrogram log_mel_spectrogram(std::span<const float> waveform) {
  if (waveform.size() < kWindow)
    throw std::invalid_argument(cat("log_mel_spectrogram: waveform has ", waveform.size(),
                                    " samples, need at least ", kWindow));
  const auto& fb = mel_filterbank();
  Spectrogram spec;
  spec.hops = (waveform.size() - kWindow) / kHop + 1;
  spec.values.assign(kMels * spec.hops, 0.0f);
  const RealFft fft(kWindow);
  for (std::size_t h = 0; h < spec.hops; ++h) {
    const auto p = power_spectrum(waveform.subspan(h * kHop, kWindow), fft);
    for (std::size_t m = 0; m < kMels; ++m) {
      const double* w = &fb.weights[m * fb.bins];
      double e = 0;
      for (std::size_t k = fb.first[m]; k < fb.last[m]; ++k) e += w[k] * p[k];
      spec.at(m, h) = static_cast<float>(std::log(kLogFloor + e));
    }
  }
  return spec;
}

// Three sequential, non-overlapping 64x60 crops of a 192-hop spectrogram.
struct SubsegmentSpec {
  std::array<std::size_t, kSubsegments> starts{};
  std::vector<std::size_t> held_out;  // 12 hop indices not covered by any crop
  std::array<Spectrogram, kSubsegments> crops;
};

// Start hops of three sequential, non-overlapping 60-hop crops within 192
// hops. The 12 held-out hops are split into 4 gaps (before, between, after
// the crops) by a uniform composition: 3 bar positions among 15 slots.
inline std::array<std::size_t, kSubsegments> sample_crop_starts(Rng& rng) {
  std::vector<std::size_t> slots(kHeldOutHops + kSubsegments);
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  rng.shuffle(slots);
  std::array<std::size_t, kSubsegments> bars{};
  std::copy_n(slots.begin(), kSubsegments, bars.begin());
  std::sort(bars.begin(), bars.end());
  std::array<std::size_t, kSubsegments> starts{};
  for (std::size_t k = 0; k < kSubsegments; ++k) starts[k] = (bars[k] - k) + k * kSubsegmentHops;
  return starts;
}

// Copies hops [start, start + 60) of `spec` into a 64 x 60 crop.
inline Spectrogram crop_hops(const Spectrogram& spec, std::size_t start) {
  if (start + kSubsegmentHops > spec.hops)
    throw std::invalid_argument(cat("crop_hops: crop at ", start, " exceeds ", spec.hops, " hops"));
  Spectrogram crop;
  crop.hops = kSubsegmentHops;
  crop.values.resize(kMels * kSubsegmentHops);
  for (std::size_t m = 0; m < kMels; ++m)
    for (std::size_t h = 0; h < kSubsegmentHops; ++h) crop.at(m, h) = spec.at(m, start + h);
  return crop;
}

inline SubsegmentSpec crop_subsegments(const Spectrogram& spec, Rng& rng) {
  if (spec.hops != kSegmentHops)
    throw std::invalid_argument(cat("crop_subsegments: expected ", kSegmentHops, " hops, got ", spec.hops));
  SubsegmentSpec out;
  out.starts = sample_crop_starts(rng);
  std::vector<bool> covered(kSegmentHops, false);
  for (std::size_t k = 0; k < kSubsegments; ++k) {
    out.crops[k] = crop_hops(spec, out.starts[k]);
    for (std::size_t h = 0; h < kSubsegmentHops; ++h) covered[out.starts[k] + h] = true;
  }
  for (std::size_t h = 0; h < kSegmentHops; ++h)
    if (!covered[h]) out.held_out.push_back(h);
  return out;
}

}  // namespace mrsv::signal
