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

#include <gtest/gtest.h>

#include <set>

#include "mrsv/signal.hpp"

namespace mrsv::signal {
namespace {

// O(n^2) reference transform, independent of the FFT factorisation.
std::vector<std::complex<double>> direct_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t j = 0; j < n; ++j)
      acc += x[j] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n));
    out[k] = acc;
  }
  return out;
}

TEST(Fft, MatchesDirectDftOnSeveralSizes) {
  Rng rng(1);
  for (std::size_t n : {1u, 2u, 3u, 12u, 45u, 96u}) {
    std::vector<double> x(n);
    std::vector<std::complex<double>> xc(n), y(n / 2 + 1);
    for (std::size_t i = 0; i < n; ++i) xc[i] = x[i] = rng.normal();
    RealFft(n).forward(x, y);
    const auto ref = direct_dft(xc);
    for (std::size_t k = 0; k <= n / 2; ++k) EXPECT_LT(std::abs(y[k] - ref[k]), 1e-9 * (1 + std::abs(ref[k])));
  }
}

TEST(Stft, PowerSpectrumMatchesDirectDftOracle) {
  Rng rng(7);
  const RealFft fft(kWindow);
  const auto window = hann_window(kWindow);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<float> frame(kWindow);
    for (auto& v : frame) v = static_cast<float>(rng.uniform(-1, 1));
    const auto p = power_spectrum(frame, fft);
    std::vector<std::complex<double>> x(kWindow);
    for (std::size_t i = 0; i < kWindow; ++i) x[i] = static_cast<double>(frame[i]) * window[i];
    const auto ref = direct_dft(x);
    double max_rel = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double r = std::norm(ref[k]);
      max_rel = std::max(max_rel, std::abs(p[k] - r) / std::max(r, 1e-12));
    }
    EXPECT_LT(max_rel, 1e-6);
  }
}

TEST(LogMel, SegmentYields192Hops) {
  std::vector<float> wave(kSegmentSamples, 0.1f);
  EXPECT_EQ(kSegmentSamples, 192u * 588u + (1536u - 588u));
  const auto spec = log_mel_spectrogram(wave);
  EXPECT_EQ(spec.hops, 192u);
  EXPECT_EQ(spec.values.size(), 64u * 192u);
  EXPECT_NEAR(kSegmentSeconds, 5.12, 1e-12);
}

TEST(LogMel, HopCountFormula) {
  for (std::size_t n : {1536u, 1537u, 2123u, 2124u, 10000u}) {
    std::vector<float> wave(n, 0.0f);
    EXPECT_EQ(log_mel_spectrogram(wave).hops, (n - 1536) / 588 + 1);
  }
}

TEST(LogMel, SilenceIsLogFloor) {
  std::vector<float> wave(4000, 0.0f);
  for (float v : log_mel_spectrogram(wave).values) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(1e-5)));
}

TEST(LogMel, RejectsShortWaveform) {
  std::vector<float> wave(1535, 0.0f);
  try {
    log_mel_spectrogram(wave);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("1536"), std::string::npos);
  }
}

TEST(LogMel, SineArgmaxIsNearestCenter) {
  const auto& fb = mel_filterbank();
  std::size_t nearest = 0;
  for (std::size_t m = 1; m < kMels; ++m)
    if (std::abs(fb.center_hz(m) - 1000.0) < std::abs(fb.center_hz(nearest) - 1000.0)) nearest = m;
  std::vector<float> wave(kSegmentSamples);
  for (std::size_t i = 0; i < wave.size(); ++i)
    wave[i] = static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * 1000.0 * static_cast<double>(i) / kSampleRate));
  const auto spec = log_mel_spectrogram(wave);
  for (std::size_t h = 0; h < spec.hops; h += 17) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < kMels; ++m)
      if (spec.at(m, h) > spec.at(best, h)) best = m;
    EXPECT_EQ(best, nearest) << "hop " << h;
  }
}

TEST(MelFilterbank, RowsPositiveAndTileTheAxis) {
  const auto& fb = mel_filterbank();
  for (std::size_t m = 0; m < kMels; ++m) {
    double s = 0;
    for (std::size_t k = 0; k < fb.bins; ++k) s += fb.weights[m * fb.bins + k];
    EXPECT_GT(s, 0) << "filter " << m;
  }
  for (std::size_t k = 0; k < fb.bins; ++k) {
    const double f = MelFilterbank::bin_hz(k);
    if (f <= fb.center_hz(0) || f >= fb.center_hz(kMels - 1)) continue;
    double s = 0;
    for (std::size_t m = 0; m < kMels; ++m) s += fb.weights[m * fb.bins + k];
    EXPECT_GT(s, 0) << "bin " << k;
  }
  EXPECT_DOUBLE_EQ(fb.edges_hz.front(), 0.0);
  EXPECT_NEAR(fb.edges_hz.back(), kSampleRate / 2.0, 1e-6);
}

TEST(Subsegments, DurationIsExactlyOnePointSixSeconds) {
  EXPECT_DOUBLE_EQ(hops_to_seconds(kSubsegmentHops), 1.6);
}

Spectrogram ramp_spectrogram(std::size_t hops) {
  Spectrogram s;
  s.hops = hops;
  s.values.resize(kMels * hops);
  for (std::size_t m = 0; m < kMels; ++m)
    for (std::size_t h = 0; h < hops; ++h) s.at(m, h) = static_cast<float>(h);
  return s;
}

TEST(Subsegments, CropsAreSequentialAndHoldOutTwelve) {
  const auto spec = ramp_spectrogram(192);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto sub = crop_subsegments(spec, rng);
    std::set<std::size_t> covered;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(sub.crops[k].hops, 60u);
      EXPECT_FLOAT_EQ(sub.crops[k].at(5, 0), static_cast<float>(sub.starts[k]));
      for (std::size_t h = 0; h < 60; ++h) covered.insert(sub.starts[k] + h);
      if (k > 0) EXPECT_LE(sub.starts[k - 1] + 60, sub.starts[k]);
    }
    EXPECT_EQ(covered.size(), 180u);
    EXPECT_EQ(sub.held_out.size(), 12u);
    for (auto h : sub.held_out) EXPECT_EQ(covered.count(h), 0u);
  }
}

TEST(Subsegments, DeterministicGivenSeed) {
  const auto spec = ramp_spectrogram(192);
  Rng a(42), b(42);
  EXPECT_EQ(crop_subsegments(spec, a).starts, crop_subsegments(spec, b).starts);
}

TEST(Subsegments, RejectsWrongHopCount) {
  Rng rng(0);
  EXPECT_THROW(crop_subsegments(ramp_spectrogram(191), rng), std::invalid_argument);
}

}  // namespace
}  // namespace mrsv::signal
