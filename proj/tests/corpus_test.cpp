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

#include <filesystem>
#include <set>

#include "mrsv/corpus.hpp"

using namespace mrsv;
using namespace mrsv::corpus;

namespace {

std::string temp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mrsv_corpus_" + name)).string();
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_videos = 4;
  s.segments = 2;
  s.webtext_phrases = 10;
  return s;
}

// Mean log-mel spectrum (64 values) of one segment.
std::vector<double> segment_mean_spectrum(const Record& r, std::size_t seg) {
  std::span<const float> wave(r.waveform);
  const auto spec = signal::log_mel_spectrogram(wave.subspan(seg * signal::kSegmentStride, signal::kSegmentSamples));
  std::vector<double> m(signal::kMels, 0.0);
  for (std::size_t k = 0; k < signal::kMels; ++k) {
    for (std::size_t h = 0; h < spec.hops; ++h) m[k] += spec.at(k, h);
    m[k] /= double(spec.hops);
  }
  return m;
}

}  // namespace

TEST(Generate, TwoClassesGiveTwoFramePatterns) {
  SyntheticSpec s = small_spec();
  s.n_classes = 2;
  s.n_videos = 2;
  s.segments = 4;
  std::set<std::vector<double>> patterns;
  for (auto& r : generate_range(s, 0, 2)) {
    ASSERT_EQ(r.frames.size(), 4u);
    for (auto c : r.classes) patterns.insert(class_pattern(c, s.image_h, s.image_w));
  }
  EXPECT_EQ(patterns.size(), 2u);
}

TEST(Generate, ZeroMisalignmentKeepsTrueTimings) {
  SyntheticSpec s = small_spec();
  s.shift_mean = 0;
  s.shift_std = 0;
  for (auto& w : generate_video(s, 3).words) {
    EXPECT_EQ(w.start, w.true_start);
    EXPECT_EQ(w.end, w.true_end);
  }
}

TEST(Generate, ShiftIsClippedToPointThreeSeconds) {
  SyntheticSpec s = small_spec();
  s.shift_mean = 0.2;
  s.shift_std = 0.3;
  for (std::uint64_t id = 0; id < 20; ++id)
    for (auto& w : generate_video(s, id).words) EXPECT_LE(std::abs(w.start - w.true_start), kMaxShift + 1e-12);
}

TEST(Generate, PhraseMatchesSceneAndSitsInsideItsSegment) {
  auto r = generate_video(small_spec(), 5);
  std::size_t i = 0;
  for (std::size_t s = 0; s < r.classes.size(); ++s) {
    const auto words = split_words(scene_phrase(r.color, r.classes[s], r.place));
    for (auto& w : words) {
      ASSERT_LT(i, r.words.size());
      EXPECT_EQ(r.words[i].text, w);
      EXPECT_GE(r.words[i].true_start, double(s) * signal::kSegmentSeconds);
      EXPECT_LE(r.words[i].true_end, double(s + 1) * signal::kSegmentSeconds);
      ++i;
    }
  }
  EXPECT_EQ(i, r.words.size());
  EXPECT_EQ(r.waveform.size(), 2 * signal::kSegmentStride + signal::kSegmentSamples - signal::kSegmentStride);
}

TEST(Generate, ClassMeanSpectraDiffer) {
  SyntheticSpec s = small_spec();
  s.n_classes = 4;
  s.n_videos = 6;
  std::vector<std::vector<double>> sum(4, std::vector<double>(signal::kMels, 0.0));
  std::vector<int> count(4, 0);
  for (auto& r : generate_range(s, 0, s.n_videos))
    for (std::size_t seg = 0; seg < r.classes.size(); ++seg) {
      auto m = segment_mean_spectrum(r, seg);
      for (std::size_t k = 0; k < m.size(); ++k) sum[r.classes[seg]][k] += m[k];
      ++count[r.classes[seg]];
    }
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) {
      if (!count[a] || !count[b]) continue;
      double d = 0;
      for (std::size_t k = 0; k < signal::kMels; ++k) {
        const double x = sum[a][k] / count[a] - sum[b][k] / count[b];
        d += x * x;
      }
      EXPECT_GT(std::sqrt(d), 1.0) << a << " vs " << b;
    }
}

TEST(Generate, NearestClassMeanSeparatesSixteenClasses) {
  // Fit class means on one set of videos, classify segments of another.
  SyntheticSpec s = small_spec();
  s.n_classes = 16;
  s.segments = 4;
  std::vector<std::vector<double>> mean(16, std::vector<double>(signal::kMels, 0.0));
  std::vector<int> count(16, 0);
  for (auto& r : generate_range(s, 0, 30))
    for (std::size_t seg = 0; seg < r.classes.size(); ++seg) {
      auto m = segment_mean_spectrum(r, seg);
      for (std::size_t k = 0; k < m.size(); ++k) mean[r.classes[seg]][k] += m[k];
      ++count[r.classes[seg]];
    }
  for (int c = 0; c < 16; ++c) {
    ASSERT_GT(count[c], 0);
    for (auto& v : mean[c]) v /= count[c];
  }
  // Only the class band is informative; scene tones sit above 3.9 kHz.
  const auto& fb = signal::mel_filterbank();
  std::size_t correct = 0, total = 0;
  for (auto& r : generate_range(s, 100, 8))
    for (std::size_t seg = 0; seg < r.classes.size(); ++seg) {
      auto m = segment_mean_spectrum(r, seg);
      int best = -1;
      double best_d = 1e300;
      for (int c = 0; c < 16; ++c) {
        double d = 0;
        for (std::size_t k = 0; k < signal::kMels; ++k)
          if (fb.center_hz(k) < 3900) d += (m[k] - mean[c][k]) * (m[k] - mean[c][k]);
        if (d < best_d) best_d = d, best = c;
      }
      correct += best == int(r.classes[seg]);
      ++total;
    }
  EXPECT_EQ(correct, total);
}

TEST(Generate, DeterministicPerSpecAndSeed) {
  auto a = generate_range(small_spec(), 0, 3, 1);
  auto b = generate_range(small_spec(), 0, 3, 3);
  EXPECT_EQ(a, b);
  SyntheticSpec other = small_spec();
  other.seed = 2;
  EXPECT_NE(generate_video(other, 0), a[0]);
}

TEST(Container, RoundTripIsExact) {
  const auto path = temp("roundtrip.mrsv");
  SyntheticSpec s = small_spec();
  s.n_videos = 10;
  s.segments = 1;
  auto recs = generate_range(s, 0, 10);
  write_container(path, recs);
  EXPECT_EQ(read_container(path), recs);
  std::filesystem::remove(path);
}

TEST(Container, GenerationIsBitwiseReproducible) {
  const auto p1 = temp("det1.mrsv"), p2 = temp("det2.mrsv");
  SyntheticSpec s = small_spec();
  s.n_videos = 3;
  generate_corpus(s, p1, 2);
  generate_corpus(s, p2, 3);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Container, TruncationNamesOffset) {
  const auto path = temp("trunc.mrsv");
  SyntheticSpec s = small_spec();
  s.segments = 1;
  write_container(path, generate_range(s, 0, 2));
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 100);
  ContainerReader r(path);
  EXPECT_TRUE(r.next().has_value());
  try {
    r.next();
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset, size - 100);
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(Container, RejectsBadMagicAndVersion) {
  const auto path = temp("magic.mrsv");
  {
    std::ofstream out(path, std::ios::binary);
    out << "MRSV2xxxxxxxxxx";
  }
  EXPECT_THROW(ContainerReader{path}, FormatError);
  {
    std::ofstream out(path, std::ios::binary);
    out.write("MRSV1", 5);
    const std::uint16_t v = 9;
    out.write(reinterpret_cast<const char*>(&v), 2);
    out.write("\0\0\0\0\0\0\0\0", 8);
  }
  EXPECT_THROW(ContainerReader{path}, FormatError);
  std::filesystem::remove(path);
}

TEST(Container, StreamsThousandRecordsInOnePass) {
  const auto path = temp("many.mrsv");
  {
    ContainerWriter w(path);
    for (std::uint64_t i = 0; i < 1000; ++i) {
      Record r;
      r.id = i;
      r.n_classes = 2;
      r.classes = {static_cast<std::uint32_t>(i % 2)};
      r.frames = {Image(32, 32)};
      r.waveform.assign(2000, float(i));
      r.words = {{"w", 0.1, 0.2, 0.1, 0.2}};
      w.write(r);
    }
    w.close();
  }
  ContainerReader r(path);
  EXPECT_EQ(r.count(), 1000u);
  std::uint64_t seen = 0;
  while (auto rec = r.next()) {
    EXPECT_EQ(rec->id, seen);
    EXPECT_EQ(rec->waveform[0], float(seen));
    ++seen;
  }
  EXPECT_EQ(seen, 1000u);
  std::filesystem::remove(path);
}

TEST(Vocabulary, LexiconPhrasesAreShort) {
  const auto v = synthetic_vocab();
  for (std::size_t c = 0; c < kMaxClasses; ++c) {
    const auto ids = v.tokenize(scene_phrase(7, c, 7));
    EXPECT_GE(ids.size(), 3u);
    EXPECT_LE(ids.size(), 8u);
  }
}
