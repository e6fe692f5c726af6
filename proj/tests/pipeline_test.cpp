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

#include <map>
#include <set>

#include "mrsv/pipeline.hpp"

using namespace mrsv;
using namespace mrsv::pipeline;

namespace {

struct Fixture {
  corpus::SyntheticSpec spec;
  text::Vocab vocab;
  std::vector<corpus::Record> records;
  Config cfg = Config::tiny();

  Fixture() {
    spec.n_videos = 8;
    spec.webtext_phrases = 40;
    vocab = corpus::synthetic_vocab();
    records = corpus::generate_range(spec, 0, spec.n_videos);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

VideoExample prepared(std::size_t i) {
  auto& f = fixture();
  return prepare_video(f.records[i], f.vocab, nullptr, f.cfg.webtext_len);
}

// A one-segment video with hand-placed tokens (times in seconds).
VideoExample handmade(const std::vector<double>& times) {
  VideoExample v;
  v.id = 99;
  v.duration = signal::kSegmentSeconds;
  v.spectrogram.hops = signal::kSegmentHops;
  v.spectrogram.values.assign(signal::kMels * signal::kSegmentHops, 0.0f);
  v.frames.resize(1);
  for (std::size_t i = 0; i < times.size(); ++i) v.tokens.push_back({int(text::kFirstMerge) + int(i), times[i], i});
  return v;
}

}  // namespace

TEST(Timing, RegressorBeatsProvidedTimings) {
  auto& f = fixture();
  std::vector<TimingSample> samples;
  for (auto& r : f.records)
    for (auto& s : timing_samples(r, f.vocab)) samples.push_back(s);
  double baseline = 0;
  for (auto& s : samples) baseline += 0.5 * (std::abs(s.delta_start) + std::abs(s.delta_end));
  baseline /= double(samples.size());
  auto reg = TimingRegressor::train(samples, 3);
  EXPECT_LT(reg.train_loss(), 0.6 * baseline);
  double mean_start = 0;
  for (auto& s : samples) mean_start += reg.predict(s.x)[0];
  mean_start /= double(samples.size());
  EXPECT_NEAR(mean_start, -0.1, 0.03);
}

TEST(Timing, OutputsStayWithinBound) {
  auto& f = fixture();
  std::vector<TimingSample> samples;
  for (auto& r : f.records)
    for (auto& s : timing_samples(r, f.vocab)) samples.push_back(s);
  auto reg = TimingRegressor::train(samples, 5, 50);
  TimingFeatures extreme;
  for (double v : {-1e6, 0.0, 1e6}) {
    extreme.fill(v);
    auto d = reg.predict(extreme);
    EXPECT_LE(std::abs(d[0]), reg.bound(0) + 1e-12);
    EXPECT_LE(std::abs(d[1]), reg.bound(1) + 1e-12);
  }
}

TEST(Timing, FeaturesCoverNeighbours) {
  auto& f = fixture();
  std::vector<corpus::Word> words{{"Dog", 0, 0.2, 0, 0}, {"BARKS!", 0.3, 0.5, 0, 0}};
  auto x = timing_features(words, f.vocab);
  ASSERT_EQ(x.size(), 2u);
  for (std::size_t i = 0; i < kWordFeatures; ++i) EXPECT_EQ(x[0][i], 0.0);  // no previous word
  EXPECT_EQ(x[0][kWordFeatures + 0], 3.0);                                   // characters
  EXPECT_EQ(x[0][kWordFeatures + 2], 0.0);                                   // not all upper case
  EXPECT_EQ(x[0][kWordFeatures + 3], 1.0);                                   // vowels
  EXPECT_NEAR(x[0][kWordFeatures + 5], 0.2, 1e-12);                          // duration
  EXPECT_EQ(x[1][kWordFeatures + 2], 1.0);
  EXPECT_EQ(x[1][kWordFeatures + 4], 1.0);  // punctuation
  EXPECT_EQ(x[1][0], 3.0);                  // previous word
  for (std::size_t i = 0; i < kWordFeatures; ++i) EXPECT_EQ(x[1][2 * kWordFeatures + i], 0.0);
}

TEST(Prepare, TokensFollowWordsInTime) {
  auto v = prepared(0);
  auto& r = fixture().records[0];
  EXPECT_EQ(v.original_segments(), r.classes.size());
  EXPECT_GE(v.tokens.size(), v.words.size());
  for (std::size_t i = 1; i < v.tokens.size(); ++i) EXPECT_LE(v.tokens[i - 1].time, v.tokens[i].time);
  EXPECT_EQ(v.webtext.size(), fixture().cfg.webtext_len);
  text::Vocab vocab = fixture().vocab;
  std::vector<int> ids;
  for (auto& t : v.tokens) ids.push_back(t.id);
  std::string joined;
  for (auto& w : r.words) joined += " " + w.text;
  EXPECT_EQ(vocab.detokenize(ids), joined);
}

TEST(Segments, RejectShortVideos) {
  auto v = handmade({});
  v.duration = 4.0;
  Rng rng(1);
  EXPECT_THROW(segment_video(v, Config::tiny(), rng), std::invalid_argument);
}

TEST(Segments, SparseNeighboursMergeUpToThree) {
  auto v = prepared(1);
  v.tokens.clear();
  Config cfg = Config::tiny();
  cfg.merge_prob = 1.0;
  Rng rng(2);
  auto segs = segment_video(v, cfg, rng);
  ASSERT_EQ(segs.size(), 2u);  // 4 empty segments -> 3 + 1
  EXPECT_EQ(segs[0].count, 3u);
  EXPECT_EQ(segs[0].frame, 1u);
  EXPECT_EQ(segs[1].first, 3u);
  EXPECT_EQ(segs[1].count, 1u);
  auto spec = segment_spectrogram(v, segs[0]);
  EXPECT_EQ(spec.hops, signal::kSegmentHops);
  EXPECT_EQ(spec.at(7, 10), v.spectrogram.at(7, 30));

  cfg.merge_prob = 0.0;
  EXPECT_EQ(segment_video(v, cfg, rng).size(), 4u);
}

TEST(Segments, DenseSegmentsStayApart) {
  auto v = prepared(2);
  Config cfg = Config::tiny();
  cfg.merge_prob = 1.0;
  Rng rng(3);
  auto segs = segment_video(v, cfg, rng);
  ASSERT_EQ(segs.size(), 4u);
  std::size_t covered = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    EXPECT_EQ(segs[i].count, 1u);
    EXPECT_EQ(segs[i].frame, i);
    covered += segs[i].tokens.size();
    auto spec = segment_spectrogram(v, segs[i]);
    EXPECT_EQ(spec.values[5 * spec.hops + 17], v.spectrogram.at(5, i * 192 + 17));
  }
  EXPECT_EQ(covered, v.tokens.size());
}

TEST(Subsegments, CropsAndTokenAssignment) {
  auto v = handmade({0.1, 1.0, 1.01, 4.9, 5.0});
  Segment seg;
  seg.end = signal::kSegmentSeconds;
  seg.tokens = {0, 1, 2, 3, 4};
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto subs = split_subsegments(v, seg, 0, 15, rng);
    ASSERT_EQ(subs.size(), 3u);
    std::size_t gaps = subs[0].crop_start;
    for (std::size_t k = 0; k < 3; ++k) {
      if (k) gaps += subs[k].crop_start - (subs[k - 1].crop_start + 60);
      EXPECT_NEAR(subs[k].end - subs[k].start, signal::hops_to_seconds(60), 1e-9);
    }
    gaps += 192 - (subs[2].crop_start + 60);
    EXPECT_EQ(gaps, 12u);
    std::size_t n = 0;
    for (auto& s : subs) {
      for (auto t : s.tokens) {
        const double time = v.tokens[t].time;
        const bool inside = time >= s.start && time < s.end;
        bool elsewhere = false;
        for (auto& o : subs) elsewhere |= (&o != &s && time >= o.start && time < o.end);
        EXPECT_TRUE(inside || !elsewhere);
      }
      n += s.tokens.size();
    }
    EXPECT_EQ(n, 5u);
  }
  Segment dense = seg;
  v = handmade(std::vector<double>(20, 0.5));
  dense.tokens.clear();
  for (std::size_t i = 0; i < 20; ++i) dense.tokens.push_back(i);
  auto subs = split_subsegments(v, dense, 0, 15, rng);
  EXPECT_EQ(subs[0].tokens.size(), 15u);
  EXPECT_EQ(subs[0].tokens.back(), 14u);
}

TEST(Masks, DisjointAndSized) {
  Rng rng(5);
  std::vector<int> hits(12, 0);
  for (int i = 0; i < 2000; ++i) {
    auto [a, b] = sample_masks(12, 0.25, rng);
    ASSERT_EQ(a.size(), 3u);
    ASSERT_EQ(b.size(), 3u);
    for (auto x : a) {
      EXPECT_EQ(std::count(b.begin(), b.end(), x), 0);
      ++hits[x];
    }
  }
  for (int h : hits) EXPECT_NEAR(h / 2000.0, 0.25, 0.04);
  EXPECT_EQ(sample_masks(2, 0.01, rng).first.size(), 1u);
  EXPECT_THROW(sample_masks(1, 0.25, rng), std::invalid_argument);
}

TEST(Views, NoLeakageAcrossSeeds) {
  auto& f = fixture();
  for (std::size_t i = 0; i < f.records.size(); ++i) {
    auto v = prepared(i);
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      auto p = plan_video(v, f.cfg, seed);
      for (const MaskedView* view : {&p.audio_target, &p.audio_input, &p.webtext, &p.transcript}) {
        auto bad = leakage_violations(*view);
        EXPECT_TRUE(bad.empty()) << view_kind_name(view->kind) << ": " << bad.front();
        for (auto& s : view->sequences) {
          EXPECT_LE(s.slots.size(), f.cfg.group_length());
          EXPECT_EQ(s.coords.size(), s.slots.size());
        }
      }
      EXPECT_EQ(p.audio_target.sequences[0].slots.size(), f.cfg.group_length());
      EXPECT_EQ(p.audio_target.targets.size(), 2 * p.target_mask.size());
      EXPECT_EQ(p.audio_input.targets.size(), p.input_mask.size());
      EXPECT_EQ(p.transcript.targets.size(), p.segments.size());
      EXPECT_EQ(p.subsegments.size(), 3 * p.segments.size());
    }
  }
}

TEST(Views, AudioInputHidesMaskedAudio) {
  auto v = prepared(3);
  auto& cfg = fixture().cfg;
  std::size_t audio_subsegments = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = plan_video(v, cfg, seed);
    std::set<int> shown;
    for (auto& s : p.audio_input.sequences)
      for (auto& sl : s.slots)
        if (sl.kind == SlotKind::Audio) shown.insert(sl.ref / 6);
    for (auto g : p.input_mask) EXPECT_EQ(shown.count(int(g)), 0u);
    audio_subsegments += shown.size();
    for (auto& s : p.audio_target.sequences)
      for (auto& sl : s.slots) EXPECT_NE(sl.kind, SlotKind::Audio);
  }
  EXPECT_GT(audio_subsegments, 20u * 4);
}

TEST(Views, LeakageCheckCatchesPlantedToken) {
  auto v = prepared(4);
  auto p = plan_video(v, fixture().cfg, 1);
  auto view = p.audio_input;
  const Target* t = nullptr;
  for (auto& x : view.targets)
    if (!x.sources.empty()) t = &x;
  ASSERT_NE(t, nullptr);
  for (auto& sl : view.sequences[0].slots)
    if (sl.kind == SlotKind::Pad) {
      sl.kind = SlotKind::Text;
      sl.token = t->tokens[0];
      sl.source = t->sources[0];
      break;
    }
  EXPECT_FALSE(leakage_violations(view).empty());

  auto at = p.audio_target;
  for (auto& sl : at.sequences[0].slots)
    if (sl.kind == SlotKind::Pad) {
      sl.kind = SlotKind::Audio;
      sl.ref = at.targets[1].subsegment * 6;
      break;
    }
  EXPECT_FALSE(leakage_violations(at).empty());
}

TEST(Views, BoundaryWordIsDonated) {
  // Token 0 ends subsegment 0 just before subsegment 1 starts.
  auto v = handmade({0.5, 1.59, 2.5, 4.0});
  Segment seg;
  seg.end = signal::kSegmentSeconds;
  seg.tokens = {0, 1, 2, 3};
  std::vector<Segment> segs{seg};
  std::vector<Subsegment> subs(3);
  const double w = signal::hops_to_seconds(60);
  for (std::size_t k = 0; k < 3; ++k) {
    subs[k].k = k;
    subs[k].crop_start = 4 * k + 60 * k;
    subs[k].start = signal::hops_to_seconds(double(subs[k].crop_start));
    subs[k].end = subs[k].start + w;
  }
  subs[0].tokens = {0, 1};
  subs[1].tokens = {2};
  subs[2].tokens = {3};
  Config cfg = Config::tiny();
  const double gap = subs[1].start - v.tokens[1].time;
  ASSERT_GT(gap, 0.0);
  ASSERT_LT(gap, cfg.donation_window);
  auto view = build_audio_target_view({v, cfg, segs, subs}, {1});
  EXPECT_TRUE(leakage_violations(view).empty());
  ASSERT_EQ(view.targets.size(), 2u);
  EXPECT_EQ(view.targets[0].sources, (std::vector<std::int64_t>{1, 2}));
  std::vector<std::int64_t> visible;
  for (auto& sl : view.sequences[0].slots)
    if (sl.kind == SlotKind::Text) visible.push_back(sl.source);
  EXPECT_EQ(visible, (std::vector<std::int64_t>{0, 3}));  // token 3 is 1.4 s past the end

  cfg.donation_window = 0.01;
  view = build_audio_target_view({v, cfg, segs, subs}, {1});
  EXPECT_EQ(view.targets[0].sources, (std::vector<std::int64_t>{2}));
}

TEST(Views, WebTextMasksAboutAQuarter) {
  auto& f = fixture();
  auto v = prepared(5);
  Rng rng(6);
  double frac = 0;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    auto view = build_webtext_view(v.webtext, f.cfg, rng);
    EXPECT_TRUE(leakage_violations(view).empty());
    EXPECT_LE(view.sequences[0].slots.size(), f.cfg.group_length());
    frac += view.masked_fraction;
  }
  EXPECT_NEAR(frac / n, 0.25, 0.05);
}

TEST(Views, PlansAreDeterministic) {
  auto v = prepared(6);
  auto a = plan_video(v, fixture().cfg, 11), b = plan_video(v, fixture().cfg, 11), c = plan_video(v, fixture().cfg, 12);
  for (auto pick : {&VideoPlan::audio_target, &VideoPlan::audio_input, &VideoPlan::webtext, &VideoPlan::transcript})
    EXPECT_EQ(view_json(a.*pick, &fixture().vocab), view_json(b.*pick, &fixture().vocab));
  EXPECT_NE(view_json(a.audio_input).dump() + view_json(a.webtext).dump(),
            view_json(c.audio_input).dump() + view_json(c.webtext).dump());
  EXPECT_EQ(a.crop(0), b.crop(0));
  EXPECT_EQ(a.crop(0).size(), signal::kMels * 60);
}

TEST(Selection, WeightsFavourVideoSpans) {
  Target video, web, empty;
  video.tokens = {7};
  web.tokens = {8};
  web.web = true;
  std::vector<const Target*> cands{&video, &web, &empty};
  Rng rng(7);
  std::map<const Target*, int> first;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    auto s = select_targets(cands, 2, rng);
    ASSERT_EQ(s.size(), 2u);
    ASSERT_NE(s[0], s[1]);
    ++first[s[0]];
  }
  EXPECT_NEAR(first[&video] / double(n), 4.0 / 5.01, 0.01);
  EXPECT_NEAR(first[&web] / double(n), 1.0 / 5.01, 0.01);
  EXPECT_LT(first[&empty], n / 200);
  EXPECT_EQ(select_targets(cands, 10, rng).size(), 3u);
}
