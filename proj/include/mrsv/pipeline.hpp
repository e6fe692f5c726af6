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

// Turns corpus records into per-step training views: refined word timings,
// segments, subsegment crops, masks and the four joint-encoder views.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrsv/common.hpp"
#include "mrsv/config.hpp"
#include "mrsv/corpus.hpp"
#include "mrsv/model.hpp"
#include "mrsv/numerics.hpp"
#include "mrsv/optim.hpp"
#include "mrsv/signal.hpp"
#include "mrsv/text.hpp"

namespace mrsv::pipeline {

// Word timing refinement -------------------------------------------------------

inline constexpr std::size_t kWordFeatures = 6;
inline constexpr std::size_t kTimingFeatures = 3 * kWordFeatures;
using TimingFeatures = std::array<double, kTimingFeatures>;

// Space-prefixed BPE ids for a run of words; every transcript and label
// word is tokenized this way so spans compare equal across sources.
inline std::vector<int> encode_words(const std::vector<std::string>& words, const text::Vocab& vocab) {
  std::vector<int> ids;
  for (auto& w : words) {
    auto t = vocab.tokenize_word(" " + text::normalize(w));
    ids.insert(ids.end(), t.begin(), t.end());
  }
  return ids;
}

inline std::vector<int> encode_text(std::string_view s, const text::Vocab& vocab) {
  return encode_words(corpus::split_words(std::string(s)), vocab);
}

inline std::array<double, kWordFeatures> word_features(const corpus::Word& w, const text::Vocab& vocab) {
  double letters = 0, upper = 0, vowels = 0, punct = 0;
  for (unsigned char c : w.text) {
    if (std::isalpha(c)) ++letters;
    if (std::isupper(c)) ++upper;
    if (c != 0 && std::strchr("aeiouAEIOU", c)) ++vowels;
    if (std::ispunct(c)) ++punct;
  }
  const double is_upper = letters > 0 && upper == letters ? 1.0 : 0.0;
  return {double(w.text.size()), double(vocab.tokenize_word(" " + w.text).size()), is_upper, vowels, punct,
          w.end - w.start};
}

// Features of the previous, current and next word (zeros where missing).
inline std::vector<TimingFeatures> timing_features(const std::vector<corpus::Word>& words, const text::Vocab& vocab) {
  std::vector<std::array<double, kWordFeatures>> per(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) per[i] = word_features(words[i], vocab);
  std::vector<TimingFeatures> out(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto& f = out[i];
    f.fill(0.0);
    if (i > 0) std::copy(per[i - 1].begin(), per[i - 1].end(), f.begin());
    std::copy(per[i].begin(), per[i].end(), f.begin() + kWordFeatures);
    if (i + 1 < words.size()) std::copy(per[i + 1].begin(), per[i + 1].end(), f.begin() + 2 * kWordFeatures);
  }
  return out;
}

struct TimingSample {
  TimingFeatures x{};
  double delta_start = 0, delta_end = 0;  // true - provided
};

inline std::vector<TimingSample> timing_samples(const corpus::Record& r, const text::Vocab& vocab) {
  auto feats = timing_features(r.words, vocab);
  std::vector<TimingSample> out;
  for (std::size_t i = 0; i < r.words.size(); ++i)
    out.push_back({feats[i], r.words[i].true_start - r.words[i].start, r.words[i].true_end - r.words[i].end});
  return out;
}

// MLP 18 -> h -> h (ReLU) with two bounded heads c * tanh(w.h + b1) + b2,
// one for the start offset and one for the end offset.
class TimingRegressor {
 public:
  static constexpr std::size_t kHidden = 32;

  TimingRegressor() { init(0); }

  std::array<double, 2> predict(const TimingFeatures& x) const { return predict(std::vector<TimingFeatures>{x})[0]; }

  std::vector<std::array<double, 2>> predict(const std::vector<TimingFeatures>& xs) const {
    std::vector<std::array<double, 2>> out;
    if (xs.empty()) return out;
    Tape<double> tape;
    auto& self = const_cast<TimingRegressor&>(*this);
    auto y = self.forward(tape, xs).value();
    for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({y(i, 0), y(i, 1)});
    return out;
  }

  // Largest magnitude either head can produce.
  double bound(std::size_t head) const {
    const char* h = head == 0 ? "start" : "end";
    return std::abs(params_.get(cat("head_", h, ".c")).value.item()) + std::abs(params_.get(cat("head_", h, ".b2")).value.item());
  }

  double train_loss() const { return train_loss_; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mean"] = mean_;
    j["std"] = std_;
    j["train_loss"] = train_loss_;
    for (std::size_t i = 0; i < params_.size(); ++i)
      j["params"][params_[i].name] = {{"shape", params_[i].value.shape}, {"data", params_[i].value.data}};
    return j;
  }

  static TimingRegressor from_json(const nlohmann::json& j) {
    TimingRegressor reg;
    try {
      reg.mean_ = j.at("mean").get<TimingFeatures>();
      reg.std_ = j.at("std").get<TimingFeatures>();
      reg.train_loss_ = j.at("train_loss").get<double>();
      for (std::size_t i = 0; i < reg.params_.size(); ++i) {
        auto& p = reg.params_[i];
        const auto& e = j.at("params").at(p.name);
        if (e.at("shape").get<std::vector<std::size_t>>() != p.value.shape)
          throw FormatError(cat("timing regressor: wrong shape for ", p.name), 0);
        p.value.data = e.at("data").get<std::vector<double>>();
        if (p.value.data.size() != p.value.size()) throw FormatError(cat("timing regressor: wrong size for ", p.name), 0);
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(cat("timing regressor: ", e.what()), 0);
    }
    return reg;
  }

  // Full-batch Adam on the L1 loss. Uses at most `max_samples` examples.
  static TimingRegressor train(std::vector<TimingSample> samples, std::uint64_t seed, std::size_t steps = 300,
                               double lr = 0.01, std::size_t max_samples = 2048) {
    if (samples.size() < 16) throw std::invalid_argument(cat("timing regressor: only ", samples.size(), " samples"));
    Rng rng(derive_seed(seed, 0x7173));
    rng.shuffle(samples);
    if (samples.size() > max_samples) samples.resize(max_samples);
    TimingRegressor reg;
    reg.init(seed);
    const double n = double(samples.size());
    for (std::size_t f = 0; f < kTimingFeatures; ++f) {
      double m = 0, v = 0;
      for (auto& s : samples) m += s.x[f];
      m /= n;
      for (auto& s : samples) v += (s.x[f] - m) * (s.x[f] - m);
      reg.mean_[f] = m;
      reg.std_[f] = std::max(std::sqrt(v / n), 1e-6);
    }
    std::vector<TimingFeatures> xs;
    Tensor<double> target({samples.size(), 2});
    for (std::size_t i = 0; i < samples.size(); ++i) {
      xs.push_back(samples[i].x);
      target(i, 0) = samples[i].delta_start;
      target(i, 1) = samples[i].delta_end;
    }
    AdamW<double> opt(reg.params_, {.weight_decay = 0.0});
    for (std::size_t step = 0; step < steps; ++step) {
      Tape<double> tape;
      auto y = reg.forward(tape, xs);
      auto loss = mean(abs(sub(y, tape.constant(target))));
      reg.train_loss_ = loss.item();
      reg.params_.zero_grad();
      tape.backward(loss);
      tape.accumulate_param_grads();
      opt.step(reg.params_, lr);
    }
    Tape<double> tape;
    reg.train_loss_ = mean(abs(sub(reg.forward(tape, xs), tape.constant(target)))).item();
    return reg;
  }

 private:
  void init(std::uint64_t seed) {
    params_ = ParamStore<double>();
    Rng rng(derive_seed(seed, 0x7174));
    auto gauss = [&](const std::string& name, std::vector<std::size_t> shape, double sd) {
      auto& p = params_.add(name, std::move(shape));
      for (auto& v : p.value.data) v = rng.normal(0.0, sd);
    };
    gauss("l1.w", {kTimingFeatures, kHidden}, 1.0 / std::sqrt(double(kTimingFeatures)));
    params_.add("l1.b", {kHidden});
    gauss("l2.w", {kHidden, kHidden}, 1.0 / std::sqrt(double(kHidden)));
    params_.add("l2.b", {kHidden});
    for (const char* h : {"start", "end"}) {
      gauss(cat("head_", h, ".w"), {kHidden, 1}, 1.0 / std::sqrt(double(kHidden)));
      params_.add(cat("head_", h, ".b1"), {1});
      params_.add(cat("head_", h, ".c"), {}).value.data[0] = 0.5;
      params_.add(cat("head_", h, ".b2"), {});
    }
    mean_.fill(0.0);
    std_.fill(1.0);
  }

  Var<double> forward(Tape<double>& tape, const std::vector<TimingFeatures>& xs) {
    Tensor<double> x({xs.size(), kTimingFeatures});
    for (std::size_t i = 0; i < xs.size(); ++i)
      for (std::size_t f = 0; f < kTimingFeatures; ++f) x(i, f) = (xs[i][f] - mean_[f]) / std_[f];
    auto P = [&](const std::string& n) { return tape.param(params_.get(n)); };
    auto h = relu(linear(tape.constant(std::move(x)), P("l1.w"), P("l1.b")));
    h = relu(linear(h, P("l2.w"), P("l2.b")));
    std::vector<Var<double>> heads;
    for (const char* n : {"start", "end"}) {
      auto z = tanh(linear(h, P(cat("head_", n, ".w")), P(cat("head_", n, ".b1"))));
      heads.push_back(add_row(scale_by(z, P(cat("head_", n, ".c"))), P(cat("head_", n, ".b2"))));
    }
    return concat_cols(heads[0], heads[1]);
  }

  ParamStore<double> params_;
  TimingFeatures mean_{}, std_{};
  double train_loss_ = 0;
};

// Mean absolute boundary error (start and end) against the true timings,
// after refinement when a regressor is given.
inline double timing_l1(const std::vector<corpus::Record>& records, const text::Vocab& vocab,
                        const TimingRegressor* timing) {
  double sum = 0;
  std::size_t n = 0;
  for (auto& r : records) {
    if (r.words.empty()) continue;
    std::vector<std::array<double, 2>> d(r.words.size(), {0.0, 0.0});
    if (timing) d = timing->predict(timing_features(r.words, vocab));
    for (std::size_t i = 0; i < r.words.size(); ++i) {
      sum += std::abs(r.words[i].start + d[i][0] - r.words[i].true_start) +
             std::abs(r.words[i].end + d[i][1] - r.words[i].true_end);
      n += 2;
    }
  }
  if (n == 0) throw std::invalid_argument("timing_l1: no words");
  return sum / double(n);
}

// Prepared video -----------------------------------------------------------------

struct TimedToken {
  int id = text::kPad;
  double time = 0;        // refined word midpoint, seconds
  std::size_t word = 0;   // index into the transcript words
};

struct VideoExample {
  std::uint64_t id = 0;
  std::vector<Image> frames;            // one per original segment
  signal::Spectrogram spectrogram;      // whole video
  std::vector<corpus::Word> words;      // refined start / end
  std::vector<TimedToken> tokens;
  std::vector<int> webtext;
  double duration = 0;
  bool has_labels = false;
  std::uint32_t color = 0, place = 0;
  std::vector<std::uint32_t> classes;

  std::size_t original_segments() const { return spectrogram.hops / signal::kSegmentHops; }
};

// Refines word times with the regressor (when given), tokenizes the
// transcript and the web text, and computes the whole-video spectrogram.
inline VideoExample prepare_video(const corpus::Record& r, const text::Vocab& vocab, const TimingRegressor* timing,
                                  std::size_t webtext_len) {
  VideoExample v;
  v.id = r.id;
  v.frames = r.frames;
  v.spectrogram = signal::log_mel_spectrogram(r.waveform);
  v.duration = r.duration();
  v.has_labels = true;
  v.color = r.color;
  v.place = r.place;
  v.classes = r.classes;
  v.words = r.words;
  if (timing && !r.words.empty()) {
    auto deltas = timing->predict(timing_features(r.words, vocab));
    for (std::size_t i = 0; i < v.words.size(); ++i) {
      v.words[i].start += deltas[i][0];
      v.words[i].end += deltas[i][1];
      if (v.words[i].end < v.words[i].start) std::swap(v.words[i].start, v.words[i].end);
    }
  }
  for (std::size_t i = 0; i < v.words.size(); ++i) {
    const double t = 0.5 * (v.words[i].start + v.words[i].end);
    for (int id : vocab.tokenize_word(" " + text::normalize(v.words[i].text))) v.tokens.push_back({id, t, i});
  }
  v.webtext = encode_text(r.webtext, vocab);
  if (v.webtext.size() > webtext_len) v.webtext.resize(webtext_len);
  return v;
}

// Segments ---------------------------------------------------------------------

struct Segment {
  std::size_t first = 0, count = 1;  // original 5.12 s segments covered
  std::size_t frame = 0;             // index into VideoExample::frames
  double start = 0, end = 0;         // seconds
  std::vector<std::size_t> tokens;   // indices into VideoExample::tokens
};

inline std::vector<std::size_t> tokens_between(const VideoExample& v, double t0, double t1, bool closed) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.tokens.size(); ++i)
    if (v.tokens[i].time >= t0 && (v.tokens[i].time < t1 || (closed && v.tokens[i].time <= t1))) out.push_back(i);
  return out;
}

// Splits a video into 5.12 s segments, merging runs of up to three sparse
// neighbours, and keeps the first max_segments.
inline std::vector<Segment> segment_video(const VideoExample& v, const Config& cfg, Rng& rng) {
  const std::size_t n = v.original_segments();
  if (v.duration < 5.0 || n == 0)
    throw std::invalid_argument(cat("segment_video: video ", v.id, " lasts ", v.duration, " s, need at least 5 s"));
  if (v.frames.size() < n)
    throw ShapeError(cat("segment_video: video ", v.id, " has ", v.frames.size(), " frames for ", n, " segments"));
  const double stride = signal::kSegmentSeconds;
  std::vector<std::size_t> count(n);
  for (std::size_t i = 0; i < n; ++i) count[i] = tokens_between(v, i * stride, (i + 1) * stride, i + 1 == n).size();
  std::vector<Segment> out;
  for (std::size_t i = 0; i < n && out.size() < cfg.max_segments;) {
    Segment s;
    s.first = i;
    std::size_t total = count[i];
    while (s.count < 3 && i + s.count < n && total < cfg.merge_threshold &&
           count[i + s.count] < cfg.merge_threshold && rng.bernoulli(cfg.merge_prob))
      total += count[i + s.count++];
    s.frame = s.first + s.count / 2;
    s.start = s.first * stride;
    s.end = (s.first + s.count) * stride;
    s.tokens = tokens_between(v, s.start, s.end, s.first + s.count == n);
    i += s.count;
    out.push_back(std::move(s));
  }
  return out;
}

// 192 hops covering the segment; merged segments are decimated in time.
inline signal::Spectrogram segment_spectrogram(const VideoExample& v, const Segment& s) {
  const std::size_t H = signal::kSegmentHops;
  if ((s.first + s.count) * H > v.spectrogram.hops)
    throw ShapeError(cat("segment_spectrogram: segment ends at hop ", (s.first + s.count) * H, " of ", v.spectrogram.hops));
  signal::Spectrogram out;
  out.hops = H;
  out.values.resize(signal::kMels * H);
  for (std::size_t m = 0; m < signal::kMels; ++m)
    for (std::size_t j = 0; j < H; ++j) out.at(m, j) = v.spectrogram.at(m, s.first * H + j * s.count);
  return out;
}

// Subsegments --------------------------------------------------------------------

struct Subsegment {
  std::size_t segment = 0;     // index into the segment list
  std::size_t k = 0;           // 0..2 within the segment
  std::size_t crop_start = 0;  // hop within the segment spectrogram
  double start = 0, end = 0;   // seconds
  std::vector<std::size_t> tokens;  // at most max_span, indices into VideoExample::tokens
};

inline std::vector<Subsegment> split_subsegments(const VideoExample& v, const Segment& seg, std::size_t seg_index,
                                                 std::size_t max_span, Rng& rng) {
  const auto starts = signal::sample_crop_starts(rng);
  const double hop_sec = signal::hops_to_seconds(1.0) * double(seg.count);
  const double W = double(signal::kSubsegmentHops);
  std::vector<Subsegment> out(signal::kSubsegments);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].segment = seg_index;
    out[k].k = k;
    out[k].crop_start = starts[k];
    out[k].start = seg.start + double(starts[k]) * hop_sec;
    out[k].end = out[k].start + W * hop_sec;
  }
  for (std::size_t t : seg.tokens) {
    const double local = (v.tokens[t].time - seg.start) / hop_sec;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double a = double(starts[k]), b = a + W;
      const double d = local < a ? a - local : local >= b ? local - b : 0.0;
      if (d < best_d) best_d = d, best = k;
    }
    out[best].tokens.push_back(t);
  }
  for (auto& s : out)
    if (s.tokens.size() > max_span) s.tokens.resize(max_span);
  return out;
}

// Masks ------------------------------------------------------------------------------

// Two disjoint sorted index sets of max(1, round(rate * n)) each.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> sample_masks(std::size_t n, double rate, Rng& rng) {
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(rate * double(n))));
  if (2 * k > n) throw std::invalid_argument(cat("sample_masks: two sets of ", k, " need more than ", n, " items"));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  std::vector<std::size_t> a(idx.begin(), idx.begin() + k), b(idx.begin() + k, idx.begin() + 2 * k);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {a, b};
}

// Views ------------------------------------------------------------------------------

enum class ViewKind { AudioTarget, AudioInput, WebText, TranscriptMatch };

inline const char* view_kind_name(ViewKind k) {
  switch (k) {
    case ViewKind::AudioTarget: return "audio_target";
    case ViewKind::AudioInput: return "audio_input";
    case ViewKind::WebText: return "webtext";
    case ViewKind::TranscriptMatch: return "transcript_match";
  }
  return "?";
}

inline constexpr std::int64_t kWebSourceBase = std::int64_t(1) << 40;

struct Target {
  std::size_t sequence = 0, slot = 0;
  Head head = Head::Text;
  std::vector<int> tokens;             // Text head; may be empty
  std::vector<std::int64_t> sources;   // token provenance, parallel to tokens
  int subsegment = -1;                 // Audio head
  int frame = -1;                      // Frame head: segment index
  std::uint64_t key = 0;               // content identity used for retrieval
  bool web = false;
};

struct MaskedView {
  ViewKind kind = ViewKind::AudioTarget;
  std::vector<JointSequence> sequences;
  std::vector<Target> targets;
  double masked_fraction = 0;  // web text only
};

inline std::uint64_t tokens_key(const std::vector<int>& ids) {
  if (ids.empty()) return 0;
  std::string s;
  for (int t : ids) s += cat(t, ",");
  return hash_string(s);
}

inline std::uint64_t segment_key(const VideoExample& v, const Segment& s) {
  if (!v.has_labels) return derive_seed(v.id, s.first, s.count);
  std::string k = cat("scene:", v.color, ":", v.place);
  for (std::size_t i = s.first; i < s.first + s.count && i < v.classes.size(); ++i) k += cat(":", v.classes[i]);
  return hash_string(k);
}

namespace detail {

struct Draft {
  std::vector<std::vector<Slot>> speech;  // per segment, before fitting
  std::vector<Target> targets;
};

inline Slot marker(SlotKind kind, std::size_t target) {
  Slot s;
  s.kind = kind;
  s.source = static_cast<std::int64_t>(target);
  return s;
}

inline Slot text_slot(const VideoExample& v, std::size_t tok) {
  Slot s;
  s.kind = SlotKind::Text;
  s.token = v.tokens[tok].id;
  s.source = static_cast<std::int64_t>(tok);
  return s;
}

inline bool is_marker(SlotKind k) { return k == SlotKind::Mask || k == SlotKind::AudioMask || k == SlotKind::Frame; }

// Drops rightmost text slots until `cap` slots remain.
inline void fit(std::vector<Slot>& slots, std::size_t cap) {
  while (slots.size() > cap) {
    auto it = std::find_if(slots.rbegin(), slots.rend(), [](const Slot& s) { return s.kind == SlotKind::Text; });
    if (it == slots.rend()) throw std::logic_error(cat("fit: ", slots.size(), " non-text slots exceed ", cap));
    slots.erase(std::next(it).base());
  }
}

// Packs segments into groups of segments_per_group, each segment being
// L speech slots (PAD-filled) optionally followed by its vision slots.
inline MaskedView assemble(ViewKind kind, Draft d, const Config& cfg, bool vision) {
  MaskedView view;
  view.kind = kind;
  view.targets = std::move(d.targets);
  const std::size_t L = cfg.speech_slots, V = cfg.vision_slots(), spg = cfg.segments_per_group;
  const std::size_t grid_rows = cfg.patch_rows() / kVisionPool, grid_cols = cfg.patch_cols() / kVisionPool;
  for (std::size_t g0 = 0; g0 < d.speech.size(); g0 += spg) {
    const std::size_t n = std::min(spg, d.speech.size() - g0);
    JointSequence seq;
    for (std::size_t j = 0; j < n; ++j) {
      auto& sp = d.speech[g0 + j];
      fit(sp, L);
      sp.resize(L);
      for (auto& s : sp) s.segment = static_cast<int>(j);
      seq.slots.insert(seq.slots.end(), sp.begin(), sp.end());
      if (vision)
        for (std::size_t c = 0; c < V; ++c) {
          Slot s;
          s.kind = SlotKind::Vision;
          s.ref = static_cast<int>((g0 + j) * V + c);
          s.segment = static_cast<int>(j);
          seq.slots.push_back(s);
        }
    }
    seq.coords = joint_coords(seq.slots, n, grid_rows, grid_cols);
    const std::size_t si = view.sequences.size();
    for (std::size_t p = 0; p < seq.slots.size(); ++p)
      if (is_marker(seq.slots[p].kind)) {
        auto& t = view.targets.at(static_cast<std::size_t>(seq.slots[p].source));
        t.sequence = si;
        t.slot = p;
      }
    view.sequences.push_back(std::move(seq));
  }
  return view;
}

inline Target text_target(const VideoExample& v, const std::vector<std::size_t>& toks) {
  Target t;
  t.head = Head::Text;
  for (auto i : toks) {
    t.tokens.push_back(v.tokens[i].id);
    t.sources.push_back(static_cast<std::int64_t>(i));
  }
  t.key = tokens_key(t.tokens);
  return t;
}

}  // namespace detail

struct ViewContext {
  const VideoExample& video;
  const Config& cfg;
  const std::vector<Segment>& segments;
  const std::vector<Subsegment>& subsegments;
};

// Masked subsegments become MASK (text target) + AUDIOMASK (audio target);
// everything else is transcript text. A neighbour's boundary word within the
// donation window of a masked subsegment moves into its text target.
inline MaskedView build_audio_target_view(const ViewContext& c, const std::vector<std::size_t>& masked) {
  const auto& subs = c.subsegments;
  const std::set<std::size_t> m(masked.begin(), masked.end());
  std::vector<std::vector<std::size_t>> own(subs.size());
  for (std::size_t g = 0; g < subs.size(); ++g) own[g] = subs[g].tokens;
  std::vector<std::vector<std::size_t>> before(subs.size()), after(subs.size());
  std::set<std::size_t> donated;
  auto word_tokens = [&](std::size_t g, std::size_t word) {
    std::vector<std::size_t> out;
    for (auto t : own[g])
      if (c.video.tokens[t].word == word && !donated.count(t)) out.push_back(t);
    return out;
  };
  const double w = c.cfg.donation_window;
  for (std::size_t g : masked) {
    if (g > 0 && !m.count(g - 1) && !own[g - 1].empty()) {
      const auto& last = c.video.tokens[own[g - 1].back()];
      if (last.time > subs[g].start - w && !donated.count(own[g - 1].back())) {
        before[g] = word_tokens(g - 1, last.word);
        donated.insert(before[g].begin(), before[g].end());
      }
    }
    if (g + 1 < subs.size() && !m.count(g + 1) && !own[g + 1].empty()) {
      const auto& first = c.video.tokens[own[g + 1].front()];
      if (first.time < subs[g].end + w && !donated.count(own[g + 1].front())) {
        after[g] = word_tokens(g + 1, first.word);
        donated.insert(after[g].begin(), after[g].end());
      }
    }
  }
  detail::Draft d;
  d.speech.resize(c.segments.size());
  for (std::size_t g = 0; g < subs.size(); ++g) {
    auto& sp = d.speech[subs[g].segment];
    if (m.count(g)) {
      std::vector<std::size_t> toks = before[g];
      toks.insert(toks.end(), own[g].begin(), own[g].end());
      toks.insert(toks.end(), after[g].begin(), after[g].end());
      if (toks.size() > c.cfg.max_span) toks.resize(c.cfg.max_span);
      sp.push_back(detail::marker(SlotKind::Mask, d.targets.size()));
      d.targets.push_back(detail::text_target(c.video, toks));
      sp.push_back(detail::marker(SlotKind::AudioMask, d.targets.size()));
      Target a;
      a.head = Head::Audio;
      a.subsegment = static_cast<int>(g);
      a.key = segment_key(c.video, c.segments[subs[g].segment]);
      d.targets.push_back(std::move(a));
    } else {
      for (auto t : own[g])
        if (!donated.count(t)) sp.push_back(detail::text_slot(c.video, t));
    }
  }
  return detail::assemble(ViewKind::AudioTarget, std::move(d), c.cfg, true);
}

// Masked subsegments become MASK (text target). Unmasked neighbours of a mask
// are shown as text with probability adjacent_text_prob, all other subsegments
// as their six pooled audio tokens.
inline MaskedView build_audio_input_view(const ViewContext& c, const std::vector<std::size_t>& masked, Rng& rng) {
  const auto& subs = c.subsegments;
  const std::set<std::size_t> m(masked.begin(), masked.end());
  detail::Draft d;
  d.speech.resize(c.segments.size());
  for (std::size_t g = 0; g < subs.size(); ++g) {
    auto& sp = d.speech[subs[g].segment];
    if (m.count(g)) {
      sp.push_back(detail::marker(SlotKind::Mask, d.targets.size()));
      d.targets.push_back(detail::text_target(c.video, subs[g].tokens));
      continue;
    }
    const bool adjacent = (g > 0 && m.count(g - 1)) || (g + 1 < subs.size() && m.count(g + 1));
    if (adjacent && rng.bernoulli(c.cfg.adjacent_text_prob)) {
      for (auto t : subs[g].tokens) sp.push_back(detail::text_slot(c.video, t));
    } else {
      for (std::size_t j = 0; j < kAudioTokensPerSubsegment; ++j) {
        Slot s;
        s.kind = SlotKind::Audio;
        s.ref = static_cast<int>(g * kAudioTokensPerSubsegment + j);
        sp.push_back(s);
      }
    }
  }
  return detail::assemble(ViewKind::AudioInput, std::move(d), c.cfg, true);
}

// One FRAME slot per segment followed by that segment's transcript; the
// target is the segment's frame. No audio or vision inputs.
inline MaskedView build_transcript_view(const ViewContext& c) {
  detail::Draft d;
  d.speech.resize(c.segments.size());
  for (std::size_t s = 0; s < c.segments.size(); ++s) {
    auto& sp = d.speech[s];
    sp.push_back(detail::marker(SlotKind::Frame, d.targets.size()));
    Target t;
    t.head = Head::Frame;
    t.frame = static_cast<int>(s);
    t.key = segment_key(c.video, c.segments[s]);
    d.targets.push_back(std::move(t));
    for (auto i : c.segments[s].tokens) sp.push_back(detail::text_slot(c.video, i));
  }
  return detail::assemble(ViewKind::TranscriptMatch, std::move(d), c.cfg, false);
}

// Web text: the token stream is cut into spans; webtext_spans of them are
// replaced by MASK. The result is trimmed to the group length by dropping
// unmasked tokens at the ends.
inline MaskedView build_webtext_view(const std::vector<int>& ids, const Config& cfg, Rng& rng) {
  if (ids.size() != cfg.webtext_len)
    throw std::invalid_argument(cat("build_webtext_view: ", ids.size(), " tokens, expected ", cfg.webtext_len));
  const auto lengths = text::sample_span_lengths(ids.size(), rng);
  if (lengths.size() < cfg.webtext_spans)
    throw std::invalid_argument(cat("build_webtext_view: ", lengths.size(), " spans, need ", cfg.webtext_spans));
  std::vector<std::size_t> order(lengths.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::set<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.webtext_spans));

  MaskedView view;
  view.kind = ViewKind::WebText;
  std::vector<Slot> slots;
  std::size_t pos = 0, masked = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    if (chosen.count(s)) {
      Target t;
      t.head = Head::Text;
      t.web = true;
      for (std::size_t j = pos; j < pos + lengths[s]; ++j) {
        t.tokens.push_back(ids[j]);
        t.sources.push_back(kWebSourceBase + static_cast<std::int64_t>(j));
      }
      t.key = tokens_key(t.tokens);
      masked += lengths[s];
      slots.push_back(detail::marker(SlotKind::Mask, view.targets.size()));
      view.targets.push_back(std::move(t));
    } else {
      for (std::size_t j = pos; j < pos + lengths[s]; ++j) {
        Slot sl;
        sl.kind = SlotKind::Text;
        sl.token = ids[j];
        sl.source = kWebSourceBase + static_cast<std::int64_t>(j);
        slots.push_back(sl);
      }
    }
    pos += lengths[s];
  }
  view.masked_fraction = double(masked) / double(ids.size());
  const std::size_t G = cfg.group_length();
  std::vector<bool> dropped(view.targets.size(), false);
  while (slots.size() > G) {
    if (slots.back().kind == SlotKind::Text) slots.pop_back();
    else if (slots.front().kind == SlotKind::Text) slots.erase(slots.begin());
    else {
      dropped[static_cast<std::size_t>(slots.back().source)] = true;
      slots.pop_back();
    }
  }
  std::vector<std::size_t> remap(view.targets.size());
  std::vector<Target> kept;
  for (std::size_t i = 0; i < view.targets.size(); ++i)
    if (!dropped[i]) remap[i] = kept.size(), kept.push_back(std::move(view.targets[i]));
  view.targets = std::move(kept);
  JointSequence seq;
  seq.slots = std::move(slots);
  for (std::size_t p = 0; p < seq.slots.size(); ++p)
    if (seq.slots[p].kind == SlotKind::Mask) {
      auto& t = view.targets[remap[static_cast<std::size_t>(seq.slots[p].source)]];
      seq.slots[p].source = static_cast<std::int64_t>(remap[static_cast<std::size_t>(seq.slots[p].source)]);
      t.sequence = 0;
      t.slot = p;
    }
  seq.coords = joint_coords(seq.slots, 1, 1, 1);
  view.sequences.push_back(std::move(seq));
  return view;
}

// Per-video plan --------------------------------------------------------------------

struct VideoPlan {
  std::vector<Segment> segments;
  std::vector<signal::Spectrogram> spectrograms;  // per segment, 192 hops
  std::vector<Subsegment> subsegments;
  std::vector<std::uint64_t> segment_keys;
  std::vector<std::size_t> target_mask, input_mask;
  MaskedView audio_target, audio_input, webtext, transcript;

  // 64x60 mel-major crop of a subsegment.
  std::vector<float> crop(std::size_t g) const {
    const auto& s = subsegments.at(g);
    return signal::crop_hops(spectrograms.at(s.segment), s.crop_start).values;
  }
};

// Everything random in a plan is a function of (seed, video id).
inline VideoPlan plan_video(const VideoExample& v, const Config& cfg, std::uint64_t seed) {
  VideoPlan p;
  Rng seg_rng(derive_seed(seed, v.id, 1)), crop_rng(derive_seed(seed, v.id, 2)), mask_rng(derive_seed(seed, v.id, 3)),
      view_rng(derive_seed(seed, v.id, 4)), web_rng(derive_seed(seed, v.id, 5));
  p.segments = segment_video(v, cfg, seg_rng);
  for (std::size_t s = 0; s < p.segments.size(); ++s) {
    p.spectrograms.push_back(segment_spectrogram(v, p.segments[s]));
    p.segment_keys.push_back(segment_key(v, p.segments[s]));
    auto subs = split_subsegments(v, p.segments[s], s, cfg.max_span, crop_rng);
    p.subsegments.insert(p.subsegments.end(), subs.begin(), subs.end());
  }
  std::tie(p.target_mask, p.input_mask) = sample_masks(p.subsegments.size(), cfg.mask_rate, mask_rng);
  const ViewContext ctx{v, cfg, p.segments, p.subsegments};
  p.audio_target = build_audio_target_view(ctx, p.target_mask);
  p.audio_input = build_audio_input_view(ctx, p.input_mask, view_rng);
  p.transcript = build_transcript_view(ctx);
  p.webtext = build_webtext_view(v.webtext, cfg, web_rng);
  return p;
}

// Target selection --------------------------------------------------------------------

inline std::vector<std::size_t> weighted_sample_without_replacement(std::vector<double> weights, std::size_t k, Rng& rng) {
  std::vector<std::size_t> out;
  k = std::min(k, weights.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = rng.categorical(weights);
    out.push_back(j);
    weights[j] = 0.0;
  }
  return out;
}

inline constexpr double kVideoSpanWeight = 4.0;
inline constexpr double kWebSpanWeight = 1.0;
inline constexpr double kEmptySpanWeight = 0.01;

inline double selection_weight(const Target& t) {
  if (t.tokens.empty()) return kEmptySpanWeight;
  return t.web ? kWebSpanWeight : kVideoSpanWeight;
}

// Picks `count` text targets, favouring non-empty video spans.
inline std::vector<const Target*> select_targets(const std::vector<const Target*>& candidates, std::size_t count, Rng& rng) {
  std::vector<double> w;
  for (auto* t : candidates) w.push_back(selection_weight(*t));
  std::vector<const Target*> out;
  for (auto i : weighted_sample_without_replacement(std::move(w), count, rng)) out.push_back(candidates[i]);
  return out;
}

// Every text target of a plan, in view order.
inline std::vector<const Target*> text_targets(const VideoPlan& p) {
  std::vector<const Target*> out;
  for (const MaskedView* v : {&p.audio_target, &p.audio_input, &p.webtext})
    for (auto& t : v->targets)
      if (t.head == Head::Text) out.push_back(&t);
  return out;
}

// Leakage checks ----------------------------------------------------------------------

// Describes each way a target can be read off the view's inputs. Empty means
// the view is clean.
inline std::vector<std::string> leakage_violations(const MaskedView& view) {
  std::vector<std::string> out;
  std::set<std::int64_t> text_sources;
  std::set<int> audio_subsegments;
  bool has_vision = false;
  std::size_t markers = 0;
  for (std::size_t s = 0; s < view.sequences.size(); ++s) {
    const auto& seq = view.sequences[s];
    for (std::size_t p = 0; p < seq.slots.size(); ++p) {
      const auto& sl = seq.slots[p];
      if (sl.kind == SlotKind::Text) text_sources.insert(sl.source);
      if (sl.kind == SlotKind::Audio) audio_subsegments.insert(sl.ref / int(kAudioTokensPerSubsegment));
      if (sl.kind == SlotKind::Vision) has_vision = true;
      if (detail::is_marker(sl.kind)) {
        ++markers;
        const auto ti = static_cast<std::size_t>(sl.source);
        if (sl.source < 0 || ti >= view.targets.size() || view.targets[ti].sequence != s || view.targets[ti].slot != p)
          out.push_back(cat("marker at sequence ", s, " slot ", p, " has no matching target"));
      }
    }
  }
  if (markers != view.targets.size())
    out.push_back(cat(markers, " marker slots for ", view.targets.size(), " targets"));
  for (std::size_t i = 0; i < view.targets.size(); ++i) {
    const auto& t = view.targets[i];
    if (t.sequence >= view.sequences.size() || t.slot >= view.sequences[t.sequence].slots.size()) {
      out.push_back(cat("target ", i, " points outside the view"));
      continue;
    }
    const auto kind = view.sequences[t.sequence].slots[t.slot].kind;
    const bool ok = (t.head == Head::Text && kind == SlotKind::Mask) ||
                    (t.head == Head::Audio && kind == SlotKind::AudioMask) ||
                    (t.head == Head::Frame && kind == SlotKind::Frame);
    if (!ok) out.push_back(cat("target ", i, " sits on a ", slot_kind_name(kind), " slot"));
    for (auto src : t.sources)
      if (text_sources.count(src)) out.push_back(cat("target ", i, " token source ", src, " is visible as text"));
    if (t.head == Head::Audio && audio_subsegments.count(t.subsegment))
      out.push_back(cat("target ", i, " audio of subsegment ", t.subsegment, " is visible"));
    if (t.head == Head::Frame && has_vision) out.push_back(cat("frame target ", i, " shares its view with vision slots"));
  }
  return out;
}

// Debug output --------------------------------------------------------------------------

inline nlohmann::json view_json(const MaskedView& view, const text::Vocab* vocab = nullptr) {
  nlohmann::json j;
  j["kind"] = view_kind_name(view.kind);
  j["sequences"] = nlohmann::json::array();
  for (auto& seq : view.sequences) {
    nlohmann::json slots = nlohmann::json::array();
    for (auto& s : seq.slots) {
      switch (s.kind) {
        case SlotKind::Text: slots.push_back(vocab ? vocab->token(s.token) : std::to_string(s.token)); break;
        case SlotKind::Audio: slots.push_back(cat("<audio ", s.ref, ">")); break;
        case SlotKind::Vision: slots.push_back(cat("<vision ", s.ref, ">")); break;
        default: slots.push_back(cat("<", slot_kind_name(s.kind), ">")); break;
      }
    }
    j["sequences"].push_back(std::move(slots));
  }
  j["targets"] = nlohmann::json::array();
  for (auto& t : view.targets) {
    nlohmann::json tj{{"sequence", t.sequence}, {"slot", t.slot},
                      {"head", t.head == Head::Text ? "text" : t.head == Head::Audio ? "audio" : "frame"}};
    if (t.head == Head::Text) tj["text"] = vocab ? vocab->detokenize(t.tokens) : nlohmann::json(t.tokens).dump();
    if (t.head == Head::Audio) tj["subsegment"] = t.subsegment;
    if (t.head == Head::Frame) tj["frame"] = t.frame;
    j["targets"].push_back(std::move(tj));
  }
  if (view.kind == ViewKind::WebText) j["masked_fraction"] = view.masked_fraction;
  return j;
}

}  // namespace mrsv::pipeline
