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

// Zero-shot label-space matching and retrieval evaluation.

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrsv/model.hpp"
#include "mrsv/pipeline.hpp"
#include "mrsv/text.hpp"
#include "mrsv/trainer.hpp"

namespace mrsv::zeroshot {

inline constexpr std::string_view kMaskWord = "<mask>";
inline constexpr std::size_t kMaxPromptSegments = 8;

struct LabelSpace {
  std::vector<std::string> labels;
  std::vector<std::vector<int>> tokens;
  Tensor<double> vectors;  // [labels, d], unit rows
  std::size_t truncated = 0, duplicates = 0;
};

// Span-encoder CLS vector of each label, L2-normalized. Labels longer than
// max_span tokens are truncated and counted.
template <class Real>
LabelSpace encode_label_space(Model<Real>& model, const text::Vocab& vocab, const std::vector<std::string>& labels) {
  if (labels.empty()) throw std::invalid_argument("encode_label_space: no labels");
  LabelSpace ls;
  ls.labels = labels;
  std::map<std::string, int> seen;
  for (auto& l : labels) {
    auto ids = pipeline::encode_text(l, vocab);
    if (ids.empty()) throw std::invalid_argument("encode_label_space: empty label");
    if (ids.size() > model.cfg.max_span) ids.resize(model.cfg.max_span), ++ls.truncated;
    if (seen[l]++) ++ls.duplicates;
    ls.tokens.push_back(std::move(ids));
  }
  const std::size_t d = model.cfg.hidden, chunk = 256;
  ls.vectors = Tensor<double>({labels.size(), d});
  for (std::size_t b = 0; b < labels.size(); b += chunk) {
    const std::size_t e = std::min(labels.size(), b + chunk);
    Tape<Real> tape;
    auto v = model.encode_spans(tape, {ls.tokens.begin() + std::ptrdiff_t(b), ls.tokens.begin() + std::ptrdiff_t(e)}).value();
    for (std::size_t i = b; i < e; ++i) {
      double n = 0;
      for (std::size_t k = 0; k < d; ++k) n += double(v(i - b, k)) * double(v(i - b, k));
      n = std::sqrt(n);
      if (n < 1e-12) throw DegenerateVectorError(cat("encode_label_space: zero vector for label '", labels[i], "'"));
      for (std::size_t k = 0; k < d; ++k) ls.vectors(i, k) = double(v(i - b, k)) / n;
    }
  }
  return ls;
}

struct Query {
  const pipeline::VideoExample* video = nullptr;
  std::vector<std::size_t> segments;  // original segment indices; the prompt goes with the first
  std::string prompt;                 // words with exactly one <mask>
  bool audio = false;                 // add the pooled audio of each prompt segment
};

struct Ranking {
  std::vector<std::size_t> order;  // label indices, best first
  std::vector<double> scores;      // per label, in label order
};

// Evenly spaced crops: the 12 held-out hops split into four gaps of three.
inline std::array<std::size_t, signal::kSubsegments> centred_crop_starts() {
  const std::size_t gap = signal::kHeldOutHops / (signal::kSubsegments + 1);
  std::array<std::size_t, signal::kSubsegments> s{};
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = gap + k * (signal::kSubsegmentHops + gap);
  return s;
}

// Joint-encodes the query and returns the text-head prediction at its MASK.
template <class Real>
std::vector<double> mask_prediction(Model<Real>& model, const text::Vocab& vocab, const Query& q) {
  const Config& cfg = model.cfg;
  if (!q.video) throw std::invalid_argument("zeroshot: query without a video");
  if (q.segments.empty() || q.segments.size() > kMaxPromptSegments)
    throw std::invalid_argument(cat("zeroshot: ", q.segments.size(), " segments, expected 1..", kMaxPromptSegments));
  const auto& v = *q.video;
  std::vector<Slot> prompt;
  std::size_t masks = 0;
  for (auto& w : corpus::split_words(q.prompt)) {
    if (w == kMaskWord) {
      prompt.push_back({SlotKind::Mask});
      ++masks;
      continue;
    }
    for (int id : pipeline::encode_words({w}, vocab)) prompt.push_back({SlotKind::Text, id});
  }
  if (masks != 1) throw std::invalid_argument(cat("zeroshot: prompt has ", masks, " <mask> markers, expected 1"));

  Tape<Real> tape;
  std::vector<const Image*> images;
  std::vector<std::vector<float>> crops;
  for (auto s : q.segments) {
    if (s >= v.original_segments() || s >= v.frames.size())
      throw std::out_of_range(cat("zeroshot: segment ", s, " of a ", v.original_segments(), "-segment video"));
    images.push_back(&v.frames[s]);
    if (q.audio) {
      pipeline::Segment seg;
      seg.first = s;
      auto spec = pipeline::segment_spectrogram(v, seg);
      for (auto start : centred_crop_starts()) crops.push_back(signal::crop_hops(spec, start).values);
    }
  }
  auto frames = model.encode_frames(tape, images);
  Var<Real> audio;
  if (q.audio) {
    std::vector<std::span<const float>> views(crops.begin(), crops.end());
    audio = model.encode_audio(tape, views).pooled;
  }
  const std::size_t V = cfg.vision_slots(), A = kAudioTokensPerSubsegment * signal::kSubsegments;
  JointSequence seq;
  std::size_t mask_slot = 0;
  for (std::size_t j = 0; j < q.segments.size(); ++j) {
    std::vector<Slot> speech;
    if (j == 0) speech = prompt;
    // Whole crops only; trailing ones are dropped when the prompt leaves no room.
    if (q.audio)
      for (std::size_t k = 0; k < signal::kSubsegments && speech.size() + kAudioTokensPerSubsegment <= cfg.speech_slots; ++k)
        for (std::size_t a = 0; a < kAudioTokensPerSubsegment; ++a)
          speech.push_back({SlotKind::Audio, text::kPad, int(j * A + k * kAudioTokensPerSubsegment + a)});
    if (speech.size() > cfg.speech_slots)
      throw std::invalid_argument(cat("zeroshot: ", speech.size(), " speech slots exceed ", cfg.speech_slots));
    speech.resize(cfg.speech_slots);
    for (std::size_t c = 0; c < V; ++c) speech.push_back({SlotKind::Vision, text::kPad, int(j * V + c)});
    for (auto& s : speech) {
      s.segment = int(j);
      if (s.kind == SlotKind::Mask) mask_slot = seq.slots.size();
      seq.slots.push_back(s);
    }
  }
  seq.coords = joint_coords(seq.slots, q.segments.size(), cfg.patch_rows() / kVisionPool, cfg.patch_cols() / kVisionPool);
  auto out = model.joint_encode(tape, {seq}, audio, frames.pooled);
  auto w = model.predict(tape, out, {mask_slot}, Head::Text).value();
  return std::vector<double>(w.data.begin(), w.data.end());
}

// Labels ranked by dot product with the MASK prediction.
template <class Real>
Ranking classify(Model<Real>& model, const text::Vocab& vocab, const Query& q, const LabelSpace& labels) {
  auto w = mask_prediction(model, vocab, q);
  const std::size_t n = labels.labels.size(), d = labels.vectors.cols();
  if (w.size() != d) throw ShapeError(cat("zeroshot: prediction width ", w.size(), " vs label width ", d));
  Ranking r;
  r.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += w[k] * labels.vectors(i, k);
    r.scores[i] = s;
  }
  r.order.resize(n);
  std::iota(r.order.begin(), r.order.end(), std::size_t(0));
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
  return r;
}

inline bool contains_phrase(const std::string& label, const std::string& phrase) {
  const auto l = corpus::split_words(text::normalize(label)), p = corpus::split_words(text::normalize(phrase));
  if (p.empty() || p.size() > l.size()) return false;
  for (std::size_t i = 0; i + p.size() <= l.size(); ++i)
    if (std::equal(p.begin(), p.end(), l.begin() + std::ptrdiff_t(i))) return true;
  return false;
}

// Score of each component phrase: the mean score over the labels in which it
// appears as a word sequence.
inline std::vector<double> component_scores(const std::vector<std::string>& labels, const std::vector<double>& scores,
                                            const std::vector<std::string>& components) {
  if (labels.size() != scores.size()) throw ShapeError("component_scores: labels and scores differ in length");
  std::vector<double> out;
  for (auto& c : components) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (contains_phrase(labels[i], c)) sum += scores[i], ++n;
    if (n == 0) throw std::invalid_argument(cat("component_scores: no label contains '", c, "'"));
    out.push_back(sum / double(n));
  }
  return out;
}

// Retrieval evaluation -------------------------------------------------------------------------

struct RetrievalReport {
  RetrievalCounts text, audio, frame;
  std::size_t batches = 0;

  nlohmann::json to_json() const {
    auto one = [](const RetrievalCounts& c) {
      return nlohmann::json{{"contexts", c.contexts}, {"top1", c.top1_rate()}, {"top5", c.top5_rate()},
                            {"chance", c.chance_rate()}};
    };
    return {{"batches", batches}, {"mask_to_text", one(text)}, {"mask_to_audio", one(audio)},
            {"transcript_to_frame", one(frame)}};
  }
};

// Consecutive batches of `batch` videos (the remainder is dropped), each
// scored against its own candidate pool.
template <class Real>
RetrievalReport eval_retrieval(Model<Real>& model, const std::vector<pipeline::VideoExample>& videos, std::size_t batch,
                               std::uint64_t seed, std::size_t threads = worker_count()) {
  if (videos.empty()) throw std::invalid_argument("eval_retrieval: no videos");
  if (batch == 0 || videos.size() < batch)
    throw std::invalid_argument(cat("eval_retrieval: ", videos.size(), " videos for batches of ", batch));
  RetrievalReport rep;
  for (std::size_t b = 0; b + batch <= videos.size(); b += batch) {
    std::vector<const pipeline::VideoExample*> ptrs;
    for (std::size_t i = b; i < b + batch; ++i) ptrs.push_back(&videos[i]);
    auto r = run_batch(model, ptrs, derive_seed(seed, b), false, threads);
    rep.text += r.text;
    rep.audio += r.audio;
    rep.frame += r.frame;
    ++rep.batches;
  }
  return rep;
}

// Batch classification -------------------------------------------------------------------------
//
// Input lines: {"video_ref": id, "prompt": "...", "labels": [...], optional
// "segments": [...], optional "audio": bool}. Output lines: {"video_ref",
// "ranked": [labels, best first], "scores": [matching scores]}.

template <class Real>
std::size_t classify_jsonl(Model<Real>& model, const text::Vocab& vocab,
                           const std::map<std::uint64_t, const pipeline::VideoExample*>& videos, std::istream& in,
                           std::ostream& out) {
  std::string line;
  std::size_t n = 0, lineno = 0;
  std::map<std::vector<std::string>, LabelSpace> cache;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    Query q;
    std::vector<std::string> labels;
    std::uint64_t ref = 0;
    try {
      j = nlohmann::json::parse(line);
      ref = j.at("video_ref").get<std::uint64_t>();
      q.prompt = j.at("prompt").get<std::string>();
      labels = j.at("labels").get<std::vector<std::string>>();
      q.segments = j.contains("segments") ? j["segments"].get<std::vector<std::size_t>>() : std::vector<std::size_t>{0};
      q.audio = j.value("audio", false);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(cat("query line ", lineno, ": ", e.what()), 0);
    }
    auto it = videos.find(ref);
    if (it == videos.end()) throw std::invalid_argument(cat("query line ", lineno, ": unknown video_ref ", ref));
    q.video = it->second;
    auto ls = cache.find(labels);
    if (ls == cache.end()) ls = cache.emplace(labels, encode_label_space(model, vocab, labels)).first;
    auto r = classify(model, vocab, q, ls->second);
    nlohmann::json o;
    o["video_ref"] = ref;
    o["ranked"] = nlohmann::json::array();
    o["scores"] = nlohmann::json::array();
    for (auto i : r.order) {
      o["ranked"].push_back(labels[i]);
      o["scores"].push_back(r.scores[i]);
    }
    out << o.dump() << '\n';
    ++n;
  }
  return n;
}

}  // namespace mrsv::zeroshot
