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

// Synthetic multimodal corpus and its on-disk container.
//
// Every video has a scene (a colour word u1 and a place word u2) and one
// event class per segment. The three modalities carry the same facts:
//   frame  - class-oriented grating, tinted by u1, with a bright block at a
//            border position chosen by u2;
//   audio  - a two-tone class chord plus one tone each for u1 and u2;
//   speech - "<u1> <class phrase> <u2>", spoken once per segment inside one
//            of its three subsegments.
// Provided word timings are the true timings plus a clipped Gaussian shift.

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mrsv/common.hpp"
#include "mrsv/media.hpp"
#include "mrsv/signal.hpp"
#include "mrsv/text.hpp"

namespace mrsv::corpus {

inline constexpr std::size_t kMaxClasses = 16;
inline constexpr std::size_t kSceneValues = 8;
inline constexpr double kMaxShift = 0.3;

inline constexpr std::array<std::string_view, kSceneValues> kColorWords = {
    "red", "blue", "green", "yellow", "purple", "orange", "silver", "brown"};
inline constexpr std::array<std::string_view, kSceneValues> kPlaceWords = {
    "kitchen", "garden", "market", "beach", "forest", "studio", "harbor", "attic"};
inline constexpr std::array<std::string_view, kMaxClasses> kClassPhrases = {
    "dog barks",   "door slams",      "rain falls on roof", "engine starts", "bell rings",  "baby laughs",
    "water boils", "glass breaks",    "bird sings",         "crowd cheers",  "phone buzzes", "wind howls",
    "drums",       "kettle whistles", "train passes by",    "clock ticks"};

// RGB tint per colour word.
inline constexpr std::array<std::array<double, 3>, kSceneValues> kTints = {{{1.0, 0.25, 0.25},
                                                                            {0.25, 0.35, 1.0},
                                                                            {0.3, 1.0, 0.3},
                                                                            {1.0, 0.95, 0.25},
                                                                            {0.7, 0.3, 0.95},
                                                                            {1.0, 0.6, 0.15},
                                                                            {0.8, 0.8, 0.85},
                                                                            {0.6, 0.4, 0.25}}};

inline std::string class_phrase(std::size_t cls) { return std::string(kClassPhrases.at(cls)); }

inline std::string scene_phrase(std::size_t color, std::size_t cls, std::size_t place) {
  return cat(kColorWords.at(color), " ", kClassPhrases.at(cls), " ", kPlaceWords.at(place));
}

struct SyntheticSpec {
  std::size_t n_videos = 64;
  std::size_t n_classes = 8;
  std::size_t segments = 4;
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  double shift_mean = 0.1;
  double shift_std = 0.05;
  std::size_t webtext_phrases = 160;
  std::uint64_t seed = 1;
  std::uint64_t first_id = 0;

  void validate() const {
    if (n_classes < 2 || n_classes > kMaxClasses)
      throw std::invalid_argument(cat("corpus: classes must be in 2..", kMaxClasses, ", got ", n_classes));
    if (!(shift_std >= 0)) throw std::invalid_argument("corpus: shift std must be non-negative");
    if (segments == 0) throw std::invalid_argument("corpus: videos need at least one segment");
    if (image_h % 32 != 0 || image_w % 32 != 0 || image_h == 0 || image_w == 0)
      throw std::invalid_argument("corpus: image size must be a positive multiple of 32");
  }
};

struct Word {
  std::string text;
  double start = 0, end = 0;            // provided (misaligned) interval, seconds
  double true_start = 0, true_end = 0;  // ground truth
  bool operator==(const Word&) const = default;
};

struct Record {
  std::uint64_t id = 0;
  std::uint32_t n_classes = 0;
  std::uint32_t color = 0, place = 0;
  std::vector<std::uint32_t> classes;  // per segment
  std::vector<Image> frames;           // per segment, taken at its middle
  std::vector<float> waveform;         // mono PCM at 22050 Hz
  std::vector<Word> words;
  std::string webtext;
  bool operator==(const Record&) const = default;

  double duration() const { return double(waveform.size()) / signal::kSampleRate; }
};

// Rendering ------------------------------------------------------------------

// Deterministic class pattern in [0, 1]: an oriented grating.
inline std::vector<double> class_pattern(std::size_t cls, std::size_t h, std::size_t w) {
  const double angle = std::numbers::pi * double(cls % 8) / 8.0;
  const double cycles = 3.0 + 2.0 * double(cls / 8);
  std::vector<double> g(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (double(x) * std::cos(angle) + double(y) * std::sin(angle)) / double(std::max(h, w));
      g[y * w + x] = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * cycles * u);
    }
  return g;
}

inline Image render_frame(std::size_t cls, std::size_t color, std::size_t place, std::size_t h, std::size_t w, Rng& rng) {
  const auto g = class_pattern(cls, h, w);
  Image im(h, w);
  // bright block on one of 8 border positions (clockwise from top-left)
  static constexpr std::array<std::array<int, 2>, 8> kBlock = {
      {{0, 0}, {0, 1}, {0, 2}, {1, 2}, {2, 2}, {2, 1}, {2, 0}, {1, 0}}};
  const std::size_t bh = h / 4, bw = w / 4;
  const std::size_t by = kBlock[place][0] * (h - bh) / 2, bx = kBlock[place][1] * (w - bw) / 2;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const bool block = y >= by && y < by + bh && x >= bx && x < bx + bw;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = block ? 250.0 : 255.0 * kTints[color][c] * (0.15 + 0.7 * g[y * w + x]);
        v += rng.normal(0.0, 6.0);
        im.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  return im;
}

inline double class_frequency(std::size_t cls) { return 300.0 * std::pow(2.0, double(cls) / 5.0); }
inline double color_frequency(std::size_t color) { return 4000.0 * std::pow(2.0, double(color) / 9.0); }
inline double place_frequency(std::size_t place) { return 7400.0 * std::pow(2.0, double(place) / 14.0); }

// Adds a sinusoid of the given amplitude to out[0..n), using a rotating phasor.
inline void add_tone(float* out, std::size_t n, double hz, double amp, double phase) {
  const double w = 2.0 * std::numbers::pi * hz / signal::kSampleRate;
  std::complex<double> z = std::polar(1.0, phase);
  const std::complex<double> step = std::polar(1.0, w);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] += static_cast<float>(amp * z.imag());
    z *= step;
    if ((i & 1023) == 0) z /= std::abs(z);
  }
}

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline Record generate_video(const SyntheticSpec& spec, std::uint64_t id) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, id));
  Record r;
  r.id = id;
  r.n_classes = static_cast<std::uint32_t>(spec.n_classes);
  r.color = static_cast<std::uint32_t>(rng.below(kSceneValues));
  r.place = static_cast<std::uint32_t>(rng.below(kSceneValues));
  // distinct classes within a video when possible
  std::vector<std::uint32_t> pool;
  while (r.classes.size() < spec.segments) {
    if (pool.empty()) {
      for (std::uint32_t c = 0; c < spec.n_classes; ++c) pool.push_back(c);
      rng.shuffle(pool);
    }
    r.classes.push_back(pool.back());
    pool.pop_back();
  }

  const std::size_t n = spec.segments;
  r.waveform.assign(n * signal::kSegmentStride + (signal::kSegmentSamples - signal::kSegmentStride), 0.0f);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t cls = r.classes[s];
    r.frames.push_back(render_frame(cls, r.color, r.place, spec.image_h, spec.image_w, rng));
    const std::size_t begin = s * signal::kSegmentStride;
    const std::size_t len = s + 1 == n ? r.waveform.size() - begin : signal::kSegmentStride;
    float* out = r.waveform.data() + begin;
    const double gain = rng.uniform(0.7, 1.3);
    const double f = class_frequency(cls);
    add_tone(out, len, f, 0.25 * gain, rng.uniform(0, 6.283));
    add_tone(out, len, 1.5 * f, 0.2 * gain, rng.uniform(0, 6.283));
    add_tone(out, len, color_frequency(r.color), 0.15 * gain, rng.uniform(0, 6.283));
    add_tone(out, len, place_frequency(r.place), 0.15 * gain, rng.uniform(0, 6.283));
    for (std::size_t i = 0; i < len; ++i) out[i] += static_cast<float>(rng.normal(0.0, 0.01));

    // One phrase, centred in a random subsegment of this segment.
    const auto words = split_words(scene_phrase(r.color, cls, r.place));
    std::vector<double> durs;
    double total = 0;
    for (std::size_t i = 0; i < words.size(); ++i) {
      durs.push_back(rng.uniform(0.15, 0.22));
      total += durs.back() + (i ? 0.03 : 0.0);
    }
    const std::size_t k = rng.below(signal::kSubsegments);
    const double center = double(s) * signal::kSegmentSeconds +
                          signal::hops_to_seconds(double(k * signal::kSubsegmentHops + signal::kSubsegmentHops / 2 + signal::kHeldOutHops / 2));
    double t = center - total / 2;
    for (std::size_t i = 0; i < words.size(); ++i) {
      Word w;
      w.text = words[i];
      w.true_start = t;
      w.true_end = t + durs[i];
      const double shift = std::clamp(rng.normal(spec.shift_mean, spec.shift_std), -kMaxShift, kMaxShift);
      w.start = w.true_start + shift;
      w.end = w.true_end + shift;
      r.words.push_back(std::move(w));
      t += durs[i] + 0.03;
    }
  }

  std::string web;
  for (std::size_t i = 0; i < spec.webtext_phrases; ++i) {
    if (i) web += ' ';
    web += scene_phrase(rng.below(kSceneValues), rng.below(spec.n_classes), rng.below(kSceneValues));
  }
  r.webtext = std::move(web);
  return r;
}

// Videos [first_id, first_id + count) of a spec, generated in parallel.
inline std::vector<Record> generate_range(const SyntheticSpec& spec, std::uint64_t first, std::size_t count,
                                          std::size_t threads = worker_count()) {
  std::vector<Record> out(count);
  parallel_for(count, [&](std::size_t i) { out[i] = generate_video(spec, first + i); }, threads);
  return out;
}

// Vocabulary learned from the synthetic lexicon.
inline text::Vocab synthetic_vocab(std::size_t max_merges = 400) {
  std::vector<std::string> lines;
  // Phrases are chained so that every word also occurs after a space.
  for (auto c : kColorWords)
    for (auto q : kPlaceWords) {
      std::string line;
      for (auto p : kClassPhrases) line += cat(line.empty() ? "" : " ", c, " ", p, " ", q);
      lines.push_back(line);
    }
  return text::Vocab::train(lines, max_merges);
}

// Container --------------------------------------------------------------------
//
// "MRSV1" | u16 version | u64 record count | records, each a u64 byte length
// followed by the payload. All integers little-endian.

inline constexpr std::string_view kContainerMagic = "MRSV1";
inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeader = 5 + 2 + 8;

namespace detail {

class Encoder {
 public:
  template <class T>
  void put(T v) {
    const auto at = buf_.size();
    buf_.resize(at + sizeof v);
    std::memcpy(&buf_[at], &v, sizeof v);
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto at = buf_.size();
    buf_.resize(at + n);
    if (n) std::memcpy(&buf_[at], p, n);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Decoder {
 public:
  Decoder(std::string_view buf, std::uint64_t base) : buf_(buf), base_(base) {}

  void take(void* dst, std::size_t n, const char* what) {
    if (n > buf_.size() - pos_) throw FormatError(cat("record ends inside ", what), base_ + buf_.size());
    if (n) std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get(const char* what) {
    T v;
    take(&v, sizeof v, what);
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    if (n > buf_.size() - pos_) throw FormatError(cat("record ends inside ", what), base_ + buf_.size());
    std::string s(buf_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  std::uint64_t offset() const { return base_ + pos_; }

 private:
  std::string_view buf_;
  std::uint64_t base_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_record(const Record& r) {
  detail::Encoder e;
  e.put<std::uint64_t>(r.id);
  e.put<std::uint32_t>(r.n_classes);
  e.put<std::uint32_t>(r.color);
  e.put<std::uint32_t>(r.place);
  e.put<std::uint32_t>(static_cast<std::uint32_t>(r.classes.size()));
  for (auto c : r.classes) e.put<std::uint32_t>(c);
  e.put<std::uint32_t>(static_cast<std::uint32_t>(r.frames.size()));
  for (auto& f : r.frames) {
    e.put<std::uint32_t>(static_cast<std::uint32_t>(f.height));
    e.put<std::uint32_t>(static_cast<std::uint32_t>(f.width));
    e.put_bytes(f.rgb.data(), f.rgb.size());
  }
  e.put<std::uint64_t>(r.waveform.size());
  e.put_bytes(r.waveform.data(), r.waveform.size() * sizeof(float));
  e.put<std::uint32_t>(static_cast<std::uint32_t>(r.words.size()));
  for (auto& w : r.words) {
    e.put_string(w.text);
    e.put<double>(w.start);
    e.put<double>(w.end);
    e.put<double>(w.true_start);
    e.put<double>(w.true_end);
  }
  e.put_string(r.webtext);
  return std::move(e.bytes());
}

inline Record decode_record(std::string_view payload, std::uint64_t base) {
  detail::Decoder d(payload, base);
  Record r;
  r.id = d.get<std::uint64_t>("id");
  r.n_classes = d.get<std::uint32_t>("class count");
  r.color = d.get<std::uint32_t>("scene");
  r.place = d.get<std::uint32_t>("scene");
  if (r.color >= kSceneValues || r.place >= kSceneValues) throw FormatError("scene value out of range", d.offset());
  const auto nc = d.get<std::uint32_t>("segment count");
  if (nc > payload.size()) throw FormatError("implausible segment count", d.offset());
  for (std::uint32_t i = 0; i < nc; ++i) r.classes.push_back(d.get<std::uint32_t>("classes"));
  const auto nf = d.get<std::uint32_t>("frame count");
  if (nf != nc) throw FormatError(cat("frame count ", nf, " != segment count ", nc), d.offset());
  for (std::uint32_t i = 0; i < nf; ++i) {
    const auto h = d.get<std::uint32_t>("frame height"), w = d.get<std::uint32_t>("frame width");
    if (std::uint64_t(h) * w * 3 > payload.size()) throw FormatError("implausible frame size", d.offset());
    Image im(h, w);
    d.take(im.rgb.data(), im.rgb.size(), "frame pixels");
    r.frames.push_back(std::move(im));
  }
  const auto ns = d.get<std::uint64_t>("sample count");
  if (ns > payload.size() / sizeof(float)) throw FormatError("record ends inside waveform", base + payload.size());
  r.waveform.resize(ns);
  d.take(r.waveform.data(), ns * sizeof(float), "waveform");
  const auto nw = d.get<std::uint32_t>("word count");
  if (nw > payload.size()) throw FormatError("implausible word count", d.offset());
  for (std::uint32_t i = 0; i < nw; ++i) {
    Word w;
    w.text = d.get_string("word");
    w.start = d.get<double>("word timing");
    w.end = d.get<double>("word timing");
    w.true_start = d.get<double>("word timing");
    w.true_end = d.get<double>("word timing");
    r.words.push_back(std::move(w));
  }
  r.webtext = d.get_string("web text");
  if (!d.done()) throw FormatError("trailing bytes in record", d.offset());
  return r;
}

// Appends records; the record count in the header is patched on close().
class ContainerWriter {
 public:
  explicit ContainerWriter(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw std::runtime_error("cannot write container: " + path);
    out_.write(kContainerMagic.data(), static_cast<std::streamsize>(kContainerMagic.size()));
    const std::uint16_t v = kContainerVersion;
    out_.write(reinterpret_cast<const char*>(&v), 2);
    const std::uint64_t zero = 0;
    out_.write(reinterpret_cast<const char*>(&zero), 8);
  }
  ~ContainerWriter() {
    if (out_.is_open()) {
      try {
        close();
      } catch (...) {
      }
    }
  }

  void write(const Record& r) {
    const auto payload = encode_record(r);
    const std::uint64_t n = payload.size();
    out_.write(reinterpret_cast<const char*>(&n), 8);
    out_.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out_) throw std::runtime_error("write failed: " + path_);
    ++count_;
  }

  void close() {
    out_.seekp(7);
    out_.write(reinterpret_cast<const char*>(&count_), 8);
    out_.close();
    if (out_.fail()) throw std::runtime_error("write failed: " + path_);
  }

  std::uint64_t count() const { return count_; }

 private:
  std::ofstream out_;
  std::string path_;
  std::uint64_t count_ = 0;
};

// Streaming reader: holds one record at a time.
class ContainerReader {
 public:
  explicit ContainerReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot read container: " + path);
    char magic[5] = {};
    in_.read(magic, 5);
    if (in_.gcount() != 5 || std::string_view(magic, 5) != kContainerMagic)
      throw FormatError("bad container magic (expected MRSV1)", 0);
    std::uint16_t v = 0;
    in_.read(reinterpret_cast<char*>(&v), 2);
    if (in_.gcount() != 2) throw FormatError("truncated container header", 5 + in_.gcount());
    if (v != kContainerVersion) throw FormatError(cat("unsupported container version ", v), 5);
    in_.read(reinterpret_cast<char*>(&count_), 8);
    if (in_.gcount() != 8) throw FormatError("truncated container header", 7 + in_.gcount());
    offset_ = kContainerHeader;
  }

  std::uint64_t count() const { return count_; }
  std::uint64_t index() const { return index_; }

  // Next record, or nullopt after the last one.
  std::optional<Record> next() {
    if (index_ == count_) return std::nullopt;
    std::uint64_t n = 0;
    in_.read(reinterpret_cast<char*>(&n), 8);
    if (in_.gcount() != 8)
      throw FormatError(cat("truncated length of record ", index_, " of ", count_), offset_ + in_.gcount());
    offset_ += 8;
    if (n > (1ull << 34)) throw FormatError(cat("implausible record length ", n), offset_ - 8);
    buf_.resize(n);
    in_.read(buf_.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in_.gcount()) != n)
      throw FormatError(cat("truncated record ", index_, " (", in_.gcount(), " of ", n, " bytes)"),
                        offset_ + in_.gcount());
    auto r = decode_record(buf_, offset_);
    offset_ += n;
    ++index_;
    return r;
  }

 private:
  std::ifstream in_;
  std::uint64_t count_ = 0, index_ = 0, offset_ = 0;
  std::string buf_;
};

inline void write_container(const std::string& path, const std::vector<Record>& records) {
  ContainerWriter w(path);
  for (auto& r : records) w.write(r);
  w.close();
}

inline std::vector<Record> read_container(const std::string& path) {
  ContainerReader r(path);
  std::vector<Record> out;
  while (auto rec = r.next()) out.push_back(std::move(*rec));
  return out;
}

// Generates and writes a whole corpus in chunks so memory stays bounded.
inline void generate_corpus(const SyntheticSpec& spec, const std::string& path, std::size_t chunk = 32) {
  spec.validate();
  ContainerWriter w(path);
  for (std::size_t i = 0; i < spec.n_videos; i += chunk) {
    const auto n = std::min(chunk, spec.n_videos - i);
    for (auto& r : generate_range(spec, spec.first_id + i, n)) w.write(r);
  }
  w.close();
}

}  // namespace mrsv::corpus
