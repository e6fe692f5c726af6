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

// The four encoders (frame, audio, text span, joint) plus checkpoint files.
// Everything is recorded on a caller-owned Tape so the same code serves
// training, evaluation and gradient checks.

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mrsv/config.hpp"
#include "mrsv/media.hpp"
#include "mrsv/numerics.hpp"
#include "mrsv/signal.hpp"
#include "mrsv/text.hpp"

namespace mrsv {

// Joint-encoder slots --------------------------------------------------------

enum class SlotKind : std::uint8_t { Text, Audio, Vision, Mask, AudioMask, Frame, Pad };

inline const char* slot_kind_name(SlotKind k) {
  switch (k) {
    case SlotKind::Text: return "text";
    case SlotKind::Audio: return "audio";
    case SlotKind::Vision: return "vision";
    case SlotKind::Mask: return "mask";
    case SlotKind::AudioMask: return "audiomask";
    case SlotKind::Frame: return "frame";
    case SlotKind::Pad: return "pad";
  }
  return "?";
}

struct Slot {
  SlotKind kind = SlotKind::Pad;
  int token = text::kPad;  // Text slots
  int ref = -1;            // Audio: row of the pooled audio tokens; Vision: row of the pooled frame tokens
  int segment = 0;         // segment index within the sequence
  std::int64_t source = -1;  // provenance of a Text slot's token (bookkeeping only)
};

struct JointSequence {
  std::vector<Slot> slots;
  std::vector<Coord4> coords;
};

// Coordinates ---------------------------------------------------------------

inline double unit_position(std::size_t i, std::size_t n) { return n > 1 ? double(i) / double(n - 1) : 0.0; }

// Frame encoder: CLS at the origin, then the patch grid row by row with
// (h, w) spread over [-1/2, 1/2].
inline std::vector<Coord4> frame_coords(std::size_t rows, std::size_t cols) {
  std::vector<Coord4> c{{0, 0, 0, 0}};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) c.push_back({unit_position(r, rows) - 0.5, unit_position(q, cols) - 0.5, 0, 0});
  return c;
}

// Audio and span encoders: CLS at l = 0, then positions 0..n-1 over [0, 1]
// of a fixed-size layout (so relative offsets do not depend on span length).
inline std::vector<Coord4> sequence_coords(std::size_t n, std::size_t layout) {
  std::vector<Coord4> c{{0, 0, 0, 0}};
  for (std::size_t i = 0; i < n; ++i) c.push_back({0, 0, unit_position(i, layout), 0});
  return c;
}

// Joint encoder: speech slots (0, 0, l, t) with l the absolute position in the
// sequence; vision slots (h, w, 0, t) on the pooled grid.
inline std::vector<Coord4> joint_coords(const std::vector<Slot>& slots, std::size_t segments, std::size_t grid_rows,
                                        std::size_t grid_cols) {
  std::vector<Coord4> c;
  c.reserve(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& s = slots[i];
    const double t = unit_position(static_cast<std::size_t>(s.segment), segments);
    if (s.kind == SlotKind::Vision) {
      const std::size_t cell = static_cast<std::size_t>(s.ref) % (grid_rows * grid_cols);
      c.push_back({unit_position(cell / grid_cols, grid_rows) - 0.5, unit_position(cell % grid_cols, grid_cols) - 0.5, 0, t});
    } else {
      c.push_back({0, 0, unit_position(i, slots.size()), t});
    }
  }
  return c;
}

// Model ------------------------------------------------------------------------

enum class Head { Text, Audio, Frame };

template <class Real>
class Model {
 public:
  Config cfg;
  ParamStore<Real> params;

  Model(const Config& config, std::uint64_t seed) : cfg(config) {
    cfg.validate();
    if (cfg.vocab_size <= static_cast<std::size_t>(text::kFirstMerge) - 1)
      throw std::invalid_argument(cat("model: vocab_size ", cfg.vocab_size, " smaller than the byte alphabet"));
    Rng rng(derive_seed(seed, hash_string("init")));
    const std::size_t d = cfg.hidden;
    weight("embed.tokens", {cfg.vocab_size, d}, rng);

    weight("frame.patch.w", {kImagePatch * kImagePatch * 3, d}, rng);
    bias("frame.patch.b", d);
    weight("frame.cls", {1, d}, rng);
    stack("frame", cfg.vit_layers, rng);
    pool("frame.pool", rng);

    weight("audio.patch.w", {signal::kMels * kAudioPatchHops, d}, rng);
    bias("audio.patch.b", d);
    weight("audio.cls", {1, d}, rng);
    stack("audio", cfg.audio_layers, rng);
    pool("audio.pool", rng);

    stack("span", cfg.span_layers, rng);

    stack("joint", cfg.joint_layers, rng);
    for (auto h : {"text", "audio", "frame"}) {
      weight(cat("joint.head_", h, ".w"), {d, d}, rng);
      bias(cat("joint.head_", h, ".b"), d);
    }
    for (auto h : {"text", "audio", "frame"}) {
      auto& p = params.add(cat("loss.log_sigma_", h), {1}, false);
      p.value.data[0] = static_cast<Real>(std::log(10.0));
    }

    if (cfg.objective == "masklm") {
      weight("masklm.pos", {cfg.max_span, d}, rng);
      weight("masklm.w1", {2 * d, d}, rng);
      bias("masklm.b1", d);
      weight("masklm.w2", {d, d}, rng);
      bias("masklm.b2", d);
      bias("masklm.out_b", cfg.vocab_size);
    } else if (cfg.objective == "virtex") {
      weight("virtex.ctx.w", {d, d}, rng);
      bias("virtex.ctx.b", d);
      stack("virtex", cfg.span_layers, rng);
      bias("virtex.out_b", cfg.vocab_size);
    }
  }

  Parameter<Real>& p(const std::string& name) { return params.get(name); }
  Var<Real> P(Tape<Real>& tape, const std::string& name) { return tape.param(params.get(name)); }

  RotarySpec rotary() const { return {cfg.heads, cfg.head_dim, cfg.rotary_dims}; }

  // Pre-LN transformer stack followed by a final layer norm.
  Var<Real> transformer(Tape<Real>& tape, const std::string& prefix, std::size_t layers, Var<Real> x,
                        const SequencePacking& packing, const std::vector<Coord4>& coords,
                        const std::vector<std::uint8_t>& key_valid = {}, bool causal = false) {
    const auto rot = rotary();
    AttentionOptions opt{cfg.heads, causal, key_valid};
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string b = cat(prefix, ".l", l, ".");
      auto h = layernorm(x, P(tape, b + "ln1.g"), P(tape, b + "ln1.b"));
      auto q = apply_rotary(linear(h, P(tape, b + "wq"), P(tape, b + "bq")), coords, rot);
      auto k = apply_rotary(matmul(h, P(tape, b + "wk")), coords, rot);
      auto v = linear(h, P(tape, b + "wv"), P(tape, b + "bv"));
      x = add(x, linear(attention(q, k, v, packing, opt), P(tape, b + "wo"), P(tape, b + "bo")));
      h = layernorm(x, P(tape, b + "ln2.g"), P(tape, b + "ln2.b"));
      h = gelu(linear(h, P(tape, b + "w1"), P(tape, b + "b1")));
      x = add(x, linear(h, P(tape, b + "w2"), P(tape, b + "b2")));
    }
    return layernorm(x, P(tape, prefix + ".ln_f.g"), P(tape, prefix + ".ln_f.b"));
  }

  struct EncoderOut {
    Var<Real> cls;     // [n, d]
    Var<Real> pooled;  // [n * tokens_per_item, d]
    Var<Real> hidden;  // [n * sequence_length, d] before pooling
  };

  // Frames: 16x16 patches + CLS -> ViT -> CLS and a 2x2 attention-pooled grid.
  EncoderOut encode_frames(Tape<Real>& tape, const std::vector<const Image*>& images) {
    const std::size_t R = cfg.patch_rows(), C = cfg.patch_cols(), np = R * C, seq = np + 1;
    const std::size_t pdim = kImagePatch * kImagePatch * 3, n = images.size();
    if (n == 0) throw ShapeError("encode_frames: no images");
    Tensor<Real> patches({n * np, pdim});
    for (std::size_t i = 0; i < n; ++i) {
      const Image& im = *images[i];
      if (im.height != cfg.image_h || im.width != cfg.image_w || im.rgb.size() != im.height * im.width * 3)
        throw ShapeError(cat("encode_frames: image ", im.height, "x", im.width, " vs configured ", cfg.image_h, "x",
                             cfg.image_w));
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          Real* dst = &patches.data[((i * np) + r * C + c) * pdim];
          for (std::size_t y = 0; y < kImagePatch; ++y)
            for (std::size_t x = 0; x < kImagePatch; ++x)
              for (std::size_t ch = 0; ch < 3; ++ch)
                *dst++ = (Real(im.at(r * kImagePatch + y, c * kImagePatch + x, ch)) / Real(255) - Real(0.5)) * Real(4);
        }
    }
    auto emb = linear(tape.constant(std::move(patches)), P(tape, "frame.patch.w"), P(tape, "frame.patch.b"));
    const auto coords1 = frame_coords(R, C);
    std::vector<Coord4> coords;
    std::vector<std::size_t> order;  // interleave CLS before each image's patches
    auto cls = P(tape, "frame.cls");
    std::vector<Var<Real>> parts{emb, cls};
    for (std::size_t i = 0; i < n; ++i) {
      order.push_back(n * np);
      for (std::size_t j = 0; j < np; ++j) order.push_back(i * np + j);
      coords.insert(coords.end(), coords1.begin(), coords1.end());
    }
    auto x = gather_rows(concat_rows(parts), order);
    SequencePacking pack;
    for (std::size_t i = 0; i < n; ++i) pack.add(seq);
    auto hid = transformer(tape, "frame", cfg.vit_layers, x, pack, coords);

    std::vector<std::size_t> cls_rows;
    std::vector<std::vector<std::size_t>> windows;
    for (std::size_t i = 0; i < n; ++i) {
      cls_rows.push_back(i * seq);
      for (std::size_t r = 0; r < R; r += kVisionPool)
        for (std::size_t c = 0; c < C; c += kVisionPool) {
          std::vector<std::size_t> w;
          for (std::size_t dr = 0; dr < kVisionPool; ++dr)
            for (std::size_t dc = 0; dc < kVisionPool; ++dc) w.push_back(i * seq + 1 + (r + dr) * C + (c + dc));
          windows.push_back(std::move(w));
        }
    }
    return {gather_rows(hid, cls_rows), attention_pool(tape, "frame.pool", hid, windows), hid};
  }

  // Audio subsegments: 64x60 log-mel crops (mel-major), 64x2 patches + CLS ->
  // transformer -> CLS and the 30 patch outputs pooled by 5 into 6 tokens.
  EncoderOut encode_audio(Tape<Real>& tape, const std::vector<std::span<const float>>& crops) {
    const std::size_t n = crops.size(), pdim = signal::kMels * kAudioPatchHops, seq = kAudioPatches + 1;
    if (n == 0) throw ShapeError("encode_audio: no crops");
    Tensor<Real> patches({n * kAudioPatches, pdim});
    for (std::size_t i = 0; i < n; ++i) {
      if (crops[i].size() != signal::kMels * kAudioHops)
        throw ShapeError(cat("encode_audio: crop has ", crops[i].size(), " values, expected 64x60 = ",
                             signal::kMels * kAudioHops));
      for (std::size_t q = 0; q < kAudioPatches; ++q) {
        Real* dst = &patches.data[(i * kAudioPatches + q) * pdim];
        for (std::size_t m = 0; m < signal::kMels; ++m)
          for (std::size_t j = 0; j < kAudioPatchHops; ++j)
            *dst++ = (Real(crops[i][m * kAudioHops + q * kAudioPatchHops + j]) - Real(kAudioCenter)) / Real(kAudioScale);
      }
    }
    auto emb = linear(tape.constant(std::move(patches)), P(tape, "audio.patch.w"), P(tape, "audio.patch.b"));
    const auto coords1 = sequence_coords(kAudioPatches, kAudioPatches);
    std::vector<Coord4> coords;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
      order.push_back(n * kAudioPatches);
      for (std::size_t j = 0; j < kAudioPatches; ++j) order.push_back(i * kAudioPatches + j);
      coords.insert(coords.end(), coords1.begin(), coords1.end());
    }
    auto x = gather_rows(concat_rows<Real>({emb, P(tape, "audio.cls")}), order);
    SequencePacking pack;
    for (std::size_t i = 0; i < n; ++i) pack.add(seq);
    auto hid = transformer(tape, "audio", cfg.audio_layers, x, pack, coords);
    std::vector<std::size_t> cls_rows;
    std::vector<std::vector<std::size_t>> windows;
    for (std::size_t i = 0; i < n; ++i) {
      cls_rows.push_back(i * seq);
      for (std::size_t w = 0; w < kAudioTokensPerSubsegment; ++w) {
        std::vector<std::size_t> win;
        for (std::size_t j = 0; j < kAudioPool; ++j) win.push_back(i * seq + 1 + w * kAudioPool + j);
        windows.push_back(std::move(win));
      }
    }
    return {gather_rows(hid, cls_rows), attention_pool(tape, "audio.pool", hid, windows), hid};
  }

  // Text spans of 1..max_span tokens: CLS + shared token embeddings -> span
  // transformer -> CLS hidden state. Returns [n, d].
  Var<Real> encode_spans(Tape<Real>& tape, const std::vector<std::vector<int>>& spans) {
    if (spans.empty()) throw ShapeError("encode_spans: no spans");
    std::vector<int> ids;
    std::vector<Coord4> coords;
    std::vector<std::size_t> cls_rows;
    SequencePacking pack;
    for (auto& s : spans) {
      if (s.empty() || s.size() > cfg.max_span)
        throw ShapeError(cat("encode_spans: span of ", s.size(), " tokens, expected 1..", cfg.max_span));
      cls_rows.push_back(ids.size());
      ids.push_back(text::kCls);
      for (int t : s) ids.push_back(check_token(t));
      // CLS at l = 0, token j at l = (j + 1) / max_span
      coords.push_back({0, 0, 0, 0});
      for (std::size_t j = 0; j < s.size(); ++j) coords.push_back({0, 0, unit_position(j + 1, cfg.max_span + 1), 0});
      pack.add(s.size() + 1);
    }
    auto x = embedding(P(tape, "embed.tokens"), ids);
    auto hid = transformer(tape, "span", cfg.span_layers, x, pack, coords);
    return gather_rows(hid, cls_rows);
  }

  struct JointOut {
    Var<Real> hidden;
    SequencePacking packing;
  };

  // Encodes each sequence independently. `audio` / `vision` hold the pooled
  // tokens that Audio / Vision slots refer to by row (either may be empty when
  // no slot needs it).
  JointOut joint_encode(Tape<Real>& tape, const std::vector<JointSequence>& seqs, Var<Real> audio = {},
                        Var<Real> vision = {}) {
    if (seqs.empty()) throw ShapeError("joint_encode: no sequences");
    const std::size_t na = audio.tape ? audio.rows() : 0, nv = vision.tape ? vision.rows() : 0;
    std::vector<int> ids;
    std::vector<std::size_t> order;
    std::vector<std::uint8_t> valid;
    std::vector<Coord4> coords;
    std::vector<std::size_t> pending_audio, pending_vision;  // positions in `order` to offset later
    SequencePacking pack;
    for (auto& s : seqs) {
      if (s.slots.empty()) throw ShapeError("joint_encode: empty sequence");
      if (s.coords.size() != s.slots.size())
        throw ShapeError(cat("joint_encode: ", s.coords.size(), " coordinates for ", s.slots.size(), " slots"));
      for (auto& sl : s.slots) {
        switch (sl.kind) {
          case SlotKind::Text:
            if (text::Vocab::is_reserved(sl.token) || sl.ref != -1)
              throw ShapeError(cat("joint_encode: malformed text slot (token ", sl.token, ", ref ", sl.ref, ")"));
            order.push_back(ids.size());
            ids.push_back(check_token(sl.token));
            break;
          case SlotKind::Audio:
            if (sl.ref < 0 || static_cast<std::size_t>(sl.ref) >= na)
              throw ShapeError(cat("joint_encode: audio slot refers to row ", sl.ref, " of ", na));
            pending_audio.push_back(order.size());
            order.push_back(static_cast<std::size_t>(sl.ref));
            break;
          case SlotKind::Vision:
            if (sl.ref < 0 || static_cast<std::size_t>(sl.ref) >= nv)
              throw ShapeError(cat("joint_encode: vision slot refers to row ", sl.ref, " of ", nv));
            pending_vision.push_back(order.size());
            order.push_back(static_cast<std::size_t>(sl.ref));
            break;
          default:
            order.push_back(ids.size());
            ids.push_back(marker_token(sl.kind));
        }
        valid.push_back(sl.kind != SlotKind::Pad);
      }
      coords.insert(coords.end(), s.coords.begin(), s.coords.end());
      pack.add(s.slots.size());
    }
    std::vector<Var<Real>> parts{embedding(P(tape, "embed.tokens"), ids)};
    if (!pending_audio.empty()) parts.push_back(audio);
    if (!pending_vision.empty()) parts.push_back(vision);
    for (auto i : pending_audio) order[i] += ids.size();
    for (auto i : pending_vision) order[i] += ids.size() + (pending_audio.empty() ? 0 : na);
    auto x = gather_rows(parts.size() == 1 ? parts[0] : concat_rows(parts), order);
    return {transformer(tape, "joint", cfg.joint_layers, x, pack, coords, valid), pack};
  }

  // Linear projection of selected joint hidden rows through a head.
  Var<Real> predict(Tape<Real>& tape, const JointOut& out, const std::vector<std::size_t>& rows, Head head) {
    const char* h = head == Head::Text ? "text" : head == Head::Audio ? "audio" : "frame";
    return linear(gather_rows(out.hidden, rows), P(tape, cat("joint.head_", h, ".w")), P(tape, cat("joint.head_", h, ".b")));
  }

  Var<Real> log_sigma(Tape<Real>& tape, Head head) {
    return P(tape, head == Head::Text ? "loss.log_sigma_text" : head == Head::Audio ? "loss.log_sigma_audio"
                                                                                     : "loss.log_sigma_frame");
  }

  // Log-mel normalization applied before the audio patch embedding.
  static constexpr double kAudioCenter = 0.5;
  static constexpr double kAudioScale = 3.0;

 private:
  int check_token(int t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
      throw ShapeError(cat("token id ", t, " outside vocabulary of ", cfg.vocab_size));
    return t;
  }

  static int marker_token(SlotKind k) {
    switch (k) {
      case SlotKind::Mask: return text::kMask;
      case SlotKind::AudioMask: return text::kAudioMask;
      case SlotKind::Frame: return text::kFrame;
      default: return text::kPad;
    }
  }

  Var<Real> attention_pool(Tape<Real>& tape, const std::string& prefix, Var<Real> hid,
                           const std::vector<std::vector<std::size_t>>& windows) {
    auto keys = matmul(hid, P(tape, prefix + ".wk"));
    auto values = linear(hid, P(tape, prefix + ".wv"), P(tape, prefix + ".bv"));
    return window_attention(hid, keys, values, windows);
  }

  void weight(const std::string& name, std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    auto& p = params.add(name, std::move(shape), true);
    for (auto& v : p.value.data) v = static_cast<Real>(rng.truncated_normal(0.02) * scale);
  }
  void bias(const std::string& name, std::size_t n) { params.add(name, {n}, false); }
  void gain(const std::string& name, std::size_t n) {
    auto& p = params.add(name, {n}, false);
    std::fill(p.value.data.begin(), p.value.data.end(), Real(1));
  }

  void stack(const std::string& prefix, std::size_t layers, Rng& rng) {
    const std::size_t d = cfg.hidden;
    const double out_scale = 1.0 / std::sqrt(2.0 * double(std::max<std::size_t>(layers, 1)));
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string b = cat(prefix, ".l", l, ".");
      gain(b + "ln1.g", d);
      bias(b + "ln1.b", d);
      // no key bias: softmax ignores it outside the rotary dimensions
      for (auto w : {"q", "k", "v"}) {
        weight(b + "w" + w, {d, d}, rng);
        if (*w != 'k') bias(b + "b" + w, d);
      }
      weight(b + "wo", {d, d}, rng, out_scale);
      bias(b + "bo", d);
      gain(b + "ln2.g", d);
      bias(b + "ln2.b", d);
      weight(b + "w1", {d, 4 * d}, rng);
      bias(b + "b1", 4 * d);
      weight(b + "w2", {4 * d, d}, rng, out_scale);
      bias(b + "b2", d);
    }
    gain(prefix + ".ln_f.g", d);
    bias(prefix + ".ln_f.b", d);
  }

  void pool(const std::string& prefix, Rng& rng) {
    weight(prefix + ".wk", {cfg.hidden, cfg.hidden}, rng);
    weight(prefix + ".wv", {cfg.hidden, cfg.hidden}, rng);
    bias(prefix + ".bv", cfg.hidden);
  }
};

// Checkpoints ------------------------------------------------------------------
//
// "MRSV-CKPT" | u16 version | u64 config length | config text | u64 tensor count
// | tensors | optional optimizer section.
// Tensor: u32 name length | name | u8 dtype (1 = f32, 2 = f64) | u32 rank |
// u64 dims... | little-endian data.
// Optimizer section: "ADAMW" | u64 step | u64 tensor count | tensors.

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr std::string_view kCheckpointMagic = "MRSV-CKPT";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<double> value;
};

struct Checkpoint {
  Config config;
  std::vector<NamedTensor> tensors;
  bool has_optimizer = false;
  std::uint64_t step = 0;
  std::vector<NamedTensor> optimizer;

  const NamedTensor* find(const std::string& name) const {
    for (auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class Real>
void put_tensor(std::ostream& out, const std::string& name, const Tensor<Real>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(out, sizeof(Real) == 4 ? 1 : 2);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto s : t.shape) put<std::uint64_t>(out, s);
  out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(Real)));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(cat("truncated ", what), offset_ + in_.gcount());
    offset_ += n;
  }
  template <class T>
  T get(const char* what) {
    T v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::string str(std::size_t n, const char* what, std::size_t limit = 1u << 26) {
    if (n > limit) throw FormatError(cat(what, " length ", n, " is implausible"), offset_);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  std::uint64_t offset() const { return offset_; }

  NamedTensor tensor() {
    NamedTensor t;
    const auto at = offset_;
    t.name = str(get<std::uint32_t>("tensor name length"), "tensor name", 4096);
    const auto dtype = get<std::uint8_t>("dtype");
    if (dtype != 1 && dtype != 2) throw FormatError(cat("unknown dtype tag ", int(dtype), " for ", t.name), offset_ - 1);
    const auto rank = get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError(cat("rank ", rank, " too large for ", t.name), at);
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(get<std::uint64_t>("dimension"));
      n *= shape.back();
      if (n > (1ull << 32)) throw FormatError(cat("tensor ", t.name, " too large"), offset_);
    }
    t.value = Tensor<double>(shape);
    if (dtype == 1) {
      std::vector<float> buf(n);
      bytes(buf.data(), n * 4, "tensor data");
      for (std::size_t i = 0; i < n; ++i) t.value.data[i] = buf[i];
    } else {
      bytes(t.value.data.data(), n * 8, "tensor data");
    }
    return t;
  }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace detail

// Writes to `path` via a temporary file renamed into place, so an interrupted
// write never leaves a half-written checkpoint under the final name.
template <class Real>
void save_checkpoint(const std::string& path, const Config& config, const ParamStore<Real>& params,
                     const std::vector<std::pair<std::string, const Tensor<Real>*>>* optimizer = nullptr,
                     std::uint64_t step = 0) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp);
    out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
    detail::put<std::uint16_t>(out, kCheckpointVersion);
    const auto text = config.serialize();
    detail::put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::put<std::uint64_t>(out, params.size());
    for (std::size_t i = 0; i < params.size(); ++i) detail::put_tensor(out, params[i].name, params[i].value);
    if (optimizer) {
      out.write("ADAMW", 5);
      detail::put<std::uint64_t>(out, step);
      detail::put<std::uint64_t>(out, optimizer->size());
      for (auto& [name, t] : *optimizer) detail::put_tensor(out, name, *t);
    }
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  detail::Reader r(in);
  Checkpoint ck;
  if (r.str(kCheckpointMagic.size(), "magic") != kCheckpointMagic) throw FormatError("bad checkpoint magic", 0);
  if (auto v = r.get<std::uint16_t>("version"); v != kCheckpointVersion)
    throw FormatError(cat("unsupported checkpoint version ", v), r.offset() - 2);
  ck.config = Config::parse(r.str(r.get<std::uint64_t>("config length"), "config"));
  const auto n = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < n; ++i) ck.tensors.push_back(r.tensor());
  if (in.peek() == std::char_traits<char>::eof()) return ck;
  if (r.str(5, "optimizer section tag") != "ADAMW") throw FormatError("bad optimizer section tag", r.offset() - 5);
  ck.has_optimizer = true;
  ck.step = r.get<std::uint64_t>("step");
  const auto m = r.get<std::uint64_t>("optimizer tensor count");
  for (std::uint64_t i = 0; i < m; ++i) ck.optimizer.push_back(r.tensor());
  return ck;
}

// Copies checkpoint tensors into a model's parameters; names and shapes must
// match exactly.
template <class Real>
void load_parameters(ParamStore<Real>& params, const Checkpoint& ck) {
  if (ck.tensors.size() != params.size())
    throw std::runtime_error(cat("checkpoint has ", ck.tensors.size(), " tensors, model has ", params.size()));
  for (auto& t : ck.tensors) {
    auto& p = params.get(t.name);
    if (p.value.shape != t.value.shape)
      throw ShapeError(cat("checkpoint tensor ", t.name, " has shape ", shape_str(t.value.shape), ", model expects ",
                           shape_str(p.value.shape)));
    for (std::size_t i = 0; i < t.value.size(); ++i) p.value.data[i] = static_cast<Real>(t.value.data[i]);
  }
}

}  // namespace mrsv
