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

// Model, pipeline and trainer settings. Two built-in profiles: "paper" (full
// size, used for shape checks) and "tiny" (desk-scale training). A config file
// is plain `key = value` lines; `#` starts a comment.

#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mrsv/common.hpp"

namespace mrsv {

inline constexpr std::size_t kImagePatch = 16;
inline constexpr std::size_t kVisionPool = 2;  // per side
inline constexpr std::size_t kAudioPatchHops = 2;
inline constexpr std::size_t kAudioPool = 5;
inline constexpr std::size_t kAudioHops = 60;
inline constexpr std::size_t kAudioPatches = kAudioHops / kAudioPatchHops;    // 30
inline constexpr std::size_t kAudioTokensPerSubsegment = kAudioPatches / kAudioPool;  // 6
inline constexpr std::size_t kSubsegmentsPerSegment = 3;

struct Config {
  std::string profile = "tiny";

  // model
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t rotary_dims = 8;
  std::size_t vit_layers = 2;
  std::size_t audio_layers = 2;
  std::size_t span_layers = 2;
  std::size_t joint_layers = 2;
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  std::size_t segments_per_group = 2;
  std::size_t speech_slots = 20;
  std::size_t max_span = 15;
  std::size_t vocab_size = 0;  // taken from the vocabulary when 0

  // pipeline
  std::size_t max_segments = 4;
  std::size_t merge_threshold = 2;
  double merge_prob = 0.9;
  double mask_rate = 0.25;
  double adjacent_text_prob = 0.8;
  double donation_window = 0.125;
  std::size_t webtext_len = 64;
  std::size_t webtext_spans = 3;
  std::size_t text_select = 5;

  // trainer
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t warmup = 100;
  double peak_lr = 1e-3;
  double weight_decay = 0.1;
  std::size_t checkpoint_every = 500;
  std::size_t eval_videos = 16;
  std::string objective = "contrastive";  // contrastive | masklm | virtex

  static Config tiny() { return Config{}; }

  static Config paper() {
    Config c;
    c.profile = "paper";
    c.hidden = 768;
    c.heads = 12;
    c.head_dim = 64;
    c.rotary_dims = 32;
    c.vit_layers = 12;
    c.audio_layers = 12;
    c.span_layers = 4;
    c.joint_layers = 12;
    c.image_h = 192;
    c.image_w = 320;
    c.segments_per_group = 8;
    c.max_segments = 16;
    c.merge_threshold = 8;
    c.webtext_len = 800;
    c.webtext_spans = 38;
    c.text_select = 48;
    c.batch = 1024;
    c.warmup = 3750;
    c.steps = 750000;  // 10 epochs of 75k steps
    c.peak_lr = 4e-4;
    return c;
  }

  static Config profile_named(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "paper" || name == "paper-shapes") return paper();
    throw std::invalid_argument("unknown profile: " + name);
  }

  std::size_t vision_slots() const { return (image_h / (kImagePatch * kVisionPool)) * (image_w / (kImagePatch * kVisionPool)); }
  std::size_t patch_rows() const { return image_h / kImagePatch; }
  std::size_t patch_cols() const { return image_w / kImagePatch; }
  std::size_t segment_slots() const { return speech_slots + vision_slots(); }
  std::size_t group_length() const { return segments_per_group * segment_slots(); }
  std::size_t subsegments_per_video() const { return max_segments * kSubsegmentsPerSegment; }

  void validate() const {
    if (hidden != heads * head_dim)
      throw std::invalid_argument(cat("config: hidden ", hidden, " != heads*head_dim ", heads * head_dim));
    if (rotary_dims > head_dim || rotary_dims % 8 != 0)
      throw std::invalid_argument(cat("config: rotary_dims ", rotary_dims, " must be a multiple of 8 and <= head_dim"));
    if (image_h % 32 != 0 || image_w % 32 != 0 || image_h == 0 || image_w == 0)
      throw std::invalid_argument(cat("config: image ", image_h, "x", image_w, " not divisible by 32"));
    if (segments_per_group == 0 || max_segments == 0 || speech_slots < 2)
      throw std::invalid_argument("config: empty segment layout");
    if (max_span == 0 || max_span > 15) throw std::invalid_argument("config: max_span must be in 1..15");
    if (!(mask_rate > 0 && mask_rate <= 0.5)) throw std::invalid_argument("config: mask_rate must be in (0, 0.5]");
    if (warmup >= steps) throw std::invalid_argument(cat("config: warmup ", warmup, " >= steps ", steps));
    if (objective != "contrastive" && objective != "masklm" && objective != "virtex")
      throw std::invalid_argument("config: unknown objective " + objective);
    if (batch == 0) throw std::invalid_argument("config: batch must be positive");
  }

  // Applies one `key = value` setting.
  void set(const std::string& key, const std::string& value) {
    auto fields = table();
    auto it = fields.find(key);
    if (it == fields.end()) throw std::invalid_argument("config: unknown key " + key);
    std::istringstream in(value);
    bool ok = std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            *p = value;
            return !value.empty();
          } else {
            T v{};
            in >> v;
            if (!in || !(in >> std::ws).eof()) return false;
            *p = v;
            return true;
          }
        },
        it->second);
    if (!ok) throw std::invalid_argument(cat("config: bad value for ", key, ": '", value, "'"));
  }

  // A `profile = name` line resets every setting to that profile's defaults
  // unless apply_profile is false, in which case it is ignored.
  void load_file(const std::string& path, bool apply_profile = true) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config: " + path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument(cat(path, ":", n, ": expected key = value"));
      const auto key = trim(line.substr(0, eq));
      if (key == "profile") {
        if (apply_profile) *this = profile_named(trim(line.substr(eq + 1)));
        continue;
      }
      set(key, trim(line.substr(eq + 1)));
    }
  }

  std::string serialize() const {
    std::ostringstream out;
    out << "profile = " << profile << '\n';
    for (auto& [k, v] : const_cast<Config*>(this)->table())
      std::visit(
          [&](auto* p) {
            out << k << " = ";
            if constexpr (std::is_same_v<decltype(p), double*>) {
              char buf[32];
              out << std::string_view(buf, std::to_chars(buf, buf + sizeof buf, *p).ptr - buf);
            } else {
              out << *p;
            }
            out << '\n';
          },
          v);
    return out.str();
  }

  static Config parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) continue;
      const auto key = line.substr(0, eq), value = line.substr(eq + 3);
      if (key == "profile")
        c.profile = value;
      else
        c.set(key, value);
    }
    return c;
  }

  bool operator==(const Config& o) const { return serialize() == o.serialize(); }

 private:
  using Field = std::variant<std::size_t*, double*, std::string*>;
  std::map<std::string, Field> table() {
    return {{"hidden", &hidden},
            {"heads", &heads},
            {"head_dim", &head_dim},
            {"rotary_dims", &rotary_dims},
            {"vit_layers", &vit_layers},
            {"audio_layers", &audio_layers},
            {"span_layers", &span_layers},
            {"joint_layers", &joint_layers},
            {"image_h", &image_h},
            {"image_w", &image_w},
            {"segments_per_group", &segments_per_group},
            {"speech_slots", &speech_slots},
            {"max_span", &max_span},
            {"vocab_size", &vocab_size},
            {"max_segments", &max_segments},
            {"merge_threshold", &merge_threshold},
            {"merge_prob", &merge_prob},
            {"mask_rate", &mask_rate},
            {"adjacent_text_prob", &adjacent_text_prob},
            {"donation_window", &donation_window},
            {"webtext_len", &webtext_len},
            {"webtext_spans", &webtext_spans},
            {"text_select", &text_select},
            {"steps", &steps},
            {"batch", &batch},
            {"warmup", &warmup},
            {"peak_lr", &peak_lr},
            {"weight_decay", &weight_decay},
            {"checkpoint_every", &checkpoint_every},
            {"eval_videos", &eval_videos},
            {"objective", &objective}};
  }
};

}  // namespace mrsv
