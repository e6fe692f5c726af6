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

// Byte-level BPE tokenizer over a small learned vocabulary, plus the span
// length sampler used to cut web text into subsegment-like pieces.

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mrsv/common.hpp"

namespace mrsv::text {

enum Reserved : int { kPad = 0, kMask = 1, kAudioMask = 2, kCls = 3, kFrame = 4 };
inline constexpr int kReservedCount = 5;
inline constexpr int kByteBase = kReservedCount;  // id of byte 0
inline constexpr int kFirstMerge = kByteBase + 256;
inline constexpr std::size_t kMaxSpan = 15;
inline constexpr std::array<std::string_view, kReservedCount> kReservedNames = {"<pad>", "<mask>", "<audiomask>",
                                                                                "<cls>", "<frame>"};

// Printable stand-in for every byte so that vocab lines never contain
// whitespace or control characters.
inline const std::array<char32_t, 256>& byte_to_codepoint() {
  static const std::array<char32_t, 256> table = [] {
    std::array<char32_t, 256> t{};
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      const bool printable = (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
      t[b] = printable ? static_cast<char32_t>(b) : next++;
    }
    return t;
  }();
  return table;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

inline std::string encode_token_line(std::string_view raw) {
  std::string out;
  for (unsigned char b : raw) append_utf8(out, byte_to_codepoint()[b]);
  return out;
}

inline std::string decode_token_line(std::string_view line, std::uint64_t offset) {
  static const std::map<char32_t, unsigned char> inverse = [] {
    std::map<char32_t, unsigned char> m;
    for (int b = 0; b < 256; ++b) m[byte_to_codepoint()[b]] = static_cast<unsigned char>(b);
    return m;
  }();
  std::string raw;
  for (std::size_t i = 0; i < line.size();) {
    const auto c = static_cast<unsigned char>(line[i]);
    char32_t cp;
    std::size_t len;
    if (c < 0x80) {
      cp = c, len = 1;
    } else if ((c >> 5) == 0x6) {
      cp = c & 0x1F, len = 2;
    } else if ((c >> 4) == 0xE) {
      cp = c & 0x0F, len = 3;
    } else {
      throw FormatError("vocab: invalid UTF-8", offset + i);
    }
    if (i + len > line.size()) throw FormatError("vocab: truncated UTF-8", offset + i);
    for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(line[i + k]) & 0x3F);
    auto it = inverse.find(cp);
    if (it == inverse.end()) throw FormatError("vocab: character outside byte alphabet", offset + i);
    raw += static_cast<char>(it->second);
    i += len;
  }
  return raw;
}

// Lowercase and collapse whitespace runs to single spaces.
inline std::string normalize(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

// Words of normalized text; every word after the first carries its leading
// space so detokenization is plain concatenation.
inline std::vector<std::string> pretokenize(std::string_view normalized) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < normalized.size()) {
    std::size_t j = normalized.find(' ', i + 1);
    if (j == std::string_view::npos) j = normalized.size();
    words.emplace_back(normalized.substr(i, j - i));
    i = j;
  }
  return words;
}

class Vocab {
 public:
  // Reserved tokens and the 256 byte tokens, no merges.
  Vocab() {
    for (auto name : kReservedNames) tokens_.emplace_back(name);
    for (int b = 0; b < 256; ++b) add(std::string(1, static_cast<char>(b)));
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t merge_count() const { return tokens_.size() - kFirstMerge; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  static bool is_reserved(int id) { return id >= 0 && id < kReservedCount; }

  // Learns up to max_merges merges from word frequencies of `texts`. Ties in
  // pair frequency break on the smaller (left, right) id pair.
  static Vocab train(const std::vector<std::string>& texts, std::size_t max_merges) {
    Vocab v;
    std::map<std::string, std::size_t> freq;
    for (auto& t : texts)
      for (auto& w : pretokenize(normalize(t))) ++freq[w];
    std::vector<std::pair<std::vector<int>, std::size_t>> words;
    for (auto& [w, n] : freq) {
      std::vector<int> ids;
      for (unsigned char c : w) ids.push_back(kByteBase + c);
      words.emplace_back(std::move(ids), n);
    }
    for (std::size_t m = 0; m < max_merges; ++m) {
      std::map<std::pair<int, int>, std::size_t> pairs;
      for (auto& [ids, n] : words)
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) pairs[{ids[i], ids[i + 1]}] += n;
      std::pair<int, int> best{-1, -1};
      std::size_t best_n = 1;
      for (auto& [p, n] : pairs)
        if (n > best_n) best = p, best_n = n;
      if (best.first < 0) break;
      const int merged = v.add(v.token(best.first) + v.token(best.second));
      for (auto& [ids, n] : words) {
        std::vector<int> next;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (i + 1 < ids.size() && ids[i] == best.first && ids[i + 1] == best.second) {
            next.push_back(merged);
            ++i;
          } else {
            next.push_back(ids[i]);
          }
        }
        ids = std::move(next);
      }
    }
    return v;
  }

  // Merges are applied greedily: the adjacent pair whose concatenation is the
  // earliest learned token goes first.
  std::vector<int> tokenize(std::string_view raw_text) const {
    std::vector<int> out;
    for (auto& w : pretokenize(normalize(raw_text))) {
      auto ids = tokenize_word(w);
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  }

  // Tokens of one pre-tokenized word (leading space included, no
  // normalization). Tokenizing a text equals concatenating its words' tokens.
  std::vector<int> tokenize_word(const std::string& w) const {
    std::vector<int> ids;
    for (unsigned char c : w) ids.push_back(kByteBase + c);
    while (ids.size() > 1) {
      int best = -1;
      std::size_t at = 0;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        auto it = ids_.find(token(ids[i]) + token(ids[i + 1]));
        if (it != ids_.end() && (best < 0 || it->second < best)) best = it->second, at = i;
      }
      if (best < 0) break;
      std::vector<int> next(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(at));
      for (std::size_t i = at; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && token(ids[i]) + token(ids[i + 1]) == token(best)) {
          next.push_back(best);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids = std::move(next);
    }
    return ids;
  }

  // Concatenation of token bytes; reserved ids render as nothing.
  std::string detokenize(const std::vector<int>& ids) const {
    std::string s;
    for (int id : ids)
      if (!is_reserved(id)) s += token(id);
    return s;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocab: " + path);
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      out << (i < kReservedCount ? tokens_[i] : encode_token_line(tokens_[i])) << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read vocab: " + path);
    Vocab v;
    v.tokens_.clear();
    v.ids_.clear();
    std::string line;
    std::uint64_t offset = 0;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      if (n < kReservedCount) {
        if (line != kReservedNames[n])
          throw FormatError(cat("vocab: line ", n, " must be reserved token ", kReservedNames[n]), offset);
        v.tokens_.push_back(line);
      } else {
        const auto raw = decode_token_line(line, offset);
        if (n < static_cast<std::size_t>(kFirstMerge) && raw != std::string(1, static_cast<char>(n - kByteBase)))
          throw FormatError(cat("vocab: line ", n, " must be byte token ", n - kByteBase), offset);
        if (raw.empty() || v.ids_.count(raw)) throw FormatError(cat("vocab: empty or duplicate token at line ", n), offset);
        v.add(raw);
      }
      offset += line.size() + 1;
      ++n;
    }
    if (n < static_cast<std::size_t>(kFirstMerge)) throw FormatError("vocab: missing byte tokens", offset);
    return v;
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  int add(std::string raw) {
    const int id = static_cast<int>(tokens_.size());
    ids_[raw] = id;
    tokens_.push_back(std::move(raw));
    return id;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Empirical text-subsegment length distribution for lengths 1..15.
inline constexpr std::array<double, kMaxSpan> kSpanLengthWeights = {
    0.03, 0.05, 0.08, 0.11, 0.13, 0.13, 0.12, 0.10, 0.07, 0.05, 0.03, 0.02, 0.01, 0.006, 0.003};

inline double span_length_mean() {
  double s = 0, m = 0;
  for (std::size_t i = 0; i < kMaxSpan; ++i) s += kSpanLengthWeights[i], m += kSpanLengthWeights[i] * double(i + 1);
  return m / s;
}

inline std::size_t draw_span_length(Rng& rng) {
  static const std::vector<double> w(kSpanLengthWeights.begin(), kSpanLengthWeights.end());
  return rng.categorical(w) + 1;
}

// Span lengths drawn from the empirical distribution, with the last one
// truncated so that they sum to exactly total_length.
inline std::vector<std::size_t> sample_span_lengths(std::size_t total_length, Rng& rng) {
  std::vector<std::size_t> out;
  std::size_t sum = 0;
  while (sum < total_length) {
    const std::size_t l = std::min(draw_span_length(rng), total_length - sum);
    out.push_back(l);
    sum += l;
  }
  return out;
}

}  // namespace mrsv::text
