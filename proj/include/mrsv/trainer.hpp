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

// Batch forward/backward over per-video tapes, in-batch retrieval metrics and
// the pretraining loop.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrsv/config.hpp"
#include "mrsv/corpus.hpp"
#include "mrsv/model.hpp"
#include "mrsv/objectives.hpp"
#include "mrsv/optim.hpp"
#include "mrsv/pipeline.hpp"

namespace mrsv {

// Retrieval ---------------------------------------------------------------------

// A context retrieves correctly when the best-scoring target (or one of the
// five best) shares its paired target's content key.
struct RetrievalCounts {
  std::size_t contexts = 0, top1 = 0, top5 = 0;
  double chance = 0;  // summed per-context probability of a uniform pick being correct
  std::vector<double> match_probability;  // per scored context, softmax mass on its target (when sigma > 0)

  double top1_rate() const { return contexts ? double(top1) / double(contexts) : 0.0; }
  double top5_rate() const { return contexts ? double(top5) / double(contexts) : 0.0; }
  double chance_rate() const { return contexts ? chance / double(contexts) : 0.0; }
  RetrievalCounts& operator+=(const RetrievalCounts& o) {
    contexts += o.contexts, top1 += o.top1, top5 += o.top5, chance += o.chance;
    match_probability.insert(match_probability.end(), o.match_probability.begin(), o.match_probability.end());
    return *this;
  }
};

template <class Real>
RetrievalCounts count_retrieval(const Tensor<Real>& contexts, const Tensor<Real>& targets,
                                const std::vector<std::size_t>& pairing, const std::vector<std::uint64_t>& target_keys,
                                const std::vector<bool>& include = {}, double sigma = 0) {
  RetrievalCounts rc;
  const std::size_t m = contexts.rows(), n = targets.rows(), d = targets.cols();
  if (target_keys.size() != n || pairing.size() != m)
    throw ShapeError(cat("count_retrieval: ", m, " contexts, ", pairing.size(), " pairings, ", n, " targets, ",
                         target_keys.size(), " keys"));
  auto norm = [d](const Real* x) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += double(x[j]) * double(x[j]);
    return std::sqrt(s);
  };
  std::vector<double> tn(n);
  for (std::size_t j = 0; j < n; ++j) tn[j] = norm(&targets.data[j * d]);
  std::vector<double> score(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < m; ++i) {
    if (!include.empty() && !include[i]) continue;
    const Real* c = &contexts.data[i * d];
    const double cn = norm(c);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += double(c[k]) * double(targets.data[j * d + k]);
      score[j] = tn[j] > 0 ? s / tn[j] : -std::numeric_limits<double>::infinity();
    }
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    const auto key = target_keys[pairing[i]];
    ++rc.contexts;
    if (target_keys[order[0]] == key) ++rc.top1;
    for (std::size_t r = 0; r < std::min<std::size_t>(5, n); ++r)
      if (target_keys[order[r]] == key) {
        ++rc.top5;
        break;
      }
    rc.chance += double(std::count(target_keys.begin(), target_keys.end(), key)) / double(n);
    if (sigma > 0) {
      const double top = score[order[0]];
      double z = 0, hit = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(sigma * (score[j] - top) / std::max(cn, 1e-12));
        z += e;
        if (target_keys[j] == key) hit += e;
      }
      rc.match_probability.push_back(hit / z);
    }
  }
  return rc;
}

// Per-video pass ------------------------------------------------------------------

template <class Real>
struct VideoPass {
  Tape<Real> tape;
  pipeline::VideoPlan plan;

  Var<Real> text_ctx, text_tgt;      // contrastive text objective
  Var<Real> text_state;              // token objectives: joint states at non-empty MASKs
  std::vector<std::vector<int>> lm_spans;
  std::vector<std::uint64_t> text_keys;
  std::vector<bool> text_scored;     // non-empty video spans

  Var<Real> audio_ctx, audio_tgt;
  std::vector<std::size_t> audio_pairing;
  std::vector<std::uint64_t> audio_keys;

  Var<Real> frame_ctx, frame_tgt;
  std::vector<std::size_t> frame_pairing;
  std::vector<std::uint64_t> frame_keys;
};

// Encodes one video's frames, subsegment audio and all four views on its own
// tape, and extracts the predictions and targets that enter the losses.
template <class Real>
void forward_video(Model<Real>& model, const pipeline::VideoExample& v, std::uint64_t seed, VideoPass<Real>& out) {
  using namespace pipeline;
  const Config& cfg = model.cfg;
  const bool token_objective = cfg.objective != "contrastive";
  auto& tape = out.tape;
  out.plan = plan_video(v, cfg, seed);
  const auto& p = out.plan;

  std::vector<const Image*> images;
  for (auto& s : p.segments) images.push_back(&v.frames.at(s.frame));
  auto frames = model.encode_frames(tape, images);
  std::vector<std::vector<float>> crops;
  for (std::size_t g = 0; g < p.subsegments.size(); ++g) crops.push_back(p.crop(g));
  std::vector<std::span<const float>> crop_views(crops.begin(), crops.end());
  auto audio = model.encode_audio(tape, crop_views);

  const MaskedView* views[] = {&p.audio_target, &p.audio_input, &p.webtext, &p.transcript};
  std::vector<JointSequence> seqs;
  std::vector<std::size_t> base;
  for (auto* view : views) {
    base.push_back(seqs.size());
    seqs.insert(seqs.end(), view->sequences.begin(), view->sequences.end());
  }
  auto joint = model.joint_encode(tape, seqs, audio.pooled, frames.pooled);
  auto row = [&](std::size_t vi, const Target& t) { return joint.packing.begin(base[vi] + t.sequence) + t.slot; };

  std::vector<const Target*> candidates;
  std::map<const Target*, std::size_t> view_of;
  for (std::size_t vi = 0; vi < 3; ++vi)
    for (auto& t : views[vi]->targets)
      if (t.head == Head::Text) candidates.push_back(&t), view_of[&t] = vi;
  Rng sel(derive_seed(seed, v.id, 6));
  auto chosen = select_targets(candidates, cfg.text_select, sel);
  std::vector<std::size_t> text_rows, state_rows;
  std::vector<std::vector<int>> spans;
  for (auto* t : chosen) {
    text_rows.push_back(row(view_of[t], *t));
    spans.push_back(t->tokens.empty() ? std::vector<int>{text::kPad} : t->tokens);
    out.text_keys.push_back(t->key);
    out.text_scored.push_back(!t->tokens.empty() && !t->web);
    if (!t->tokens.empty()) state_rows.push_back(text_rows.back()), out.lm_spans.push_back(t->tokens);
  }
  if (!token_objective) {
    out.text_ctx = model.predict(tape, joint, text_rows, Head::Text);
    out.text_tgt = model.encode_spans(tape, spans);
  } else if (!state_rows.empty()) {
    out.text_state = gather_rows(joint.hidden, state_rows);
  }

  std::vector<std::size_t> audio_rows;
  for (auto& t : p.audio_target.targets)
    if (t.head == Head::Audio) {
      audio_rows.push_back(row(0, t));
      out.audio_pairing.push_back(static_cast<std::size_t>(t.subsegment));
    }
  out.audio_ctx = model.predict(tape, joint, audio_rows, Head::Audio);
  out.audio_tgt = audio.cls;
  for (auto& s : p.subsegments) out.audio_keys.push_back(p.segment_keys[s.segment]);

  std::vector<std::size_t> frame_rows;
  for (auto& t : p.transcript.targets) {
    frame_rows.push_back(row(3, t));
    out.frame_pairing.push_back(static_cast<std::size_t>(t.frame));
  }
  out.frame_ctx = model.predict(tape, joint, frame_rows, Head::Frame);
  out.frame_tgt = frames.cls;
  out.frame_keys = p.segment_keys;
}

// Batch ---------------------------------------------------------------------------------

// The two halves of a contrastive term and the pool sizes they choose from.
struct DirectionLosses {
  double forward = 0, backward = 0;
  std::size_t contexts = 0, targets = 0;

  template <class Real>
  static DirectionLosses of(const ContrastiveLoss<Real>& l, std::size_t contexts, std::size_t targets) {
    return {double(l.forward.item()), double(l.backward.item()), contexts, targets};
  }
};

struct BatchResult {
  double loss_text = 0, loss_audio = 0, loss_frame = 0, loss_total = 0;
  long double loss_total_exact = 0;  // loss_total before rounding to double
  DirectionLosses text_dirs, audio_dirs, frame_dirs;
  bool has_text = false;
  std::size_t duplicate_targets = 0;
  RetrievalCounts text, audio, frame;
};

namespace detail {

template <class Real>
struct Stacked {
  Var<Real> leaf;
  std::vector<std::size_t> offsets{0};  // row offset of each pass
};

template <class Real>
Stacked<Real> stack_rows(Tape<Real>& tape, const std::vector<Var<Real>>& parts) {
  Stacked<Real> s;
  std::size_t rows = 0, cols = 0;
  for (auto& v : parts) {
    if (v.tape) rows += v.rows(), cols = v.cols();
    s.offsets.push_back(rows);
  }
  Tensor<Real> t({rows, cols});
  std::size_t at = 0;
  for (auto& v : parts)
    if (v.tape) {
      std::copy(v.value().data.begin(), v.value().data.end(), t.data.begin() + static_cast<std::ptrdiff_t>(at));
      at += v.size();
    }
  s.leaf = tape.leaf(std::move(t));
  return s;
}

template <class Real>
Tensor<Real> slice_grad(Tape<Real>& tape, const Stacked<Real>& s, std::size_t i) {
  const auto g = tape.grad(s.leaf);
  const std::size_t c = s.leaf.cols(), r0 = s.offsets[i], r1 = s.offsets[i + 1];
  return Tensor<Real>({r1 - r0, c}, std::vector<Real>(g.begin() + static_cast<std::ptrdiff_t>(r0 * c),
                                                      g.begin() + static_cast<std::ptrdiff_t>(r1 * c)));
}

}  // namespace detail

// Runs the batch. With `train` set, parameter gradients are added to each
// Parameter::grad; the reduction runs in video order, so the result does not
// depend on the thread count.
template <class Real>
BatchResult run_batch(Model<Real>& model, const std::vector<const pipeline::VideoExample*>& videos, std::uint64_t seed,
                      bool train, std::size_t threads = worker_count()) {
  if (videos.empty()) throw std::invalid_argument("run_batch: no videos");
  const std::size_t n = videos.size();
  const std::string& objective = model.cfg.objective;
  std::vector<std::unique_ptr<VideoPass<Real>>> passes(n);
  parallel_for(n, [&](std::size_t i) {
    passes[i] = std::make_unique<VideoPass<Real>>();
    forward_video(model, *videos[i], seed, *passes[i]);
  }, threads);

  auto gather = [&](auto member) {
    std::vector<Var<Real>> out;
    for (auto& p : passes) out.push_back((*p).*member);
    return out;
  };
  Tape<Real> lt;
  BatchResult r;
  std::vector<Var<Real>> components;
  std::vector<std::pair<detail::Stacked<Real>, Var<Real> VideoPass<Real>::*>> leaves;

  auto sigma_of = [&](Head h) { return std::exp(double(model.log_sigma(lt, h).item())); };
  auto text_keys = std::vector<std::uint64_t>();
  std::vector<bool> text_scored;
  for (auto& p : passes) {
    text_keys.insert(text_keys.end(), p->text_keys.begin(), p->text_keys.end());
    text_scored.insert(text_scored.end(), p->text_scored.begin(), p->text_scored.end());
  }
  if (objective == "contrastive") {
    auto c = detail::stack_rows(lt, gather(&VideoPass<Real>::text_ctx));
    auto t = detail::stack_rows(lt, gather(&VideoPass<Real>::text_tgt));
    std::vector<std::size_t> pairing(c.leaf.rows());
    std::iota(pairing.begin(), pairing.end(), std::size_t(0));
    auto loss = contrastive_span_loss(c.leaf, t.leaf, pairing, model.log_sigma(lt, Head::Text));
    components.push_back(loss.loss);
    r.loss_text = loss.loss.item();
    r.text_dirs = DirectionLosses::of(loss, c.leaf.rows(), t.leaf.rows());
    r.has_text = true;
    r.duplicate_targets += loss.duplicate_targets;
    r.text = count_retrieval(c.leaf.value(), t.leaf.value(), pairing, text_keys, text_scored,
                             sigma_of(Head::Text));
    leaves.push_back({c, &VideoPass<Real>::text_ctx});
    leaves.push_back({t, &VideoPass<Real>::text_tgt});
  } else {
    std::vector<std::vector<int>> spans;
    for (auto& p : passes) spans.insert(spans.end(), p->lm_spans.begin(), p->lm_spans.end());
    if (!spans.empty()) {
      auto s = detail::stack_rows(lt, gather(&VideoPass<Real>::text_state));
      auto loss = objective == "masklm" ? mask_lm_loss(model, lt, s.leaf, spans) : virtex_lm_loss(model, lt, s.leaf, spans);
      components.push_back(loss);
      r.loss_text = loss.item();
      r.has_text = true;
      leaves.push_back({s, &VideoPass<Real>::text_state});
    }
  }

  auto paired = [&](std::vector<std::size_t> VideoPass<Real>::*pair_member, const detail::Stacked<Real>& tgt) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
      for (auto j : (*passes[i]).*pair_member) out.push_back(tgt.offsets[i] + j);
    return out;
  };
  auto keys = [&](std::vector<std::uint64_t> VideoPass<Real>::*key_member) {
    std::vector<std::uint64_t> out;
    for (auto& p : passes) out.insert(out.end(), ((*p).*key_member).begin(), ((*p).*key_member).end());
    return out;
  };

  {
    auto c = detail::stack_rows(lt, gather(&VideoPass<Real>::audio_ctx));
    auto t = detail::stack_rows(lt, gather(&VideoPass<Real>::audio_tgt));
    auto pairing = paired(&VideoPass<Real>::audio_pairing, t);
    auto loss = contrastive_span_loss(c.leaf, t.leaf, pairing, model.log_sigma(lt, Head::Audio));
    components.push_back(loss.loss);
    r.loss_audio = loss.loss.item();
    r.audio_dirs = DirectionLosses::of(loss, c.leaf.rows(), t.leaf.rows());
    r.audio = count_retrieval(c.leaf.value(), t.leaf.value(), pairing, keys(&VideoPass<Real>::audio_keys), {},
                              sigma_of(Head::Audio));
    leaves.push_back({c, &VideoPass<Real>::audio_ctx});
    leaves.push_back({t, &VideoPass<Real>::audio_tgt});
  }
  {
    auto c = detail::stack_rows(lt, gather(&VideoPass<Real>::frame_ctx));
    auto t = detail::stack_rows(lt, gather(&VideoPass<Real>::frame_tgt));
    auto pairing = paired(&VideoPass<Real>::frame_pairing, t);
    auto loss = frame_matching_loss(c.leaf, t.leaf, pairing, model.log_sigma(lt, Head::Frame));
    components.push_back(loss.loss);
    r.loss_frame = loss.loss.item();
    r.frame_dirs = DirectionLosses::of(loss, c.leaf.rows(), t.leaf.rows());
    r.frame = count_retrieval(c.leaf.value(), t.leaf.value(), pairing, keys(&VideoPass<Real>::frame_keys), {},
                              sigma_of(Head::Frame));
    leaves.push_back({c, &VideoPass<Real>::frame_ctx});
    leaves.push_back({t, &VideoPass<Real>::frame_tgt});
  }
  auto total = total_loss(components);
  r.loss_total = total.item();
  r.loss_total_exact = total.item();
  if (!train) return r;

  lt.backward(total);
  std::vector<std::vector<Tensor<Real>>> seeds(n);
  for (std::size_t i = 0; i < n; ++i)
    for (auto& [stacked, member] : leaves) seeds[i].push_back(detail::slice_grad(lt, stacked, i));
  parallel_for(n, [&](std::size_t i) {
    std::vector<std::pair<Var<Real>, const Tensor<Real>*>> s;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
      auto v = (*passes[i]).*(leaves[k].second);
      if (v.tape) s.push_back({v, &seeds[i][k]});
    }
    passes[i]->tape.backward(std::span<const std::pair<Var<Real>, const Tensor<Real>*>>(s));
  }, threads);
  lt.accumulate_param_grads();
  for (auto& p : passes) p->tape.accumulate_param_grads();
  return r;
}

// Training loop ---------------------------------------------------------------------------

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0;
  BatchResult batch;
  double sigma_text = 0, sigma_audio = 0, sigma_frame = 0;
  std::size_t nan_replaced = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["step"] = step;
    j["lr"] = lr;
    j["loss_text"] = batch.loss_text;
    j["loss_audio"] = batch.loss_audio;
    j["loss_frame"] = batch.loss_frame;
    j["loss_total"] = batch.loss_total;
    j["sigma_text"] = sigma_text;
    j["sigma_audio"] = sigma_audio;
    j["sigma_frame"] = sigma_frame;
    j["nan_replaced"] = nan_replaced;
    j["duplicate_targets"] = batch.duplicate_targets;
    j["acc_text"] = batch.text.top1_rate();
    j["acc_audio"] = batch.audio.top1_rate();
    j["acc_frame"] = batch.frame.top1_rate();
    return j;
  }
};

struct TrainOptions {
  std::string out_dir;  // metrics.jsonl and checkpoints; empty writes nothing
  std::uint64_t seed = 1;
  std::size_t threads = worker_count();
  std::function<void(const StepMetrics&)> on_step;
};

// Videos for a step: consecutive slices of a per-epoch shuffle.
inline std::vector<std::size_t> batch_indices(std::size_t n_videos, std::size_t batch, std::size_t step,
                                              std::uint64_t seed) {
  if (n_videos < batch) throw std::invalid_argument(cat("batch of ", batch, " from ", n_videos, " videos"));
  const std::size_t per_epoch = n_videos / batch;
  const std::size_t epoch = step / per_epoch, k = step % per_epoch;
  std::vector<std::size_t> order(n_videos);
  std::iota(order.begin(), order.end(), std::size_t(0));
  Rng rng(derive_seed(seed, 0xB47C, epoch));
  rng.shuffle(order);
  return {order.begin() + static_cast<std::ptrdiff_t>(k * batch),
          order.begin() + static_cast<std::ptrdiff_t>((k + 1) * batch)};
}

inline std::string checkpoint_path(const std::string& dir, std::size_t step) {
  return (std::filesystem::path(dir) / cat("checkpoint-", step, ".mrsv")).string();
}

inline std::string final_checkpoint_path(const std::string& dir) {
  return (std::filesystem::path(dir) / "checkpoint.mrsv").string();
}

// Runs cfg.steps optimizer steps (1-based). Step s uses lr_schedule(s).
template <class Real>
std::vector<StepMetrics> train_loop(Model<Real>& model, const std::vector<pipeline::VideoExample>& videos,
                                    const TrainOptions& opt) {
  const Config& cfg = model.cfg;
  cfg.validate();
  if (videos.size() < cfg.batch)
    throw std::invalid_argument(cat("train_loop: ", videos.size(), " training videos for batch ", cfg.batch));
  std::ofstream metrics;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    const auto path = (std::filesystem::path(opt.out_dir) / "metrics.jsonl").string();
    metrics.open(path, std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + path);
  }
  AdamW<Real> adam(model.params, {.weight_decay = cfg.weight_decay});
  std::vector<StepMetrics> out;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<const pipeline::VideoExample*> batch;
    for (auto i : batch_indices(videos.size(), cfg.batch, step - 1, opt.seed)) batch.push_back(&videos[i]);
    StepMetrics m;
    m.step = step;
    m.lr = lr_schedule(step, cfg.steps, cfg.warmup, cfg.peak_lr);
    model.params.zero_grad();
    m.batch = run_batch(model, batch, derive_seed(opt.seed, step), true, opt.threads);
    m.nan_replaced = sanitize_grads(model.params);
    adam.step(model.params, m.lr);
    clip_sigma(model.params);
    m.sigma_text = std::exp(double(model.p("loss.log_sigma_text").value.data[0]));
    m.sigma_audio = std::exp(double(model.p("loss.log_sigma_audio").value.data[0]));
    m.sigma_frame = std::exp(double(model.p("loss.log_sigma_frame").value.data[0]));
    if (metrics.is_open()) {
      metrics << m.to_json().dump() << '\n';
      metrics.flush();
      if (!metrics) throw std::runtime_error("failed writing metrics.jsonl");
    }
    if (opt.on_step) opt.on_step(m);
    out.push_back(std::move(m));
    if (!opt.out_dir.empty() && (step == cfg.steps || (cfg.checkpoint_every && step % cfg.checkpoint_every == 0))) {
      auto state = adam.named_state(model.params);
      save_checkpoint(step == cfg.steps ? final_checkpoint_path(opt.out_dir) : checkpoint_path(opt.out_dir, step), cfg,
                      model.params, &state, step);
    }
  }
  return out;
}

// Pretraining from a corpus file ------------------------------------------------------------

struct Dataset {
  text::Vocab vocab;
  pipeline::TimingRegressor timing;
  double timing_l1_provided = 0, timing_l1_refined = 0;  // on the held-out records
  std::vector<pipeline::VideoExample> train, eval;
};

inline text::Vocab corpus_vocab(const std::vector<corpus::Record>& records, std::size_t max_merges = 400) {
  std::vector<std::string> lines;
  for (auto& r : records) {
    std::string line;
    for (auto& w : r.words) line += (line.empty() ? "" : " ") + w.text;
    lines.push_back(std::move(line));
    lines.push_back(r.webtext);
  }
  return text::Vocab::train(lines, max_merges);
}

// The last cfg.eval_videos records are held out. The vocabulary and timing
// regressor are fit on the training records.
inline Dataset load_dataset(const std::vector<corpus::Record>& records, const Config& cfg, std::uint64_t seed,
                            std::size_t threads = worker_count()) {
  if (records.size() < cfg.eval_videos + cfg.batch)
    throw std::invalid_argument(cat("corpus has ", records.size(), " videos; need ", cfg.eval_videos, " held out plus a batch of ",
                                    cfg.batch));
  const std::vector<corpus::Record> train(records.begin(), records.end() - static_cast<std::ptrdiff_t>(cfg.eval_videos));
  const std::vector<corpus::Record> eval(records.end() - static_cast<std::ptrdiff_t>(cfg.eval_videos), records.end());
  Dataset d;
  d.vocab = corpus_vocab(train);
  std::vector<pipeline::TimingSample> samples;
  for (auto& r : train)
    for (auto& s : pipeline::timing_samples(r, d.vocab)) samples.push_back(s);
  d.timing = pipeline::TimingRegressor::train(std::move(samples), derive_seed(seed, 0x71));
  if (!eval.empty()) {
    d.timing_l1_provided = pipeline::timing_l1(eval, d.vocab, nullptr);
    d.timing_l1_refined = pipeline::timing_l1(eval, d.vocab, &d.timing);
  }
  d.train.resize(train.size());
  d.eval.resize(eval.size());
  parallel_for(records.size(), [&](std::size_t i) {
    auto v = pipeline::prepare_video(records[i], d.vocab, &d.timing, cfg.webtext_len);
    (i < train.size() ? d.train[i] : d.eval[i - train.size()]) = std::move(v);
  }, threads);
  return d;
}

// Writes vocab.txt, timing.json, config.txt, metrics.jsonl and checkpoints to
// out_dir.
inline std::vector<StepMetrics> pretrain(const std::vector<corpus::Record>& records, Config cfg, const TrainOptions& opt,
                                         Dataset* dataset_out = nullptr) {
  cfg.validate();
  auto data = load_dataset(records, cfg, opt.seed, opt.threads);
  if (cfg.vocab_size == 0) cfg.vocab_size = data.vocab.size();
  if (cfg.vocab_size != data.vocab.size())
    throw std::invalid_argument(cat("config vocab_size ", cfg.vocab_size, " but the corpus vocabulary has ", data.vocab.size()));
  if (!opt.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    data.vocab.save((fs::path(opt.out_dir) / "vocab.txt").string());
    std::ofstream tj(fs::path(opt.out_dir) / "timing.json");
    tj << data.timing.to_json().dump() << '\n';
    std::ofstream cf(fs::path(opt.out_dir) / "config.txt");
    cf << cfg.serialize();
    if (!tj || !cf) throw std::runtime_error("cannot write to " + opt.out_dir);
  }
  Model<float> model(cfg, derive_seed(opt.seed, 0x30DE1));
  auto metrics = train_loop(model, data.train, opt);
  if (dataset_out) *dataset_out = std::move(data);
  return metrics;
}

// Gradient check of the training loss -----------------------------------------------------------

struct LossGradCheckOptions {
  std::size_t videos = 2, batch = 1;
  std::size_t per_tensor = 1;  // sampled coordinates per parameter tensor, 0 = all
  double step = 1e-5;
  std::size_t threads = worker_count();
};

// Analytic gradients of the total loss come from a 64-bit model. The central
// differences are taken on a long double copy of its parameters: at step 1e-5
// the rounding of a double-valued loss shows up as ~1e-11 in the difference
// quotient, which is not small next to the smallest gradients.
inline GradCheckReport check_loss_gradients(Config cfg, std::uint64_t seed, const LossGradCheckOptions& o = {}) {
  if (o.batch == 0 || o.videos < o.batch)
    throw std::invalid_argument(cat("check_loss_gradients: ", o.videos, " videos for a batch of ", o.batch));
  cfg.batch = o.batch;
  cfg.eval_videos = 0;
  corpus::SyntheticSpec spec;
  spec.n_videos = o.videos;
  spec.image_h = cfg.image_h;
  spec.image_w = cfg.image_w;
  spec.webtext_phrases = std::max<std::size_t>(30, cfg.webtext_len);
  spec.seed = seed;
  auto data = load_dataset(corpus::generate_range(spec, 0, o.videos), cfg, seed, o.threads);
  cfg.vocab_size = data.vocab.size();
  Model<double> model(cfg, derive_seed(seed, 0x30DE1));
  Model<long double> reference(cfg, derive_seed(seed, 0x30DE1));
  std::vector<const pipeline::VideoExample*> batch;
  for (std::size_t i = 0; i < o.batch; ++i) batch.push_back(&data.train[i]);
  auto loss = [&](bool grad) -> long double {
    if (grad) return run_batch(model, batch, seed, true, o.threads).loss_total_exact;
    for (std::size_t p = 0; p < model.params.size(); ++p)
      std::copy(model.params[p].value.data.begin(), model.params[p].value.data.end(), reference.params[p].value.data.begin());
    return run_batch(reference, batch, seed, false, o.threads).loss_total_exact;
  };
  return finite_diff_check<double>(model.params, loss, o.step, o.per_tensor, seed);
}

// A finished pretraining directory ------------------------------------------------------------

struct Run {
  Config cfg;
  text::Vocab vocab;
  pipeline::TimingRegressor timing;
};

inline Run load_run(const std::string& dir) {
  namespace fs = std::filesystem;
  Run r;
  std::ifstream cf(fs::path(dir) / "config.txt");
  if (!cf) throw std::runtime_error("cannot read " + (fs::path(dir) / "config.txt").string());
  r.cfg = Config::parse(std::string(std::istreambuf_iterator<char>(cf), {}));
  r.vocab = text::Vocab::load((fs::path(dir) / "vocab.txt").string());
  std::ifstream tj(fs::path(dir) / "timing.json");
  if (!tj) throw std::runtime_error("cannot read " + (fs::path(dir) / "timing.json").string());
  try {
    r.timing = pipeline::TimingRegressor::from_json(nlohmann::json::parse(tj));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(cat("timing.json: ", e.what()), 0);
  }
  return r;
}

template <class Real>
Model<Real> load_model(const Run& run, const std::string& checkpoint) {
  auto ck = load_checkpoint(checkpoint);
  Model<Real> m(run.cfg, 0);
  load_parameters(m.params, ck);
  return m;
}

// The same held-out split as load_dataset, prepared with the run's vocabulary
// and timing regressor.
inline std::vector<pipeline::VideoExample> heldout_examples(const std::vector<corpus::Record>& records, const Run& run,
                                                            std::size_t threads = worker_count()) {
  if (records.size() < run.cfg.eval_videos)
    throw std::invalid_argument(cat("corpus has ", records.size(), " videos; the run holds out ", run.cfg.eval_videos));
  const std::size_t first = records.size() - run.cfg.eval_videos;
  std::vector<pipeline::VideoExample> out(run.cfg.eval_videos);
  parallel_for(out.size(), [&](std::size_t i) {
    out[i] = pipeline::prepare_video(records[first + i], run.vocab, &run.timing, run.cfg.webtext_len);
  }, threads);
  return out;
}

}  // namespace mrsv
