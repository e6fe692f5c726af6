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

// mrsv: corpus generation, pretraining, gradient checking, retrieval
// evaluation, zero-shot classification and view dumps.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "mrsv/zeroshot.hpp"

using namespace mrsv;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Profile defaults, then the config file, then --set, then dedicated flags.
struct ConfigFlags {
  std::optional<std::string> profile;
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::size_t> steps, batch;
  std::optional<double> lr;
  std::optional<std::string> objective;

  void add(CLI::App* app, bool training) {
    app->add_option("--profile", profile, "Built-in defaults: tiny or paper-shapes (default tiny)");
    app->add_option("--config", file, "File of `key = value` lines applied over the profile")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "KEY=VALUE override, repeatable; applied over the config file");
    if (training) {
      app->add_option("--steps", steps, "Training steps");
      app->add_option("--batch", batch, "Videos per step");
      app->add_option("--lr", lr, "Peak learning rate");
      app->add_option("--objective", objective, "contrastive, masklm or virtex");
    }
  }

  Config resolve() const {
    Config c = Config::profile_named(profile.value_or("tiny"));
    if (!file.empty()) c.load_file(file, !profile.has_value());
    for (auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (steps) c.steps = *steps;
    if (batch) c.batch = *batch;
    if (lr) c.peak_lr = *lr;
    if (objective) c.objective = *objective;
    return c;
  }
};

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw std::runtime_error("cannot write " + path);
  return file;
}

// gen-corpus ------------------------------------------------------------------

struct GenCorpus {
  corpus::SyntheticSpec spec;
  std::string out;
  std::size_t image_size = 64;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("gen-corpus", "Write a synthetic video corpus container");
    c->add_option("--videos", spec.n_videos, "Number of videos")->capture_default_str();
    c->add_option("--classes", spec.n_classes, "Number of event classes")->capture_default_str();
    c->add_option("--segments", spec.segments, "Segments per video")->capture_default_str();
    c->add_option("--image-size", image_size, "Frame height and width in pixels")->capture_default_str();
    c->add_option("--shift-mean", spec.shift_mean, "Mean word timing shift, seconds")->capture_default_str();
    c->add_option("--shift-std", spec.shift_std, "Std of the word timing shift, seconds")->capture_default_str();
    c->add_option("--webtext-phrases", spec.webtext_phrases, "Phrases of web text per video")->capture_default_str();
    c->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
    c->add_option("--out", out, "Output container path")->required();
    c->callback([this] { run(); });
  }

  void run() {
    spec.image_h = spec.image_w = image_size;
    corpus::generate_corpus(spec, out);
    std::cout << "wrote " << spec.n_videos << " videos to " << out << '\n';
  }
};

// pretrain --------------------------------------------------------------------

struct Pretrain {
  ConfigFlags config;
  std::string corpus_path, out;
  std::uint64_t seed = 1;
  bool quiet = false;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("pretrain", "Train a model; writes metrics.jsonl and checkpoints to --out");
    c->add_option("--corpus", corpus_path, "Corpus container")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--seed", seed, "Run seed")->capture_default_str();
    c->add_flag("--quiet", quiet, "Print only the final summary");
    config.add(c, true);
    c->callback([this] { run(); });
  }

  void run() {
    auto cfg = config.resolve();
    cfg.validate();
    auto records = corpus::read_container(corpus_path);
    TrainOptions opt;
    opt.out_dir = out;
    opt.seed = seed;
    opt.threads = worker_count();
    const std::size_t every = std::max<std::size_t>(1, cfg.steps / 20);
    opt.on_step = [&](const StepMetrics& m) {
      if (!quiet && (m.step % every == 0 || m.step == 1))
        std::fprintf(stderr, "step %zu lr %.3g loss %.4f text %.3f audio %.3f frame %.3f\n", m.step, m.lr,
                     m.batch.loss_total, m.batch.text.top1_rate(), m.batch.audio.top1_rate(), m.batch.frame.top1_rate());
    };
    Dataset data;
    auto metrics = pretrain(records, cfg, opt, &data);
    nlohmann::json summary{{"steps", metrics.size()},
                           {"final_loss", metrics.back().batch.loss_total},
                           {"timing_l1_provided", data.timing_l1_provided},
                           {"timing_l1_refined", data.timing_l1_refined},
                           {"checkpoint", final_checkpoint_path(out)}};
    std::cout << summary.dump() << '\n';
  }
};

// grad-check ------------------------------------------------------------------

struct GradCheck {
  ConfigFlags config;
  std::uint64_t seed = 1;
  LossGradCheckOptions opt;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("grad-check",
                                  "Compare 64-bit analytic gradients of the total loss with central differences");
    c->add_option("--seed", seed, "Seed for the corpus, model, views and sampled coordinates")->capture_default_str();
    c->add_option("--videos", opt.videos, "Synthetic videos to generate")->capture_default_str();
    c->add_option("--batch", opt.batch, "Videos in the checked batch")->capture_default_str();
    c->add_option("--per-tensor", opt.per_tensor, "Coordinates sampled per parameter tensor (0 = all)")
        ->capture_default_str();
    c->add_option("--step", opt.step, "Central-difference step")->capture_default_str();
    config.add(c, false);
    c->callback([this] { run(); });
  }

  void run() {
    if (opt.batch == 0 || opt.videos < opt.batch) throw UsageError("grad-check: need --videos >= --batch >= 1");
    auto r = check_loss_gradients(config.resolve(), seed, opt);
    std::printf("max_rel_err=%.3e coordinates=%zu worst=%s[%zu] analytic=%.6e numeric=%.6e\n", r.max_relative_error,
                r.coordinates_checked, r.worst_parameter.c_str(), r.worst_index, r.worst_analytic, r.worst_numeric);
    if (!(r.max_relative_error < 1e-4)) throw std::runtime_error("gradient check failed: max_rel_err >= 1e-4");
  }
};

// eval-retrieval --------------------------------------------------------------

struct RunFlags {
  std::string run_dir, corpus_path, checkpoint;

  void add(CLI::App* c) {
    c->add_option("--run", run_dir, "Pretraining output directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--corpus", corpus_path, "Corpus container the run was trained on")->required()->check(CLI::ExistingFile);
    c->add_option("--checkpoint", checkpoint, "Checkpoint (default <run>/checkpoint.mrsv)")->check(CLI::ExistingFile);
  }
  std::string checkpoint_or_default() const { return checkpoint.empty() ? final_checkpoint_path(run_dir) : checkpoint; }
};

struct EvalRetrieval {
  RunFlags paths;
  std::uint64_t seed = 1;
  std::size_t batch = 0;
  std::string dump;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("eval-retrieval", "Top-1/top-5 in-batch retrieval on the held-out videos");
    paths.add(c);
    c->add_option("--seed", seed, "Seed for masking and target selection")->capture_default_str();
    c->add_option("--batch", batch, "Videos per candidate pool (default: all held-out videos)");
    c->add_option("--dump", dump, "Write per-example match probabilities as JSONL to this path");
    c->callback([this] { run(); });
  }

  void run() {
    auto run = load_run(paths.run_dir);
    auto model = load_model<float>(run, paths.checkpoint_or_default());
    auto videos = heldout_examples(corpus::read_container(paths.corpus_path), run);
    auto rep = zeroshot::eval_retrieval(model, videos, batch ? batch : videos.size(), seed);
    std::cout << rep.to_json().dump() << '\n';
    if (dump.empty()) return;
    std::ofstream f(dump);
    if (!f) throw std::runtime_error("cannot write " + dump);
    for (auto [name, c] : {std::pair{"mask_to_text", &rep.text}, {"mask_to_audio", &rep.audio}, {"transcript_to_frame", &rep.frame}})
      for (std::size_t i = 0; i < c->match_probability.size(); ++i)
        f << nlohmann::json{{"task", name}, {"index", i}, {"match_probability", c->match_probability[i]}}.dump() << '\n';
  }
};

// zeroshot --------------------------------------------------------------------

struct ZeroShot {
  RunFlags paths;
  std::string queries = "-", out = "-";

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("zeroshot",
                                  "Rank candidate labels for MASK prompts. Input JSONL lines: {\"video_ref\", \"prompt\", "
                                  "\"labels\", optional \"segments\", optional \"audio\"}");
    paths.add(c);
    c->add_option("--queries", queries, "Query JSONL path, or - for stdin")->capture_default_str();
    c->add_option("--out", out, "Output JSONL path, or - for stdout")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() {
    auto run = load_run(paths.run_dir);
    auto model = load_model<float>(run, paths.checkpoint_or_default());
    auto records = corpus::read_container(paths.corpus_path);
    std::vector<pipeline::VideoExample> videos(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
      videos[i] = pipeline::prepare_video(records[i], run.vocab, &run.timing, run.cfg.webtext_len);
    });
    std::map<std::uint64_t, const pipeline::VideoExample*> by_id;
    for (auto& v : videos) by_id[v.id] = &v;
    std::ifstream qf;
    if (queries != "-") {
      qf.open(queries);
      if (!qf) throw std::runtime_error("cannot read " + queries);
    }
    std::ofstream of;
    zeroshot::classify_jsonl(model, run.vocab, by_id, queries == "-" ? std::cin : qf, open_output(out, of));
  }
};

// dump-views ------------------------------------------------------------------

struct DumpViews {
  ConfigFlags config;
  std::string corpus_path, run_dir, out = "-";
  std::size_t video = 0;
  std::uint64_t seed = 1;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("dump-views", "Print the four masked views of one video as JSON");
    c->add_option("--corpus", corpus_path, "Corpus container")->required()->check(CLI::ExistingFile);
    c->add_option("--video", video, "Index of the video in the corpus")->capture_default_str();
    c->add_option("--seed", seed, "Masking seed")->capture_default_str();
    c->add_option("--run", run_dir, "Take vocabulary, timing regressor and config from a pretraining directory")
        ->check(CLI::ExistingDirectory);
    c->add_option("--out", out, "Output path, or - for stdout")->capture_default_str();
    config.add(c, false);
    c->callback([this] { run(); });
  }

  void run() {
    auto records = corpus::read_container(corpus_path);
    if (video >= records.size()) throw UsageError(cat("--video ", video, " out of range for ", records.size(), " videos"));
    Run run;
    if (!run_dir.empty()) {
      run = load_run(run_dir);
    } else {
      run.cfg = config.resolve();
      run.vocab = corpus_vocab(records);
    }
    auto v = pipeline::prepare_video(records[video], run.vocab, run_dir.empty() ? nullptr : &run.timing, run.cfg.webtext_len);
    auto plan = pipeline::plan_video(v, run.cfg, seed);
    nlohmann::json j{{"video", v.id}, {"segments", plan.segments.size()}, {"target_mask", plan.target_mask},
                     {"input_mask", plan.input_mask}};
    std::size_t leaks = 0;
    for (auto* view : {&plan.audio_target, &plan.audio_input, &plan.transcript, &plan.webtext}) {
      j["views"].push_back(pipeline::view_json(*view, &run.vocab));
      leaks += pipeline::leakage_violations(*view).size();
    }
    j["leakage_violations"] = leaks;
    std::ofstream of;
    open_output(out, of) << j.dump(2) << '\n';
  }
};

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mrsv: contrastive span pretraining on synthetic video"};
  app.name("mrsv");
  app.require_subcommand(1);
  GenCorpus gen;
  Pretrain pre;
  GradCheck grad;
  EvalRetrieval eval;
  ZeroShot zs;
  DumpViews dump;
  gen.add(app);
  pre.add(app);
  grad.add(app);
  eval.add(app);
  zs.add(app);
  dump.add(app);

  auto usage = [&](const std::string& msg) {
    std::cerr << "error: usage: " << one_line(msg) << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 2;
  };
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return usage(e.what());
  } catch (const UsageError& e) {
    return usage(e.what());
  } catch (const FormatError& e) {
    std::cerr << "error: format: " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid: " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: failed: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
