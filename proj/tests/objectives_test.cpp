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

#include "mrsv/objectives.hpp"
#include "mrsv/optim.hpp"

using namespace mrsv;

namespace {

Tensor<double> random_rows(std::size_t n, std::size_t d, Rng& rng) {
  Tensor<double> t({n, d});
  for (auto& v : t.data) v = rng.normal();
  return t;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

double span_loss(const Tensor<double>& c, const Tensor<double>& t, const std::vector<std::size_t>& pairing,
                 double sigma) {
  Tape<double> tape;
  return contrastive_span_loss(tape.leaf(c), tape.leaf(t), pairing, tape.leaf(Tensor<double>({1}, {std::log(sigma)})))
      .loss.item();
}

Config lm_config(const std::string& objective) {
  Config c = Config::tiny();
  c.vocab_size = 300;
  c.objective = objective;
  return c;
}

}  // namespace

TEST(Contrastive, PerfectRetrievalApproachesZero) {
  Tensor<double> eye({6, 6});
  for (std::size_t i = 0; i < 6; ++i) eye(i, i) = 1.0;
  EXPECT_LT(span_loss(eye, eye, iota(6), 100.0), 1e-3);
}

TEST(Contrastive, RandomVectorsGiveLogK) {
  Rng rng(1);
  const std::size_t K = 64;
  double sum = 0;
  const int trials = 20;
  for (int i = 0; i < trials; ++i) {
    Tape<double> tape;
    auto r = contrastive_span_loss(tape.leaf(random_rows(K, 256, rng)), tape.leaf(random_rows(K, 256, rng)), iota(K),
                                   tape.leaf(Tensor<double>({1}, {std::log(10.0)})));
    sum += r.forward.item();
  }
  EXPECT_NEAR(sum / trials, std::log(double(K)), 0.1 * std::log(double(K)));
}

TEST(Contrastive, PermutationAndRoleSymmetry) {
  Rng rng(2);
  auto c = random_rows(8, 16, rng), t = random_rows(8, 16, rng);
  const double base = span_loss(c, t, iota(8), 10.0);
  std::vector<std::size_t> perm{3, 0, 7, 1, 6, 2, 5, 4};
  Tensor<double> tp({8, 16});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 16; ++j) tp(perm[i], j) = t(i, j);
  EXPECT_NEAR(span_loss(c, tp, perm, 10.0), base, 1e-6);
  EXPECT_NEAR(span_loss(t, c, iota(8), 10.0), base, 1e-6);
  EXPECT_GE(base, 0.0);
}

TEST(Contrastive, ExtraTargetsAndDuplicates) {
  Rng rng(3);
  auto c = random_rows(3, 8, rng), t = random_rows(12, 8, rng);
  for (std::size_t j = 0; j < 8; ++j) t(11, j) = t(10, j);
  Tape<double> tape;
  auto r = contrastive_span_loss(tape.leaf(c), tape.leaf(t), {4, 0, 9}, tape.leaf(Tensor<double>({1}, {0.0})));
  EXPECT_EQ(r.duplicate_targets, 1u);
  EXPECT_GT(r.forward.item(), 0.0);
  EXPECT_THROW(contrastive_span_loss(tape.leaf(t), tape.leaf(c), iota(12), tape.leaf(Tensor<double>({1}, {0.0}))),
               ShapeError);
  EXPECT_THROW(contrastive_span_loss(tape.leaf(c), tape.leaf(t), {1, 1, 2}, tape.leaf(Tensor<double>({1}, {0.0}))),
               std::invalid_argument);
  Tensor<double> zero({3, 8});
  EXPECT_THROW(contrastive_span_loss(tape.leaf(zero), tape.leaf(t), {1, 2, 3}, tape.leaf(Tensor<double>({1}, {0.0}))),
               DegenerateVectorError);
}

TEST(Contrastive, SigmaScalingKeepsArgmax) {
  Rng rng(4);
  auto c = random_rows(5, 8, rng), t = random_rows(9, 8, rng);
  auto best = [&](double sigma) {
    Tape<double> tape;
    auto logits = scale(matmul_nt(l2_normalize_rows(tape.leaf(c)), l2_normalize_rows(tape.leaf(t))), sigma);
    std::vector<std::size_t> out;
    auto L = logits.value();
    for (std::size_t i = 0; i < 5; ++i) {
      std::size_t b = 0;
      for (std::size_t j = 1; j < 9; ++j)
        if (L(i, j) > L(i, b)) b = j;
      out.push_back(b);
    }
    return out;
  };
  EXPECT_EQ(best(1.0), best(37.0));
}

TEST(FrameMatching, TwoSegmentsBeatUniform) {
  Rng rng(5);
  auto v = random_rows(2, 16, rng);
  Tape<double> tape;
  auto r = frame_matching_loss(tape.leaf(v), tape.leaf(v), iota(2), tape.leaf(Tensor<double>({1}, {std::log(10.0)})));
  EXPECT_LT(r.forward.item(), std::log(2.0));
  EXPECT_LT(r.backward.item(), std::log(2.0));
  EXPECT_THROW(frame_matching_loss(tape.leaf(Tensor<double>({0, 16})), tape.leaf(v), {}, tape.leaf(Tensor<double>({1}))),
               ShapeError);
}

TEST(Total, IsTheSumAndSigmaGradientsSeparate) {
  Rng rng(6);
  ParamStore<double> ps;
  for (auto n : {"text", "audio", "frame"}) ps.add(cat("log_sigma_", n), {1}).value.data[0] = std::log(10.0);
  auto& ctx = ps.add("ctx", {4, 8});
  ctx.value = random_rows(4, 8, rng);
  const auto tt = random_rows(4, 8, rng), ta = random_rows(6, 8, rng), tf = random_rows(4, 8, rng);

  auto run = [&](bool grad, bool text_only) {
    Tape<double> tape;
    auto c = tape.param(ctx);
    auto lt = contrastive_span_loss(c, tape.leaf(tt), iota(4), tape.param(ps.get("log_sigma_text"))).loss;
    auto la = contrastive_span_loss(c, tape.leaf(ta), {5, 1, 0, 2}, tape.param(ps.get("log_sigma_audio"))).loss;
    auto lf = frame_matching_loss(c, tape.leaf(tf), iota(4), tape.param(ps.get("log_sigma_frame"))).loss;
    auto total = text_only ? lt : total_loss<double>({lt, la, lf});
    if (grad) {
      tape.backward(total);
      tape.accumulate_param_grads();
    }
    return std::array<double, 4>{total.item(), lt.item(), la.item(), lf.item()};
  };
  auto v = run(false, false);
  EXPECT_NEAR(v[0], v[1] + v[2] + v[3], 1e-6);

  ps.zero_grad();
  run(true, false);
  const double total_grad = ps.get("log_sigma_text").grad.data[0];
  ps.zero_grad();
  run(true, true);
  EXPECT_NEAR(total_grad, ps.get("log_sigma_text").grad.data[0], 1e-12);

  auto report = finite_diff_check<double>(ps, [&](bool g) { return run(g, false)[0]; }, 1e-5);
  EXPECT_LT(report.max_relative_error, 1e-5) << report.worst_parameter;

  Tape<double> tape;
  auto z = tape.leaf(Tensor<double>::scalar(0.0));
  EXPECT_EQ(total_loss<double>({z, z, z}).item(), 0.0);
}

TEST(Sigma, ClippedAtOneHundred) {
  EXPECT_EQ(clip_sigma(150.0), 100.0);
  EXPECT_EQ(clip_sigma(50.0), 50.0);
  Model<float> m(lm_config("contrastive"), 1);
  m.p("loss.log_sigma_text").value.data[0] = float(std::log(150.0));
  m.p("loss.log_sigma_audio").value.data[0] = -40.0f;
  clip_sigma(m.params);
  EXPECT_NEAR(std::exp(m.p("loss.log_sigma_text").value.data[0]), 100.0, 1e-3);
  EXPECT_GT(std::exp(double(m.p("loss.log_sigma_audio").value.data[0])), 0.0);
  EXPECT_NEAR(std::exp(m.p("loss.log_sigma_frame").value.data[0]), 10.0, 1e-4);
}

TEST(MaskLm, UntrainedNearLogV) {
  Model<float> m(lm_config("masklm"), 2);
  Rng rng(7);
  Tape<float> tape;
  auto states = tape.leaf(random_rows(4, 64, rng).cast<float>());
  std::vector<std::vector<int>> spans{{10, 11, 12}, {40}, {299, 5, 6, 7, 8}, {100, 101}};
  const double loss = mask_lm_loss(m, tape, states, spans).item();
  EXPECT_NEAR(loss, std::log(300.0), 0.1 * std::log(300.0));
  EXPECT_THROW(mask_lm_loss(m, tape, states, {{1}, {2}, {3}, std::vector<int>(16, 9)}), std::invalid_argument);
  EXPECT_THROW(mask_lm_loss(m, tape, states, {{1}, {2}, {3}, {}}), std::invalid_argument);
  EXPECT_THROW(mask_lm_loss(m, tape, states, {{1}, {2}, {3}}), ShapeError);
}

TEST(Virtex, SingleTokenIsClassification) {
  Model<float> m(lm_config("virtex"), 3);
  Rng rng(8);
  Tape<float> tape;
  auto states = tape.leaf(random_rows(3, 64, rng).cast<float>());
  const double loss = virtex_lm_loss(m, tape, states, {{17}, {18}, {19}}).item();
  EXPECT_NEAR(loss, std::log(300.0), 0.1 * std::log(300.0));
}

TEST(Virtex, LogitsIgnoreFutureTokens) {
  Model<double> m(lm_config("virtex"), 4);
  Rng rng(9);
  const auto s = random_rows(2, 64, rng);
  auto logits = [&](std::vector<std::vector<int>> spans) {
    Tape<double> tape;
    return virtex_logits(m, tape, tape.leaf(s), spans).value();
  };
  auto a = logits({{20, 21, 22, 23}, {30, 31}});
  auto b = logits({{20, 21, 222, 99}, {30, 131}});
  ASSERT_EQ(a.rows(), 6u);
  for (std::size_t r : {0, 1, 2, 4})
    for (std::size_t j = 0; j < a.cols(); ++j) ASSERT_EQ(a(r, j), b(r, j)) << r;
  bool changed = false;
  for (std::size_t j = 0; j < a.cols(); ++j) changed |= a(3, j) != b(3, j);
  EXPECT_TRUE(changed);
}

TEST(Ablations, TokenLossesDecreaseWithTraining) {
  for (std::string objective : {"masklm", "virtex"}) {
    Model<float> m(lm_config(objective), 5);
    Rng rng(10);
    const auto states = random_rows(8, 64, rng).cast<float>();
    std::vector<std::vector<int>> spans;
    for (int i = 0; i < 8; ++i) spans.push_back({10 + i, 30 + i, 50 + (i % 3)});
    AdamW<float> opt(m.params, {.weight_decay = 0.0});
    double first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
      Tape<float> tape;
      auto loss = objective == "masklm" ? mask_lm_loss(m, tape, tape.leaf(states), spans)
                                        : virtex_lm_loss(m, tape, tape.leaf(states), spans);
      if (step == 0) first = loss.item();
      last = loss.item();
      m.params.zero_grad();
      tape.backward(loss);
      tape.accumulate_param_grads();
      opt.step(m.params, 1e-3);
    }
    EXPECT_LT(last, 0.7 * first) << objective;
  }
}
