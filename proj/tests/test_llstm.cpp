#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "clotseg/gradcheck.hpp"
#include "clotseg/llstm.hpp"
#include "oracles.hpp"

using clotseg::LLSTMConfig;
using clotseg::LLSTMParams;
using clotseg::RecurrentState;
using clotseg::Shape;
using clotseg::Tensor;

namespace {

/// 4x4 desk config from the module invariants.
LLSTMConfig desk_config() {
  LLSTMConfig cfg;
  cfg.n_c = 2;
  cfg.n_l = 2;
  cfg.m = 1;
  cfg.w = 3;
  cfg.n1 = 4;
  cfg.d_k = 3;
  return cfg;
}

void zero_params(LLSTMParams<double>& p) {
  for (auto* t : {&p.l1_w, &p.l1_b, &p.l2_w, &p.l3_w, &p.l3_b, &p.l4_w, &p.l4_b, &p.head_w,
                  &p.head_b})
    for (auto& v : t->mutable_data()) v = 0.0;
}

}  // namespace

TEST_CASE("config validation and window schedule") {
  LLSTMConfig cfg = desk_config();
  CHECK_NOTHROW(cfg.validate());
  // k = n_l / m = 2 and n1 = 4: windows 2*4/2 = 4 and 2*4/4 = 2
  CHECK(cfg.windows() == std::vector<std::int64_t>{4, 2});

  cfg.n_l = 8;
  cfg.m = 3;
  CHECK_THROWS_AS(cfg.validate(), clotseg::ValueError);  // the paper-table pair is indivisible

  LLSTMConfig paper;
  paper.n_c = 4;
  paper.n_l = 9;
  paper.m = 3;
  paper.n1 = 256;
  CHECK_NOTHROW(paper.validate());
  CHECK(paper.windows() == std::vector<std::int64_t>{256, 128, 64});

  LLSTMConfig tiny = desk_config();
  tiny.n_l = 8;
  tiny.m = 1;  // k = 8; deep windows clip at 1
  auto w = tiny.windows();
  CHECK(w.front() == 4);
  CHECK(w.back() == 1);
}

TEST_CASE("transfer with unit windows is the identity") {
  clotseg::Rng rng(1);
  auto x = Tensor<double>::randn({4, 5, 5}, rng);
  auto y = clotseg::transfer(x, 2, {1, 1});
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("transfer groups channels as k blocks of m (paper example n4=6, m=3)") {
  clotseg::Rng rng(2);
  auto x = Tensor<double>::randn({6, 6, 6}, rng);
  auto y = clotseg::transfer(x, 3, {3, 1});
  // First three channels pooled with window 3, last three untouched.
  for (std::int64_t c = 0; c < 3; ++c) {
    std::vector<double> chan(x.data().begin() + c * 36, x.data().begin() + (c + 1) * 36);
    auto ref = oracles::maxpool(chan, 1, 6, 6, 3);
    for (std::int64_t i = 0; i < 36; ++i) CHECK(y.data()[c * 36 + i] == ref[i]);
  }
  for (std::int64_t i = 3 * 36; i < 6 * 36; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("transfer with a plane-covering window spreads a single peak everywhere") {
  auto x = Tensor<double>::zeros({1, 6, 6});
  x.mutable_data()[2 * 6 + 4] = 3.5;
  auto y = clotseg::transfer(x, 1, {11});  // window 11 covers the whole 6x6 plane
  for (std::int64_t i = 0; i < 36; ++i) CHECK(y.data()[i] == 3.5);
}

TEST_CASE("transfer equals brute-force sliding max for every group window") {
  clotseg::Rng rng(3);
  LLSTMConfig cfg = desk_config();
  cfg.n_l = 4;
  cfg.m = 2;
  cfg.n1 = 8;
  auto windows = cfg.windows();
  for (int trial = 0; trial < 30; ++trial) {
    auto x = Tensor<double>::randn({cfg.n_l, 8, 8}, rng);
    auto y = clotseg::transfer(x, cfg.m, windows);
    for (std::int64_t c = 0; c < cfg.n_l; ++c) {
      const std::int64_t window = windows[static_cast<std::size_t>(c / cfg.m)];
      std::vector<double> chan(x.data().begin() + c * 64, x.data().begin() + (c + 1) * 64);
      auto ref = oracles::maxpool(chan, 1, 8, 8, window);
      for (std::int64_t i = 0; i < 64; ++i) CHECK(y.data()[c * 64 + i] == ref[i]);
    }
  }
}

TEST_CASE("transfer rejects an indivisible channel grouping") {
  auto x = Tensor<double>::zeros({5, 4, 4});
  CHECK_THROWS_AS(clotseg::transfer(x, 2, {4, 2}), clotseg::ValueError);
  CHECK_THROWS_AS(clotseg::transfer(x, 5, {4, 2}), clotseg::ValueError);
}

TEST_CASE("logic: all-zero parameters produce an all-zero output") {
  clotseg::Rng rng(4);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  zero_params(params);
  auto a_c = Tensor<double>::randn({2 * cfg.n_c + cfg.d_k, 4, 4}, rng);
  auto a_l = Tensor<double>::randn({2 * cfg.n_l, 4, 4}, rng);
  auto g = clotseg::logic(a_c, a_l, params);
  for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("logic output has 4*(n_c+n_l) channels") {
  clotseg::Rng rng(5);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  auto a_c = Tensor<double>::randn({2 * cfg.n_c + cfg.d_k, 4, 4}, rng);
  auto a_l = Tensor<double>::randn({2 * cfg.n_l, 4, 4}, rng);
  auto g = clotseg::logic(a_c, a_l, params);
  CHECK(g.shape() == Shape{4 * (cfg.n_c + cfg.n_l), 4, 4});
  CHECK_THROWS_AS(clotseg::logic(a_l, a_c, params), clotseg::ShapeError);
}

TEST_CASE("logic is linear in A_l when L1, L3, L4 are zero (L2 has no bias)") {
  clotseg::Rng rng(6);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  for (auto* t : {&params.l1_w, &params.l1_b, &params.l3_w, &params.l3_b, &params.l4_w,
                  &params.l4_b})
    for (auto& v : t->mutable_data()) v = 0.0;
  auto a_c = Tensor<double>::randn({2 * cfg.n_c + cfg.d_k, 4, 4}, rng);
  auto a_l = Tensor<double>::randn({2 * cfg.n_l, 4, 4}, rng);
  auto g1 = clotseg::logic(a_c, a_l, params);
  auto g2 = clotseg::logic(a_c, clotseg::scalar_mul(a_l, 2.0), params);
  // With every bias path silent, doubling A_l doubles the output exactly.
  for (std::int64_t i = 0; i < g1.size(); ++i)
    CHECK(g2.data()[i] == doctest::Approx(2.0 * g1.data()[i]));
}

TEST_CASE("cell_step: zero everything stays at zero") {
  clotseg::Rng rng(7);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  zero_params(params);
  auto state = RecurrentState<double>::zero(cfg);
  auto x = Tensor<double>::zeros({cfg.d_k, 4, 4});
  auto next = clotseg::cell_step(state, x, params);
  for (double v : next.c.data()) CHECK(v == 0.0);
  for (double v : next.h.data()) CHECK(v == 0.0);
}

TEST_CASE("cell_step: zero parameters halve the carried cell state") {
  clotseg::Rng rng(8);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  zero_params(params);
  auto state = RecurrentState<double>::zero(cfg);
  state.c = Tensor<double>::randn({cfg.state_channels(), 4, 4}, rng);
  auto x = Tensor<double>::zeros({cfg.d_k, 4, 4});
  auto next = clotseg::cell_step(state, x, params);
  // sigma(0) = 0.5, tanh(0) = 0: c' = 0.5 c, h' = 0.5 tanh(0.5 c)
  for (std::int64_t i = 0; i < next.c.size(); ++i) {
    CHECK(next.c.data()[i] == doctest::Approx(0.5 * state.c.data()[i]));
    CHECK(next.h.data()[i] == doctest::Approx(0.5 * std::tanh(0.5 * state.c.data()[i])));
  }
}

TEST_CASE("state shapes are invariant across ten steps") {
  clotseg::Rng rng(9);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  auto state = RecurrentState<double>::zero(cfg);
  for (int t = 0; t < 10; ++t) {
    auto x = Tensor<double>::randn({cfg.d_k, 4, 4}, rng, 0.3);
    state = clotseg::cell_step(state, x, params);
    CHECK(state.h.shape() == Shape{cfg.state_channels(), 4, 4});
    CHECK(state.c.shape() == Shape{cfg.state_channels(), 4, 4});
    for (double v : state.h.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("run_sequence: s=1 pass-2 seed equals the pass-1 recorded state") {
  clotseg::Rng rng(10);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  auto x = Tensor<double>::randn({cfg.d_k, 4, 4}, rng);
  // Reproduce the definition by hand: pass 1 records state_1 from zero;
  // pass 2 step 1 is cell_step(state_1, x_1).
  auto state1 = clotseg::cell_step(RecurrentState<double>::zero(cfg), x, params);
  auto seeded = clotseg::cell_step(state1, x, params);
  auto expect = clotseg::softmax2_fg(clotseg::head_logits(seeded.h, params));
  auto probs = clotseg::run_sequence<double>({x}, params);
  REQUIRE(probs.size() == 1);
  for (std::int64_t i = 0; i < expect.size(); ++i)
    CHECK(probs[0].data()[i] == expect.data()[i]);
}

TEST_CASE("head emits two class channels before the softmax") {
  clotseg::Rng rng(11);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  auto h = Tensor<double>::randn({cfg.state_channels(), 4, 4}, rng);
  auto logits = clotseg::head_logits(h, params);
  CHECK(logits.shape() == Shape{2, cfg.n1, cfg.n1});
}

TEST_CASE("run_sequence probabilities are valid per voxel") {
  clotseg::Rng rng(12);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  std::vector<Tensor<double>> slices;
  for (int t = 0; t < 4; ++t) slices.push_back(Tensor<double>::randn({cfg.d_k, 4, 4}, rng));
  auto probs = clotseg::run_sequence(slices, params);
  REQUIRE(probs.size() == 4);
  for (const auto& p : probs) {
    CHECK(p.shape() == Shape{4, 4});
    for (double v : p.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK_THROWS_AS(clotseg::run_sequence<double>({}, params), clotseg::ValueError);
}

TEST_CASE("run_sequence is bit-deterministic") {
  clotseg::Rng rng(13);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  std::vector<Tensor<double>> slices;
  for (int t = 0; t < 3; ++t) slices.push_back(Tensor<double>::randn({cfg.d_k, 4, 4}, rng));
  auto a = clotseg::run_sequence(slices, params);
  auto b = clotseg::run_sequence(slices, params);
  for (std::size_t t = 0; t < a.size(); ++t)
    CHECK(std::memcmp(a[t].data().data(), b[t].data().data(),
                      sizeof(double) * static_cast<std::size_t>(a[t].size())) == 0);
}

TEST_CASE("LLSTM gates hold strictly fewer parameters than the ConvLSTM equivalent") {
  clotseg::Rng rng(14);
  for (const auto& cfg_vals : {std::array<std::int64_t, 4>{2, 2, 1, 3},
                               std::array<std::int64_t, 4>{4, 9, 3, 32}}) {
    LLSTMConfig cfg;
    cfg.n_c = cfg_vals[0];
    cfg.n_l = cfg_vals[1];
    cfg.m = cfg_vals[2];
    cfg.d_k = cfg_vals[3];
    cfg.n1 = 16;
    auto params = LLSTMParams<double>::init(cfg, rng);
    CHECK(params.gate_parameter_count() < clotseg::convlstm_gate_parameter_count(cfg));
  }
}

TEST_CASE("cell_step passes grad_check on the 4x4 desk config") {
  clotseg::Rng rng(15);
  auto cfg = desk_config();
  auto params = LLSTMParams<double>::init(cfg, rng);
  auto x = Tensor<double>::randn({cfg.d_k, 4, 4}, rng);
  auto probe_h = Tensor<double>::randn({cfg.state_channels(), 4, 4}, rng);
  auto probe_c = Tensor<double>::randn({cfg.state_channels(), 4, 4}, rng);
  auto h0 = Tensor<double>::randn({cfg.state_channels(), 4, 4}, rng, 0.5, 0.0, true);
  auto c0 = Tensor<double>::randn({cfg.state_channels(), 4, 4}, rng, 0.5, 0.0, true);
  std::vector<clotseg::NamedParam<double>> named;
  params.collect("llstm", named);
  std::vector<Tensor<double>> tensors{h0, c0};
  for (auto& np : named) tensors.push_back(np.tensor);
  auto f = [&] {
    auto next = clotseg::cell_step({h0, c0}, x, params);
    return clotseg::add(clotseg::sum_all(clotseg::mul(next.h, probe_h)),
                        clotseg::sum_all(clotseg::mul(next.c, probe_c)));
  };
  CHECK(clotseg::grad_check<double>(f, tensors) < 1e-4);
}
