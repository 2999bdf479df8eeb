#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "clotseg/gradcheck.hpp"
#include "clotseg/model.hpp"

namespace clotseg {

struct GradCheckReport {
  std::vector<std::pair<std::string, double>> layers;
  double worst = 0.0;
  bool pass = true;
};

/// Gradient fidelity sweep over every differentiable layer, 64-bit with
/// h = 1e-5: convolution, attention (softmax path and the full fusion
/// block), layer norm, transfer pooling, the Logic operator, one LLSTM cell
/// step, and the full model loss on the n1=16, s=2 desk configuration.
inline GradCheckReport run_gradcheck_suite(double tolerance = 1e-4,
                                           std::ostream* out = nullptr) {
  GradCheckReport report;
  auto record = [&](const std::string& name, double err) {
    report.layers.emplace_back(name, err);
    report.worst = std::max(report.worst, err);
    if (err >= tolerance) report.pass = false;
    if (out) {
      *out << (err < tolerance ? "[ok]   " : "[FAIL] ") << name << "  max rel err " << err
           << "\n";
    }
  };
  using T = Tensor<double>;

  {
    double worst = 0.0;
    for (int seed = 0; seed < 5; ++seed) {
      Rng rng(1000 + seed);
      auto x = T::randn({2, 6, 6}, rng, 1.0, 0.0, true);
      auto k = T::randn({3, 2, 3, 3}, rng, 1.0, 0.0, true);
      auto b = T::randn({3}, rng, 1.0, 0.0, true);
      auto f = [&] { return sum_all(tanh(conv2d(x, k, b))); };
      worst = std::max(worst, grad_check<double>(f, {x, k, b}));
    }
    record("conv2d", worst);
  }
  {
    double worst = 0.0;
    for (int seed = 0; seed < 5; ++seed) {
      Rng rng(2000 + seed);
      auto q = T::randn({2, 4}, rng, 1.0, 0.0, true);
      auto k = T::randn({3, 4}, rng, 1.0, 0.0, true);
      auto v = T::randn({3, 4}, rng, 1.0, 0.0, true);
      auto probe = T::randn({2, 4}, rng);
      auto f = [&] { return sum_all(mul(scaled_dot_attention(q, k, v, 4).out, probe)); };
      worst = std::max(worst, grad_check<double>(f, {q, k, v}));
    }
    record("softmax-attention", worst);
  }
  {
    double worst = 0.0;
    for (int seed = 0; seed < 5; ++seed) {
      Rng rng(3000 + seed);
      auto x = T::randn({3, 5}, rng, 1.0, 0.0, true);
      auto gamma = T::rand_uniform({5}, rng, 0.5, 1.5, true);
      auto beta = T::randn({5}, rng, 1.0, 0.0, true);
      auto probe = T::randn({3, 5}, rng);
      auto f = [&] { return sum_all(mul(layer_norm(x, gamma, beta), probe)); };
      worst = std::max(worst, grad_check<double>(f, {x, gamma, beta}));
    }
    record("layer-norm", worst);
  }
  {
    double worst = 0.0;
    for (int seed = 0; seed < 5; ++seed) {
      Rng rng(4000 + seed);
      auto x = T::randn({4, 6, 6}, rng, 1.0, 0.0, true);
      auto probe = T::randn({4, 6, 6}, rng);
      auto f = [&] { return sum_all(mul(transfer(x, 2, {6, 3}), probe)); };
      worst = std::max(worst, grad_check<double>(f, {x}));
    }
    record("transfer-pooling", worst);
  }

  LLSTMConfig cell_cfg;
  cell_cfg.n_c = 2;
  cell_cfg.n_l = 2;
  cell_cfg.m = 1;
  cell_cfg.w = 3;
  cell_cfg.n1 = 4;
  cell_cfg.d_k = 3;
  {
    double worst = 0.0;
    for (int seed = 0; seed < 3; ++seed) {
      Rng rng(5000 + seed);
      auto params = LLSTMParams<double>::init(cell_cfg, rng);
      auto a_c = T::randn({2 * cell_cfg.n_c + cell_cfg.d_k, 4, 4}, rng, 1.0, 0.0, true);
      auto a_l = T::randn({2 * cell_cfg.n_l, 4, 4}, rng, 1.0, 0.0, true);
      auto probe = T::randn({4 * (cell_cfg.n_c + cell_cfg.n_l), 4, 4}, rng);
      std::vector<NamedParam<double>> named;
      params.collect("llstm", named);
      std::vector<T> tensors{a_c, a_l};
      for (auto& np : named) {
        if (np.name.rfind("llstm.head", 0) == 0) continue;  // head is not part of logic()
        tensors.push_back(np.tensor);
      }
      auto f = [&] { return sum_all(mul(logic(a_c, a_l, params), probe)); };
      worst = std::max(worst, grad_check<double>(f, tensors));
    }
    record("logic-operator", worst);
  }
  {
    double worst = 0.0;
    for (int seed = 0; seed < 3; ++seed) {
      Rng rng(6000 + seed);
      auto params = LLSTMParams<double>::init(cell_cfg, rng);
      auto x = T::randn({cell_cfg.d_k, 4, 4}, rng);
      auto h0 = T::randn({cell_cfg.state_channels(), 4, 4}, rng, 0.5, 0.0, true);
      auto c0 = T::randn({cell_cfg.state_channels(), 4, 4}, rng, 0.5, 0.0, true);
      auto probe = T::randn({cell_cfg.state_channels(), 4, 4}, rng);
      std::vector<NamedParam<double>> named;
      params.collect("llstm", named);
      std::vector<T> tensors{h0, c0};
      for (auto& np : named) tensors.push_back(np.tensor);
      auto f = [&] {
        auto next = cell_step<double>({h0, c0}, x, params);
        return sum_all(mul(next.h, probe));
      };
      worst = std::max(worst, grad_check<double>(f, tensors));
    }
    record("llstm-cell", worst);
  }
  {
    Rng rng(7000);
    ModelConfig cfg;
    cfg.fusion.n1 = 16;
    cfg.fusion.p1 = 8;
    cfg.fusion.p2 = 4;
    cfg.fusion.d_k = 4;
    cfg.fusion.mlp_hidden = 4;
    cfg.llstm.n_c = 2;
    cfg.llstm.n_l = 2;
    cfg.llstm.m = 1;
    cfg.llstm.w = 3;
    cfg.llstm.n1 = 16;
    cfg.llstm.d_k = 4;
    cfg.s = 2;
    auto model = UpAttLLSTM<double>::init(cfg, rng);
    Crop crop;
    crop.n1 = 16;
    crop.s = 2;
    const auto total = static_cast<std::size_t>(crop.voxels());
    crop.dwi.resize(total);
    crop.swan.resize(total);
    crop.phase.resize(total);
    crop.gt.assign(total, 0);
    for (auto* mod : {&crop.dwi, &crop.swan, &crop.phase})
      for (auto& v : *mod) v = static_cast<float>(rng.normal(0.0, 1.0));
    for (std::int64_t i = 5; i < 9; ++i)
      for (std::int64_t j = 5; j < 9; ++j) crop.gt[static_cast<std::size_t>(i * 16 + j)] = 1;
    auto tensors = model.parameter_tensors();
    auto f = [&] { return segmentation_loss(model.forward(crop), crop.gt); };
    record("model-loss", grad_check<double>(f, tensors));
  }
  return report;
}

}  // namespace clotseg
