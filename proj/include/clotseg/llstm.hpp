#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clotseg/conv.hpp"
#include "clotseg/fusion.hpp"
#include "clotseg/ops.hpp"
#include "clotseg/tensor.hpp"

namespace clotseg {

/// Logic-LSTM geometry. The hidden/cell state carries n_c convolution
/// channels followed by n_l logic channels; the logic channels are pooled in
/// k = n_l / m groups with window sizes 2*n1 / 2^i (i = 1..k), clipped to
/// [1, n1].
struct LLSTMConfig {
  std::int64_t n_c = 4;
  std::int64_t n_l = 9;
  std::int64_t m = 3;
  std::int64_t w = 3;
  std::int64_t n1 = 256;
  std::int64_t d_k = 32;
  double forget_bias = 1.0;

  void validate() const {
    if (n_c < 1 || n_l < 1 || m < 1 || w < 1 || n1 < 1 || d_k < 1) {
      throw ValueError("llstm: all sizes must be positive");
    }
    if (n_l % m != 0) {
      throw ValueError("llstm: multiplicity m=" + std::to_string(m) +
                       " must divide the logic channel count n_l=" + std::to_string(n_l));
    }
    if (w % 2 == 0) {
      throw ValueError("llstm: gate kernel w must be odd for same-padding, got " +
                       std::to_string(w));
    }
  }

  std::int64_t groups() const { return n_l / m; }
  std::int64_t state_channels() const { return n_c + n_l; }

  std::vector<std::int64_t> windows() const {
    std::vector<std::int64_t> out;
    for (std::int64_t i = 1; i <= groups(); ++i) {
      const std::int64_t p = (2 * n1) >> i;
      out.push_back(std::max<std::int64_t>(1, std::min(p, n1)));
    }
    return out;
  }
};

/// Hidden and cell state, each [n_c + n_l, n1, n1] with the convolution part
/// in the leading n_c channels.
template <typename S>
struct RecurrentState {
  Tensor<S> h, c;

  static RecurrentState zero(const LLSTMConfig& cfg) {
    return {Tensor<S>::zeros({cfg.state_channels(), cfg.n1, cfg.n1}),
            Tensor<S>::zeros({cfg.state_channels(), cfg.n1, cfg.n1})};
  }
};

template <typename S>
struct LLSTMParams {
  LLSTMConfig cfg;
  Tensor<S> l1_w, l1_b;  // w x w over A_c, 4*n_c outputs
  Tensor<S> l2_w;        // 1x1 over A_l, 4*n_c outputs, no bias
  Tensor<S> l3_w, l3_b;  // w x w over A_c, n_l outputs (into the transfer layer)
  Tensor<S> l4_w, l4_b;  // 1x1 over T(L3)||A_l, 4*n_l outputs
  Tensor<S> head_w, head_b;  // 1x1 two-class prediction head

  static LLSTMParams init(const LLSTMConfig& cfg, Rng& rng) {
    cfg.validate();
    LLSTMParams p;
    p.cfg = cfg;
    const std::int64_t ac = 2 * cfg.n_c + cfg.d_k;  // c1 || h1 || x
    const std::int64_t al = 2 * cfg.n_l;            // c2 || h2
    const std::int64_t ww = cfg.w * cfg.w;
    p.l1_w = detail::glorot<S>({4 * cfg.n_c, ac, cfg.w, cfg.w}, ac * ww, 4 * cfg.n_c * ww, rng);
    p.l1_b = Tensor<S>::zeros({4 * cfg.n_c}, true);
    p.l2_w = detail::glorot<S>({4 * cfg.n_c, al, 1, 1}, al, 4 * cfg.n_c, rng);
    p.l3_w = detail::glorot<S>({cfg.n_l, ac, cfg.w, cfg.w}, ac * ww, cfg.n_l * ww, rng);
    p.l3_b = Tensor<S>::zeros({cfg.n_l}, true);
    p.l4_w = detail::glorot<S>({4 * cfg.n_l, 3 * cfg.n_l, 1, 1}, 3 * cfg.n_l, 4 * cfg.n_l, rng);
    p.l4_b = Tensor<S>::zeros({4 * cfg.n_l}, true);
    p.head_w = detail::glorot<S>({2, cfg.state_channels(), 1, 1}, cfg.state_channels(), 2, rng);
    p.head_b = Tensor<S>::zeros({2}, true);
    // Forget-gate bias starts positive (gate order i,f,g,o).
    for (std::int64_t i = cfg.n_c; i < 2 * cfg.n_c; ++i)
      p.l1_b.mutable_data()[i] = static_cast<S>(cfg.forget_bias);
    for (std::int64_t i = cfg.n_l; i < 2 * cfg.n_l; ++i)
      p.l4_b.mutable_data()[i] = static_cast<S>(cfg.forget_bias);
    return p;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<S>>& out) const {
    out.push_back({prefix + ".l1_w", l1_w});
    out.push_back({prefix + ".l1_b", l1_b});
    out.push_back({prefix + ".l2_w", l2_w});
    out.push_back({prefix + ".l3_w", l3_w});
    out.push_back({prefix + ".l3_b", l3_b});
    out.push_back({prefix + ".l4_w", l4_w});
    out.push_back({prefix + ".l4_b", l4_b});
    out.push_back({prefix + ".head_w", head_w});
    out.push_back({prefix + ".head_b", head_b});
  }

  /// Trainable scalars in the four gate layers (head excluded).
  std::int64_t gate_parameter_count() const {
    return l1_w.size() + l1_b.size() + l2_w.size() + l3_w.size() + l3_b.size() + l4_w.size() +
           l4_b.size();
  }
};

/// Gate parameter count of the plain ConvLSTM this cell replaces: one w x w
/// convolution over the full c||h||x stack producing all 4*(n_c+n_l) gate
/// channels, with bias.
inline std::int64_t convlstm_gate_parameter_count(const LLSTMConfig& cfg) {
  const std::int64_t state = cfg.state_channels();
  const std::int64_t in_ch = 2 * state + cfg.d_k;
  return 4 * state * in_ch * cfg.w * cfg.w + 4 * state;
}

/// Multi-window transfer layer: channel u = i*m + j is max-pooled with
/// window p_i, stride 1, shape preserved. Group i's m channels share one
/// window size.
template <typename S>
Tensor<S> transfer(const Tensor<S>& x, std::int64_t m,
                   const std::vector<std::int64_t>& windows) {
  const std::int64_t channels = x.dim(0);
  if (m < 1 || channels % m != 0) {
    throw ValueError("transfer: multiplicity " + std::to_string(m) +
                     " does not divide channel count " + std::to_string(channels));
  }
  const auto k = static_cast<std::int64_t>(windows.size());
  if (k * m != channels) {
    throw ValueError("transfer: " + std::to_string(windows.size()) + " windows for " +
                     std::to_string(channels) + " channels with m=" + std::to_string(m));
  }
  std::vector<Tensor<S>> groups;
  groups.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    auto group = slice_dim0(x, i * m, (i + 1) * m);
    groups.push_back(maxpool_window(group, windows[static_cast<std::size_t>(i)]));
  }
  return k == 1 ? groups[0] : concat_dim0(groups);
}

/// Logic operator: a1 = L1(A_c) + L2(A_l) is the convolution part (L2 is
/// 1x1, bias-free by construction), a2 = L4(T(L3(A_c)) || A_l) the logic
/// part. Returns a1 || a2 along channels: 4*n_c + 4*n_l gate pre-activation
/// channels.
template <typename S>
Tensor<S> logic(const Tensor<S>& a_c, const Tensor<S>& a_l, const LLSTMParams<S>& params) {
  const auto& cfg = params.cfg;
  if (a_c.dim(0) != 2 * cfg.n_c + cfg.d_k || a_l.dim(0) != 2 * cfg.n_l) {
    throw ShapeError("logic: expected A_c with " + std::to_string(2 * cfg.n_c + cfg.d_k) +
                     " and A_l with " + std::to_string(2 * cfg.n_l) + " channels, got " +
                     shape_str(a_c.shape()) + " and " + shape_str(a_l.shape()));
  }
  auto a1 = add(conv2d(a_c, params.l1_w, params.l1_b, Padding::kSame),
                conv2d(a_l, params.l2_w, Padding::kSame));
  auto pooled = transfer(conv2d(a_c, params.l3_w, params.l3_b, Padding::kSame), cfg.m,
                         cfg.windows());
  auto a2 = conv2d(concat_dim0<S>({pooled, a_l}), params.l4_w, params.l4_b, Padding::kSame);
  return concat_dim0<S>({a1, a2});
}

/// One recurrence step. Gate pre-activations come from Logic(A); each of the
/// four gates takes n_c channels from the convolution part and n_l from the
/// logic part, so the updated state re-splits positionally.
template <typename S>
RecurrentState<S> cell_step(const RecurrentState<S>& state, const Tensor<S>& x_t,
                            const LLSTMParams<S>& params) {
  const auto& cfg = params.cfg;
  auto c1 = slice_dim0(state.c, 0, cfg.n_c);
  auto c2 = slice_dim0(state.c, cfg.n_c, cfg.state_channels());
  auto h1 = slice_dim0(state.h, 0, cfg.n_c);
  auto h2 = slice_dim0(state.h, cfg.n_c, cfg.state_channels());
  auto a_c = concat_dim0<S>({c1, h1, x_t});
  auto a_l = concat_dim0<S>({c2, h2});
  auto gates = logic(a_c, a_l, params);

  const std::int64_t conv_off = 0, logic_off = 4 * cfg.n_c;
  auto gate = [&](std::int64_t idx) {
    auto conv_part = slice_dim0(gates, conv_off + idx * cfg.n_c, conv_off + (idx + 1) * cfg.n_c);
    auto logic_part =
        slice_dim0(gates, logic_off + idx * cfg.n_l, logic_off + (idx + 1) * cfg.n_l);
    return concat_dim0<S>({conv_part, logic_part});
  };
  auto in_gate = sigmoid(gate(0));
  auto forget_gate = sigmoid(gate(1));
  auto cell_cand = tanh(gate(2));
  auto out_gate = sigmoid(gate(3));

  RecurrentState<S> next;
  next.c = add(mul(forget_gate, state.c), mul(in_gate, cell_cand));
  next.h = mul(out_gate, tanh(next.c));
  return next;
}

template <typename S>
Tensor<S> head_logits(const Tensor<S>& h, const LLSTMParams<S>& params) {
  return conv2d(h, params.head_w, params.head_b, Padding::kSame);
}

/// Double-pass recurrence over the slice sequence. Pass 1 runs from zero
/// state and records the state after every step; pass 2 re-runs step t
/// seeded by the recorded state at t and emits the two-class head, returning
/// per-slice foreground probability maps.
template <typename S>
std::vector<Tensor<S>> run_sequence(const std::vector<Tensor<S>>& slices,
                                    const LLSTMParams<S>& params) {
  if (slices.empty()) throw ValueError("run_sequence: empty slice sequence");
  const auto& cfg = params.cfg;
  std::vector<RecurrentState<S>> recorded;
  recorded.reserve(slices.size());
  auto state = RecurrentState<S>::zero(cfg);
  for (const auto& x_t : slices) {
    state = cell_step(state, x_t, params);
    recorded.push_back(state);
  }
  std::vector<Tensor<S>> probs;
  probs.reserve(slices.size());
  for (std::size_t t = 0; t < slices.size(); ++t) {
    auto seeded = cell_step(recorded[t], slices[t], params);
    probs.push_back(softmax2_fg(head_logits(seeded.h, params)));
  }
  return probs;
}

}  // namespace clotseg
