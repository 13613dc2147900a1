#pragma once

// Diagonal selective state-space recurrence.
//
// Per channel c and state index s, with step size delta_t[c] and diagonal
// entry a[c][s] < 0:
//   a_bar = exp(delta * a)
//   b_bar = (delta * a)^{-1} (exp(delta * a) - 1) * delta * b_t[s]
//   h_t[c][s] = a_bar * h_{t-1}[c][s] + b_bar * x_t[c]
//   y_t[c]    = sum_s c_t[s] * h_t[c][s]
// B and C are shared across channels; delta is per channel.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fscil/ops.hpp"
#include "fscil/tensor.hpp"

namespace fscil::ssm {

// Below this |delta * a| the first-order limit b_bar = delta * b is used.
inline constexpr double kZohEpsilon = 1e-8;

namespace detail {

// phi(u) = (e^u - 1) / u, with phi(0) = 1.
template <typename T>
T zoh_phi(T u) {
  return std::abs(u) < static_cast<T>(kZohEpsilon) ? T{1} : std::expm1(u) / u;
}

// phi'(u); zero on the limiting branch, series near the origin to avoid cancellation.
template <typename T>
T zoh_phi_derivative(T u) {
  if (std::abs(u) < static_cast<T>(kZohEpsilon)) return T{0};
  if (std::abs(u) < static_cast<T>(1e-3)) return T{0.5} + u / T{3} + u * u / T{8} + u * u * u / T{30};
  return (u * std::exp(u) - std::expm1(u)) / (u * u);
}

// Within this radius the batched scan evaluates phi and phi' by Taylor series;
// outside it (e^u - 1) / u loses at most ~eps / radius to cancellation.
inline constexpr double kSeriesRadius = 1e-2;

// 1 + u/2 + u^2/6 + u^3/24 + u^4/120 + u^5/720
template <typename T>
T phi_series(T u) {
  return T{1} + u * (T{1} / T{2} + u * (T{1} / T{6} + u * (T{1} / T{24} + u * (T{1} / T{120} + u * (T{1} / T{720})))));
}

// 1/2 + u/3 + u^2/8 + u^3/30 + u^4/144 + u^5/840
template <typename T>
T phi_derivative_series(T u) {
  return T{1} / T{2} + u * (T{1} / T{3} + u * (T{1} / T{8} + u * (T{1} / T{30} + u * (T{1} / T{144} + u * (T{1} / T{840})))));
}

}  // namespace detail

template <typename T>
struct Discretized {
  T a_bar;
  T b_bar;
};

// Zero-order-hold discretization of one diagonal entry.
template <typename T>
Discretized<T> discretize_zoh(T a, T b, T delta) {
  if (!(delta > T{0})) throw ContractError("discretize_zoh: delta must be positive");
  const T u = delta * a;
  return {std::exp(u), detail::zoh_phi(u) * delta * b};
}

// Diagonal A, one row of `state` entries per channel, stored [channels x state].
template <typename T>
class StateMatrix {
 public:
  StateMatrix(std::size_t channels, std::size_t state, std::vector<T> a)
      : channels_(channels), state_(state), a_(std::move(a)) {
    if (a_.size() != channels_ * state_) throw ShapeError("StateMatrix: expected channels*state entries");
    for (const T v : a_) {
      if (!(v < T{0})) throw ContractError("StateMatrix: entries must be strictly negative");
    }
  }

  static StateMatrix hippo(std::size_t channels, std::size_t state);

  std::size_t channels() const { return channels_; }
  std::size_t state() const { return state_; }
  T operator()(std::size_t c, std::size_t s) const { return a_[c * state_ + s]; }
  std::span<const T> values() const { return a_; }

 private:
  std::size_t channels_;
  std::size_t state_;
  std::vector<T> a_;
};

// S4D-real diagonal: a[d] = -(d + 1).
template <typename T>
std::vector<T> hippo_init(std::size_t d_state) {
  if (d_state == 0) throw ContractError("hippo_init: d_state must be at least 1");
  std::vector<T> a(d_state);
  for (std::size_t d = 0; d < d_state; ++d) a[d] = -static_cast<T>(d + 1);
  return a;
}

template <typename T>
StateMatrix<T> StateMatrix<T>::hippo(std::size_t channels, std::size_t state) {
  const auto row = hippo_init<T>(state);
  std::vector<T> a;
  a.reserve(channels * state);
  for (std::size_t c = 0; c < channels; ++c) a.insert(a.end(), row.begin(), row.end());
  return StateMatrix(channels, state, std::move(a));
}

// One sequence. Row-major: x and delta are [length x channels], b and c are
// [length x state].
template <typename T>
struct ScanInputs {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
  std::vector<T> x;
  std::vector<T> b;
  std::vector<T> c;
  std::vector<T> delta;

  void validate() const {
    if (x.size() != length * channels || delta.size() != length * channels) {
      throw ShapeError("ScanInputs: x and delta must be [length x channels]");
    }
    if (b.size() != length * state || c.size() != length * state) {
      throw ShapeError("ScanInputs: b and c must be [length x state]");
    }
    for (const T d : delta) {
      if (!(d > T{0})) throw ContractError("ScanInputs: delta must be strictly positive");
    }
  }
};

template <typename T>
struct HiddenState {
  std::size_t channels = 0;
  std::size_t state = 0;
  std::vector<T> h;  // [channels x state]

  static HiddenState zeros(std::size_t channels, std::size_t state) {
    return {channels, state, std::vector<T>(channels * state, T{0})};
  }
};

template <typename T>
struct StepOutput {
  HiddenState<T> h;
  std::vector<T> y;  // [channels]
};

template <typename T>
StepOutput<T> s6_step(std::span<const T> x_t, const HiddenState<T>& h_prev, std::span<const T> b_t,
                      std::span<const T> c_t, std::span<const T> delta_t, const StateMatrix<T>& a) {
  const std::size_t ch = a.channels(), st = a.state();
  if (x_t.size() != ch || delta_t.size() != ch || b_t.size() != st || c_t.size() != st ||
      h_prev.channels != ch || h_prev.state != st || h_prev.h.size() != ch * st) {
    throw ShapeError("s6_step: operand shapes do not match the state matrix");
  }
  StepOutput<T> out{HiddenState<T>::zeros(ch, st), std::vector<T>(ch, T{0})};
  for (std::size_t c = 0; c < ch; ++c) {
    T y{0};
    for (std::size_t s = 0; s < st; ++s) {
      const auto d = discretize_zoh(a(c, s), b_t[s], delta_t[c]);
      const T h = d.a_bar * h_prev.h[c * st + s] + d.b_bar * x_t[c];
      out.h.h[c * st + s] = h;
      y += c_t[s] * h;
    }
    out.y[c] = y;
  }
  return out;
}

namespace detail {

template <typename T>
void check_scan_shapes(const ScanInputs<T>& in, const StateMatrix<T>& a) {
  in.validate();
  if (a.channels() != in.channels || a.state() != in.state) {
    throw ShapeError("selective scan: state matrix is [" + std::to_string(a.channels()) + " x " +
                     std::to_string(a.state()) + "], inputs need [" + std::to_string(in.channels) + " x " +
                     std::to_string(in.state) + "]");
  }
}

}  // namespace detail

// Reference scan: repeated s6_step from h_0 = 0. Returns y as [length x channels].
template <typename T>
std::vector<T> selective_scan_sequential(const ScanInputs<T>& in, const StateMatrix<T>& a) {
  detail::check_scan_shapes(in, a);
  const std::size_t L = in.length, C = in.channels, S = in.state;
  std::vector<T> y(L * C);
  auto h = HiddenState<T>::zeros(C, S);
  for (std::size_t t = 0; t < L; ++t) {
    auto step = s6_step<T>(std::span<const T>(in.x).subspan(t * C, C), h, std::span<const T>(in.b).subspan(t * S, S),
                           std::span<const T>(in.c).subspan(t * S, S),
                           std::span<const T>(in.delta).subspan(t * C, C), a);
    std::copy(step.y.begin(), step.y.end(), y.begin() + static_cast<long>(t * C));
    h = std::move(step.h);
  }
  return y;
}

// Blocked scan: each chunk is scanned from a zero state while the cumulative
// decay is tracked, then chunk-boundary states are propagated and folded back in.
template <typename T>
std::vector<T> selective_scan_chunked(const ScanInputs<T>& in, const StateMatrix<T>& a, std::size_t chunk) {
  detail::check_scan_shapes(in, a);
  if (chunk == 0) throw ContractError("selective_scan_chunked: chunk length must be positive");
  const std::size_t L = in.length, C = in.channels, S = in.state;
  const std::size_t chunks = (L + chunk - 1) / chunk;
  // End-of-chunk local state and total decay per chunk.
  std::vector<T> local_end(chunks * C * S, T{0});
  std::vector<T> decay(chunks * C * S, T{1});
  for (std::size_t q = 0; q < chunks; ++q) {
    const std::size_t t0 = q * chunk, t1 = std::min(L, t0 + chunk);
    for (std::size_t t = t0; t < t1; ++t)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < S; ++s) {
          const auto d = discretize_zoh(a(c, s), in.b[t * S + s], in.delta[t * C + c]);
          T& h = local_end[(q * C + c) * S + s];
          h = d.a_bar * h + d.b_bar * in.x[t * C + c];
          decay[(q * C + c) * S + s] *= d.a_bar;
        }
  }
  std::vector<T> carry(chunks * C * S, T{0});  // state entering chunk q
  for (std::size_t q = 1; q < chunks; ++q)
    for (std::size_t i = 0; i < C * S; ++i)
      carry[q * C * S + i] = decay[(q - 1) * C * S + i] * carry[(q - 1) * C * S + i] + local_end[(q - 1) * C * S + i];

  std::vector<T> y(L * C, T{0});
  std::vector<T> h(C * S), cum(C * S);
  for (std::size_t q = 0; q < chunks; ++q) {
    const std::size_t t0 = q * chunk, t1 = std::min(L, t0 + chunk);
    std::fill(h.begin(), h.end(), T{0});
    std::fill(cum.begin(), cum.end(), T{1});
    for (std::size_t t = t0; t < t1; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        T acc{0};
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t i = c * S + s;
          const auto d = discretize_zoh(a(c, s), in.b[t * S + s], in.delta[t * C + c]);
          h[i] = d.a_bar * h[i] + d.b_bar * in.x[t * C + c];
          cum[i] *= d.a_bar;
          acc += in.c[t * S + s] * (h[i] + cum[i] * carry[q * C * S + i]);
        }
        y[t * C + c] = acc;
      }
  }
  return y;
}

// Time-invariant form: y = x * K (causal, per channel) with
// K_j[c] = sum_s c[s] * a_bar[c][s]^j * b_bar[c][s].
// x is [length x channels]; a_bar and b_bar are [channels x state]; c is [state].
template <typename T>
std::vector<T> scan_kernel_form(std::span<const T> x, std::span<const T> a_bar, std::span<const T> b_bar,
                                std::span<const T> c, std::size_t length, std::size_t channels) {
  const std::size_t S = c.size();
  if (x.size() != length * channels || a_bar.size() != channels * S || b_bar.size() != channels * S) {
    throw ShapeError("scan_kernel_form: operand shapes do not agree");
  }
  std::vector<T> kernel(length * channels, T{0});
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t s = 0; s < S; ++s) {
      T power{1};
      for (std::size_t j = 0; j < length; ++j) {
        kernel[j * channels + ch] += c[s] * power * b_bar[ch * S + s];
        power *= a_bar[ch * S + s];
      }
    }
  std::vector<T> y(length * channels, T{0});
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t j = 0; j <= t; ++j)
      for (std::size_t ch = 0; ch < channels; ++ch) y[t * channels + ch] += kernel[j * channels + ch] * x[(t - j) * channels + ch];
  return y;
}

// Kernel form over ScanInputs; rejects inputs whose b, c or delta vary over time.
template <typename T>
std::vector<T> scan_kernel_form(const ScanInputs<T>& in, const StateMatrix<T>& a) {
  detail::check_scan_shapes(in, a);
  const std::size_t L = in.length, C = in.channels, S = in.state;
  auto constant_rows = [L](const std::vector<T>& v, std::size_t w) {
    for (std::size_t t = 1; t < L; ++t)
      if (!std::equal(v.begin(), v.begin() + static_cast<long>(w), v.begin() + static_cast<long>(t * w))) return false;
    return true;
  };
  if (!constant_rows(in.b, S) || !constant_rows(in.c, S) || !constant_rows(in.delta, C)) {
    throw ContractError("scan_kernel_form: parameters are time-variant");
  }
  if (L == 0) return {};
  std::vector<T> a_bar(C * S), b_bar(C * S);
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t s = 0; s < S; ++s) {
      const auto d = discretize_zoh(a(ch, s), in.b[s], in.delta[ch]);
      a_bar[ch * S + s] = d.a_bar;
      b_bar[ch * S + s] = d.b_bar;
    }
  return scan_kernel_form<T>(in.x, a_bar, b_bar, std::span<const T>(in.c).subspan(0, S), L, C);
}

// Batched differentiable scan.
//   x, delta: [N, L, C]; b, c: [N, L, S]; a: [C, S] (strictly negative).
// Returns y: [N, L, C]. Gradients flow to all five operands.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& b, const Tensor<T>& c,
                         const Tensor<T>& a) {
  if (x.rank() != 3 || delta.shape() != x.shape() || b.rank() != 3 || c.shape() != b.shape() || a.rank() != 2 ||
      b.shape()[0] != x.shape()[0] || b.shape()[1] != x.shape()[1] || a.shape()[0] != x.shape()[2] ||
      a.shape()[1] != b.shape()[2]) {
    throw ShapeError("selective_scan: x " + shape_str(x.shape()) + ", delta " + shape_str(delta.shape()) + ", b " +
                     shape_str(b.shape()) + ", c " + shape_str(c.shape()) + ", a " + shape_str(a.shape()));
  }
  const std::size_t N = x.shape()[0], L = x.shape()[1], C = x.shape()[2], S = b.shape()[2];
  for (const T d : delta.data()) {
    if (d == T{0}) throw NumericError("selective_scan: step size underflowed to zero");
    if (!(d > T{0})) throw ContractError("selective_scan: delta must be strictly positive");
  }
  for (const T v : a.data())
    if (!(v < T{0})) throw ContractError("selective_scan: state matrix entries must be strictly negative");

  const bool record = grad_enabled() && (x.requires_grad() || delta.requires_grad() || b.requires_grad() ||
                                         c.requires_grad() || a.requires_grad());
  // Saved per (n, t, c, s) for the backward pass.
  const std::size_t grid = C * S;
  auto states = std::make_shared<std::vector<T>>(record ? N * L * grid : 0);
  auto decays = std::make_shared<std::vector<T>>(record ? N * L * grid : 0);
  auto phis = std::make_shared<std::vector<T>>(record ? N * L * grid : 0);
  std::vector<T> y(N * L * C);
  const T* as = a.data().data();
  const T* xs = x.data().data();
  const T* ds = delta.data().data();
  const T* bs = b.data().data();
  const T* cs = c.data().data();
  const T eps = static_cast<T>(kZohEpsilon);
  const T series = static_cast<T>(detail::kSeriesRadius);
  using Flat = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto gi = static_cast<Eigen::Index>(grid);
  std::vector<T> h(grid), u(grid), decay(grid);
  for (std::size_t n = 0; n < N; ++n) {
    std::fill(h.begin(), h.end(), T{0});
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t row = n * L + t;
      const T* b_t = bs + row * S;
      const T* c_t = cs + row * S;
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t s = 0; s < S; ++s) u[ch * S + s] = ds[row * C + ch] * as[ch * S + s];
      Eigen::Map<Flat>(decay.data(), gi) = Eigen::Map<const Flat>(u.data(), gi).exp();
      for (std::size_t ch = 0; ch < C; ++ch) {
        const std::size_t xt = row * C + ch;
        const T drive = ds[xt] * xs[xt];
        T* hc = h.data() + ch * S;
        T acc{0};
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t j = ch * S + s;
          const T au = std::abs(u[j]);
          const T phi = au < eps ? T{1} : au < series ? detail::phi_series(u[j]) : (decay[j] - T{1}) / u[j];
          hc[s] = decay[j] * hc[s] + phi * drive * b_t[s];
          acc += c_t[s] * hc[s];
          if (record) {
            const std::size_t k = row * grid + j;
            (*states)[k] = hc[s];
            (*decays)[k] = decay[j];
            (*phis)[k] = phi;
          }
        }
        y[xt] = acc;
      }
    }
  }

  auto xn = x.node(), dn = delta.node(), bn = b.node(), cn = c.node(), an = a.node();
  return make_op_result<T>(
      "selective_scan", x.shape(), std::move(y), {xn, dn, bn, cn, an},
      [=](const Node<T>& o) {
        auto grad_or = [&](Node<T>& node) -> T* { return node.requires_grad ? node.ensure_grad().data() : nullptr; };
        T* gx = grad_or(*xn);
        T* gd = grad_or(*dn);
        T* gb = grad_or(*bn);
        T* gc = grad_or(*cn);
        T* ga = grad_or(*an);
        const T* av = an->data.data();
        const T* bv = bn->data.data();
        const T* cv = cn->data.data();
        const T* st = states->data();
        const T* dc = decays->data();
        const T* ph = phis->data();
        const T eps = static_cast<T>(kZohEpsilon);
        const T series = static_cast<T>(detail::kSeriesRadius);
        // dh holds dL/dh_t for every (channel, state) while stepping backwards in time.
        std::vector<T> dh(grid), ga_acc(grid, T{0}), gb_row(S), gc_row(S);
        for (std::size_t n = 0; n < N; ++n) {
          std::fill(dh.begin(), dh.end(), T{0});
          for (std::size_t t = L; t-- > 0;) {
            const std::size_t row = n * L + t;
            const T* b_t = bv + row * S;
            const T* c_t = cv + row * S;
            const T* h = st + row * grid;
            const T* h_prev = t > 0 ? st + (row - 1) * grid : nullptr;
            std::fill(gb_row.begin(), gb_row.end(), T{0});
            std::fill(gc_row.begin(), gc_row.end(), T{0});
            for (std::size_t ch = 0; ch < C; ++ch) {
              const std::size_t xt = row * C + ch;
              const T g = o.grad[xt];
              const T dt = dn->data[xt], xval = xn->data[xt];
              const std::size_t base = ch * S;
              T gx_acc{0}, gd_acc{0};
              for (std::size_t s = 0; s < S; ++s) {
                const std::size_t k = row * grid + base + s;
                const T a_cs = av[base + s];
                const T decay = dc[k];
                const T phi = ph[k];
                const T hp = h_prev ? h_prev[base + s] : T{0};
                const T dhv = dh[base + s] + c_t[s] * g;
                gc_row[s] += g * h[base + s];
                const T d_decay = dhv * hp;
                const T d_bbar = dhv * xval;
                gx_acc += dhv * phi * b_t[s];
                const T u = dt * a_cs;
                const T au = std::abs(u);
                const T dphi = au < eps ? T{0}
                               : au < series ? detail::phi_derivative_series(u)
                                             : (decay - phi) / u;
                gd_acc += d_decay * a_cs * decay + d_bbar * b_t[s] * (phi + dt * dphi * a_cs);
                ga_acc[base + s] += d_decay * dt * decay + d_bbar * b_t[s] * dt * dt * dphi;
                gb_row[s] += d_bbar * phi * dt;
                dh[base + s] = dhv * decay;
              }
              if (gx) gx[xt] += gx_acc * dt;
              if (gd) gd[xt] += gd_acc;
            }
            if (gb)
              for (std::size_t s = 0; s < S; ++s) gb[row * S + s] += gb_row[s];
            if (gc)
              for (std::size_t s = 0; s < S; ++s) gc[row * S + s] += gc_row[s];
          }
        }
        if (ga)
          for (std::size_t k = 0; k < grid; ++k) ga[k] += ga_acc[k];
      });
}

}  // namespace fscil::ssm
