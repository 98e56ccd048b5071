// ops.hpp — differentiable operations on the gradient tape. Layout is
// channels-first: activations are [N,C,D,H,W], fully connected inputs [N,F].
#pragma once

#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "spars/tensor.hpp"

namespace spars::ad {

namespace detail {

template <class S>
Var<S> result(Tensor<S> value, std::vector<Var<S>> parents) {
  auto out = make_var(std::move(value));
  if (GradMode::enabled()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        out->requires_grad = true;
        break;
      }
    if (out->requires_grad) out->parents = std::move(parents);
  }
  return out;
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw shape_error(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv3d: 3x3x3 kernel, stride 1, padding 1 (same spatial size).
// in [N,Ci,D,H,W], weight [Co,Ci,3,3,3], bias [Co] -> [N,Co,D,H,W]
// ---------------------------------------------------------------------------
template <class S>
Var<S> conv3d(const Var<S>& in, const Var<S>& weight, const Var<S>& bias) {
  const auto& is = in->value.shape;
  const auto& ws = weight->value.shape;
  detail::check(is.size() == 5, "conv3d: input must be 5-d, got " + shape_str(is));
  detail::check(ws.size() == 5 && ws[2] == 3 && ws[3] == 3 && ws[4] == 3,
                "conv3d: weight must be [Co,Ci,3,3,3], got " + shape_str(ws));
  detail::check(is[1] == ws[1], "conv3d: channel mismatch, input " +
                                    shape_str(is) + " vs weight " + shape_str(ws));
  detail::check(bias->value.shape == std::vector<int>{ws[0]},
                "conv3d: bias must be [Co], got " + shape_str(bias->value.shape));

  const int N = is[0], Ci = is[1], D = is[2], H = is[3], W = is[4];
  const int Co = ws[0];
  const std::size_t slab = static_cast<std::size_t>(D) * H * W;

  Tensor<S> out({N, Co, D, H, W});
  const S* ind = in->value.data.data();
  const S* wd = weight->value.data.data();
  const S* bd = bias->value.data.data();
  S* od = out.data.data();

  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      S* oslab = od + (static_cast<std::size_t>(n) * Co + co) * slab;
      std::fill(oslab, oslab + slab, bd[co]);
      for (int ci = 0; ci < Ci; ++ci) {
        const S* islab = ind + (static_cast<std::size_t>(n) * Ci + ci) * slab;
        const S* wk = wd + ((static_cast<std::size_t>(co) * Ci + ci) * 27);
        for (int kz = 0; kz < 3; ++kz) {
          const int dz = kz - 1;
          for (int ky = 0; ky < 3; ++ky) {
            const int dy = ky - 1;
            for (int kx = 0; kx < 3; ++kx) {
              const int dx = kx - 1;
              const S wv = wk[(kz * 3 + ky) * 3 + kx];
              const int z0 = std::max(0, -dz), z1 = D - std::max(0, dz);
              const int y0 = std::max(0, -dy), y1 = H - std::max(0, dy);
              const int x0 = std::max(0, -dx), x1 = W - std::max(0, dx);
              for (int z = z0; z < z1; ++z) {
                for (int y = y0; y < y1; ++y) {
                  const S* ir = islab + (static_cast<std::size_t>(z + dz) * H + (y + dy)) * W + dx;
                  S* orow = oslab + (static_cast<std::size_t>(z) * H + y) * W;
                  for (int x = x0; x < x1; ++x) orow[x] += wv * ir[x];
                }
              }
            }
          }
        }
      }
    }
  }

  auto res = detail::result(std::move(out), {in, weight, bias});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in, w_ = weight, b_ = bias;
    res->backprop = [on, in_, w_, b_, N, Ci, Co, D, H, W, slab]() {
      const S* go = on->grad.data.data();
      const S* ind = in_->value.data.data();
      const S* wd = w_->value.data.data();
      if (b_->requires_grad) {
        S* gb = b_->grad_data();
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Co; ++co) {
            const S* gslab = go + (static_cast<std::size_t>(n) * Co + co) * slab;
            S acc = 0;
            for (std::size_t i = 0; i < slab; ++i) acc += gslab[i];
            gb[co] += acc;
          }
      }
      if (w_->requires_grad) {
        S* gw = w_->grad_data();
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Co; ++co) {
            const S* gslab = go + (static_cast<std::size_t>(n) * Co + co) * slab;
            for (int ci = 0; ci < Ci; ++ci) {
              const S* islab = ind + (static_cast<std::size_t>(n) * Ci + ci) * slab;
              S* gwk = gw + ((static_cast<std::size_t>(co) * Ci + ci) * 27);
              for (int kz = 0; kz < 3; ++kz) {
                const int dz = kz - 1;
                for (int ky = 0; ky < 3; ++ky) {
                  const int dy = ky - 1;
                  for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int z0 = std::max(0, -dz), z1 = D - std::max(0, dz);
                    const int y0 = std::max(0, -dy), y1 = H - std::max(0, dy);
                    const int x0 = std::max(0, -dx), x1 = W - std::max(0, dx);
                    S acc = 0;
                    for (int z = z0; z < z1; ++z)
                      for (int y = y0; y < y1; ++y) {
                        const S* ir = islab + (static_cast<std::size_t>(z + dz) * H + (y + dy)) * W + dx;
                        const S* gr = gslab + (static_cast<std::size_t>(z) * H + y) * W;
                        for (int x = x0; x < x1; ++x) acc += ir[x] * gr[x];
                      }
                    gwk[(kz * 3 + ky) * 3 + kx] += acc;
                  }
                }
              }
            }
          }
      }
      if (in_->requires_grad) {
        S* gi = in_->grad_data();
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Co; ++co) {
            const S* gslab = go + (static_cast<std::size_t>(n) * Co + co) * slab;
            for (int ci = 0; ci < Ci; ++ci) {
              S* gislab = gi + (static_cast<std::size_t>(n) * Ci + ci) * slab;
              const S* wk = wd + ((static_cast<std::size_t>(co) * Ci + ci) * 27);
              for (int kz = 0; kz < 3; ++kz) {
                const int dz = kz - 1;
                for (int ky = 0; ky < 3; ++ky) {
                  const int dy = ky - 1;
                  for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const S wv = wk[(kz * 3 + ky) * 3 + kx];
                    const int z0 = std::max(0, -dz), z1 = D - std::max(0, dz);
                    const int y0 = std::max(0, -dy), y1 = H - std::max(0, dy);
                    const int x0 = std::max(0, -dx), x1 = W - std::max(0, dx);
                    for (int z = z0; z < z1; ++z)
                      for (int y = y0; y < y1; ++y) {
                        S* gir = gislab + (static_cast<std::size_t>(z + dz) * H + (y + dy)) * W + dx;
                        const S* gr = gslab + (static_cast<std::size_t>(z) * H + y) * W;
                        for (int x = x0; x < x1; ++x) gir[x] += wv * gr[x];
                      }
                  }
                }
              }
            }
          }
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// batchnorm3d over [N,C,D,H,W], per-channel statistics.
// ---------------------------------------------------------------------------
template <class S>
struct RunningStats {
  Tensor<S> mean;
  Tensor<S> var;
  RunningStats() = default;
  explicit RunningStats(int channels)
      : mean({channels}, S(0)), var({channels}, S(1)) {}
};

enum class BNMode { train, eval };

template <class S>
Var<S> batchnorm3d(const Var<S>& in, const Var<S>& gamma, const Var<S>& beta,
                   RunningStats<S>& stats, BNMode mode, S eps = S(1e-5),
                   S momentum = S(0.1)) {
  const auto& is = in->value.shape;
  detail::check(is.size() == 5, "batchnorm3d: input must be 5-d, got " + shape_str(is));
  const int N = is[0], C = is[1], D = is[2], H = is[3], W = is[4];
  detail::check(gamma->value.shape == std::vector<int>{C} &&
                    beta->value.shape == std::vector<int>{C},
                "batchnorm3d: gamma/beta must be [C]");
  if (mode == BNMode::train && N < 2)
    throw usage_error("batchnorm3d: batch size 1 in train mode; use eval mode");

  const std::size_t slab = static_cast<std::size_t>(D) * H * W;
  const std::size_t count = static_cast<std::size_t>(N) * slab;
  Tensor<S> out(is);
  std::vector<S> ch_mean(C), ch_invstd(C);
  const S* ind = in->value.data.data();
  S* od = out.data.data();
  const S* g = gamma->value.data.data();
  const S* b = beta->value.data.data();

  for (int c = 0; c < C; ++c) {
    S mean, invstd;
    if (mode == BNMode::train) {
      S sum = 0, sq = 0;
      for (int n = 0; n < N; ++n) {
        const S* p = ind + (static_cast<std::size_t>(n) * C + c) * slab;
        for (std::size_t i = 0; i < slab; ++i) {
          sum += p[i];
          sq += p[i] * p[i];
        }
      }
      mean = sum / static_cast<S>(count);
      S var = sq / static_cast<S>(count) - mean * mean;
      if (var < 0) var = 0;  // numerical guard
      invstd = S(1) / std::sqrt(var + eps);
      const S unbiased = count > 1 ? var * static_cast<S>(count) / static_cast<S>(count - 1) : var;
      stats.mean.data[c] = (S(1) - momentum) * stats.mean.data[c] + momentum * mean;
      stats.var.data[c] = (S(1) - momentum) * stats.var.data[c] + momentum * unbiased;
    } else {
      mean = stats.mean.data[c];
      invstd = S(1) / std::sqrt(stats.var.data[c] + eps);
    }
    ch_mean[c] = mean;
    ch_invstd[c] = invstd;
    for (int n = 0; n < N; ++n) {
      const S* p = ind + (static_cast<std::size_t>(n) * C + c) * slab;
      S* q = od + (static_cast<std::size_t>(n) * C + c) * slab;
      const S scale = g[c] * invstd;
      const S shift = b[c] - mean * scale;
      for (std::size_t i = 0; i < slab; ++i) q[i] = p[i] * scale + shift;
    }
  }

  auto res = detail::result(std::move(out), {in, gamma, beta});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in, g_ = gamma, b_ = beta;
    res->backprop = [on, in_, g_, b_, ch_mean, ch_invstd, mode, N, C, slab, count]() {
      const S* go = on->grad.data.data();
      const S* ind = in_->value.data.data();
      const S* g = g_->value.data.data();
      for (int c = 0; c < C; ++c) {
        const S mean = ch_mean[c], invstd = ch_invstd[c];
        // per-channel reductions over xhat and grad
        S sum_g = 0, sum_gx = 0;
        for (int n = 0; n < N; ++n) {
          const S* p = ind + (static_cast<std::size_t>(n) * C + c) * slab;
          const S* gr = go + (static_cast<std::size_t>(n) * C + c) * slab;
          for (std::size_t i = 0; i < slab; ++i) {
            const S xh = (p[i] - mean) * invstd;
            sum_g += gr[i];
            sum_gx += gr[i] * xh;
          }
        }
        if (g_->requires_grad) g_->grad_data()[c] += sum_gx;
        if (b_->requires_grad) b_->grad_data()[c] += sum_g;
        if (in_->requires_grad) {
          S* gi = in_->grad_data();
          const S gs = g[c] * invstd;
          const S inv_count = S(1) / static_cast<S>(count);
          for (int n = 0; n < N; ++n) {
            const S* p = ind + (static_cast<std::size_t>(n) * C + c) * slab;
            const S* gr = go + (static_cast<std::size_t>(n) * C + c) * slab;
            S* gq = gi + (static_cast<std::size_t>(n) * C + c) * slab;
            if (mode == BNMode::train) {
              for (std::size_t i = 0; i < slab; ++i) {
                const S xh = (p[i] - mean) * invstd;
                gq[i] += gs * (gr[i] - inv_count * (sum_g + xh * sum_gx));
              }
            } else {
              for (std::size_t i = 0; i < slab; ++i) gq[i] += gs * gr[i];
            }
          }
        }
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// maxpool3d with a 2x2x2 kernel; odd spatial dims are replicate-padded.
// Gradient routes to the first-index argmax.
// ---------------------------------------------------------------------------
template <class S>
Var<S> maxpool3d(const Var<S>& in) {
  const auto& is = in->value.shape;
  detail::check(is.size() == 5, "maxpool3d: input must be 5-d, got " + shape_str(is));
  const int N = is[0], C = is[1], D = is[2], H = is[3], W = is[4];
  const int Do = (D + 1) / 2, Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  const std::size_t islab = static_cast<std::size_t>(D) * H * W;
  const std::size_t oslab = static_cast<std::size_t>(Do) * Ho * Wo;

  Tensor<S> out({N, C, Do, Ho, Wo});
  std::vector<std::size_t> argmax(out.numel());
  const S* ind = in->value.data.data();
  S* od = out.data.data();

  for (int nc = 0; nc < N * C; ++nc) {
    const S* ip = ind + static_cast<std::size_t>(nc) * islab;
    S* op = od + static_cast<std::size_t>(nc) * oslab;
    std::size_t* ap = argmax.data() + static_cast<std::size_t>(nc) * oslab;
    for (int oz = 0; oz < Do; ++oz)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          S best = -std::numeric_limits<S>::infinity();
          std::size_t best_i = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int z = std::min(2 * oz + dz, D - 1);
                const int y = std::min(2 * oy + dy, H - 1);
                const int x = std::min(2 * ox + dx, W - 1);
                const std::size_t i = (static_cast<std::size_t>(z) * H + y) * W + x;
                if (ip[i] > best) {
                  best = ip[i];
                  best_i = i;
                }
              }
          const std::size_t o = (static_cast<std::size_t>(oz) * Ho + oy) * Wo + ox;
          op[o] = best;
          ap[o] = best_i;
        }
  }

  auto res = detail::result(std::move(out), {in});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in;
    res->backprop = [on, in_, argmax = std::move(argmax), N, C, islab, oslab]() {
      if (!in_->requires_grad) return;
      const S* go = on->grad.data.data();
      S* gi = in_->grad_data();
      for (int nc = 0; nc < N * C; ++nc) {
        const S* gp = go + static_cast<std::size_t>(nc) * oslab;
        S* gq = gi + static_cast<std::size_t>(nc) * islab;
        const std::size_t* ap = argmax.data() + static_cast<std::size_t>(nc) * oslab;
        for (std::size_t o = 0; o < oslab; ++o) gq[ap[o]] += gp[o];
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// linear: in [N,F], weight [O,F], bias [O] -> [N,O]
// ---------------------------------------------------------------------------
template <class S>
Var<S> linear(const Var<S>& in, const Var<S>& weight, const Var<S>& bias) {
  const auto& is = in->value.shape;
  const auto& ws = weight->value.shape;
  detail::check(is.size() == 2 && ws.size() == 2 && is[1] == ws[1],
                "linear: shape mismatch, input " + shape_str(is) + " vs weight " +
                    shape_str(ws));
  detail::check(bias->value.shape == std::vector<int>{ws[0]},
                "linear: bias must be [O], got " + shape_str(bias->value.shape));
  const int N = is[0], F = is[1], O = ws[0];

  Tensor<S> out({N, O});
  const S* x = in->value.data.data();
  const S* w = weight->value.data.data();
  const S* b = bias->value.data.data();
  S* y = out.data.data();
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      const S* xr = x + static_cast<std::size_t>(n) * F;
      const S* wr = w + static_cast<std::size_t>(o) * F;
      S acc = b[o];
      for (int f = 0; f < F; ++f) acc += xr[f] * wr[f];
      y[static_cast<std::size_t>(n) * O + o] = acc;
    }

  auto res = detail::result(std::move(out), {in, weight, bias});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in, w_ = weight, b_ = bias;
    res->backprop = [on, in_, w_, b_, N, F, O]() {
      const S* go = on->grad.data.data();
      const S* x = in_->value.data.data();
      const S* w = w_->value.data.data();
      if (b_->requires_grad) {
        S* gb = b_->grad_data();
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o) gb[o] += go[static_cast<std::size_t>(n) * O + o];
      }
      if (w_->requires_grad) {
        S* gw = w_->grad_data();
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o) {
            const S g = go[static_cast<std::size_t>(n) * O + o];
            const S* xr = x + static_cast<std::size_t>(n) * F;
            S* gwr = gw + static_cast<std::size_t>(o) * F;
            for (int f = 0; f < F; ++f) gwr[f] += g * xr[f];
          }
      }
      if (in_->requires_grad) {
        S* gi = in_->grad_data();
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o) {
            const S g = go[static_cast<std::size_t>(n) * O + o];
            const S* wr = w + static_cast<std::size_t>(o) * F;
            S* gir = gi + static_cast<std::size_t>(n) * F;
            for (int f = 0; f < F; ++f) gir[f] += g * wr[f];
          }
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// elementwise activations
// ---------------------------------------------------------------------------
template <class S>
Var<S> relu(const Var<S>& in) {
  Tensor<S> out(in->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = in->value.data[i] > S(0) ? in->value.data[i] : S(0);
  auto res = detail::result(std::move(out), {in});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in;
    res->backprop = [on, in_]() {
      if (!in_->requires_grad) return;
      S* gi = in_->grad_data();
      for (std::size_t i = 0; i < on->value.numel(); ++i)
        if (in_->value.data[i] > S(0)) gi[i] += on->grad.data[i];
    };
  }
  return res;
}

template <class S>
Var<S> sigmoid(const Var<S>& in) {
  Tensor<S> out(in->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const S x = in->value.data[i];
    if (x >= S(0)) {
      out.data[i] = S(1) / (S(1) + std::exp(-x));
    } else {
      const S e = std::exp(x);
      out.data[i] = e / (S(1) + e);
    }
  }
  auto res = detail::result(std::move(out), {in});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in;
    res->backprop = [on, in_]() {
      if (!in_->requires_grad) return;
      S* gi = in_->grad_data();
      for (std::size_t i = 0; i < on->value.numel(); ++i) {
        const S s = on->value.data[i];
        gi[i] += on->grad.data[i] * s * (S(1) - s);
      }
    };
  }
  return res;
}

// softmax over the last axis of a 2-d tensor, stabilized by max subtraction.
template <class S>
Var<S> softmax(const Var<S>& in) {
  const auto& is = in->value.shape;
  detail::check(is.size() == 2, "softmax: expected 2-d input, got " + shape_str(is));
  const int N = is[0], K = is[1];
  Tensor<S> out(is);
  for (int n = 0; n < N; ++n) {
    const S* x = in->value.data.data() + static_cast<std::size_t>(n) * K;
    S* p = out.data.data() + static_cast<std::size_t>(n) * K;
    S mx = x[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, x[k]);
    S sum = 0;
    for (int k = 0; k < K; ++k) {
      p[k] = std::exp(x[k] - mx);
      sum += p[k];
    }
    for (int k = 0; k < K; ++k) p[k] /= sum;
  }
  auto res = detail::result(std::move(out), {in});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in;
    res->backprop = [on, in_, N, K]() {
      if (!in_->requires_grad) return;
      S* gi = in_->grad_data();
      for (int n = 0; n < N; ++n) {
        const S* p = on->value.data.data() + static_cast<std::size_t>(n) * K;
        const S* g = on->grad.data.data() + static_cast<std::size_t>(n) * K;
        S dot = 0;
        for (int k = 0; k < K; ++k) dot += p[k] * g[k];
        S* gq = gi + static_cast<std::size_t>(n) * K;
        for (int k = 0; k < K; ++k) gq[k] += p[k] * (g[k] - dot);
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// shape / reduction helpers
// ---------------------------------------------------------------------------
template <class S>
Var<S> flatten(const Var<S>& in) {
  const int N = in->value.shape[0];
  const int F = static_cast<int>(in->value.numel()) / N;
  Tensor<S> out({N, F}, in->value.data);
  auto res = detail::result(std::move(out), {in});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in;
    res->backprop = [on, in_]() {
      if (!in_->requires_grad) return;
      S* gi = in_->grad_data();
      for (std::size_t i = 0; i < on->value.numel(); ++i) gi[i] += on->grad.data[i];
    };
  }
  return res;
}

template <class S>
Var<S> sum(const Var<S>& in) {
  S acc = 0;
  for (S v : in->value.data) acc += v;
  Tensor<S> out({1}, std::vector<S>{acc});
  auto res = detail::result(std::move(out), {in});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in;
    res->backprop = [on, in_]() {
      if (!in_->requires_grad) return;
      S* gi = in_->grad_data();
      const S g = on->grad.data[0];
      for (std::size_t i = 0; i < in_->value.numel(); ++i) gi[i] += g;
    };
  }
  return res;
}

template <class S>
Var<S> mean(const Var<S>& in) {
  const S inv = S(1) / static_cast<S>(in->value.numel());
  S acc = 0;
  for (S v : in->value.data) acc += v;
  Tensor<S> out({1}, std::vector<S>{acc * inv});
  auto res = detail::result(std::move(out), {in});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> in_ = in;
    res->backprop = [on, in_, inv]() {
      if (!in_->requires_grad) return;
      S* gi = in_->grad_data();
      const S g = on->grad.data[0] * inv;
      for (std::size_t i = 0; i < in_->value.numel(); ++i) gi[i] += g;
    };
  }
  return res;
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::check(a->value.shape == b->value.shape,
                "add: shape mismatch " + shape_str(a->value.shape) + " vs " +
                    shape_str(b->value.shape));
  Tensor<S> out(a->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = a->value.data[i] + b->value.data[i];
  auto res = detail::result(std::move(out), {a, b});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> a_ = a, b_ = b;
    res->backprop = [on, a_, b_]() {
      for (const auto& p : {a_, b_})
        if (p->requires_grad) {
          S* g = p->grad_data();
          for (std::size_t i = 0; i < on->value.numel(); ++i) g[i] += on->grad.data[i];
        }
    };
  }
  return res;
}

template <class S>
Var<S> scale(const Var<S>& a, S k) {
  Tensor<S> out(a->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] * k;
  auto res = detail::result(std::move(out), {a});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> a_ = a;
    res->backprop = [on, a_, k]() {
      if (!a_->requires_grad) return;
      S* g = a_->grad_data();
      for (std::size_t i = 0; i < on->value.numel(); ++i) g[i] += k * on->grad.data[i];
    };
  }
  return res;
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::check(a->value.shape == b->value.shape,
                "mul: shape mismatch " + shape_str(a->value.shape) + " vs " +
                    shape_str(b->value.shape));
  Tensor<S> out(a->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = a->value.data[i] * b->value.data[i];
  auto res = detail::result(std::move(out), {a, b});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> a_ = a, b_ = b;
    res->backprop = [on, a_, b_]() {
      if (a_->requires_grad) {
        S* g = a_->grad_data();
        for (std::size_t i = 0; i < on->value.numel(); ++i)
          g[i] += b_->value.data[i] * on->grad.data[i];
      }
      if (b_->requires_grad) {
        S* g = b_->grad_data();
        for (std::size_t i = 0; i < on->value.numel(); ++i)
          g[i] += a_->value.data[i] * on->grad.data[i];
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// loss heads
// ---------------------------------------------------------------------------

// mean binary cross-entropy; predictions clamped to [eps, 1-eps].
template <class S>
Var<S> bce_loss(const Var<S>& pred, const std::vector<S>& labels,
                S eps = S(1e-7)) {
  if (labels.empty()) throw usage_error("bce_loss: empty batch");
  detail::check(pred->value.numel() == labels.size(),
                "bce_loss: batch length mismatch");
  const std::size_t N = labels.size();
  S acc = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const S p = std::clamp(pred->value.data[i], eps, S(1) - eps);
    acc += -(labels[i] * std::log(p) + (S(1) - labels[i]) * std::log(S(1) - p));
  }
  Tensor<S> out({1}, std::vector<S>{acc / static_cast<S>(N)});
  auto res = detail::result(std::move(out), {pred});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> p_ = pred;
    res->backprop = [on, p_, labels, eps, N]() {
      if (!p_->requires_grad) return;
      S* g = p_->grad_data();
      const S go = on->grad.data[0] / static_cast<S>(N);
      for (std::size_t i = 0; i < N; ++i) {
        const S p = p_->value.data[i];
        if (p <= eps || p >= S(1) - eps) continue;  // clamped, flat
        g[i] += go * (-(labels[i] / p) + (S(1) - labels[i]) / (S(1) - p));
      }
    };
  }
  return res;
}

// log pi(a|s): logits [N,K], chosen action indices -> [N]
template <class S>
Var<S> log_prob_of(const Var<S>& logits, const std::vector<int>& actions) {
  const auto& is = logits->value.shape;
  detail::check(is.size() == 2 && actions.size() == static_cast<std::size_t>(is[0]),
                "log_prob_of: logits [N,K] with N actions required");
  const int N = is[0], K = is[1];
  Tensor<S> out({N});
  std::vector<S> probs(static_cast<std::size_t>(N) * K);
  for (int n = 0; n < N; ++n) {
    const S* x = logits->value.data.data() + static_cast<std::size_t>(n) * K;
    S mx = x[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, x[k]);
    S sum = 0;
    S* p = probs.data() + static_cast<std::size_t>(n) * K;
    for (int k = 0; k < K; ++k) {
      p[k] = std::exp(x[k] - mx);
      sum += p[k];
    }
    for (int k = 0; k < K; ++k) p[k] /= sum;
    out.data[n] = (x[actions[n]] - mx) - std::log(sum);
  }
  auto res = detail::result(std::move(out), {logits});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> l_ = logits;
    res->backprop = [on, l_, actions, probs = std::move(probs), N, K]() {
      if (!l_->requires_grad) return;
      S* g = l_->grad_data();
      for (int n = 0; n < N; ++n) {
        const S go = on->grad.data[n];
        const S* p = probs.data() + static_cast<std::size_t>(n) * K;
        S* gq = g + static_cast<std::size_t>(n) * K;
        for (int k = 0; k < K; ++k) gq[k] += go * ((k == actions[n] ? S(1) : S(0)) - p[k]);
      }
    };
  }
  return res;
}

// per-row entropy of the softmax distribution over logits [N,K] -> [N]
template <class S>
Var<S> entropy_of_logits(const Var<S>& logits) {
  const auto& is = logits->value.shape;
  detail::check(is.size() == 2, "entropy_of_logits: expected [N,K]");
  const int N = is[0], K = is[1];
  Tensor<S> out({N});
  std::vector<S> probs(static_cast<std::size_t>(N) * K);
  for (int n = 0; n < N; ++n) {
    const S* x = logits->value.data.data() + static_cast<std::size_t>(n) * K;
    S mx = x[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, x[k]);
    S sum = 0;
    S* p = probs.data() + static_cast<std::size_t>(n) * K;
    for (int k = 0; k < K; ++k) {
      p[k] = std::exp(x[k] - mx);
      sum += p[k];
    }
    S h = 0;
    for (int k = 0; k < K; ++k) {
      p[k] /= sum;
      if (p[k] > 0) h -= p[k] * std::log(p[k]);
    }
    out.data[n] = h;
  }
  auto res = detail::result(std::move(out), {logits});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> l_ = logits;
    res->backprop = [on, l_, probs = std::move(probs), N, K]() {
      if (!l_->requires_grad) return;
      S* g = l_->grad_data();
      for (int n = 0; n < N; ++n) {
        const S go = on->grad.data[n];
        const S h = on->value.data[n];
        const S* p = probs.data() + static_cast<std::size_t>(n) * K;
        S* gq = g + static_cast<std::size_t>(n) * K;
        for (int k = 0; k < K; ++k) {
          const S lp = p[k] > 0 ? std::log(p[k]) : S(0);
          gq[k] += go * (-p[k] * (lp + h));
        }
      }
    };
  }
  return res;
}

// Clipped-surrogate objective (to be maximised): returns the scalar
//   mean_i min(r_i A_i, clip(r_i, 1-eps, 1+eps) A_i),  r_i = exp(lp_i - lp_old_i)
template <class S>
Var<S> clipped_surrogate(const Var<S>& logp_new, const std::vector<S>& logp_old,
                         const std::vector<S>& advantage, S clip_eps) {
  const std::size_t N = logp_old.size();
  detail::check(logp_new->value.numel() == N && advantage.size() == N,
                "clipped_surrogate: batch length mismatch");
  std::vector<S> ratio(N);
  S acc = 0;
  for (std::size_t i = 0; i < N; ++i) {
    ratio[i] = std::exp(logp_new->value.data[i] - logp_old[i]);
    const S lo = S(1) - clip_eps, hi = S(1) + clip_eps;
    const S clipped = std::clamp(ratio[i], lo, hi);
    acc += std::min(ratio[i] * advantage[i], clipped * advantage[i]);
  }
  Tensor<S> out({1}, std::vector<S>{acc / static_cast<S>(N)});
  auto res = detail::result(std::move(out), {logp_new});
  if (res->requires_grad) {
    Node<S>* on = res.get();
    Var<S> lp_ = logp_new;
    res->backprop = [on, lp_, ratio = std::move(ratio), advantage, clip_eps, N]() {
      if (!lp_->requires_grad) return;
      S* g = lp_->grad_data();
      const S go = on->grad.data[0] / static_cast<S>(N);
      const S lo = S(1) - clip_eps, hi = S(1) + clip_eps;
      for (std::size_t i = 0; i < N; ++i) {
        const S a = advantage[i], r = ratio[i];
        // gradient is zero when the clipped branch is active and selected
        const bool clipped_out = (a > 0 && r > hi) || (a < 0 && r < lo);
        if (!clipped_out) g[i] += go * a * r;  // d(r)/d(lp) = r
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// trilinear_resize: plain tensor op (inputs are constants in this codebase).
// Half-pixel sampling; resize to identical dims is an exact copy.
// in [C,D,H,W] -> [C,Dt,Ht,Wt]
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> trilinear_resize(const Tensor<S>& in, int Dt, int Ht, int Wt) {
  detail::check(in.shape.size() == 4, "trilinear_resize: expected [C,D,H,W]");
  detail::check(Dt > 0 && Ht > 0 && Wt > 0, "trilinear_resize: target dims must be positive");
  const int C = in.shape[0], D = in.shape[1], H = in.shape[2], W = in.shape[3];
  if (Dt == D && Ht == H && Wt == W) return in;

  Tensor<S> out({C, Dt, Ht, Wt});
  const double sz = static_cast<double>(D) / Dt;
  const double sy = static_cast<double>(H) / Ht;
  const double sx = static_cast<double>(W) / Wt;

  auto coord = [](int i, double s, int n) {
    double c = (i + 0.5) * s - 0.5;
    if (c < 0) c = 0;
    if (c > n - 1) c = n - 1;
    return c;
  };

  for (int c = 0; c < C; ++c) {
    const S* ip = in.data.data() + static_cast<std::size_t>(c) * D * H * W;
    S* op = out.data.data() + static_cast<std::size_t>(c) * Dt * Ht * Wt;
    for (int z = 0; z < Dt; ++z) {
      const double fz = coord(z, sz, D);
      const int z0 = static_cast<int>(fz), z1 = std::min(z0 + 1, D - 1);
      const double tz = fz - z0;
      for (int y = 0; y < Ht; ++y) {
        const double fy = coord(y, sy, H);
        const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, H - 1);
        const double ty = fy - y0;
        for (int x = 0; x < Wt; ++x) {
          const double fx = coord(x, sx, W);
          const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, W - 1);
          const double tx = fx - x0;
          auto at = [&](int zz, int yy, int xx) {
            return static_cast<double>(ip[(static_cast<std::size_t>(zz) * H + yy) * W + xx]);
          };
          const double c00 = at(z0, y0, x0) * (1 - tx) + at(z0, y0, x1) * tx;
          const double c01 = at(z0, y1, x0) * (1 - tx) + at(z0, y1, x1) * tx;
          const double c10 = at(z1, y0, x0) * (1 - tx) + at(z1, y0, x1) * tx;
          const double c11 = at(z1, y1, x0) * (1 - tx) + at(z1, y1, x1) * tx;
          const double c0 = c00 * (1 - ty) + c01 * ty;
          const double c1 = c10 * (1 - ty) + c11 * ty;
          op[(static_cast<std::size_t>(z) * Ht + y) * Wt + x] =
              static_cast<S>(c0 * (1 - tz) + c1 * tz);
        }
      }
    }
  }
  return out;
}

}  // namespace spars::ad
