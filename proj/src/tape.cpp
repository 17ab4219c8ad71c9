#include "dad/tape.hpp"

#include <cmath>

namespace dad {

namespace {

void im2col(const real* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, real* col) {
  // col is [C*kh*kw, Ho*Wo]
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        real* crow = col + (size_t(c) * kh * kw + size_t(ki) * kw + kj) * (size_t(Ho) * Wo);
        for (int ho = 0; ho < Ho; ++ho) {
          const int hi = ho * stride + ki - pad;
          for (int wo = 0; wo < Wo; ++wo) {
            const int wi = wo * stride + kj - pad;
            crow[size_t(ho) * Wo + wo] =
                (hi >= 0 && hi < H && wi >= 0 && wi < W) ? x[(size_t(c) * H + hi) * W + wi] : 0;
          }
        }
      }
    }
  }
}

void col2im_add(const real* col, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                int Wo, real* dx) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const real* crow = col + (size_t(c) * kh * kw + size_t(ki) * kw + kj) * (size_t(Ho) * Wo);
        for (int ho = 0; ho < Ho; ++ho) {
          const int hi = ho * stride + ki - pad;
          if (hi < 0 || hi >= H) continue;
          for (int wo = 0; wo < Wo; ++wo) {
            const int wi = wo * stride + kj - pad;
            if (wi < 0 || wi >= W) continue;
            dx[(size_t(c) * H + hi) * W + wi] += crow[size_t(ho) * Wo + wo];
          }
        }
      }
    }
  }
}

// Row-wise log-sum-exp with max subtraction.
real logsumexp_row(const real* row, int k) {
  real mx = row[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
  real s = 0;
  for (int i = 0; i < k; ++i) s += std::exp(row[i] - mx);
  return mx + std::log(s);
}

void softmax_row(const real* row, int k, real* out) {
  real mx = row[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
  real s = 0;
  for (int i = 0; i < k; ++i) {
    out[i] = std::exp(row[i] - mx);
    s += out[i];
  }
  for (int i = 0; i < k; ++i) out[i] /= s;
}

}  // namespace

Var Tape::push(Tensor val, bool needs_grad, std::function<void(Tape&, Var)> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

Tensor& Tape::grad(Var x) {
  Node& n = nodes_[size_t(x.id)];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.val.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

void Tape::add_into_grad(Var x, const Tensor& g) {
  if (!nodes_[size_t(x.id)].needs_grad) return;
  Tensor& dst = grad(x);
  check(dst.same_shape(g), "gradient shape mismatch");
  for (int64_t i = 0; i < g.numel(); ++i) dst.v[size_t(i)] += g.v[size_t(i)];
}

Var Tape::leaf(Tensor v, bool needs_grad) { return push(std::move(v), needs_grad, nullptr); }

Var Tape::use(Param& p) {
  Var v = push(p.value, true, nullptr);
  param_uses_.emplace_back(v.id, &p);
  return v;
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check(ta.same_shape(tb), "add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Tensor out(ta.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out.v[size_t(i)] = ta.v[size_t(i)] + tb.v[size_t(i)];
  bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(out), ng, [a, b](Tape& t, Var self) {
    t.add_into_grad(a, t.grad(self));
    t.add_into_grad(b, t.grad(self));
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check(ta.same_shape(tb), "sub: shape mismatch");
  Tensor out(ta.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out.v[size_t(i)] = ta.v[size_t(i)] - tb.v[size_t(i)];
  bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(out), ng, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    t.add_into_grad(a, g);
    if (t.needs_grad(b)) {
      Tensor neg(g.shape);
      for (int64_t i = 0; i < g.numel(); ++i) neg.v[size_t(i)] = -g.v[size_t(i)];
      t.add_into_grad(b, neg);
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check(ta.same_shape(tb), "mul: shape mismatch");
  Tensor out(ta.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out.v[size_t(i)] = ta.v[size_t(i)] * tb.v[size_t(i)];
  bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(out), ng, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor da(g.shape);
      const Tensor& vb = t.val(b);
      for (int64_t i = 0; i < g.numel(); ++i) da.v[size_t(i)] = g.v[size_t(i)] * vb.v[size_t(i)];
      t.add_into_grad(a, da);
    }
    if (t.needs_grad(b)) {
      Tensor db(g.shape);
      const Tensor& va = t.val(a);
      for (int64_t i = 0; i < g.numel(); ++i) db.v[size_t(i)] = g.v[size_t(i)] * va.v[size_t(i)];
      t.add_into_grad(b, db);
    }
  });
}

Var Tape::scale(Var a, real s) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out.v[size_t(i)] = ta.v[size_t(i)] * s;
  return push(std::move(out), needs_grad(a), [a, s](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor da(g.shape);
    for (int64_t i = 0; i < g.numel(); ++i) da.v[size_t(i)] = g.v[size_t(i)] * s;
    t.add_into_grad(a, da);
  });
}

Var Tape::relu(Var a) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out.v[size_t(i)] = ta.v[size_t(i)] > 0 ? ta.v[size_t(i)] : 0;
  return push(std::move(out), needs_grad(a), [a](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& va = t.val(a);
    Tensor da(g.shape);
    for (int64_t i = 0; i < g.numel(); ++i) da.v[size_t(i)] = va.v[size_t(i)] > 0 ? g.v[size_t(i)] : 0;
    t.add_into_grad(a, da);
  });
}

Var Tape::sigmoid(Var a) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < out.numel(); ++i) {
    const real x = ta.v[size_t(i)];
    out.v[size_t(i)] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Tensor saved = out;
  return push(std::move(out), needs_grad(a), [a, saved](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor da(g.shape);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const real y = saved.v[size_t(i)];
      da.v[size_t(i)] = g.v[size_t(i)] * y * (1.0 - y);
    }
    t.add_into_grad(a, da);
  });
}

Var Tape::rsqrt(Var a, real eps) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out.v[size_t(i)] = 1.0 / std::sqrt(ta.v[size_t(i)] + eps);
  Tensor saved = out;
  return push(std::move(out), needs_grad(a), [a, saved](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor da(g.shape);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const real y = saved.v[size_t(i)];
      da.v[size_t(i)] = g.v[size_t(i)] * (-0.5) * y * y * y;
    }
    t.add_into_grad(a, da);
  });
}

Var Tape::detach(Var a) { return push(val(a), false, nullptr); }

Var Tape::reshape(Var a, std::vector<int> shape) {
  const Tensor& ta = val(a);
  check(Tensor::numel_of(shape) == ta.numel(), "reshape: element count mismatch");
  Tensor out(shape, ta.v);
  std::vector<int> orig = ta.shape;
  return push(std::move(out), needs_grad(a), [a, orig](Tape& t, Var self) {
    Tensor g(orig, t.grad(self).v);
    t.add_into_grad(a, g);
  });
}

Var Tape::sum_all(Var a) {
  const Tensor& ta = val(a);
  real s = 0;
  for (real x : ta.v) s += x;
  Tensor out({1});
  out.v[0] = s;
  return push(std::move(out), needs_grad(a), [a](Tape& t, Var self) {
    const real g = t.grad(self).v[0];
    Tensor da(t.val(a).shape);
    da.fill(g);
    t.add_into_grad(a, da);
  });
}

Var Tape::mean_all(Var a) {
  const Tensor& ta = val(a);
  check(ta.numel() > 0, "mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / real(ta.numel()));
}

Var Tape::mse(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check(ta.same_shape(tb), "mse: shape mismatch");
  check(ta.numel() > 0, "mse: empty tensor");
  real s = 0;
  for (int64_t i = 0; i < ta.numel(); ++i) {
    const real d = ta.v[size_t(i)] - tb.v[size_t(i)];
    s += d * d;
  }
  Tensor out({1});
  out.v[0] = s / real(ta.numel());
  bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(out), ng, [a, b](Tape& t, Var self) {
    const real g = t.grad(self).v[0];
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    const real c = 2.0 * g / real(va.numel());
    if (t.needs_grad(a)) {
      Tensor da(va.shape);
      for (int64_t i = 0; i < va.numel(); ++i) da.v[size_t(i)] = c * (va.v[size_t(i)] - vb.v[size_t(i)]);
      t.add_into_grad(a, da);
    }
    if (t.needs_grad(b)) {
      Tensor db(va.shape);
      for (int64_t i = 0; i < va.numel(); ++i) db.v[size_t(i)] = -c * (va.v[size_t(i)] - vb.v[size_t(i)]);
      t.add_into_grad(b, db);
    }
  });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check(ta.ndim() == 2 && tb.ndim() == 2 && ta.dim(1) == tb.dim(0), "matmul: bad shapes");
  const int m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor out({m, n});
  gemm(false, false, m, n, k, 1.0, ta.data(), k, tb.data(), n, 0.0, out.data(), n);
  bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(out), ng, [a, b, m, n, k](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor da({m, k});
      gemm(false, true, m, k, n, 1.0, g.data(), n, t.val(b).data(), n, 0.0, da.data(), k);
      t.add_into_grad(a, da);
    }
    if (t.needs_grad(b)) {
      Tensor db({k, n});
      gemm(true, false, k, n, m, 1.0, t.val(a).data(), k, g.data(), n, 0.0, db.data(), n);
      t.add_into_grad(b, db);
    }
  });
}

Var Tape::linear(Var x, Var w, Var b) {
  const Tensor& tx = val(x);
  const Tensor& tw = val(w);
  const Tensor& tb = val(b);
  check(tx.ndim() == 2 && tw.ndim() == 2 && tx.dim(1) == tw.dim(1), "linear: bad shapes");
  check(tb.ndim() == 1 && tb.dim(0) == tw.dim(0), "linear: bad bias shape");
  const int B = tx.dim(0), I = tx.dim(1), O = tw.dim(0);
  Tensor out({B, O});
  gemm(false, true, B, O, I, 1.0, tx.data(), I, tw.data(), I, 0.0, out.data(), O);
  for (int i = 0; i < B; ++i)
    for (int o = 0; o < O; ++o) out.v[size_t(i) * O + o] += tb.v[size_t(o)];
  bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
  return push(std::move(out), ng, [x, w, b, B, I, O](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(x)) {
      Tensor dx({B, I});
      gemm(false, false, B, I, O, 1.0, g.data(), O, t.val(w).data(), I, 0.0, dx.data(), I);
      t.add_into_grad(x, dx);
    }
    if (t.needs_grad(w)) {
      Tensor dw({O, I});
      gemm(true, false, O, I, B, 1.0, g.data(), O, t.val(x).data(), I, 0.0, dw.data(), I);
      t.add_into_grad(w, dw);
    }
    if (t.needs_grad(b)) {
      Tensor db({O});
      for (int i = 0; i < B; ++i)
        for (int o = 0; o < O; ++o) db.v[size_t(o)] += g.v[size_t(i) * O + o];
      t.add_into_grad(b, db);
    }
  });
}

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& tx = val(x);
  const Tensor& tw = val(w);
  const Tensor& tb = val(b);
  check(tx.ndim() == 4 && tw.ndim() == 4, "conv2d: expected 4-d input and weight");
  check(tx.dim(1) == tw.dim(1), "conv2d: channel mismatch");
  check(stride >= 1, "conv2d: stride must be >= 1");
  const int B = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
  const int O = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
  check(tb.ndim() == 1 && tb.dim(0) == O, "conv2d: bad bias shape");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  check(Ho >= 1 && Wo >= 1, "conv2d: output would be empty");
  const int ckk = C * kh * kw;
  const int hw = Ho * Wo;

  Tensor out({B, O, Ho, Wo});
#pragma omp parallel
  {
    std::vector<real> col(size_t(ckk) * hw);
#pragma omp for schedule(static)
    for (int i = 0; i < B; ++i) {
      im2col(tx.data() + size_t(i) * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
      real* oi = out.data() + size_t(i) * O * hw;
      gemm(false, false, O, hw, ckk, 1.0, tw.data(), ckk, col.data(), hw, 0.0, oi, hw);
      for (int o = 0; o < O; ++o) {
        const real bias = tb.v[size_t(o)];
        for (int q = 0; q < hw; ++q) oi[size_t(o) * hw + q] += bias;
      }
    }
  }

  bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
  return push(std::move(out), ng, [x, w, b, stride, pad, B, C, H, W, O, kh, kw, Ho, Wo](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& vx = t.val(x);
    const Tensor& vw = t.val(w);
    const int ckk = C * kh * kw;
    const int hw = Ho * Wo;
    Tensor dx, dw, db;
    const bool nx = t.needs_grad(x), nw = t.needs_grad(w), nb = t.needs_grad(b);
    if (nx) dx = Tensor({B, C, H, W});
    if (nw) dw = Tensor({O, C, kh, kw});
    if (nb) db = Tensor({O});
    std::vector<real> col(size_t(ckk) * hw);
    std::vector<real> dcol(size_t(ckk) * hw);
    // serial over batch so weight accumulation order is fixed
    for (int i = 0; i < B; ++i) {
      const real* gi = g.data() + size_t(i) * O * hw;
      if (nw || nx) im2col(vx.data() + size_t(i) * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
      if (nw) gemm(false, true, O, ckk, hw, 1.0, gi, hw, col.data(), hw, 1.0, dw.data(), ckk);
      if (nx) {
        gemm(true, false, ckk, hw, O, 1.0, vw.data(), ckk, gi, hw, 0.0, dcol.data(), hw);
        col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo, dx.data() + size_t(i) * C * H * W);
      }
      if (nb)
        for (int o = 0; o < O; ++o) {
          real s = 0;
          for (int q = 0; q < hw; ++q) s += gi[size_t(o) * hw + q];
          db.v[size_t(o)] += s;
        }
    }
    if (nx) t.add_into_grad(x, dx);
    if (nw) t.add_into_grad(w, dw);
    if (nb) t.add_into_grad(b, db);
  });
}

Var Tape::global_avgpool(Var x) {
  const Tensor& tx = val(x);
  check(tx.ndim() == 4, "global_avgpool: expected 4-d input");
  const int B = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
  const int hw = H * W;
  check(hw > 0, "global_avgpool: empty spatial dims");
  Tensor out({B, C});
  for (int i = 0; i < B; ++i)
    for (int c = 0; c < C; ++c) {
      const real* p = tx.data() + (size_t(i) * C + c) * hw;
      real s = 0;
      for (int q = 0; q < hw; ++q) s += p[q];
      out.v[size_t(i) * C + c] = s / real(hw);
    }
  return push(std::move(out), needs_grad(x), [x, B, C, H, W](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const int hw = H * W;
    Tensor dx({B, C, H, W});
    for (int i = 0; i < B; ++i)
      for (int c = 0; c < C; ++c) {
        const real gv = g.v[size_t(i) * C + c] / real(hw);
        real* p = dx.data() + (size_t(i) * C + c) * hw;
        for (int q = 0; q < hw; ++q) p[q] = gv;
      }
    t.add_into_grad(x, dx);
  });
}

Var Tape::upsample2x(Var x) {
  const Tensor& tx = val(x);
  check(tx.ndim() == 4, "upsample2x: expected 4-d input");
  const int B = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
  Tensor out({B, C, 2 * H, 2 * W});
  for (int i = 0; i < B; ++i)
    for (int c = 0; c < C; ++c) {
      const real* src = tx.data() + (size_t(i) * C + c) * H * W;
      real* dst = out.data() + (size_t(i) * C + c) * 4 * H * W;
      for (int h = 0; h < 2 * H; ++h)
        for (int w = 0; w < 2 * W; ++w) dst[size_t(h) * 2 * W + w] = src[size_t(h / 2) * W + w / 2];
    }
  return push(std::move(out), needs_grad(x), [x, B, C, H, W](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor dx({B, C, H, W});
    for (int i = 0; i < B; ++i)
      for (int c = 0; c < C; ++c) {
        const real* src = g.data() + (size_t(i) * C + c) * 4 * H * W;
        real* dst = dx.data() + (size_t(i) * C + c) * H * W;
        for (int h = 0; h < 2 * H; ++h)
          for (int w = 0; w < 2 * W; ++w) dst[size_t(h / 2) * W + w / 2] += src[size_t(h) * 2 * W + w];
      }
    t.add_into_grad(x, dx);
  });
}

Var Tape::embed(Var table, std::vector<int> idx) {
  const Tensor& tt = val(table);
  check(tt.ndim() == 2, "embed: table must be 2-d");
  const int K = tt.dim(0), d = tt.dim(1);
  const int L = int(idx.size());
  Tensor out({L, d});
  for (int l = 0; l < L; ++l) {
    check(idx[size_t(l)] >= 0 && idx[size_t(l)] < K, "embed: index out of range");
    std::copy_n(tt.data() + size_t(idx[size_t(l)]) * d, d, out.data() + size_t(l) * d);
  }
  return push(std::move(out), needs_grad(table), [table, idx, K, d, L](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor dt({K, d});
    for (int l = 0; l < L; ++l) {
      real* row = dt.data() + size_t(idx[size_t(l)]) * d;
      const real* gr = g.data() + size_t(l) * d;
      for (int j = 0; j < d; ++j) row[j] += gr[j];
    }
    t.add_into_grad(table, dt);
  });
}

Var Tape::channel_mean(Var x) {
  const Tensor& tx = val(x);
  check(tx.ndim() == 4, "channel_mean: expected 4-d input");
  const int B = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
  const int64_t count = int64_t(B) * H * W;
  check(count > 0, "channel_mean: empty reduction");
  Tensor out({C});
  for (int i = 0; i < B; ++i)
    for (int c = 0; c < C; ++c) {
      const real* p = tx.data() + (size_t(i) * C + c) * H * W;
      real s = 0;
      for (int q = 0; q < H * W; ++q) s += p[q];
      out.v[size_t(c)] += s;
    }
  for (int c = 0; c < C; ++c) out.v[size_t(c)] /= real(count);
  return push(std::move(out), needs_grad(x), [x, B, C, H, W, count](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor dx({B, C, H, W});
    for (int i = 0; i < B; ++i)
      for (int c = 0; c < C; ++c) {
        const real gv = g.v[size_t(c)] / real(count);
        real* p = dx.data() + (size_t(i) * C + c) * H * W;
        for (int q = 0; q < H * W; ++q) p[q] = gv;
      }
    t.add_into_grad(x, dx);
  });
}

Var Tape::channel_mul(Var x, Var s) {
  const Tensor& tx = val(x);
  const Tensor& ts = val(s);
  check(tx.ndim() == 4 && ts.ndim() == 1 && ts.dim(0) == tx.dim(1), "channel_mul: bad shapes");
  const int B = tx.dim(0), C = tx.dim(1), hw = tx.dim(2) * tx.dim(3);
  Tensor out(tx.shape);
  for (int i = 0; i < B; ++i)
    for (int c = 0; c < C; ++c) {
      const real sv = ts.v[size_t(c)];
      const real* p = tx.data() + (size_t(i) * C + c) * hw;
      real* q = out.data() + (size_t(i) * C + c) * hw;
      for (int j = 0; j < hw; ++j) q[j] = p[j] * sv;
    }
  bool ng = needs_grad(x) || needs_grad(s);
  return push(std::move(out), ng, [x, s, B, C, hw](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(x)) {
      const Tensor& vs = t.val(s);
      Tensor dx(t.val(x).shape);
      for (int i = 0; i < B; ++i)
        for (int c = 0; c < C; ++c) {
          const real sv = vs.v[size_t(c)];
          const real* gp = g.data() + (size_t(i) * C + c) * hw;
          real* dp = dx.data() + (size_t(i) * C + c) * hw;
          for (int j = 0; j < hw; ++j) dp[j] = gp[j] * sv;
        }
      t.add_into_grad(x, dx);
    }
    if (t.needs_grad(s)) {
      const Tensor& vx = t.val(x);
      Tensor ds({C});
      for (int i = 0; i < B; ++i)
        for (int c = 0; c < C; ++c) {
          const real* gp = g.data() + (size_t(i) * C + c) * hw;
          const real* xp = vx.data() + (size_t(i) * C + c) * hw;
          real acc = 0;
          for (int j = 0; j < hw; ++j) acc += gp[j] * xp[j];
          ds.v[size_t(c)] += acc;
        }
      t.add_into_grad(s, ds);
    }
  });
}

Var Tape::channel_add(Var x, Var s) {
  const Tensor& tx = val(x);
  const Tensor& ts = val(s);
  check(tx.ndim() == 4 && ts.ndim() == 1 && ts.dim(0) == tx.dim(1), "channel_add: bad shapes");
  const int B = tx.dim(0), C = tx.dim(1), hw = tx.dim(2) * tx.dim(3);
  Tensor out(tx.shape);
  for (int i = 0; i < B; ++i)
    for (int c = 0; c < C; ++c) {
      const real sv = ts.v[size_t(c)];
      const real* p = tx.data() + (size_t(i) * C + c) * hw;
      real* q = out.data() + (size_t(i) * C + c) * hw;
      for (int j = 0; j < hw; ++j) q[j] = p[j] + sv;
    }
  bool ng = needs_grad(x) || needs_grad(s);
  return push(std::move(out), ng, [x, s, B, C, hw](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    t.add_into_grad(x, g);
    if (t.needs_grad(s)) {
      Tensor ds({C});
      for (int i = 0; i < B; ++i)
        for (int c = 0; c < C; ++c) {
          const real* gp = g.data() + (size_t(i) * C + c) * hw;
          real acc = 0;
          for (int j = 0; j < hw; ++j) acc += gp[j];
          ds.v[size_t(c)] += acc;
        }
      t.add_into_grad(s, ds);
    }
  });
}

namespace {

void permute_nchw_rows(const real* src, int B, int C, int H, int W, bool to_rows, real* dst) {
  const int hw = H * W;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int q = 0; q < hw; ++q) {
        const size_t nchw = (size_t(b) * C + c) * hw + q;
        const size_t rows = (size_t(b) * hw + q) * C + c;
        if (to_rows)
          dst[rows] = src[nchw];
        else
          dst[nchw] = src[rows];
      }
}

}  // namespace

Var Tape::nchw_to_rows(Var x) {
  const Tensor& tx = val(x);
  check(tx.ndim() == 4, "nchw_to_rows: expected 4-d input");
  const int B = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
  Tensor out({B * H * W, C});
  permute_nchw_rows(tx.data(), B, C, H, W, true, out.data());
  return push(std::move(out), needs_grad(x), [x, B, C, H, W](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor dx({B, C, H, W});
    permute_nchw_rows(g.data(), B, C, H, W, false, dx.data());
    t.add_into_grad(x, dx);
  });
}

Var Tape::rows_to_nchw(Var rows, int B, int C, int H, int W) {
  const Tensor& tr = val(rows);
  check(tr.ndim() == 2 && tr.dim(0) == B * H * W && tr.dim(1) == C, "rows_to_nchw: bad shape");
  Tensor out({B, C, H, W});
  permute_nchw_rows(tr.data(), B, C, H, W, false, out.data());
  return push(std::move(out), needs_grad(rows), [rows, B, C, H, W](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor dr({B * H * W, C});
    permute_nchw_rows(g.data(), B, C, H, W, true, dr.data());
    t.add_into_grad(rows, dr);
  });
}

Var Tape::cross_entropy(Var logits, std::vector<int> labels) {
  const Tensor& tl = val(logits);
  check(tl.ndim() == 2, "cross_entropy: logits must be 2-d");
  const int B = tl.dim(0), K = tl.dim(1);
  check(B == int(labels.size()), "cross_entropy: label count mismatch");
  check(B > 0, "cross_entropy: empty batch");
  real loss = 0;
  for (int i = 0; i < B; ++i) {
    const int y = labels[size_t(i)];
    check(y >= 0 && y < K, "cross_entropy: label out of range");
    const real* row = tl.data() + size_t(i) * K;
    loss += logsumexp_row(row, K) - row[y];
  }
  Tensor out({1});
  out.v[0] = loss / real(B);
  return push(std::move(out), needs_grad(logits), [logits, labels, B, K](Tape& t, Var self) {
    const real g = t.grad(self).v[0];
    const Tensor& tl2 = t.val(logits);
    Tensor dl({B, K});
    std::vector<real> p(size_t(K));
    for (int i = 0; i < B; ++i) {
      softmax_row(tl2.data() + size_t(i) * K, K, p.data());
      real* dr = dl.data() + size_t(i) * K;
      for (int j = 0; j < K; ++j) dr[j] = g * p[size_t(j)] / real(B);
      dr[labels[size_t(i)]] -= g / real(B);
    }
    t.add_into_grad(logits, dl);
  });
}

Var Tape::kl_temp(Var student_logits, Tensor teacher_logits, real t) {
  check(t > 0, "kl_temp: temperature must be positive");
  const Tensor& ts = val(student_logits);
  check(ts.same_shape(teacher_logits), "kl_temp: logits shape mismatch");
  check(ts.ndim() == 2 && ts.dim(0) > 0, "kl_temp: expected non-empty 2-d logits");
  const int B = ts.dim(0), K = ts.dim(1);
  real loss = 0;
  {
    std::vector<real> sp(size_t(K)), tp(size_t(K));
    for (int i = 0; i < B; ++i) {
      std::vector<real> srow(size_t(K)), trow(size_t(K));
      for (int j = 0; j < K; ++j) {
        srow[size_t(j)] = ts.v[size_t(i) * K + j] / t;
        trow[size_t(j)] = teacher_logits.v[size_t(i) * K + j] / t;
      }
      const real lse_s = logsumexp_row(srow.data(), K);
      const real lse_t = logsumexp_row(trow.data(), K);
      softmax_row(trow.data(), K, tp.data());
      for (int j = 0; j < K; ++j) {
        const real log_pt = trow[size_t(j)] - lse_t;
        const real log_ps = srow[size_t(j)] - lse_s;
        loss += tp[size_t(j)] * (log_pt - log_ps);
      }
    }
  }
  Tensor out({1});
  out.v[0] = t * t * loss / real(B);
  Tensor teach = std::move(teacher_logits);
  return push(std::move(out), needs_grad(student_logits),
              [student_logits, teach, t, B, K](Tape& tp_, Var self) {
                const real g = tp_.grad(self).v[0];
                const Tensor& sl = tp_.val(student_logits);
                Tensor dl({B, K});
                std::vector<real> ps(size_t(K)), pt(size_t(K)), srow(size_t(K)), trow(size_t(K));
                for (int i = 0; i < B; ++i) {
                  for (int j = 0; j < K; ++j) {
                    srow[size_t(j)] = sl.v[size_t(i) * K + j] / t;
                    trow[size_t(j)] = teach.v[size_t(i) * K + j] / t;
                  }
                  softmax_row(srow.data(), K, ps.data());
                  softmax_row(trow.data(), K, pt.data());
                  real* dr = dl.data() + size_t(i) * K;
                  for (int j = 0; j < K; ++j)
                    dr[j] = g * t * (ps[size_t(j)] - pt[size_t(j)]) / real(B);
                }
                tp_.add_into_grad(student_logits, dl);
              });
}

void Tape::backward(Var root) {
  check(root.valid() && root.id < int(nodes_.size()), "backward: invalid root");
  check(val(root).numel() == 1, "backward: root must be scalar");
  grad(root).v[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad_alloc && n.back) n.back(*this, Var{id});
  }
}

void Tape::collect_param_grads() {
  for (auto& [id, p] : param_uses_) {
    Node& n = nodes_[size_t(id)];
    if (!n.grad_alloc) continue;
    if (p->grad.shape != p->value.shape) p->zero_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad.v[size_t(i)] += n.grad.v[size_t(i)];
  }
}

real central_diff(const std::function<real(const Tensor&)>& f, Tensor x, int64_t i, real h) {
  const real orig = x.v[size_t(i)];
  x.v[size_t(i)] = orig + h;
  const real fp = f(x);
  x.v[size_t(i)] = orig - h;
  const real fm = f(x);
  x.v[size_t(i)] = orig;
  return (fp - fm) / (2 * h);
}

}  // namespace dad
