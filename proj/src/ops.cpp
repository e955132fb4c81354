#include "clopa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <type_traits>

#include <cblas.h>

namespace clopa::ad {
namespace {

template <class Real>
void check_finite_debug([[maybe_unused]] const BasicTensor<Real>& t, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  for (Real v : t.data()) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string(op) + " produced a non-finite value");
  }
#endif
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_spatial(const Shape& s, const char* op) {
  require(s.size() == 4, std::string(op) + ": expected a [C,D,H,W] tensor, got " + shape_to_string(s));
}

// Output indices o in [lo, hi) whose input index o*stride - pad + offset
// falls inside [0, n_in).
struct Range {
  int lo;
  int hi;
};

Range valid_outputs(int n_in, int n_out, int stride, int pad, int offset) {
  // o*stride >= pad - offset  and  o*stride <= n_in - 1 + pad - offset
  const int a = pad - offset;
  const int b = n_in - 1 + pad - offset;
  int lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  int hi = b < 0 ? -1 : b / stride;
  lo = std::max(lo, 0);
  hi = std::min(hi, n_out - 1);
  return {lo, hi + 1};
}

// Shape bookkeeping for a convolution lowered to a matrix product.
struct ConvGeometry {
  int cin, D, H, W, k, stride, pad, Do, Ho, Wo;
  int rows() const { return cin * k * k * k; }
  int cols() const { return Do * Ho * Wo; }
  bool is_identity() const { return k == 1 && stride == 1 && pad == 0; }
};

// Per-thread reusable buffers: slot 0 holds im2col output and slot 1 its
// gradient; slots 2 and 3 hold the padded planes of the direct path.
template <class Real>
Real* scratch(int slot, std::size_t n) {
  thread_local std::vector<Real> buf[4];
  auto& v = buf[slot];
  if (v.size() < n) v.resize(n);
  return v.data();
}

// col[(ci, kz, ky, kx), (oz, oy, ox)] = x[ci, oz*s - p + kz, oy*s - p + ky, ox*s - p + kx],
// zero outside the input. A 1x1x1 unit-stride kernel returns x itself.
template <class Real>
const Real* im2col(const Real* x, const ConvGeometry& g) {
  if (g.is_identity()) return x;
  const int k = g.k;
  const std::int64_t P = g.cols();
  Real* col = scratch<Real>(0, static_cast<std::size_t>(g.rows()) * P);
  std::vector<Range> xr(k);
  for (int kx = 0; kx < k; ++kx) xr[kx] = valid_outputs(g.W, g.Wo, g.stride, g.pad, kx);
  Real* dst = col;
  for (int ci = 0; ci < g.cin; ++ci) {
    const Real* xc = x + std::int64_t(ci) * g.D * g.H * g.W;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const Range r = xr[kx];
          for (int oz = 0; oz < g.Do; ++oz) {
            const int iz = oz * g.stride - g.pad + kz;
            for (int oy = 0; oy < g.Ho; ++oy, dst += g.Wo) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iz < 0 || iz >= g.D || iy < 0 || iy >= g.H) {
                std::fill(dst, dst + g.Wo, Real(0));
                continue;
              }
              const Real* row = xc + (std::int64_t(iz) * g.H + iy) * g.W;
              std::fill(dst, dst + r.lo, Real(0));
              if (g.stride == 1) {
                const Real* src = row - g.pad + kx;
                for (int ox = r.lo; ox < r.hi; ++ox) dst[ox] = src[ox];
              } else {
                for (int ox = r.lo; ox < r.hi; ++ox) dst[ox] = row[ox * g.stride - g.pad + kx];
              }
              std::fill(dst + r.hi, dst + g.Wo, Real(0));
            }
          }
        }
  }
  return col;
}

// Adjoint of im2col: gx[...] += gcol[...] over every valid (row, column).
template <class Real>
void col2im_add(const Real* gcol, const ConvGeometry& g, Real* gx) {
  const std::int64_t n = std::int64_t(g.cin) * g.D * g.H * g.W;
  if (g.is_identity()) {
    for (std::int64_t i = 0; i < n; ++i) gx[i] += gcol[i];
    return;
  }
  const int k = g.k;
  std::vector<Range> xr(k);
  for (int kx = 0; kx < k; ++kx) xr[kx] = valid_outputs(g.W, g.Wo, g.stride, g.pad, kx);
  const Real* src = gcol;
  for (int ci = 0; ci < g.cin; ++ci) {
    Real* xc = gx + std::int64_t(ci) * g.D * g.H * g.W;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const Range r = xr[kx];
          for (int oz = 0; oz < g.Do; ++oz) {
            const int iz = oz * g.stride - g.pad + kz;
            for (int oy = 0; oy < g.Ho; ++oy, src += g.Wo) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iz < 0 || iz >= g.D || iy < 0 || iy >= g.H) continue;
              Real* row = xc + (std::int64_t(iz) * g.H + iy) * g.W;
              if (g.stride == 1) {
                Real* d = row - g.pad + kx;
                for (int ox = r.lo; ox < r.hi; ++ox) d[ox] += src[ox];
              } else {
                for (int ox = r.lo; ox < r.hi; ++ox) row[ox * g.stride - g.pad + kx] += src[ox];
              }
            }
          }
        }
  }
}

// Row-major C = A' * B' + beta * C, where ' is an optional transpose.
template <class Real>
void gemm(bool ta, bool tb, int m, int n, int k, const Real* a, int lda, const Real* b, int ldb, Real beta, Real* c,
          int ldc) {
  static const bool single_threaded = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)single_threaded;
  const auto op_a = ta ? CblasTrans : CblasNoTrans;
  const auto op_b = tb ? CblasTrans : CblasNoTrans;
  if constexpr (std::is_same_v<Real, float>) {
    cblas_sgemm(CblasRowMajor, op_a, op_b, m, n, k, 1.0f, a, lda, b, ldb, beta, c, ldc);
  } else {
    cblas_dgemm(CblasRowMajor, op_a, op_b, m, n, k, 1.0, a, lda, b, ldb, beta, c, ldc);
  }
}

// Narrow stride-1 layers run tap by tap over contiguous x runs instead of
// through the lowered product, whose (cin*k^3) x P column matrix dominates
// the cost when the channel counts are small.
constexpr int kDirectMaxChannelProduct = 512;

bool use_direct(const ConvGeometry& g, int cout) {
  return g.stride == 1 && g.k > 1 && g.cin * cout <= kDirectMaxChannelProduct;
}

// Stride-1 layout: the input is zero-padded into a (D+2p)(H+2p)(W+2p) plane
// per channel, and the output is computed on the same row pitch, so every
// tap is a single contiguous shift of length span().
struct PaddedPlane {
  std::int64_t row, slab, plane, span;

  explicit PaddedPlane(const ConvGeometry& g)
      : row(g.W + 2 * g.pad),
        slab(row * (g.H + 2 * g.pad)),
        plane(slab * (g.D + 2 * g.pad)),
        span((g.Do - 1) * slab + (g.Ho - 1) * row + g.Wo) {}
  std::int64_t offset(int kz, int ky, int kx) const { return kz * slab + ky * row + kx; }
  std::int64_t out_index(int oz, int oy, int ox) const { return oz * slab + oy * row + ox; }
};

template <class Real>
Real* pad_input(const Real* x, const ConvGeometry& g, const PaddedPlane& pp) {
  Real* xp = scratch<Real>(2, static_cast<std::size_t>(g.cin * pp.plane));
  std::fill(xp, xp + g.cin * pp.plane, Real(0));
  for (int ci = 0; ci < g.cin; ++ci)
    for (int z = 0; z < g.D; ++z)
      for (int y = 0; y < g.H; ++y) {
        const Real* src = x + ((std::int64_t(ci) * g.D + z) * g.H + y) * g.W;
        std::copy(src, src + g.W, xp + ci * pp.plane + pp.out_index(z + g.pad, y + g.pad, g.pad));
      }
  return xp;
}

// Calls fn(weight index, co, ci, tap offset) for every (co, ci, kz, ky, kx) in weight order.
template <class Fn>
void for_each_tap(const ConvGeometry& g, int cout, const PaddedPlane& pp, Fn&& fn) {
  std::int64_t wi = 0;
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < g.cin; ++ci)
      for (int kz = 0; kz < g.k; ++kz)
        for (int ky = 0; ky < g.k; ++ky)
          for (int kx = 0; kx < g.k; ++kx, ++wi) fn(wi, co, ci, pp.offset(kz, ky, kx));
}

template <class Real>
void direct_forward(const Real* x, const Real* w, const ConvGeometry& g, int cout, Real* out) {
  const PaddedPlane pp(g);
  const Real* xp = pad_input(x, g, pp);
  Real* acc = scratch<Real>(3, static_cast<std::size_t>(cout * pp.span));
  std::fill(acc, acc + cout * pp.span, Real(0));
  for_each_tap(g, cout, pp, [&](std::int64_t wi, int co, int ci, std::int64_t off) {
    const Real wv = w[wi];
    Real* dst = acc + co * pp.span;
    const Real* src = xp + ci * pp.plane + off;
    for (std::int64_t q = 0; q < pp.span; ++q) dst[q] += wv * src[q];
  });
  for (int co = 0; co < cout; ++co)
    for (int oz = 0; oz < g.Do; ++oz)
      for (int oy = 0; oy < g.Ho; ++oy) {
        const Real* src = acc + co * pp.span + pp.out_index(oz, oy, 0);
        Real* dst = out + ((std::int64_t(co) * g.Do + oz) * g.Ho + oy) * g.Wo;
        for (int ox = 0; ox < g.Wo; ++ox) dst[ox] += src[ox];
      }
}

// gy on the padded row pitch, zero in the columns that are not outputs.
template <class Real>
Real* pitch_gradient(const Real* gy, const ConvGeometry& g, int cout, const PaddedPlane& pp) {
  Real* gp = scratch<Real>(3, static_cast<std::size_t>(cout * pp.span));
  std::fill(gp, gp + cout * pp.span, Real(0));
  for (int co = 0; co < cout; ++co)
    for (int oz = 0; oz < g.Do; ++oz)
      for (int oy = 0; oy < g.Ho; ++oy) {
        const Real* src = gy + ((std::int64_t(co) * g.Do + oz) * g.Ho + oy) * g.Wo;
        std::copy(src, src + g.Wo, gp + co * pp.span + pp.out_index(oz, oy, 0));
      }
  return gp;
}

template <class Real>
void direct_grad_input(const Real* gp, const Real* w, const ConvGeometry& g, int cout, const PaddedPlane& pp, Real* gx) {
  Real* gxp = scratch<Real>(2, static_cast<std::size_t>(g.cin * pp.plane));
  std::fill(gxp, gxp + g.cin * pp.plane, Real(0));
  for_each_tap(g, cout, pp, [&](std::int64_t wi, int co, int ci, std::int64_t off) {
    const Real wv = w[wi];
    const Real* src = gp + co * pp.span;
    Real* dst = gxp + ci * pp.plane + off;
    for (std::int64_t q = 0; q < pp.span; ++q) dst[q] += wv * src[q];
  });
  for (int ci = 0; ci < g.cin; ++ci)
    for (int z = 0; z < g.D; ++z)
      for (int y = 0; y < g.H; ++y) {
        const Real* src = gxp + ci * pp.plane + pp.out_index(z + g.pad, y + g.pad, g.pad);
        Real* dst = gx + ((std::int64_t(ci) * g.D + z) * g.H + y) * g.W;
        for (int x = 0; x < g.W; ++x) dst[x] += src[x];
      }
}

// Fixed-width partial sums keep the inner loop free of a cross-lane
// reduction, so it vectorises without reassociation flags.
template <class Real>
Real dot(const Real* a, const Real* b, std::int64_t n) {
  constexpr int kLanes = 16;
  Real lane[kLanes] = {};
  std::int64_t q = 0;
  for (; q + kLanes <= n; q += kLanes)
    for (int j = 0; j < kLanes; ++j) lane[j] += a[q + j] * b[q + j];
  Real s = 0;
  for (; q < n; ++q) s += a[q] * b[q];
  for (int j = 0; j < kLanes; ++j) s += lane[j];
  return s;
}

template <class Real>
void direct_grad_weight(const Real* gp, const Real* x, const ConvGeometry& g, int cout, const PaddedPlane& pp,
                        Real* gw) {
  const Real* xp = pad_input(x, g, pp);
  for_each_tap(g, cout, pp, [&](std::int64_t wi, int co, int ci, std::int64_t off) {
    gw[wi] += dot(gp + co * pp.span, xp + ci * pp.plane + off, pp.span);
  });
}

}  // namespace

template <class Real>
BasicTensor<Real> conv3d(BasicTape<Real>& tape, const BasicTensor<Real>& x, const BasicTensor<Real>& w,
                         const BasicTensor<Real>& b, int stride, int pad) {
  require_spatial(x.shape(), "conv3d");
  const Shape& ws = w.shape();
  require(ws.size() == 5, "conv3d: weight must be [C_out,C_in,k,k,k], got " + shape_to_string(ws));
  ConvGeometry g;
  g.cin = x.dim(0);
  g.D = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.k = ws[2];
  g.stride = stride;
  g.pad = pad;
  const int cout = ws[0];
  require(ws[1] == g.cin, "conv3d: weight expects " + std::to_string(ws[1]) + " input channels, input has " +
                              std::to_string(g.cin));
  require(ws[3] == g.k && ws[4] == g.k && g.k % 2 == 1, "conv3d: kernel must be cubic with odd extent");
  require(b.numel() == cout, "conv3d: bias length must equal C_out");
  require(stride >= 1 && pad >= 0, "conv3d: stride must be >= 1 and pad >= 0");
  require(g.D + 2 * pad >= g.k && g.H + 2 * pad >= g.k && g.W + 2 * pad >= g.k, "conv3d: input smaller than kernel");
  g.Do = (g.D + 2 * pad - g.k) / stride + 1;
  g.Ho = (g.H + 2 * pad - g.k) / stride + 1;
  g.Wo = (g.W + 2 * pad - g.k) / stride + 1;

  const int K = g.rows();
  const int P = g.cols();
  const Real* bd = b.data().data();
  const bool direct = use_direct(g, cout);
  std::vector<Real> out(static_cast<std::size_t>(P) * cout);
  for (int co = 0; co < cout; ++co) std::fill(out.begin() + std::int64_t(co) * P, out.begin() + std::int64_t(co + 1) * P, bd[co]);
  if (direct) {
    direct_forward(x.data().data(), w.data().data(), g, cout, out.data());
  } else {
    // out[cout, P] += w[cout, K] * col[K, P]
    const Real* col = im2col(x.data().data(), g);
    gemm<Real>(false, false, cout, P, K, w.data().data(), K, col, P, Real(1), out.data(), P);
  }

  BasicTensor<Real> y(Shape{cout, g.Do, g.Ho, g.Wo}, std::move(out));
  check_finite_debug(y, "conv3d");
  if (!tape.wants({&x, &w, &b})) return y;

  y.set_requires_grad(true);
  tape.record("conv3d", y, [=, x = x, w = w, b = b]() mutable {
    const Real* gy = y.grad().data();
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        const Real* gr = gy + std::int64_t(co) * P;
        for (int i = 0; i < P; ++i) acc += gr[i];
        gb[co] += static_cast<Real>(acc);
      }
    }
    if (direct) {
      const PaddedPlane pp(g);
      const Real* gp = pitch_gradient(gy, g, cout, pp);
      if (w.requires_grad()) direct_grad_weight(gp, x.data().data(), g, cout, pp, w.grad_buffer().data());
      if (x.requires_grad()) direct_grad_input(gp, w.data().data(), g, cout, pp, x.grad_buffer().data());
      return;
    }
    if (w.requires_grad()) {
      // gw[cout, K] += gy[cout, P] * col[K, P]^T
      const Real* c = im2col(x.data().data(), g);
      gemm<Real>(false, true, cout, K, P, gy, P, c, P, Real(1), w.grad_buffer().data(), K);
    }
    if (x.requires_grad()) {
      // gcol[K, P] = w[cout, K]^T * gy[cout, P], scattered back onto x
      Real* gcol = scratch<Real>(1, static_cast<std::size_t>(K) * P);
      gemm<Real>(true, false, K, P, cout, w.data().data(), K, gy, P, Real(0), gcol, P);
      col2im_add(gcol, g, x.grad_buffer().data());
    }
  });
  return y;
}

template <class Real>
BasicTensor<Real> instance_norm(BasicTape<Real>& tape, const BasicTensor<Real>& x, const BasicTensor<Real>& scale,
                                const BasicTensor<Real>& bias, double eps) {
  require_spatial(x.shape(), "instance_norm");
  const int C = x.dim(0);
  require(scale.numel() == C && bias.numel() == C, "instance_norm: scale/bias length must equal channel count");
  require(eps > 0.0, "instance_norm: eps must be positive");
  const std::int64_t n = x.numel() / C;

  const Real* xd = x.data().data();
  std::vector<Real> xhat(x.data().size());
  std::vector<Real> inv_std(C);
  std::vector<Real> out(x.data().size());
  for (int c = 0; c < C; ++c) {
    const Real* xc = xd + c * n;
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += xc[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = xc[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[c] = static_cast<Real>(is);
    const Real s = scale.data()[c];
    const Real bb = bias.data()[c];
    for (std::int64_t i = 0; i < n; ++i) {
      const Real h = static_cast<Real>((xc[i] - mean) * is);
      xhat[c * n + i] = h;
      out[c * n + i] = s * h + bb;
    }
  }

  BasicTensor<Real> y(x.shape(), std::move(out));
  check_finite_debug(y, "instance_norm");
  if (!tape.wants({&x, &scale, &bias})) return y;

  y.set_requires_grad(true);
  tape.record("instance_norm", y,
              [=, x = x, scale = scale, bias = bias, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
                const Real* gy = y.grad().data();
                for (int c = 0; c < C; ++c) {
                  const Real* g = gy + c * n;
                  const Real* h = xhat.data() + c * n;
                  double sum_g = 0.0, sum_gh = 0.0;
                  for (std::int64_t i = 0; i < n; ++i) {
                    sum_g += g[i];
                    sum_gh += static_cast<double>(g[i]) * h[i];
                  }
                  if (scale.requires_grad()) scale.grad_buffer()[c] += static_cast<Real>(sum_gh);
                  if (bias.requires_grad()) bias.grad_buffer()[c] += static_cast<Real>(sum_g);
                  if (x.requires_grad()) {
                    Real* gx = x.grad_buffer().data() + c * n;
                    const double s = scale.data()[c];
                    const double k = s * inv_std[c] / static_cast<double>(n);
                    const double mg = sum_g;
                    const double mgh = sum_gh;
                    for (std::int64_t i = 0; i < n; ++i) {
                      gx[i] += static_cast<Real>(k * (static_cast<double>(n) * g[i] - mg - h[i] * mgh));
                    }
                  }
                }
              });
  return y;
}

template <class Real>
BasicTensor<Real> leaky_relu(BasicTape<Real>& tape, const BasicTensor<Real>& x, double slope) {
  require(slope >= 0.0 && slope < 1.0, "leaky_relu: slope must lie in [0,1)");
  const Real s = static_cast<Real>(slope);
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v >= Real(0) ? v : s * v;
  BasicTensor<Real> y(x.shape(), std::move(out));
  if (!tape.wants({&x})) return y;

  y.set_requires_grad(true);
  tape.record("leaky_relu", y, [=, x = x]() mutable {
    const auto gy = y.grad();
    const auto xd = x.data();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += xd[i] >= Real(0) ? gy[i] : s * gy[i];
  });
  return y;
}

template <class Real>
BasicTensor<Real> softmax_channel(BasicTape<Real>& tape, const BasicTensor<Real>& x) {
  require(x.shape().size() >= 2, "softmax_channel: expected a channel axis plus spatial axes");
  const int C = x.dim(0);
  const std::int64_t n = x.numel() / C;
  const Real* xd = x.data().data();
  std::vector<Real> out(x.data().size());
  for (std::int64_t i = 0; i < n; ++i) {
    Real m = xd[i];
    for (int c = 1; c < C; ++c) m = std::max(m, xd[c * n + i]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) {
      const double e = std::exp(static_cast<double>(xd[c * n + i]) - m);
      out[c * n + i] = static_cast<Real>(e);
      z += e;
    }
    for (int c = 0; c < C; ++c) out[c * n + i] = static_cast<Real>(out[c * n + i] / z);
  }
  BasicTensor<Real> y(x.shape(), std::move(out));
  if (!tape.wants({&x})) return y;

  y.set_requires_grad(true);
  tape.record("softmax_channel", y, [=, x = x]() mutable {
    const Real* gy = y.grad().data();
    const Real* yd = y.data().data();
    Real* gx = x.grad_buffer().data();
    for (std::int64_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += static_cast<double>(gy[c * n + i]) * yd[c * n + i];
      for (int c = 0; c < C; ++c) gx[c * n + i] += static_cast<Real>(yd[c * n + i] * (gy[c * n + i] - dot));
    }
  });
  return y;
}

template <class Real>
BasicTensor<Real> upsample_nearest2(BasicTape<Real>& tape, const BasicTensor<Real>& x) {
  require_spatial(x.shape(), "upsample_nearest2");
  const int C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int D2 = 2 * D, H2 = 2 * H, W2 = 2 * W;
  const Real* xd = x.data().data();
  std::vector<Real> out(static_cast<std::size_t>(C) * D2 * H2 * W2);
  auto idx_in = [=](int c, int z, int y, int xx) { return ((static_cast<std::int64_t>(c) * D + z) * H + y) * W + xx; };
  auto idx_out = [=](int c, int z, int y, int xx) {
    return ((static_cast<std::int64_t>(c) * D2 + z) * H2 + y) * W2 + xx;
  };
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < D2; ++z)
      for (int y = 0; y < H2; ++y)
        for (int xx = 0; xx < W2; ++xx) out[idx_out(c, z, y, xx)] = xd[idx_in(c, z / 2, y / 2, xx / 2)];

  BasicTensor<Real> y(Shape{C, D2, H2, W2}, std::move(out));
  if (!tape.wants({&x})) return y;

  y.set_requires_grad(true);
  tape.record("upsample_nearest2", y, [=, x = x]() mutable {
    const Real* gy = y.grad().data();
    Real* gx = x.grad_buffer().data();
    for (int c = 0; c < C; ++c)
      for (int z = 0; z < D2; ++z)
        for (int yy = 0; yy < H2; ++yy)
          for (int xx = 0; xx < W2; ++xx) gx[idx_in(c, z / 2, yy / 2, xx / 2)] += gy[idx_out(c, z, yy, xx)];
  });
  return y;
}

template <class Real>
BasicTensor<Real> concat_channels(BasicTape<Real>& tape, const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_spatial(a.shape(), "concat_channels");
  require_spatial(b.shape(), "concat_channels");
  require(std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1),
          "concat_channels: spatial extents differ: " + shape_to_string(a.shape()) + " vs " +
              shape_to_string(b.shape()));
  std::vector<Real> out;
  out.reserve(a.data().size() + b.data().size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  Shape s = a.shape();
  s[0] += b.dim(0);
  BasicTensor<Real> y(std::move(s), std::move(out));
  if (!tape.wants({&a, &b})) return y;

  y.set_requires_grad(true);
  const std::size_t na = a.data().size();
  tape.record("concat_channels", y, [=, a = a, b = b]() mutable {
    const auto gy = y.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < na; ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[na + i];
    }
  });
  return y;
}

template <class Real>
BasicTensor<Real> sum(BasicTape<Real>& tape, const BasicTensor<Real>& x) {
  double acc = 0.0;
  for (Real v : x.data()) acc += v;
  auto y = BasicTensor<Real>::scalar(static_cast<Real>(acc));
  if (!tape.wants({&x})) return y;

  y.set_requires_grad(true);
  tape.record("sum", y, [=, x = x]() mutable {
    const Real g = y.grad()[0];
    for (auto& v : x.grad_buffer()) v += g;
  });
  return y;
}

template <class Real>
BasicTensor<Real> weighted_sum(BasicTape<Real>& tape, const BasicTensor<Real>& x, std::span<const Real> weights) {
  require(static_cast<std::int64_t>(weights.size()) == x.numel(), "weighted_sum: weight length mismatch");
  double acc = 0.0;
  const auto xd = x.data();
  for (std::size_t i = 0; i < weights.size(); ++i) acc += static_cast<double>(weights[i]) * xd[i];
  auto y = BasicTensor<Real>::scalar(static_cast<Real>(acc));
  if (!tape.wants({&x})) return y;

  y.set_requires_grad(true);
  std::vector<Real> wcopy(weights.begin(), weights.end());
  tape.record("weighted_sum", y, [=, x = x, wcopy = std::move(wcopy)]() mutable {
    const Real g = y.grad()[0];
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * wcopy[i];
  });
  return y;
}

template <class Real>
BasicTensor<Real> add(BasicTape<Real>& tape, const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                      shape_to_string(b.shape()));
  std::vector<Real> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  BasicTensor<Real> y(a.shape(), std::move(out));
  if (!tape.wants({&a, &b})) return y;

  y.set_requires_grad(true);
  tape.record("add", y, [=, a = a, b = b]() mutable {
    const auto gy = y.grad();
    for (auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto g = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
  return y;
}

template <class Real>
BasicTensor<Real> scale(BasicTape<Real>& tape, const BasicTensor<Real>& x, double factor) {
  const Real f = static_cast<Real>(factor);
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= f;
  BasicTensor<Real> y(x.shape(), std::move(out));
  if (!tape.wants({&x})) return y;

  y.set_requires_grad(true);
  tape.record("scale", y, [=, x = x]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += f * gy[i];
  });
  return y;
}

#define CLOPA_INSTANTIATE_OPS(Real)                                                                              \
  template BasicTensor<Real> conv3d(BasicTape<Real>&, const BasicTensor<Real>&, const BasicTensor<Real>&,         \
                                    const BasicTensor<Real>&, int, int);                                          \
  template BasicTensor<Real> instance_norm(BasicTape<Real>&, const BasicTensor<Real>&, const BasicTensor<Real>&,  \
                                           const BasicTensor<Real>&, double);                                     \
  template BasicTensor<Real> leaky_relu(BasicTape<Real>&, const BasicTensor<Real>&, double);                      \
  template BasicTensor<Real> softmax_channel(BasicTape<Real>&, const BasicTensor<Real>&);                         \
  template BasicTensor<Real> upsample_nearest2(BasicTape<Real>&, const BasicTensor<Real>&);                       \
  template BasicTensor<Real> concat_channels(BasicTape<Real>&, const BasicTensor<Real>&, const BasicTensor<Real>&); \
  template BasicTensor<Real> sum(BasicTape<Real>&, const BasicTensor<Real>&);                                     \
  template BasicTensor<Real> weighted_sum(BasicTape<Real>&, const BasicTensor<Real>&, std::span<const Real>);     \
  template BasicTensor<Real> add(BasicTape<Real>&, const BasicTensor<Real>&, const BasicTensor<Real>&);           \
  template BasicTensor<Real> scale(BasicTape<Real>&, const BasicTensor<Real>&, double);

CLOPA_INSTANTIATE_OPS(float)
CLOPA_INSTANTIATE_OPS(double)

#undef CLOPA_INSTANTIATE_OPS

}  // namespace clopa::ad
