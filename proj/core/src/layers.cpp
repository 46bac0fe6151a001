#include "fseg/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fseg::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void im2col(const Tensor<T>& x, std::size_t k, std::size_t s, std::size_t z0, std::size_t z1, std::size_t oh,
            std::size_t ow, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = oh * ow;
  const auto D = static_cast<std::ptrdiff_t>(x.d), H = static_cast<std::ptrdiff_t>(x.h),
             W = static_cast<std::ptrdiff_t>(x.w);
  const auto S = static_cast<std::ptrdiff_t>(s);
  T* dst = col;
  for (std::size_t ci = 0; ci < x.c; ++ci) {
    const T* src = x.channel(ci);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        for (std::size_t c = 0; c < k; ++c) {
          for (std::size_t z = z0; z < z1; ++z) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z) * S + static_cast<std::ptrdiff_t>(a) - pad;
            if (iz < 0 || iz >= D) {
              std::fill_n(dst, plane, T{});
              dst += plane;
              continue;
            }
            for (std::size_t y = 0; y < oh; ++y, dst += ow) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * S + static_cast<std::ptrdiff_t>(b) - pad;
              if (iy < 0 || iy >= H) {
                std::fill_n(dst, ow, T{});
                continue;
              }
              const T* line = src + (iz * H + iy) * W;
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(c) - pad;
              if (S == 1) {
                // Contiguous copy with zero fill where the kernel overhangs.
                const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
                const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ow), W - shift);
                std::fill(dst, dst + lo, T{});
                if (hi > lo) std::memcpy(dst + lo, line + lo + shift, static_cast<std::size_t>(hi - lo) * sizeof(T));
                std::fill(dst + std::max(hi, lo), dst + ow, T{});
                continue;
              }
              for (std::size_t xo = 0; xo < ow; ++xo) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo) * S + shift;
                dst[xo] = (ix >= 0 && ix < W) ? line[ix] : T{};
              }
            }
          }
        }
  }
}

template <typename T>
void col2im(const T* col, std::size_t k, std::size_t s, std::size_t z0, std::size_t z1, std::size_t oh,
            std::size_t ow, Tensor<T>& dx) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = oh * ow;
  const auto D = static_cast<std::ptrdiff_t>(dx.d), H = static_cast<std::ptrdiff_t>(dx.h),
             W = static_cast<std::ptrdiff_t>(dx.w);
  const auto S = static_cast<std::ptrdiff_t>(s);
  const T* src = col;
  for (std::size_t ci = 0; ci < dx.c; ++ci) {
    T* out = dx.channel(ci);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        for (std::size_t c = 0; c < k; ++c) {
          for (std::size_t z = z0; z < z1; ++z) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z) * S + static_cast<std::ptrdiff_t>(a) - pad;
            if (iz < 0 || iz >= D) {
              src += plane;
              continue;
            }
            for (std::size_t y = 0; y < oh; ++y, src += ow) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * S + static_cast<std::ptrdiff_t>(b) - pad;
              if (iy < 0 || iy >= H) continue;
              T* line = out + (iz * H + iy) * W;
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(c) - pad;
              if (S == 1) {
                const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
                const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ow), W - shift);
                for (std::ptrdiff_t xo = lo; xo < hi; ++xo) line[xo + shift] += src[xo];
                continue;
              }
              for (std::size_t xo = 0; xo < ow; ++xo) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo) * S + shift;
                if (ix >= 0 && ix < W) line[ix] += src[xo];
              }
            }
          }
        }
  }
}

template <typename T>
using StridedMat = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMat = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Output z-slices per im2col block, sized so one block stays cache resident.
template <typename T>
std::size_t slab_depth(std::size_t K, std::size_t plane) {
  constexpr std::size_t kTargetBytes = std::size_t{1} << 20;
  return std::max<std::size_t>(1, kTargetBytes / (K * plane * sizeof(T)));
}

// im2col scratch, reused across calls to avoid page-faulting fresh buffers.
template <typename T>
T* scratch(std::size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

void check_box(const BoundingBox3& box, const Shape3& s, const char* what) {
  if (!box.valid() || !box.within(s)) throw std::invalid_argument(std::string(what) + ": box outside tensor");
}

struct AxisInterp {
  std::vector<std::size_t> i0, i1;
  std::vector<double> frac;
};

AxisInterp axis_interp(std::size_t n, std::size_t factor) {
  AxisInterp a;
  const std::size_t m = n * factor;
  a.i0.resize(m);
  a.i1.resize(m);
  a.frac.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    double src = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::max(src, 0.0);
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, n - 1);
    a.i0[i] = lo;
    a.i1[i] = std::min(lo + 1, n - 1);
    a.frac[i] = src - static_cast<double>(lo);
  }
  return a;
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
  const std::size_t pad = k / 2;
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvWeights<T>& p) {
  if (x.c != p.cin) throw std::invalid_argument("conv3d: channel mismatch");
  const std::size_t od = conv_out_extent(x.d, p.k, p.stride), oh = conv_out_extent(x.h, p.k, p.stride),
                    ow = conv_out_extent(x.w, p.k, p.stride);
  Tensor<T> y(p.cout, od, oh, ow);
  const std::size_t P = od * oh * ow, K = p.cin * p.k * p.k * p.k;
  if (P == 0) return y;
  MapConstMat<T> W(p.w.data(), static_cast<Eigen::Index>(p.cout), static_cast<Eigen::Index>(K));
  MapMat<T> Y(y.v.data(), static_cast<Eigen::Index>(p.cout), static_cast<Eigen::Index>(P));
  if (p.k == 1 && p.stride == 1) {
    MapConstMat<T> X(x.v.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    Y.noalias() = W * X;
  } else {
    const std::size_t plane = oh * ow, nz = slab_depth<T>(K, plane);
    T* col = scratch<T>(K * nz * plane);
    for (std::size_t z0 = 0; z0 < od; z0 += nz) {
      const std::size_t z1 = std::min(od, z0 + nz), n = (z1 - z0) * plane;
      im2col(x, p.k, p.stride, z0, z1, oh, ow, col);
      MapConstMat<T> C(col, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
      StridedMat<T> Ys(y.v.data() + z0 * plane, static_cast<Eigen::Index>(p.cout), static_cast<Eigen::Index>(n),
                       Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
      Ys.noalias() = W * C;
    }
  }
  for (std::size_t o = 0; o < p.cout; ++o) {
    T* row = y.channel(o);
    for (std::size_t n = 0; n < P; ++n) row[n] += p.b[o];
  }
  return y;
}

template <typename T>
Tensor<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& dy, const ConvWeights<T>& p, ConvWeights<T>& grad) {
  if (x.c != p.cin || dy.c != p.cout) throw std::invalid_argument("conv3d_backward: channel mismatch");
  const std::size_t od = dy.d, oh = dy.h, ow = dy.w;
  const std::size_t P = od * oh * ow, K = p.cin * p.k * p.k * p.k;
  Tensor<T> dx(x.c, x.d, x.h, x.w);
  if (P == 0) return dx;
  const auto Ki = static_cast<Eigen::Index>(K), Pi = static_cast<Eigen::Index>(P),
             Oi = static_cast<Eigen::Index>(p.cout);
  MapConstMat<T> W(p.w.data(), Oi, Ki);
  MapConstMat<T> dY(dy.v.data(), Oi, Pi);
  MapMat<T> dW(grad.w.data(), Oi, Ki);
  for (std::size_t o = 0; o < p.cout; ++o) {
    const T* row = dy.channel(o);
    T acc{};
    for (std::size_t n = 0; n < P; ++n) acc += row[n];
    grad.b[o] += acc;
  }
  if (p.k == 1 && p.stride == 1) {
    MapConstMat<T> X(x.v.data(), Ki, Pi);
    dW.noalias() += dY * X.transpose();
    MapMat<T> dX(dx.v.data(), Ki, Pi);
    dX.noalias() = W.transpose() * dY;
    return dx;
  }
  const std::size_t plane = oh * ow, nz = slab_depth<T>(K, plane);
  T* col = scratch<T>(K * nz * plane);
  for (std::size_t z0 = 0; z0 < od; z0 += nz) {
    const std::size_t z1 = std::min(od, z0 + nz), n = (z1 - z0) * plane;
    const auto ni = static_cast<Eigen::Index>(n);
    ConstStridedMat<T> dYs(dy.v.data() + z0 * plane, Oi, ni, Eigen::OuterStride<>(Pi));
    im2col(x, p.k, p.stride, z0, z1, oh, ow, col);
    MapMat<T> C(col, Ki, ni);
    dW.noalias() += dYs * C.transpose();
    C.noalias() = W.transpose() * dYs;
    col2im(col, p.k, p.stride, z0, z1, oh, ow, dx);
  }
  return dx;
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const GroupNormWeights<T>& p, GroupNormCache<T>& cache) {
  const std::size_t G = p.groups;
  if (G == 0 || x.c % G != 0 || p.gamma.size() != x.c) throw std::invalid_argument("group_norm: bad grouping");
  const std::size_t cg = x.c / G, S = x.spatial();
  const double N = static_cast<double>(cg * S);
  Tensor<T> y(x.c, x.d, x.h, x.w);
  cache.xhat = Tensor<T>(x.c, x.d, x.h, x.w);
  cache.inv_std.assign(G, T{});
  for (std::size_t g = 0; g < G; ++g) {
    double mean = 0.0;
    for (std::size_t ch = g * cg; ch < (g + 1) * cg; ++ch) {
      const T* src = x.channel(ch);
      for (std::size_t n = 0; n < S; ++n) mean += static_cast<double>(src[n]);
    }
    mean /= N;
    double var = 0.0;
    for (std::size_t ch = g * cg; ch < (g + 1) * cg; ++ch) {
      const T* src = x.channel(ch);
      for (std::size_t n = 0; n < S; ++n) {
        const double dlt = static_cast<double>(src[n]) - mean;
        var += dlt * dlt;
      }
    }
    var /= N;
    const double inv = 1.0 / std::sqrt(var + kGroupNormEps);
    cache.inv_std[g] = static_cast<T>(inv);
    for (std::size_t ch = g * cg; ch < (g + 1) * cg; ++ch) {
      const T* src = x.channel(ch);
      T* xh = cache.xhat.channel(ch);
      T* dst = y.channel(ch);
      for (std::size_t n = 0; n < S; ++n) {
        xh[n] = static_cast<T>((static_cast<double>(src[n]) - mean) * inv);
        dst[n] = p.gamma[ch] * xh[n] + p.beta[ch];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> group_norm_backward(const Tensor<T>& dy, const GroupNormWeights<T>& p, const GroupNormCache<T>& cache,
                              GroupNormWeights<T>& grad) {
  const std::size_t G = p.groups, cg = dy.c / G, S = dy.spatial();
  const double N = static_cast<double>(cg * S);
  Tensor<T> dx(dy.c, dy.d, dy.h, dy.w);
  for (std::size_t g = 0; g < G; ++g) {
    double sum1 = 0.0, sum2 = 0.0;
    for (std::size_t ch = g * cg; ch < (g + 1) * cg; ++ch) {
      const T* d = dy.channel(ch);
      const T* xh = cache.xhat.channel(ch);
      double dg = 0.0, db = 0.0;
      for (std::size_t n = 0; n < S; ++n) {
        dg += static_cast<double>(d[n]) * xh[n];
        db += static_cast<double>(d[n]);
      }
      grad.gamma[ch] += static_cast<T>(dg);
      grad.beta[ch] += static_cast<T>(db);
      sum1 += db * p.gamma[ch];
      sum2 += dg * p.gamma[ch];
    }
    const double inv = static_cast<double>(cache.inv_std[g]);
    for (std::size_t ch = g * cg; ch < (g + 1) * cg; ++ch) {
      const T* d = dy.channel(ch);
      const T* xh = cache.xhat.channel(ch);
      T* out = dx.channel(ch);
      const double gm = static_cast<double>(p.gamma[ch]);
      for (std::size_t n = 0; n < S; ++n) {
        const double dxhat = static_cast<double>(d[n]) * gm;
        out[n] = static_cast<T>(inv / N * (N * dxhat - sum1 - static_cast<double>(xh[n]) * sum2));
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& e : y.v) e = e > T{} ? e : T{};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t n = 0; n < dx.v.size(); ++n)
    if (!(y.v[n] > T{})) dx.v[n] = T{};
  return dx;
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x, std::vector<std::uint32_t>& argmax) {
  const std::size_t od = (x.d + 1) / 2, oh = (x.h + 1) / 2, ow = (x.w + 1) / 2;
  Tensor<T> y(x.c, od, oh, ow);
  argmax.assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < x.c; ++ch) {
    const T* src = x.channel(ch);
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t yy = 0; yy < oh; ++yy)
        for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
          std::size_t best = (2 * z * x.h + 2 * yy) * x.w + 2 * xx;
          for (std::size_t a = 2 * z; a < std::min(2 * z + 2, x.d); ++a)
            for (std::size_t b = 2 * yy; b < std::min(2 * yy + 2, x.h); ++b)
              for (std::size_t c = 2 * xx; c < std::min(2 * xx + 2, x.w); ++c) {
                const std::size_t n = (a * x.h + b) * x.w + c;
                if (src[n] > src[best]) best = n;
              }
          y.v[o] = src[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax, const Tensor<T>& x_shape) {
  if (argmax.size() != dy.size()) throw std::invalid_argument("maxpool2_backward: cache mismatch");
  Tensor<T> dx(x_shape.c, x_shape.d, x_shape.h, x_shape.w);
  const std::size_t per = dy.spatial();
  for (std::size_t ch = 0; ch < dy.c; ++ch) {
    T* out = dx.channel(ch);
    for (std::size_t n = 0; n < per; ++n) out[argmax[ch * per + n]] += dy.v[ch * per + n];
  }
  return dx;
}

template <typename T>
std::vector<T> gap(const Tensor<T>& x, const BoundingBox3& box) {
  check_box(box, x.spatial_shape(), "gap");
  std::vector<T> out(x.c, T{});
  const double inv = 1.0 / static_cast<double>(box.volume());
  for (std::size_t ch = 0; ch < x.c; ++ch) {
    double acc = 0.0;
    for (std::size_t z = box.start.i; z < box.end.i; ++z)
      for (std::size_t y = box.start.j; y < box.end.j; ++y)
        for (std::size_t xx = box.start.k; xx < box.end.k; ++xx) acc += static_cast<double>(x(ch, z, y, xx));
    out[ch] = static_cast<T>(acc * inv);
  }
  return out;
}

template <typename T>
void gap_backward(const std::vector<T>& dy, const BoundingBox3& box, Tensor<T>& dx) {
  check_box(box, dx.spatial_shape(), "gap_backward");
  if (dy.size() != dx.c) throw std::invalid_argument("gap_backward: channel mismatch");
  const T inv = static_cast<T>(1.0 / static_cast<double>(box.volume()));
  for (std::size_t ch = 0; ch < dx.c; ++ch) {
    const T g = dy[ch] * inv;
    for (std::size_t z = box.start.i; z < box.end.i; ++z)
      for (std::size_t y = box.start.j; y < box.end.j; ++y)
        for (std::size_t xx = box.start.k; xx < box.end.k; ++xx) dx(ch, z, y, xx) += g;
  }
}

template <typename T>
std::vector<T> linear(const std::vector<T>& x, const std::vector<T>& w, const std::vector<T>& b) {
  const std::size_t out = b.size(), in = x.size();
  if (w.size() != out * in) throw std::invalid_argument("linear: weight shape mismatch");
  std::vector<T> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    T acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[i];
    y[o] = acc;
  }
  return y;
}

template <typename T>
std::vector<T> linear_backward(const std::vector<T>& x, const std::vector<T>& dy, const std::vector<T>& w,
                               std::vector<T>& dw, std::vector<T>& db) {
  const std::size_t out = dy.size(), in = x.size();
  std::vector<T> dx(in, T{});
  for (std::size_t o = 0; o < out; ++o) {
    db[o] += dy[o];
    for (std::size_t i = 0; i < in; ++i) {
      dw[o * in + i] += dy[o] * x[i];
      dx[i] += w[o * in + i] * dy[o];
    }
  }
  return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& e : y.v) e = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(e))));
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t n = 0; n < dx.v.size(); ++n) dx.v[n] *= y.v[n] * (T{1} - y.v[n]);
  return dx;
}

template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("upsample_trilinear: factor must be >= 1");
  if (factor == 1) return x;
  const auto az = axis_interp(x.d, factor), ay = axis_interp(x.h, factor), ax = axis_interp(x.w, factor);
  Tensor<T> y(x.c, x.d * factor, x.h * factor, x.w * factor);
  for (std::size_t ch = 0; ch < x.c; ++ch) {
    const T* src = x.channel(ch);
    T* dst = y.channel(ch);
    std::size_t o = 0;
    for (std::size_t z = 0; z < y.d; ++z) {
      const double fz = az.frac[z];
      const std::size_t z0 = az.i0[z] * x.h, z1 = az.i1[z] * x.h;
      for (std::size_t yy = 0; yy < y.h; ++yy) {
        const double fy = ay.frac[yy];
        const std::size_t r00 = (z0 + ay.i0[yy]) * x.w, r01 = (z0 + ay.i1[yy]) * x.w,
                          r10 = (z1 + ay.i0[yy]) * x.w, r11 = (z1 + ay.i1[yy]) * x.w;
        for (std::size_t xx = 0; xx < y.w; ++xx, ++o) {
          const double fx = ax.frac[xx];
          const std::size_t x0 = ax.i0[xx], x1 = ax.i1[xx];
          const double c00 = src[r00 + x0] + fx * (static_cast<double>(src[r00 + x1]) - src[r00 + x0]);
          const double c01 = src[r01 + x0] + fx * (static_cast<double>(src[r01 + x1]) - src[r01 + x0]);
          const double c10 = src[r10 + x0] + fx * (static_cast<double>(src[r10 + x1]) - src[r10 + x0]);
          const double c11 = src[r11 + x0] + fx * (static_cast<double>(src[r11 + x1]) - src[r11 + x0]);
          const double c0 = c00 + fy * (c01 - c00), c1 = c10 + fy * (c11 - c10);
          dst[o] = static_cast<T>(c0 + fz * (c1 - c0));
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample_trilinear_backward(const Tensor<T>& dy, std::size_t factor) {
  if (factor == 0 || dy.d % factor || dy.h % factor || dy.w % factor)
    throw std::invalid_argument("upsample_trilinear_backward: extent not divisible by factor");
  if (factor == 1) return dy;
  Tensor<T> dx(dy.c, dy.d / factor, dy.h / factor, dy.w / factor);
  const auto az = axis_interp(dx.d, factor), ay = axis_interp(dx.h, factor), ax = axis_interp(dx.w, factor);
  for (std::size_t ch = 0; ch < dy.c; ++ch) {
    const T* g = dy.channel(ch);
    T* dst = dx.channel(ch);
    std::size_t o = 0;
    for (std::size_t z = 0; z < dy.d; ++z) {
      const double fz = az.frac[z];
      const std::size_t z0 = az.i0[z] * dx.h, z1 = az.i1[z] * dx.h;
      for (std::size_t yy = 0; yy < dy.h; ++yy) {
        const double fy = ay.frac[yy];
        const std::size_t r00 = (z0 + ay.i0[yy]) * dx.w, r01 = (z0 + ay.i1[yy]) * dx.w,
                          r10 = (z1 + ay.i0[yy]) * dx.w, r11 = (z1 + ay.i1[yy]) * dx.w;
        for (std::size_t xx = 0; xx < dy.w; ++xx, ++o) {
          const double fx = ax.frac[xx];
          const std::size_t x0 = ax.i0[xx], x1 = ax.i1[xx];
          const double v = g[o];
          const double w0 = v * (1.0 - fz), w1 = v * fz;
          const double w00 = w0 * (1.0 - fy), w01 = w0 * fy, w10 = w1 * (1.0 - fy), w11 = w1 * fy;
          dst[r00 + x0] += static_cast<T>(w00 * (1.0 - fx));
          dst[r00 + x1] += static_cast<T>(w00 * fx);
          dst[r01 + x0] += static_cast<T>(w01 * (1.0 - fx));
          dst[r01 + x1] += static_cast<T>(w01 * fx);
          dst[r10 + x0] += static_cast<T>(w10 * (1.0 - fx));
          dst[r10 + x1] += static_cast<T>(w10 * fx);
          dst[r11 + x0] += static_cast<T>(w11 * (1.0 - fx));
          dst[r11 + x1] += static_cast<T>(w11 * fx);
        }
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.d != b.d || a.h != b.h || a.w != b.w) throw std::invalid_argument("concat: spatial mismatch");
  Tensor<T> y(a.c + b.c, a.d, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return y;
}

template <typename T>
void concat_backward(const Tensor<T>& dy, std::size_t channels_a, Tensor<T>& da, Tensor<T>& db) {
  if (channels_a > dy.c) throw std::invalid_argument("concat_backward: channel split out of range");
  da = Tensor<T>(channels_a, dy.d, dy.h, dy.w);
  db = Tensor<T>(dy.c - channels_a, dy.d, dy.h, dy.w);
  const auto split = static_cast<std::ptrdiff_t>(da.v.size());
  std::copy(dy.v.begin(), dy.v.begin() + split, da.v.begin());
  std::copy(dy.v.begin() + split, dy.v.end(), db.v.begin());
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, const BoundingBox3& box) {
  check_box(box, x.spatial_shape(), "crop");
  Tensor<T> y(x.c, box.extent(0), box.extent(1), box.extent(2));
  for (std::size_t ch = 0; ch < x.c; ++ch)
    for (std::size_t z = 0; z < y.d; ++z)
      for (std::size_t yy = 0; yy < y.h; ++yy) {
        const T* src = &x(ch, box.start.i + z, box.start.j + yy, box.start.k);
        std::copy(src, src + y.w, &y(ch, z, yy, 0));
      }
  return y;
}

template <typename T>
void crop_backward(const Tensor<T>& dy, const BoundingBox3& box, Tensor<T>& dx) {
  check_box(box, dx.spatial_shape(), "crop_backward");
  if (dy.c != dx.c || dy.d != box.extent(0) || dy.h != box.extent(1) || dy.w != box.extent(2))
    throw std::invalid_argument("crop_backward: shape mismatch");
  for (std::size_t ch = 0; ch < dy.c; ++ch)
    for (std::size_t z = 0; z < dy.d; ++z)
      for (std::size_t yy = 0; yy < dy.h; ++yy) {
        T* dst = &dx(ch, box.start.i + z, box.start.j + yy, box.start.k);
        const T* src = &dy(ch, z, yy, 0);
        for (std::size_t xx = 0; xx < dy.w; ++xx) dst[xx] += src[xx];
      }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> y = a;
  add_inplace(y, b);
  return y;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  for (std::size_t n = 0; n < a.v.size(); ++n) a.v[n] += b.v[n];
}

#define FSEG_INSTANTIATE_LAYERS(T)                                                                               \
  template Tensor<T> conv3d(const Tensor<T>&, const ConvWeights<T>&);                                            \
  template Tensor<T> conv3d_backward(const Tensor<T>&, const Tensor<T>&, const ConvWeights<T>&, ConvWeights<T>&); \
  template Tensor<T> group_norm(const Tensor<T>&, const GroupNormWeights<T>&, GroupNormCache<T>&);              \
  template Tensor<T> group_norm_backward(const Tensor<T>&, const GroupNormWeights<T>&, const GroupNormCache<T>&, \
                                         GroupNormWeights<T>&);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                                     \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> maxpool2(const Tensor<T>&, std::vector<std::uint32_t>&);                                    \
  template Tensor<T> maxpool2_backward(const Tensor<T>&, const std::vector<std::uint32_t>&, const Tensor<T>&);    \
  template std::vector<T> gap(const Tensor<T>&, const BoundingBox3&);                                            \
  template void gap_backward(const std::vector<T>&, const BoundingBox3&, Tensor<T>&);                            \
  template std::vector<T> linear(const std::vector<T>&, const std::vector<T>&, const std::vector<T>&);           \
  template std::vector<T> linear_backward(const std::vector<T>&, const std::vector<T>&, const std::vector<T>&,   \
                                          std::vector<T>&, std::vector<T>&);                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                  \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> upsample_trilinear(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> upsample_trilinear_backward(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&);                                                 \
  template void concat_backward(const Tensor<T>&, std::size_t, Tensor<T>&, Tensor<T>&);                          \
  template Tensor<T> crop(const Tensor<T>&, const BoundingBox3&);                                                \
  template void crop_backward(const Tensor<T>&, const BoundingBox3&, Tensor<T>&);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                    \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

FSEG_INSTANTIATE_LAYERS(float)
FSEG_INSTANTIATE_LAYERS(double)

#undef FSEG_INSTANTIATE_LAYERS

}  // namespace fseg::nn
