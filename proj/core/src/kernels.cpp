#include "ctsae/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ctsae::kernels {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

inline std::ptrdiff_t ceil_div(std::ptrdiff_t a, std::ptrdiff_t b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

// Valid output range [lo,hi) such that o*stride - pad + k lies in [0, limit).
inline void conv_range(std::ptrdiff_t k, std::ptrdiff_t pad, std::ptrdiff_t stride,
                       std::ptrdiff_t limit, std::ptrdiff_t out_limit, std::ptrdiff_t& lo,
                       std::ptrdiff_t& hi) {
  lo = std::max<std::ptrdiff_t>(0, ceil_div(pad - k, stride));
  hi = std::min<std::ptrdiff_t>(out_limit, (limit - 1 + pad - k) / stride + 1);
  if (hi < lo) hi = lo;
}

template <class S>
void check_conv_shapes(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                       std::size_t in_ch_axis, const char* what) {
  if (x.rank() != 4 || w.rank() != 4)
    throw TensorError(std::string(what) + ": rank-4 input/weight required, got " +
                      shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (x.extent(1) != w.extent(in_ch_axis))
    throw TensorError(std::string(what) + ": input channels " + shape_str(x.shape()) +
                      " do not match weight " + shape_str(w.shape()));
  if (!b.empty() && b.size() != w.extent(in_ch_axis == 0 ? 1 : 0))
    throw TensorError(std::string(what) + ": bias length " + std::to_string(b.size()) +
                      " does not match weight " + shape_str(w.shape()));
}

}  // namespace

template <class S>
TensorT<S> conv2d_fwd(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int stride,
                      int pad) {
  check_conv_shapes(x, w, b, 1, "conv2d");
  const std::ptrdiff_t N = x.extent(0), Ci = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::ptrdiff_t Co = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw TensorError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                      shape_str(x.shape()));
  const std::ptrdiff_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::ptrdiff_t Wo = (W + 2 * pad - kw) / stride + 1;
  TensorT<S> y({(std::size_t)N, (std::size_t)Co, (std::size_t)Ho, (std::size_t)Wo});

  const S* xp = x.data();
  const S* wp = w.data();
  S* yp = y.data();
  const std::ptrdiff_t xs = H * W, ys = Ho * Wo;

  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t n = 0; n < N; ++n)
      for (std::ptrdiff_t co = 0; co < Co; ++co) {
        S* yrow = yp + (n * Co + co) * ys;
        const S bias = b.empty() ? S(0) : b[co];
        for (std::ptrdiff_t q = 0; q < ys; ++q) yrow[q] = bias;
        for (std::ptrdiff_t ci = 0; ci < Ci; ++ci) {
          const S wv = wp[co * Ci + ci];
          const S* xrow = xp + (n * Ci + ci) * xs;
          for (std::ptrdiff_t q = 0; q < ys; ++q) yrow[q] += wv * xrow[q];
        }
      }
    return y;
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < N; ++n)
    for (std::ptrdiff_t co = 0; co < Co; ++co) {
      S* ymap = yp + (n * Co + co) * ys;
      const S bias = b.empty() ? S(0) : b[co];
      for (std::ptrdiff_t q = 0; q < ys; ++q) ymap[q] = bias;
      for (std::ptrdiff_t ci = 0; ci < Ci; ++ci) {
        const S* xmap = xp + (n * Ci + ci) * xs;
        const S* wmap = wp + ((co * Ci + ci) * kh) * kw;
        for (std::ptrdiff_t i = 0; i < kh; ++i) {
          std::ptrdiff_t oh_lo, oh_hi;
          conv_range(i, pad, stride, H, Ho, oh_lo, oh_hi);
          for (std::ptrdiff_t j = 0; j < kw; ++j) {
            const S wv = wmap[i * kw + j];
            std::ptrdiff_t ow_lo, ow_hi;
            conv_range(j, pad, stride, W, Wo, ow_lo, ow_hi);
            for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::ptrdiff_t ih = oh * stride - pad + i;
              const S* xrow = xmap + ih * W - pad + j;
              S* yrow = ymap + oh * Wo;
              if (stride == 1) {
                for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) yrow[ow] += wv * xrow[ow];
              } else {
                for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow)
                  yrow[ow] += wv * xrow[ow * stride];
              }
            }
          }
        }
      }
    }
  return y;
}

template <class S>
TensorT<S> conv2d_bwd_x(const TensorT<S>& dy, const TensorT<S>& w, int stride, int pad,
                        std::size_t H, std::size_t W) {
  const std::ptrdiff_t N = dy.extent(0), Co = dy.extent(1), Ho = dy.extent(2), Wo = dy.extent(3);
  const std::ptrdiff_t Ci = w.extent(1), kh = w.extent(2), kw = w.extent(3);
  TensorT<S> dx({(std::size_t)N, (std::size_t)Ci, H, W});
  const std::ptrdiff_t Hs = H, Ws = W;
  const S* dyp = dy.data();
  const S* wp = w.data();
  S* dxp = dx.data();
  const std::ptrdiff_t ys = Ho * Wo, xs = Hs * Ws;

  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t n = 0; n < N; ++n)
      for (std::ptrdiff_t ci = 0; ci < Ci; ++ci) {
        S* dxrow = dxp + (n * Ci + ci) * xs;
        for (std::ptrdiff_t co = 0; co < Co; ++co) {
          const S wv = wp[co * Ci + ci];
          const S* dyrow = dyp + (n * Co + co) * ys;
          for (std::ptrdiff_t q = 0; q < xs; ++q) dxrow[q] += wv * dyrow[q];
        }
      }
    return dx;
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < N; ++n)
    for (std::ptrdiff_t ci = 0; ci < Ci; ++ci) {
      S* dxmap = dxp + (n * Ci + ci) * xs;
      for (std::ptrdiff_t co = 0; co < Co; ++co) {
        const S* dymap = dyp + (n * Co + co) * ys;
        const S* wmap = wp + ((co * Ci + ci) * kh) * kw;
        for (std::ptrdiff_t i = 0; i < kh; ++i) {
          std::ptrdiff_t oh_lo, oh_hi;
          conv_range(i, pad, stride, Hs, Ho, oh_lo, oh_hi);
          for (std::ptrdiff_t j = 0; j < kw; ++j) {
            const S wv = wmap[i * kw + j];
            std::ptrdiff_t ow_lo, ow_hi;
            conv_range(j, pad, stride, Ws, Wo, ow_lo, ow_hi);
            for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::ptrdiff_t ih = oh * stride - pad + i;
              S* dxrow = dxmap + ih * Ws - pad + j;
              const S* dyrow = dymap + oh * Wo;
              if (stride == 1) {
                for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) dxrow[ow] += wv * dyrow[ow];
              } else {
                for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow)
                  dxrow[ow * stride] += wv * dyrow[ow];
              }
            }
          }
        }
      }
    }
  return dx;
}

template <class S>
TensorT<S> conv2d_bwd_w(const TensorT<S>& dy, const TensorT<S>& x, std::size_t kh, std::size_t kw,
                        int stride, int pad) {
  const std::ptrdiff_t N = x.extent(0), Ci = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::ptrdiff_t Co = dy.extent(1), Ho = dy.extent(2), Wo = dy.extent(3);
  TensorT<S> dw({(std::size_t)Co, (std::size_t)Ci, kh, kw});
  const S* dyp = dy.data();
  const S* xp = x.data();
  S* dwp = dw.data();
  const std::ptrdiff_t ys = Ho * Wo, xs = H * W;
  const std::ptrdiff_t khp = kh, kwp = kw;

#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t co = 0; co < Co; ++co)
    for (std::ptrdiff_t ci = 0; ci < Ci; ++ci) {
      S* dwmap = dwp + ((co * Ci + ci) * khp) * kwp;
      for (std::ptrdiff_t i = 0; i < khp; ++i) {
        std::ptrdiff_t oh_lo, oh_hi;
        conv_range(i, pad, stride, H, Ho, oh_lo, oh_hi);
        for (std::ptrdiff_t j = 0; j < kwp; ++j) {
          std::ptrdiff_t ow_lo, ow_hi;
          conv_range(j, pad, stride, W, Wo, ow_lo, ow_hi);
          S acc = 0;
          for (std::ptrdiff_t n = 0; n < N; ++n) {
            const S* dymap = dyp + (n * Co + co) * ys;
            const S* xmap = xp + (n * Ci + ci) * xs;
            for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::ptrdiff_t ih = oh * stride - pad + i;
              const S* xrow = xmap + ih * W - pad + j;
              const S* dyrow = dymap + oh * Wo;
              if (stride == 1) {
                for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) acc += dyrow[ow] * xrow[ow];
              } else {
                for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow)
                  acc += dyrow[ow] * xrow[ow * stride];
              }
            }
          }
          dwmap[i * kwp + j] = acc;
        }
      }
    }
  return dw;
}

template <class S>
TensorT<S> sum_nhw(const TensorT<S>& dy) {
  const std::ptrdiff_t N = dy.extent(0), C = dy.extent(1), HW = dy.extent(2) * dy.extent(3);
  TensorT<S> db({(std::size_t)C});
  const S* dyp = dy.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    S acc = 0;
    for (std::ptrdiff_t n = 0; n < N; ++n) {
      const S* row = dyp + (n * C + c) * HW;
      for (std::ptrdiff_t q = 0; q < HW; ++q) acc += row[q];
    }
    db[c] = acc;
  }
  return db;
}

template <class S>
TensorT<S> convt_fwd(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int stride,
                     int pad) {
  check_conv_shapes(x, w, b, 0, "conv2d_transpose");
  const std::ptrdiff_t N = x.extent(0), Ci = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::ptrdiff_t Co = w.extent(1), kh = w.extent(2), kw = w.extent(3);
  const std::ptrdiff_t Ho = (H - 1) * stride - 2 * pad + kh;
  const std::ptrdiff_t Wo = (W - 1) * stride - 2 * pad + kw;
  if (Ho < 1 || Wo < 1)
    throw TensorError("conv2d_transpose: non-positive output size for input " +
                      shape_str(x.shape()));
  TensorT<S> y({(std::size_t)N, (std::size_t)Co, (std::size_t)Ho, (std::size_t)Wo});
  const S* xp = x.data();
  const S* wp = w.data();
  S* yp = y.data();
  const std::ptrdiff_t xs = H * W, ys = Ho * Wo;

#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < N; ++n)
    for (std::ptrdiff_t co = 0; co < Co; ++co) {
      S* ymap = yp + (n * Co + co) * ys;
      const S bias = b.empty() ? S(0) : b[co];
      for (std::ptrdiff_t q = 0; q < ys; ++q) ymap[q] = bias;
      for (std::ptrdiff_t ci = 0; ci < Ci; ++ci) {
        const S* xmap = xp + (n * Ci + ci) * xs;
        const S* wmap = wp + ((ci * Co + co) * kh) * kw;
        for (std::ptrdiff_t i = 0; i < kh; ++i)
          for (std::ptrdiff_t j = 0; j < kw; ++j) {
            const S wv = wmap[i * kw + j];
            for (std::ptrdiff_t h = 0; h < H; ++h) {
              const std::ptrdiff_t oh = h * stride - pad + i;
              if (oh < 0 || oh >= Ho) continue;
              const S* xrow = xmap + h * W;
              S* yrow = ymap + oh * Wo - pad + j;
              for (std::ptrdiff_t wcol = 0; wcol < W; ++wcol) {
                const std::ptrdiff_t ow = wcol * stride - pad + j;
                if (ow >= 0 && ow < Wo) yrow[wcol * stride] += wv * xrow[wcol];
              }
            }
          }
      }
    }
  return y;
}

template <class S>
TensorT<S> convt_bwd_x(const TensorT<S>& dy, const TensorT<S>& w, int stride, int pad) {
  const std::ptrdiff_t N = dy.extent(0), Co = dy.extent(1), Ho = dy.extent(2), Wo = dy.extent(3);
  const std::ptrdiff_t Ci = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const std::ptrdiff_t H = (Ho + 2 * pad - kh) / stride + 1;
  const std::ptrdiff_t W = (Wo + 2 * pad - kw) / stride + 1;
  TensorT<S> dx({(std::size_t)N, (std::size_t)Ci, (std::size_t)H, (std::size_t)W});
  const S* dyp = dy.data();
  const S* wp = w.data();
  S* dxp = dx.data();
  const std::ptrdiff_t ys = Ho * Wo, xs = H * W;

#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < N; ++n)
    for (std::ptrdiff_t ci = 0; ci < Ci; ++ci) {
      S* dxmap = dxp + (n * Ci + ci) * xs;
      for (std::ptrdiff_t co = 0; co < Co; ++co) {
        const S* dymap = dyp + (n * Co + co) * ys;
        const S* wmap = wp + ((ci * Co + co) * kh) * kw;
        for (std::ptrdiff_t i = 0; i < kh; ++i)
          for (std::ptrdiff_t j = 0; j < kw; ++j) {
            const S wv = wmap[i * kw + j];
            for (std::ptrdiff_t h = 0; h < H; ++h) {
              const std::ptrdiff_t oh = h * stride - pad + i;
              if (oh < 0 || oh >= Ho) continue;
              S* dxrow = dxmap + h * W;
              const S* dyrow = dymap + oh * Wo - pad + j;
              for (std::ptrdiff_t wcol = 0; wcol < W; ++wcol) {
                const std::ptrdiff_t ow = wcol * stride - pad + j;
                if (ow >= 0 && ow < Wo) dxrow[wcol] += wv * dyrow[wcol * stride];
              }
            }
          }
      }
    }
  return dx;
}

template <class S>
TensorT<S> convt_bwd_w(const TensorT<S>& dy, const TensorT<S>& x, std::size_t kh, std::size_t kw,
                       int stride, int pad) {
  const std::ptrdiff_t N = x.extent(0), Ci = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::ptrdiff_t Co = dy.extent(1), Ho = dy.extent(2), Wo = dy.extent(3);
  TensorT<S> dw({(std::size_t)Ci, (std::size_t)Co, kh, kw});
  const S* dyp = dy.data();
  const S* xp = x.data();
  S* dwp = dw.data();
  const std::ptrdiff_t ys = Ho * Wo, xs = H * W;
  const std::ptrdiff_t khp = kh, kwp = kw;

#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t ci = 0; ci < Ci; ++ci)
    for (std::ptrdiff_t co = 0; co < Co; ++co) {
      S* dwmap = dwp + ((ci * Co + co) * khp) * kwp;
      for (std::ptrdiff_t i = 0; i < khp; ++i)
        for (std::ptrdiff_t j = 0; j < kwp; ++j) {
          S acc = 0;
          for (std::ptrdiff_t n = 0; n < N; ++n) {
            const S* xmap = xp + (n * Ci + ci) * xs;
            const S* dymap = dyp + (n * Co + co) * ys;
            for (std::ptrdiff_t h = 0; h < H; ++h) {
              const std::ptrdiff_t oh = h * stride - pad + i;
              if (oh < 0 || oh >= Ho) continue;
              const S* xrow = xmap + h * W;
              const S* dyrow = dymap + oh * Wo - pad + j;
              for (std::ptrdiff_t wcol = 0; wcol < W; ++wcol) {
                const std::ptrdiff_t ow = wcol * stride - pad + j;
                if (ow >= 0 && ow < Wo) acc += xrow[wcol] * dyrow[wcol * stride];
              }
            }
          }
          dwmap[i * kwp + j] = acc;
        }
    }
  return dw;
}

template <class S>
TensorT<S> avgpool_fwd(const TensorT<S>& x, int window, int stride) {
  const std::ptrdiff_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  if (window > H || window > W)
    throw TensorError("avg_pool2d: window " + std::to_string(window) + " exceeds input " +
                      shape_str(x.shape()));
  const std::ptrdiff_t Ho = (H - window) / stride + 1;
  const std::ptrdiff_t Wo = (W - window) / stride + 1;
  TensorT<S> y({(std::size_t)N, (std::size_t)C, (std::size_t)Ho, (std::size_t)Wo});
  const S inv = S(1) / S(window * window);
  const S* xp = x.data();
  S* yp = y.data();
  const std::ptrdiff_t xs = H * W, ys = Ho * Wo;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < N; ++n)
    for (std::ptrdiff_t c = 0; c < C; ++c) {
      const S* xmap = xp + (n * C + c) * xs;
      S* ymap = yp + (n * C + c) * ys;
      for (std::ptrdiff_t oh = 0; oh < Ho; ++oh)
        for (std::ptrdiff_t ow = 0; ow < Wo; ++ow) {
          S acc = 0;
          for (std::ptrdiff_t i = 0; i < window; ++i) {
            const S* xrow = xmap + (oh * stride + i) * W + ow * stride;
            for (std::ptrdiff_t j = 0; j < window; ++j) acc += xrow[j];
          }
          ymap[oh * Wo + ow] = acc * inv;
        }
    }
  return y;
}

template <class S>
TensorT<S> avgpool_bwd(const TensorT<S>& dy, int window, int stride, std::size_t H,
                       std::size_t W) {
  const std::ptrdiff_t N = dy.extent(0), C = dy.extent(1), Ho = dy.extent(2), Wo = dy.extent(3);
  TensorT<S> dx({(std::size_t)N, (std::size_t)C, H, W});
  const S inv = S(1) / S(window * window);
  const S* dyp = dy.data();
  S* dxp = dx.data();
  const std::ptrdiff_t xs = H * W, ys = Ho * Wo, Wp = W;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < N; ++n)
    for (std::ptrdiff_t c = 0; c < C; ++c) {
      const S* dymap = dyp + (n * C + c) * ys;
      S* dxmap = dxp + (n * C + c) * xs;
      for (std::ptrdiff_t oh = 0; oh < Ho; ++oh)
        for (std::ptrdiff_t ow = 0; ow < Wo; ++ow) {
          const S g = dymap[oh * Wo + ow] * inv;
          for (std::ptrdiff_t i = 0; i < window; ++i) {
            S* dxrow = dxmap + (oh * stride + i) * Wp + ow * stride;
            for (std::ptrdiff_t j = 0; j < window; ++j) dxrow[j] += g;
          }
        }
    }
  return dx;
}

template <class S>
TensorT<S> nn_upsample_fwd(const TensorT<S>& x, int factor) {
  const std::ptrdiff_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::ptrdiff_t Ho = H * factor, Wo = W * factor;
  TensorT<S> y({(std::size_t)N, (std::size_t)C, (std::size_t)Ho, (std::size_t)Wo});
  const S* xp = x.data();
  S* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < N; ++n)
    for (std::ptrdiff_t c = 0; c < C; ++c) {
      const S* xmap = xp + (n * C + c) * H * W;
      S* ymap = yp + (n * C + c) * Ho * Wo;
      for (std::ptrdiff_t oh = 0; oh < Ho; ++oh) {
        const S* xrow = xmap + (oh / factor) * W;
        S* yrow = ymap + oh * Wo;
        for (std::ptrdiff_t ow = 0; ow < Wo; ++ow) yrow[ow] = xrow[ow / factor];
      }
    }
  return y;
}

template <class S>
TensorT<S> nn_upsample_bwd(const TensorT<S>& dy, int factor) {
  const std::ptrdiff_t N = dy.extent(0), C = dy.extent(1), Ho = dy.extent(2), Wo = dy.extent(3);
  const std::ptrdiff_t H = Ho / factor, W = Wo / factor;
  TensorT<S> dx({(std::size_t)N, (std::size_t)C, (std::size_t)H, (std::size_t)W});
  const S* dyp = dy.data();
  S* dxp = dx.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < N; ++n)
    for (std::ptrdiff_t c = 0; c < C; ++c) {
      const S* dymap = dyp + (n * C + c) * Ho * Wo;
      S* dxmap = dxp + (n * C + c) * H * W;
      for (std::ptrdiff_t oh = 0; oh < Ho; ++oh) {
        const S* dyrow = dymap + oh * Wo;
        S* dxrow = dxmap + (oh / factor) * W;
        for (std::ptrdiff_t ow = 0; ow < Wo; ++ow) dxrow[ow / factor] += dyrow[ow];
      }
    }
  return dx;
}

namespace {

// C[m,q] (M x Q) accumulated from A (M x P or P x M) and B (P x Q or Q x P).
template <class S>
void gemm_one(const S* A, const S* B, S* C, std::ptrdiff_t M, std::ptrdiff_t P, std::ptrdiff_t Q,
              bool transA, bool transB) {
  if (!transA && !transB) {
    for (std::ptrdiff_t m = 0; m < M; ++m) {
      S* crow = C + m * Q;
      const S* arow = A + m * P;
      for (std::ptrdiff_t p = 0; p < P; ++p) {
        const S av = arow[p];
        const S* brow = B + p * Q;
        for (std::ptrdiff_t q = 0; q < Q; ++q) crow[q] += av * brow[q];
      }
    }
  } else if (!transA && transB) {
    for (std::ptrdiff_t m = 0; m < M; ++m) {
      S* crow = C + m * Q;
      const S* arow = A + m * P;
      for (std::ptrdiff_t q = 0; q < Q; ++q) {
        const S* brow = B + q * P;
        S acc = 0;
        for (std::ptrdiff_t p = 0; p < P; ++p) acc += arow[p] * brow[p];
        crow[q] += acc;
      }
    }
  } else if (transA && !transB) {
    for (std::ptrdiff_t p = 0; p < P; ++p) {
      const S* arow = A + p * M;
      const S* brow = B + p * Q;
      for (std::ptrdiff_t m = 0; m < M; ++m) {
        const S av = arow[m];
        S* crow = C + m * Q;
        for (std::ptrdiff_t q = 0; q < Q; ++q) crow[q] += av * brow[q];
      }
    }
  } else {
    for (std::ptrdiff_t m = 0; m < M; ++m) {
      S* crow = C + m * Q;
      for (std::ptrdiff_t q = 0; q < Q; ++q) {
        const S* brow = B + q * P;
        S acc = 0;
        for (std::ptrdiff_t p = 0; p < P; ++p) acc += A[p * M + m] * brow[p];
        crow[q] += acc;
      }
    }
  }
}

}  // namespace

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b, bool transA, bool transB) {
  if (a.rank() < 2 || b.rank() < 2)
    throw TensorError("matmul: rank >= 2 required, got " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const std::size_t ar = a.rank(), br = b.rank();
  const std::size_t aM = a.extent(ar - 2), aP = a.extent(ar - 1);
  const std::size_t bP = b.extent(br - 2), bQ = b.extent(br - 1);
  const std::size_t M = transA ? aP : aM, P = transA ? aM : aP;
  const std::size_t Pb = transB ? bQ : bP, Q = transB ? bP : bQ;
  if (P != Pb)
    throw TensorError("matmul: inner dimension mismatch " + shape_str(a.shape()) +
                      (transA ? "^T" : "") + " x " + shape_str(b.shape()) + (transB ? "^T" : ""));

  Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  std::size_t BA = shape_numel(lead_a), BB = shape_numel(lead_b);
  if (!lead_a.empty() && !lead_b.empty() && lead_a != lead_b)
    throw TensorError("matmul: incompatible batch extents " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  const std::size_t B = std::max(BA, BB);
  Shape out_shape = lead_a.size() >= lead_b.size() ? lead_a : lead_b;
  out_shape.push_back(M);
  out_shape.push_back(Q);
  TensorT<S> c(out_shape);

  const S* ap = a.data();
  const S* bp = b.data();
  S* cp = c.data();
  const std::ptrdiff_t as = aM * aP, bs = bP * bQ, cs = M * Q;
  const std::ptrdiff_t Bn = B;
#pragma omp parallel for schedule(static) if (Bn > 1)
  for (std::ptrdiff_t r = 0; r < Bn; ++r) {
    gemm_one(ap + (BA == 1 ? 0 : r) * as, bp + (BB == 1 ? 0 : r) * bs, cp + r * cs, M, P, Q,
             transA, transB);
  }
  return c;
}

template <class S>
TensorT<S> linear_fwd(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  const std::size_t P = x.extent(x.rank() - 1);
  if (w.rank() != 2 || w.extent(1) != P)
    throw TensorError("linear: weight " + shape_str(w.shape()) + " does not match input " +
                      shape_str(x.shape()));
  const std::size_t Q = w.extent(0);
  const std::ptrdiff_t R = x.size() / P;
  Shape out_shape = x.shape();
  out_shape.back() = Q;
  TensorT<S> y(out_shape);
  const S* xp = x.data();
  const S* wp = w.data();
  S* yp = y.data();
#pragma omp parallel for schedule(static) if (R > 4)
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    const S* xrow = xp + r * P;
    S* yrow = yp + r * Q;
    for (std::size_t q = 0; q < Q; ++q) {
      const S* wrow = wp + q * P;
      S acc = b.empty() ? S(0) : b[q];
      for (std::size_t p = 0; p < P; ++p) acc += xrow[p] * wrow[p];
      yrow[q] = acc;
    }
  }
  return y;
}

template <class S>
TensorT<S> linear_bwd_x(const TensorT<S>& dy, const TensorT<S>& w, const Shape& x_shape) {
  const std::size_t Q = w.extent(0), P = w.extent(1);
  const std::ptrdiff_t R = dy.size() / Q;
  TensorT<S> dx(x_shape);
  const S* dyp = dy.data();
  const S* wp = w.data();
  S* dxp = dx.data();
#pragma omp parallel for schedule(static) if (R > 4)
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    const S* dyrow = dyp + r * Q;
    S* dxrow = dxp + r * P;
    for (std::size_t q = 0; q < Q; ++q) {
      const S g = dyrow[q];
      const S* wrow = wp + q * P;
      for (std::size_t p = 0; p < P; ++p) dxrow[p] += g * wrow[p];
    }
  }
  return dx;
}

template <class S>
TensorT<S> linear_bwd_w(const TensorT<S>& dy, const TensorT<S>& x) {
  const std::size_t P = x.extent(x.rank() - 1);
  const std::size_t Q = dy.extent(dy.rank() - 1);
  const std::ptrdiff_t R = x.size() / P;
  TensorT<S> dw({Q, P});
  const S* dyp = dy.data();
  const S* xp = x.data();
  S* dwp = dw.data();
  const std::ptrdiff_t Qn = Q;
#pragma omp parallel for schedule(static) if (Qn > 1)
  for (std::ptrdiff_t q = 0; q < Qn; ++q) {
    S* dwrow = dwp + q * P;
    for (std::ptrdiff_t r = 0; r < R; ++r) {
      const S g = dyp[r * Q + q];
      const S* xrow = xp + r * P;
      for (std::size_t p = 0; p < P; ++p) dwrow[p] += g * xrow[p];
    }
  }
  return dw;
}

template <class S>
TensorT<S> colsum_last(const TensorT<S>& dy) {
  const std::size_t Q = dy.extent(dy.rank() - 1);
  const std::size_t R = dy.size() / Q;
  TensorT<S> db({Q});
  const S* dyp = dy.data();
  S* dbp = db.data();
  for (std::size_t r = 0; r < R; ++r) {
    const S* row = dyp + r * Q;
    for (std::size_t q = 0; q < Q; ++q) dbp[q] += row[q];
  }
  return db;
}

template <class S>
TensorT<S> softmax_fwd(const TensorT<S>& x) {
  const std::size_t D = x.extent(x.rank() - 1);
  const std::ptrdiff_t R = x.size() / D;
  TensorT<S> y(x.shape());
  const S* xp = x.data();
  S* yp = y.data();
#pragma omp parallel for schedule(static) if (R > 8)
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    const S* xrow = xp + r * D;
    S* yrow = yp + r * D;
    S mx = xrow[0];
    for (std::size_t d = 1; d < D; ++d) mx = std::max(mx, xrow[d]);
    double sum = 0;
    for (std::size_t d = 0; d < D; ++d) {
      const double e = std::exp(double(xrow[d] - mx));
      yrow[d] = S(e);
      sum += e;
    }
    const S inv = S(1.0 / sum);
    for (std::size_t d = 0; d < D; ++d) yrow[d] *= inv;
  }
  return y;
}

template <class S>
TensorT<S> softmax_bwd(const TensorT<S>& dy, const TensorT<S>& y) {
  const std::size_t D = y.extent(y.rank() - 1);
  const std::ptrdiff_t R = y.size() / D;
  TensorT<S> dx(y.shape());
  const S* dyp = dy.data();
  const S* yp = y.data();
  S* dxp = dx.data();
#pragma omp parallel for schedule(static) if (R > 8)
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    const S* dyrow = dyp + r * D;
    const S* yrow = yp + r * D;
    S* dxrow = dxp + r * D;
    double dot = 0;
    for (std::size_t d = 0; d < D; ++d) dot += double(dyrow[d]) * double(yrow[d]);
    const S dots = S(dot);
    for (std::size_t d = 0; d < D; ++d) dxrow[d] = yrow[d] * (dyrow[d] - dots);
  }
  return dx;
}

template <class S>
TensorT<S> layernorm_fwd(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& shift,
                         double eps, NormStats& saved) {
  const std::size_t K = x.extent(x.rank() - 1);
  if (gain.size() != K || shift.size() != K)
    throw TensorError("layer_norm: gain/shift length must equal last extent of " +
                      shape_str(x.shape()));
  const std::ptrdiff_t R = x.size() / K;
  saved.mean.assign(R, 0.0);
  saved.rstd.assign(R, 0.0);
  TensorT<S> y(x.shape());
  const S* xp = x.data();
  const S* gp = gain.data();
  const S* sp = shift.data();
  S* yp = y.data();
#pragma omp parallel for schedule(static) if (R > 8)
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    const S* xrow = xp + r * K;
    S* yrow = yp + r * K;
    double mu = 0;
    for (std::size_t k = 0; k < K; ++k) mu += xrow[k];
    mu /= double(K);
    double var = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double d = double(xrow[k]) - mu;
      var += d * d;
    }
    var /= double(K);
    const double rstd = 1.0 / std::sqrt(var + eps);
    saved.mean[r] = mu;
    saved.rstd[r] = rstd;
    for (std::size_t k = 0; k < K; ++k)
      yrow[k] = S((double(xrow[k]) - mu) * rstd) * gp[k] + sp[k];
  }
  return y;
}

template <class S>
void layernorm_bwd(const TensorT<S>& dy, const TensorT<S>& x, const TensorT<S>& gain,
                   const NormStats& saved, TensorT<S>& dx, TensorT<S>& dgain, TensorT<S>& dshift) {
  const std::size_t K = x.extent(x.rank() - 1);
  const std::ptrdiff_t R = x.size() / K;
  dx = TensorT<S>(x.shape());
  dgain = TensorT<S>({K});
  dshift = TensorT<S>({K});
  const S* dyp = dy.data();
  const S* xp = x.data();
  const S* gp = gain.data();
  S* dxp = dx.data();
  S* dgp = dgain.data();
  S* dsp = dshift.data();
#pragma omp parallel for schedule(static) if (R > 8)
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    const S* dyrow = dyp + r * K;
    const S* xrow = xp + r * K;
    S* dxrow = dxp + r * K;
    const double mu = saved.mean[r], rstd = saved.rstd[r];
    double m1 = 0, m2 = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double xhat = (double(xrow[k]) - mu) * rstd;
      const double g = double(dyrow[k]) * double(gp[k]);
      m1 += g;
      m2 += g * xhat;
    }
    m1 /= double(K);
    m2 /= double(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double xhat = (double(xrow[k]) - mu) * rstd;
      const double g = double(dyrow[k]) * double(gp[k]);
      dxrow[k] = S(rstd * (g - m1 - xhat * m2));
    }
  }
  // Parameter gradients: serial over rows, fixed order.
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    const S* dyrow = dyp + r * K;
    const S* xrow = xp + r * K;
    const double mu = saved.mean[r], rstd = saved.rstd[r];
    for (std::size_t k = 0; k < K; ++k) {
      dgp[k] += dyrow[k] * S((double(xrow[k]) - mu) * rstd);
      dsp[k] += dyrow[k];
    }
  }
}

template <class S>
TensorT<S> batchnorm_fwd_train(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& shift,
                               TensorT<S>& running_mean, TensorT<S>& running_var, double eps,
                               double momentum, NormStats& saved) {
  const std::ptrdiff_t N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
  const std::ptrdiff_t M = N * HW;
  if (M < 2)
    throw TensorError("batch_norm2d: train mode needs N*H*W >= 2, got input " +
                      shape_str(x.shape()));
  saved.mean.assign(C, 0.0);
  saved.rstd.assign(C, 0.0);
  TensorT<S> y(x.shape());
  const S* xp = x.data();
  S* yp = y.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    double mu = 0;
    for (std::ptrdiff_t n = 0; n < N; ++n) {
      const S* row = xp + (n * C + c) * HW;
      for (std::ptrdiff_t q = 0; q < HW; ++q) mu += row[q];
    }
    mu /= double(M);
    double var = 0;
    for (std::ptrdiff_t n = 0; n < N; ++n) {
      const S* row = xp + (n * C + c) * HW;
      for (std::ptrdiff_t q = 0; q < HW; ++q) {
        const double d = double(row[q]) - mu;
        var += d * d;
      }
    }
    var /= double(M);
    const double rstd = 1.0 / std::sqrt(var + eps);
    saved.mean[c] = mu;
    saved.rstd[c] = rstd;
    const S a = S(rstd) * gain[c];
    const S b = shift[c] - S(mu * rstd) * gain[c];
    for (std::ptrdiff_t n = 0; n < N; ++n) {
      const S* row = xp + (n * C + c) * HW;
      S* yrow = yp + (n * C + c) * HW;
      for (std::ptrdiff_t q = 0; q < HW; ++q) yrow[q] = a * row[q] + b;
    }
    running_mean[c] = S((1.0 - momentum) * double(running_mean[c]) + momentum * mu);
    const double var_unbiased = var * double(M) / double(M - 1);
    running_var[c] = S((1.0 - momentum) * double(running_var[c]) + momentum * var_unbiased);
  }
  return y;
}

template <class S>
void batchnorm_bwd_train(const TensorT<S>& dy, const TensorT<S>& x, const TensorT<S>& gain,
                         const NormStats& saved, TensorT<S>& dx, TensorT<S>& dgain,
                         TensorT<S>& dshift) {
  const std::ptrdiff_t N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
  const std::ptrdiff_t M = N * HW;
  dx = TensorT<S>(x.shape());
  dgain = TensorT<S>({(std::size_t)C});
  dshift = TensorT<S>({(std::size_t)C});
  const S* dyp = dy.data();
  const S* xp = x.data();
  S* dxp = dx.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    const double mu = saved.mean[c], rstd = saved.rstd[c];
    double sum_dy = 0, sum_dy_xhat = 0;
    for (std::ptrdiff_t n = 0; n < N; ++n) {
      const S* dyrow = dyp + (n * C + c) * HW;
      const S* xrow = xp + (n * C + c) * HW;
      for (std::ptrdiff_t q = 0; q < HW; ++q) {
        const double xhat = (double(xrow[q]) - mu) * rstd;
        sum_dy += double(dyrow[q]);
        sum_dy_xhat += double(dyrow[q]) * xhat;
      }
    }
    dgain[c] = S(sum_dy_xhat);
    dshift[c] = S(sum_dy);
    const double m1 = sum_dy / double(M);
    const double m2 = sum_dy_xhat / double(M);
    const double scale = double(gain[c]) * rstd;
    for (std::ptrdiff_t n = 0; n < N; ++n) {
      const S* dyrow = dyp + (n * C + c) * HW;
      const S* xrow = xp + (n * C + c) * HW;
      S* dxrow = dxp + (n * C + c) * HW;
      for (std::ptrdiff_t q = 0; q < HW; ++q) {
        const double xhat = (double(xrow[q]) - mu) * rstd;
        dxrow[q] = S(scale * (double(dyrow[q]) - m1 - xhat * m2));
      }
    }
  }
}

template <class S>
TensorT<S> batchnorm_fwd_eval(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& shift,
                              const TensorT<S>& running_mean, const TensorT<S>& running_var,
                              double eps) {
  const std::ptrdiff_t N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
  TensorT<S> y(x.shape());
  const S* xp = x.data();
  S* yp = y.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    const double rstd = 1.0 / std::sqrt(double(running_var[c]) + eps);
    const S a = S(rstd) * gain[c];
    const S b = shift[c] - S(double(running_mean[c]) * rstd) * gain[c];
    for (std::ptrdiff_t n = 0; n < N; ++n) {
      const S* row = xp + (n * C + c) * HW;
      S* yrow = yp + (n * C + c) * HW;
      for (std::ptrdiff_t q = 0; q < HW; ++q) yrow[q] = a * row[q] + b;
    }
  }
  return y;
}

template <class S>
void batchnorm_bwd_eval(const TensorT<S>& dy, const TensorT<S>& x, const TensorT<S>& gain,
                        const TensorT<S>& running_mean, const TensorT<S>& running_var, double eps,
                        TensorT<S>& dx, TensorT<S>& dgain, TensorT<S>& dshift) {
  const std::ptrdiff_t N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
  dx = TensorT<S>(x.shape());
  dgain = TensorT<S>({(std::size_t)C});
  dshift = TensorT<S>({(std::size_t)C});
  const S* dyp = dy.data();
  const S* xp = x.data();
  S* dxp = dx.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    const double mu = double(running_mean[c]);
    const double rstd = 1.0 / std::sqrt(double(running_var[c]) + eps);
    const S a = S(rstd) * gain[c];
    double sum_dy = 0, sum_dy_xhat = 0;
    for (std::ptrdiff_t n = 0; n < N; ++n) {
      const S* dyrow = dyp + (n * C + c) * HW;
      const S* xrow = xp + (n * C + c) * HW;
      S* dxrow = dxp + (n * C + c) * HW;
      for (std::ptrdiff_t q = 0; q < HW; ++q) {
        sum_dy += double(dyrow[q]);
        sum_dy_xhat += double(dyrow[q]) * (double(xrow[q]) - mu) * rstd;
        dxrow[q] = a * dyrow[q];
      }
    }
    dgain[c] = S(sum_dy_xhat);
    dshift[c] = S(sum_dy);
  }
}

template <class S>
TensorT<S> relu_fwd(const TensorT<S>& x) {
  TensorT<S> y(x.shape());
  const std::ptrdiff_t n = x.size();
  const S* xp = x.data();
  S* yp = y.data();
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::ptrdiff_t i = 0; i < n; ++i) yp[i] = xp[i] > S(0) ? xp[i] : S(0);
  return y;
}

template <class S>
TensorT<S> relu_bwd(const TensorT<S>& dy, const TensorT<S>& x) {
  TensorT<S> dx(x.shape());
  const std::ptrdiff_t n = x.size();
  const S* dyp = dy.data();
  const S* xp = x.data();
  S* dxp = dx.data();
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::ptrdiff_t i = 0; i < n; ++i) dxp[i] = xp[i] > S(0) ? dyp[i] : S(0);
  return dx;
}

template <class S>
TensorT<S> gelu_fwd(const TensorT<S>& x) {
  TensorT<S> y(x.shape());
  const std::ptrdiff_t n = x.size();
  const S* xp = x.data();
  S* yp = y.data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double v = double(xp[i]);
    yp[i] = S(0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))));
  }
  return y;
}

template <class S>
TensorT<S> gelu_bwd(const TensorT<S>& dy, const TensorT<S>& x) {
  TensorT<S> dx(x.shape());
  const std::ptrdiff_t n = x.size();
  const S* dyp = dy.data();
  const S* xp = x.data();
  S* dxp = dx.data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double v = double(xp[i]);
    const double u = kGeluC * (v + kGeluA * v * v * v);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
    dxp[i] = S(double(dyp[i]) * d);
  }
  return dx;
}

template <class S>
TensorT<S> tanh_fwd(const TensorT<S>& x) {
  TensorT<S> y(x.shape());
  const std::ptrdiff_t n = x.size();
  const S* xp = x.data();
  S* yp = y.data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (std::ptrdiff_t i = 0; i < n; ++i) yp[i] = S(std::tanh(double(xp[i])));
  return y;
}

template <class S>
TensorT<S> tanh_bwd(const TensorT<S>& dy, const TensorT<S>& y) {
  TensorT<S> dx(y.shape());
  const std::ptrdiff_t n = y.size();
  const S* dyp = dy.data();
  const S* yp = y.data();
  S* dxp = dx.data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (std::ptrdiff_t i = 0; i < n; ++i) dxp[i] = dyp[i] * (S(1) - yp[i] * yp[i]);
  return dx;
}

template <class S>
TensorT<S> transpose_axes12(const TensorT<S>& x) {
  if (x.rank() != 4) throw TensorError("transpose_axes12: rank-4 required, got " + shape_str(x.shape()));
  const std::size_t A = x.extent(0), B = x.extent(1), C = x.extent(2), D = x.extent(3);
  TensorT<S> y({A, C, B, D});
  const S* xp = x.data();
  S* yp = y.data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        std::memcpy(yp + ((a * C + c) * B + b) * D, xp + ((a * B + b) * C + c) * D, D * sizeof(S));
  return y;
}

template <class S>
TensorT<S> transpose_last2(const TensorT<S>& x) {
  if (x.rank() < 2) throw TensorError("transpose_last2: rank >= 2 required");
  const std::size_t M = x.extent(x.rank() - 2), P = x.extent(x.rank() - 1);
  const std::size_t R = x.size() / (M * P);
  Shape out = x.shape();
  std::swap(out[out.size() - 2], out[out.size() - 1]);
  TensorT<S> y(out);
  const S* xp = x.data();
  S* yp = y.data();
  for (std::size_t r = 0; r < R; ++r) {
    const S* xm = xp + r * M * P;
    S* ym = yp + r * M * P;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t p = 0; p < P; ++p) ym[p * M + m] = xm[m * P + p];
  }
  return y;
}

template <class S>
TensorT<S> concat(const std::vector<const TensorT<S>*>& parts, std::size_t axis) {
  if (parts.empty()) throw TensorError("concat: no inputs");
  const Shape& s0 = parts[0]->shape();
  if (axis >= s0.size()) throw TensorError("concat: axis out of range");
  std::size_t axis_total = 0;
  for (const auto* p : parts) {
    const Shape& s = p->shape();
    if (s.size() != s0.size()) throw TensorError("concat: rank mismatch");
    for (std::size_t a = 0; a < s.size(); ++a)
      if (a != axis && s[a] != s0[a])
        throw TensorError("concat: non-axis extent mismatch " + shape_str(s) + " vs " +
                          shape_str(s0));
    axis_total += s[axis];
  }
  Shape out = s0;
  out[axis] = axis_total;
  TensorT<S> y(out);
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s0[a];
  for (std::size_t a = axis + 1; a < s0.size(); ++a) inner *= s0[a];
  S* yp = y.data();
  const std::size_t out_block = axis_total * inner;
  std::size_t off = 0;
  for (const auto* p : parts) {
    const std::size_t blk = p->extent(axis) * inner;
    const S* sp = p->data();
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(yp + o * out_block + off, sp + o * blk, blk * sizeof(S));
    off += blk;
  }
  return y;
}

template <class S>
TensorT<S> slice(const TensorT<S>& x, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + len > s[axis])
    throw TensorError("slice: range [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") out of " + shape_str(s));
  Shape out = s;
  out[axis] = len;
  TensorT<S> y(out);
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::size_t in_block = s[axis] * inner, out_block = len * inner;
  const S* xp = x.data();
  S* yp = y.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(yp + o * out_block, xp + o * in_block + start * inner, out_block * sizeof(S));
  return y;
}

template <class S>
void slice_scatter_add(TensorT<S>& dst, const TensorT<S>& dy, std::size_t axis,
                       std::size_t start) {
  const Shape& s = dst.shape();
  const std::size_t len = dy.extent(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::size_t dst_block = s[axis] * inner, src_block = len * inner;
  S* dp = dst.data();
  const S* sp = dy.data();
  for (std::size_t o = 0; o < outer; ++o) {
    S* drow = dp + o * dst_block + start * inner;
    const S* srow = sp + o * src_block;
    for (std::size_t i = 0; i < src_block; ++i) drow[i] += srow[i];
  }
}

template <class S>
double mse(const TensorT<S>& pred, const TensorT<S>& target) {
  require_same_shape(pred, target, "mse_loss");
  const std::size_t n = pred.size();
  const S* pp = pred.data();
  const S* tp = target.data();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(pp[i]) - double(tp[i]);
    acc += d * d;
  }
  return acc / double(n);
}

template <class S>
double sum_all(const TensorT<S>& x) {
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += double(x[i]);
  return acc;
}

template <class S>
void axpy(TensorT<S>& y, const TensorT<S>& x, S alpha) {
  require_same_shape(y, x, "axpy");
  const std::ptrdiff_t n = y.size();
  S* yp = y.data();
  const S* xp = x.data();
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::ptrdiff_t i = 0; i < n; ++i) yp[i] += alpha * xp[i];
}

#define CTSAE_INSTANTIATE(S)                                                                     \
  template TensorT<S> conv2d_fwd<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&,    \
                                    int, int);                                                  \
  template TensorT<S> conv2d_bwd_x<S>(const TensorT<S>&, const TensorT<S>&, int, int,           \
                                      std::size_t, std::size_t);                                \
  template TensorT<S> conv2d_bwd_w<S>(const TensorT<S>&, const TensorT<S>&, std::size_t,        \
                                      std::size_t, int, int);                                   \
  template TensorT<S> sum_nhw<S>(const TensorT<S>&);                                            \
  template TensorT<S> convt_fwd<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&,     \
                                   int, int);                                                   \
  template TensorT<S> convt_bwd_x<S>(const TensorT<S>&, const TensorT<S>&, int, int);           \
  template TensorT<S> convt_bwd_w<S>(const TensorT<S>&, const TensorT<S>&, std::size_t,         \
                                     std::size_t, int, int);                                    \
  template TensorT<S> avgpool_fwd<S>(const TensorT<S>&, int, int);                              \
  template TensorT<S> avgpool_bwd<S>(const TensorT<S>&, int, int, std::size_t, std::size_t);    \
  template TensorT<S> nn_upsample_fwd<S>(const TensorT<S>&, int);                               \
  template TensorT<S> nn_upsample_bwd<S>(const TensorT<S>&, int);                               \
  template TensorT<S> matmul<S>(const TensorT<S>&, const TensorT<S>&, bool, bool);              \
  template TensorT<S> linear_fwd<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&);   \
  template TensorT<S> linear_bwd_x<S>(const TensorT<S>&, const TensorT<S>&, const Shape&);      \
  template TensorT<S> linear_bwd_w<S>(const TensorT<S>&, const TensorT<S>&);                    \
  template TensorT<S> colsum_last<S>(const TensorT<S>&);                                        \
  template TensorT<S> softmax_fwd<S>(const TensorT<S>&);                                        \
  template TensorT<S> softmax_bwd<S>(const TensorT<S>&, const TensorT<S>&);                     \
  template TensorT<S> layernorm_fwd<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&, \
                                       double, NormStats&);                                     \
  template void layernorm_bwd<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&,       \
                                 const NormStats&, TensorT<S>&, TensorT<S>&, TensorT<S>&);      \
  template TensorT<S> batchnorm_fwd_train<S>(const TensorT<S>&, const TensorT<S>&,              \
                                             const TensorT<S>&, TensorT<S>&, TensorT<S>&,       \
                                             double, double, NormStats&);                       \
  template void batchnorm_bwd_train<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&, \
                                       const NormStats&, TensorT<S>&, TensorT<S>&,              \
                                       TensorT<S>&);                                            \
  template TensorT<S> batchnorm_fwd_eval<S>(const TensorT<S>&, const TensorT<S>&,               \
                                            const TensorT<S>&, const TensorT<S>&,               \
                                            const TensorT<S>&, double);                         \
  template void batchnorm_bwd_eval<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&,  \
                                      const TensorT<S>&, const TensorT<S>&, double,             \
                                      TensorT<S>&, TensorT<S>&, TensorT<S>&);                   \
  template TensorT<S> relu_fwd<S>(const TensorT<S>&);                                           \
  template TensorT<S> relu_bwd<S>(const TensorT<S>&, const TensorT<S>&);                        \
  template TensorT<S> gelu_fwd<S>(const TensorT<S>&);                                           \
  template TensorT<S> gelu_bwd<S>(const TensorT<S>&, const TensorT<S>&);                        \
  template TensorT<S> tanh_fwd<S>(const TensorT<S>&);                                           \
  template TensorT<S> tanh_bwd<S>(const TensorT<S>&, const TensorT<S>&);                        \
  template TensorT<S> transpose_axes12<S>(const TensorT<S>&);                                   \
  template TensorT<S> transpose_last2<S>(const TensorT<S>&);                                    \
  template TensorT<S> concat<S>(const std::vector<const TensorT<S>*>&, std::size_t);            \
  template TensorT<S> slice<S>(const TensorT<S>&, std::size_t, std::size_t, std::size_t);       \
  template void slice_scatter_add<S>(TensorT<S>&, const TensorT<S>&, std::size_t, std::size_t); \
  template double mse<S>(const TensorT<S>&, const TensorT<S>&);                                 \
  template double sum_all<S>(const TensorT<S>&);                                                \
  template void axpy<S>(TensorT<S>&, const TensorT<S>&, S);

CTSAE_INSTANTIATE(float)
CTSAE_INSTANTIATE(double)

#undef CTSAE_INSTANTIATE

}  // namespace ctsae::kernels
