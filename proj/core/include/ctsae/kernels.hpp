#pragma once

#include "ctsae/tensor.hpp"

// Raw forward/backward kernels. Pure functions over tensors; the tape in
// ops.hpp wires them into the autodiff graph. Backward kernels return
// gradients that the caller accumulates.

namespace ctsae::kernels {

// y[n,co,oh,ow] = b[co] + sum_{ci,i,j} x[n,ci,oh*s-p+i,ow*s-p+j] * w[co,ci,i,j]
// Cross-correlation, zero padding.
template <class S>
TensorT<S> conv2d_fwd(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int stride,
                      int pad);
template <class S>
TensorT<S> conv2d_bwd_x(const TensorT<S>& dy, const TensorT<S>& w, int stride, int pad,
                        std::size_t H, std::size_t W);
template <class S>
TensorT<S> conv2d_bwd_w(const TensorT<S>& dy, const TensorT<S>& x, std::size_t kh, std::size_t kw,
                        int stride, int pad);
template <class S>
TensorT<S> sum_nhw(const TensorT<S>& dy);  // conv bias gradient

// Transposed convolution, weight layout [Cin,Cout,kh,kw].
// Ho = (H-1)*stride - 2*pad + kh. Adjoint of conv2d under matching
// stride/pad and shared weight buffer.
template <class S>
TensorT<S> convt_fwd(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int stride,
                     int pad);
template <class S>
TensorT<S> convt_bwd_x(const TensorT<S>& dy, const TensorT<S>& w, int stride, int pad);
template <class S>
TensorT<S> convt_bwd_w(const TensorT<S>& dy, const TensorT<S>& x, std::size_t kh, std::size_t kw,
                       int stride, int pad);

template <class S>
TensorT<S> avgpool_fwd(const TensorT<S>& x, int window, int stride);
template <class S>
TensorT<S> avgpool_bwd(const TensorT<S>& dy, int window, int stride, std::size_t H, std::size_t W);

// Nearest-neighbor spatial expansion by an integer factor.
template <class S>
TensorT<S> nn_upsample_fwd(const TensorT<S>& x, int factor);
template <class S>
TensorT<S> nn_upsample_bwd(const TensorT<S>& dy, int factor);

// Batched matmul over the last two axes; leading extents must match or be
// absent/1 on one side. transA/transB transpose the last two axes of the
// operand.
template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b, bool transA, bool transB);

// y[r,q] = sum_p x[r,p] w[q,p] + b[q], rows = all leading axes flattened.
template <class S>
TensorT<S> linear_fwd(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b);
template <class S>
TensorT<S> linear_bwd_x(const TensorT<S>& dy, const TensorT<S>& w, const Shape& x_shape);
template <class S>
TensorT<S> linear_bwd_w(const TensorT<S>& dy, const TensorT<S>& x);
template <class S>
TensorT<S> colsum_last(const TensorT<S>& dy);  // linear bias gradient

// Row-wise softmax over the last axis, max-subtracted.
template <class S>
TensorT<S> softmax_fwd(const TensorT<S>& x);
template <class S>
TensorT<S> softmax_bwd(const TensorT<S>& dy, const TensorT<S>& y);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> rstd;
};

template <class S>
TensorT<S> layernorm_fwd(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& shift,
                         double eps, NormStats& saved);
template <class S>
void layernorm_bwd(const TensorT<S>& dy, const TensorT<S>& x, const TensorT<S>& gain,
                   const NormStats& saved, TensorT<S>& dx, TensorT<S>& dgain, TensorT<S>& dshift);

template <class S>
TensorT<S> batchnorm_fwd_train(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& shift,
                               TensorT<S>& running_mean, TensorT<S>& running_var, double eps,
                               double momentum, NormStats& saved);
template <class S>
void batchnorm_bwd_train(const TensorT<S>& dy, const TensorT<S>& x, const TensorT<S>& gain,
                         const NormStats& saved, TensorT<S>& dx, TensorT<S>& dgain,
                         TensorT<S>& dshift);
template <class S>
TensorT<S> batchnorm_fwd_eval(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& shift,
                              const TensorT<S>& running_mean, const TensorT<S>& running_var,
                              double eps);
template <class S>
void batchnorm_bwd_eval(const TensorT<S>& dy, const TensorT<S>& x, const TensorT<S>& gain,
                        const TensorT<S>& running_mean, const TensorT<S>& running_var, double eps,
                        TensorT<S>& dx, TensorT<S>& dgain, TensorT<S>& dshift);

template <class S>
TensorT<S> relu_fwd(const TensorT<S>& x);
template <class S>
TensorT<S> relu_bwd(const TensorT<S>& dy, const TensorT<S>& x);

// gelu via the tanh closed form: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715 x^3)))
template <class S>
TensorT<S> gelu_fwd(const TensorT<S>& x);
template <class S>
TensorT<S> gelu_bwd(const TensorT<S>& dy, const TensorT<S>& x);

template <class S>
TensorT<S> tanh_fwd(const TensorT<S>& x);
template <class S>
TensorT<S> tanh_bwd(const TensorT<S>& dy, const TensorT<S>& y);

template <class S>
TensorT<S> transpose_axes12(const TensorT<S>& x);  // rank-4 [a,b,c,d] -> [a,c,b,d]
template <class S>
TensorT<S> transpose_last2(const TensorT<S>& x);

template <class S>
TensorT<S> concat(const std::vector<const TensorT<S>*>& parts, std::size_t axis);
template <class S>
TensorT<S> slice(const TensorT<S>& x, std::size_t axis, std::size_t start, std::size_t len);
// Accumulates dy into the [start,start+len) band of dst along axis.
template <class S>
void slice_scatter_add(TensorT<S>& dst, const TensorT<S>& dy, std::size_t axis, std::size_t start);

template <class S>
double mse(const TensorT<S>& pred, const TensorT<S>& target);
template <class S>
double sum_all(const TensorT<S>& x);

template <class S>
void axpy(TensorT<S>& y, const TensorT<S>& x, S alpha);  // y += alpha*x

}  // namespace ctsae::kernels
