#include "cmm/nn/conv.hpp"

#include <algorithm>
#include <memory>
#include <utility>

#include "cmm/tensor/detail/eigen.hpp"

namespace cmm::nn {
namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, h, w, out_ch, kh, kw, pad, oh, ow;

  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && pad == 0; }
};

// Valid output-column range [lo, hi) for kernel column kj.
inline std::pair<std::size_t, std::size_t> valid_cols(const ConvGeometry& g, std::size_t kj) {
  const std::size_t lo = g.pad > kj ? g.pad - kj : 0;
  const std::size_t hi = std::min(g.ow, g.w + g.pad - kj);
  return {lo, std::max(lo, hi)};
}

// Unfolds one sample into [in_ch*kh*kw, oh*ow] columns.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        const auto [lo, hi] = valid_cols(g, kj);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          T* dst = row + oy * g.ow;
          const std::size_t iy = oy + ki;
          if (iy < g.pad || iy - g.pad >= g.h) {
            std::fill_n(dst, g.ow, T(0));
            continue;
          }
          // Input column of output column ox is ox + kj - pad.
          const T* src = x + (c * g.h + iy - g.pad) * g.w + (lo + kj - g.pad);
          std::fill(dst, dst + lo, T(0));
          std::copy(src, src + (hi - lo), dst + lo);
          std::fill(dst + hi, dst + g.ow, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the sample.
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        const auto [lo, hi] = valid_cols(g, kj);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::size_t iy = oy + ki;
          if (iy < g.pad || iy - g.pad >= g.h) continue;
          const T* src = row + oy * g.ow + lo;
          T* dst = dx + (c * g.h + iy - g.pad) * g.w + (lo + kj - g.pad);
          for (std::size_t i = 0; i < hi - lo; ++i) dst[i] += src[i];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError("conv2d: expected rank-4 input and kernels, got " + shape_str(xs) + ", " + shape_str(ws));
  }
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, kernels expect " +
                     std::to_string(ws[1]));
  }
  if (bias.shape() != Shape{ws[0]}) throw ShapeError("conv2d: bias must be [" + std::to_string(ws[0]) + "]");
  if (xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3]) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], padding,
                       xs[2] + 2 * padding - ws[2] + 1, xs[3] + 2 * padding - ws[3] + 1};
  using detail::ConstMatMap;
  using detail::MatMap;
  const auto P = static_cast<Eigen::Index>(g.patch());
  const auto N = static_cast<Eigen::Index>(g.pixels());
  const auto O = static_cast<Eigen::Index>(g.out_ch);
  const std::size_t in_stride = g.in_ch * g.h * g.w;
  const std::size_t out_stride = g.out_ch * g.pixels();

  Array<T> out = Array<T>::uninitialized({g.batch, g.out_ch, g.oh, g.ow});
  ConstMatMap<T> wmat(weight.value().ptr(), O, P);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.value().ptr(), O);
  std::vector<T, detail::DefaultInitAllocator<T>> col(g.pointwise() ? 0 : g.patch() * g.pixels());
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* xb = x.value().ptr() + b * in_stride;
    const T* src = xb;
    if (!g.pointwise()) {
      im2col(g, xb, col.data());
      src = col.data();
    }
    MatMap<T> ob(out.ptr() + b * out_stride, O, N);
    ob.noalias() = wmat * ConstMatMap<T>(src, P, N);
    ob.colwise() += bvec;
  }

  return x.tape().record("conv2d", std::move(out), {x, weight, bias},
                         [g, P, N, O, in_stride, out_stride](const GradContext<T>& c) {
    Array<T>* gx = c.in_grads[0];
    Array<T>* gw = c.in_grads[1];
    Array<T>* gb = c.in_grads[2];
    ConstMatMap<T> wmat(c.in_values[1]->ptr(), O, P);
    std::vector<T, detail::DefaultInitAllocator<T>> col(g.pointwise() ? 0 : g.patch() * g.pixels());
    std::vector<T, detail::DefaultInitAllocator<T>> dcol(g.pointwise() ? 0 : g.patch() * g.pixels());
    for (std::size_t b = 0; b < g.batch; ++b) {
      ConstMatMap<T> gout(c.out_grad.ptr() + b * out_stride, O, N);
      if (gb) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb->ptr(), O) += gout.rowwise().sum();
      }
      if (gw) {
        const T* xb = c.in_values[0]->ptr() + b * in_stride;
        const T* src = xb;
        if (!g.pointwise()) {
          im2col(g, xb, col.data());
          src = col.data();
        }
        MatMap<T>(gw->ptr(), O, P).noalias() += gout * ConstMatMap<T>(src, P, N).transpose();
      }
      if (gx) {
        T* dxb = gx->ptr() + b * in_stride;
        if (g.pointwise()) {
          MatMap<T>(dxb, P, N).noalias() += wmat.transpose() * gout;
        } else {
          MatMap<T>(dcol.data(), P, N).noalias() = wmat.transpose() * gout;
          col2im_add(g, dcol.data(), dxb);
        }
      }
    }
  });
}

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Rng& rng)
    : padding(kernel / 2) {
  if (kernel != 1 && kernel != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
  const std::size_t fan_in = in_ch * kernel * kernel;
  weight = fan_in_uniform<T>(name + ".weight", {out_ch, in_ch, kernel, kernel}, fan_in, rng);
  bias = fan_in_uniform<T>(name + ".bias", {out_ch}, fan_in, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(Tape<T>& tape, const Tensor<T>& x) {
  return conv2d(x, tape.parameter(weight), tape.parameter(bias), padding);
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, std::size_t);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, std::size_t);
template struct Conv2d<float>;
template struct Conv2d<double>;

}  // namespace cmm::nn
