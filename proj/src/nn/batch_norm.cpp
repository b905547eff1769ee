#include "cmm/nn/batch_norm.hpp"

#include <cmath>
#include <memory>

#include <Eigen/Core>

namespace cmm::nn {

namespace {

template <typename T>
using Row = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

}  // namespace

template <typename T>
ChannelStats<T> batch_norm_statistics(const Array<T>& in, BatchNormState<T>& state, bool training) {
  const AxisView v = axis_view(in.shape(), 1);
  const std::size_t ch = v.extent;
  const std::size_t count = v.outer * v.inner;
  ChannelStats<T> stats;
  stats.mean.resize(ch);
  stats.inv_std.resize(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    T mean, var;
    if (training) {
      // Vectorized per-row partial sums, accumulated across rows in double.
      double sum = 0;
      for (std::size_t o = 0; o < v.outer; ++o) {
        sum += static_cast<double>(Row<T>(in.ptr() + (o * ch + c) * v.inner, v.inner).sum());
      }
      mean = static_cast<T>(sum / static_cast<double>(count));
      double sq = 0;
      for (std::size_t o = 0; o < v.outer; ++o) {
        sq += static_cast<double>((Row<T>(in.ptr() + (o * ch + c) * v.inner, v.inner) - mean).square().sum());
      }
      var = static_cast<T>(sq / static_cast<double>(count));
      const T m = state.momentum;
      const T unbiased = var * static_cast<T>(count) / static_cast<T>(count - 1);
      state.running_mean[c] = (T(1) - m) * state.running_mean[c] + m * mean;
      state.running_var[c] = (T(1) - m) * state.running_var[c] + m * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    stats.mean[c] = mean;
    stats.inv_std[c] = T(1) / std::sqrt(var + state.epsilon);
  }
  return stats;
}

template <typename T>
void check_batch_norm_inputs(const Shape& s, const Tensor<T>& gamma, const Tensor<T>& beta,
                             BatchNormState<T>& state, bool training) {
  if (s.size() < 2) throw ShapeError("batch_norm: input needs a channel axis, got " + shape_str(s));
  const AxisView v = axis_view(s, 1);
  const std::size_t ch = v.extent;
  if (gamma.shape() != Shape{ch} || beta.shape() != Shape{ch}) {
    throw ShapeError("batch_norm: gamma/beta must be [" + std::to_string(ch) + "]");
  }
  if (state.running_mean.empty()) state.running_mean = Array<T>({ch}, T(0));
  if (state.running_var.empty()) state.running_var = Array<T>({ch}, T(1));
  if (state.running_mean.size() != ch || state.running_var.size() != ch) {
    throw ShapeError("batch_norm: running statistics sized for a different channel count");
  }
  if (training && v.outer * v.inner < 2) {
    throw std::invalid_argument("batch_norm: training mode needs at least 2 values per channel");
  }
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training) {
  const Shape& s = x.shape();
  check_batch_norm_inputs(s, gamma, beta, state, training);
  const AxisView v = axis_view(s, 1);
  const std::size_t ch = v.extent;
  const std::size_t count = v.outer * v.inner;

  const Array<T>& in = x.value();
  const Array<T>& gv = gamma.value();
  const Array<T>& bv = beta.value();
  const ChannelStats<T> stats = batch_norm_statistics(in, state, training);
  auto xhat = std::make_shared<Array<T>>(Array<T>::uninitialized(s));
  auto inv_std = std::make_shared<std::vector<T>>(stats.inv_std);
  Array<T> out = Array<T>::uninitialized(s);

  for (std::size_t c = 0; c < ch; ++c) {
    const T mean = stats.mean[c], is = stats.inv_std[c];
    const T gc = gv[c], bc = bv[c];
    for (std::size_t o = 0; o < v.outer; ++o) {
      const std::size_t base = (o * ch + c) * v.inner;
      const T* src = in.ptr() + base;
      T* xh = xhat->ptr() + base;
      T* dst = out.ptr() + base;
      for (std::size_t i = 0; i < v.inner; ++i) {
        xh[i] = (src[i] - mean) * is;
        dst[i] = gc * xh[i] + bc;
      }
    }
  }

  return x.tape().record(training ? "batch_norm_train" : "batch_norm_eval", std::move(out), {x, gamma, beta},
                         [v, ch, count, training, xhat, inv_std](const GradContext<T>& c) {
    const Array<T>& g = c.out_grad;
    const Array<T>& gv = *c.in_values[1];
    Array<T>* gx = c.in_grads[0];
    Array<T>* ggamma = c.in_grads[1];
    Array<T>* gbeta = c.in_grads[2];
    const T n = static_cast<T>(count);
    for (std::size_t k = 0; k < ch; ++k) {
      double acc_g = 0, acc_gx = 0;
      for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t base = (o * ch + k) * v.inner;
        const Row<T> gr(g.ptr() + base, v.inner);
        acc_g += static_cast<double>(gr.sum());
        acc_gx += static_cast<double>((gr * Row<T>(xhat->ptr() + base, v.inner)).sum());
      }
      const T sum_g = static_cast<T>(acc_g), sum_gx = static_cast<T>(acc_gx);
      if (ggamma) (*ggamma)[k] += sum_gx;
      if (gbeta) (*gbeta)[k] += sum_g;
      if (!gx) continue;
      const T scale = gv[k] * (*inv_std)[k];
      const T mean_g = sum_g / n, mean_gx = sum_gx / n;
      for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t base = (o * ch + k) * v.inner;
        const T* gs = g.ptr() + base;
        const T* xh = xhat->ptr() + base;
        T* dst = gx->ptr() + base;
        if (training) {
          for (std::size_t i = 0; i < v.inner; ++i) dst[i] += scale * (gs[i] - mean_g - xh[i] * mean_gx);
        } else {
          for (std::size_t i = 0; i < v.inner; ++i) dst[i] += scale * gs[i];
        }
      }
    }
  });
}

template <typename T>
BatchNorm<T>::BatchNorm(const std::string& prefix, std::size_t channels)
    : gamma(filled<T>(prefix + ".gamma", {channels}, T(1))),
      beta(filled<T>(prefix + ".beta", {channels}, T(0))),
      name(prefix) {
  state.running_mean = Array<T>({channels}, T(0));
  state.running_var = Array<T>({channels}, T(1));
}

template ChannelStats<float> batch_norm_statistics(const Array<float>&, BatchNormState<float>&, bool);
template ChannelStats<double> batch_norm_statistics(const Array<double>&, BatchNormState<double>&, bool);
template void check_batch_norm_inputs(const Shape&, const Tensor<float>&, const Tensor<float>&,
                                      BatchNormState<float>&, bool);
template void check_batch_norm_inputs(const Shape&, const Tensor<double>&, const Tensor<double>&,
                                      BatchNormState<double>&, bool);
template Tensor<float> batch_norm(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                  BatchNormState<float>&, bool);
template Tensor<double> batch_norm(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                   BatchNormState<double>&, bool);
template struct BatchNorm<float>;
template struct BatchNorm<double>;

}  // namespace cmm::nn
