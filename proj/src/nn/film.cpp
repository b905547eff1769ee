#include "cmm/nn/film.hpp"

namespace cmm::nn {
namespace {

// Features viewed as [pre, nb, mid, nc, post]; parameters index (b, c).
struct FilmLayout {
  std::size_t pre = 1, nb = 1, mid = 1, nc = 1, post = 1;
};

template <typename F>
void for_each_block(const FilmLayout& l, F&& fn) {
  std::size_t off = 0;
  for (std::size_t p = 0; p < l.pre; ++p)
    for (std::size_t b = 0; b < l.nb; ++b)
      for (std::size_t m = 0; m < l.mid; ++m)
        for (std::size_t c = 0; c < l.nc; ++c, off += l.post) fn(off, b * l.nc + c);
}

}  // namespace

template <typename T>
Tensor<T> film_affine(const Tensor<T>& features, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::size_t channel_axis, std::size_t batch_axis) {
  const Shape& s = features.shape();
  if (channel_axis >= s.size()) throw ShapeError("film_affine: channel axis out of range for " + shape_str(s));
  if (gamma.shape() != beta.shape()) throw ShapeError("film_affine: gamma and beta shapes differ");
  const std::size_t nc = s[channel_axis];
  FilmLayout l;
  l.nc = nc;
  for (std::size_t i = channel_axis + 1; i < s.size(); ++i) l.post *= s[i];
  if (gamma.shape().size() == 1) {
    if (gamma.shape()[0] != nc) {
      throw ShapeError("film_affine: " + std::to_string(gamma.shape()[0]) + " parameters for " +
                       std::to_string(nc) + " channels");
    }
    for (std::size_t i = 0; i < channel_axis; ++i) l.pre *= s[i];
  } else if (gamma.shape().size() == 2) {
    if (batch_axis >= channel_axis) throw ShapeError("film_affine: batch axis must precede channel axis");
    if (gamma.shape() != Shape{s[batch_axis], nc}) {
      throw ShapeError("film_affine: parameters " + shape_str(gamma.shape()) + " do not match batch " +
                       std::to_string(s[batch_axis]) + " x channels " + std::to_string(nc));
    }
    l.nb = s[batch_axis];
    for (std::size_t i = 0; i < batch_axis; ++i) l.pre *= s[i];
    for (std::size_t i = batch_axis + 1; i < channel_axis; ++i) l.mid *= s[i];
  } else {
    throw ShapeError("film_affine: parameters must be rank 1 or 2");
  }

  const Array<T>& x = features.value();
  const Array<T>& gv = gamma.value();
  const Array<T>& bv = beta.value();
  Array<T> out = Array<T>::uninitialized(s);
  for_each_block(l, [&](std::size_t off, std::size_t k) {
    const T gk = gv[k], bk = bv[k];
    for (std::size_t i = 0; i < l.post; ++i) out[off + i] = gk * x[off + i] + bk;
  });

  return features.tape().record("film_affine", std::move(out), {features, gamma, beta},
                                [l](const GradContext<T>& c) {
    const Array<T>& g = c.out_grad;
    const Array<T>& x = *c.in_values[0];
    const Array<T>& gv = *c.in_values[1];
    Array<T>* gx = c.in_grads[0];
    Array<T>* gg = c.in_grads[1];
    Array<T>* gb = c.in_grads[2];
    for_each_block(l, [&](std::size_t off, std::size_t k) {
      T sg = 0, sgx = 0;
      for (std::size_t i = 0; i < l.post; ++i) {
        sg += g[off + i];
        sgx += g[off + i] * x[off + i];
        if (gx) (*gx)[off + i] += gv[k] * g[off + i];
      }
      if (gg) (*gg)[k] += sgx;
      if (gb) (*gb)[k] += sg;
    });
  });
}

template Tensor<float> film_affine(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, std::size_t,
                                   std::size_t);
template Tensor<double> film_affine(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                    std::size_t, std::size_t);

}  // namespace cmm::nn
