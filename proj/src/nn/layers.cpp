#include "cmm/nn/layers.hpp"

#include <algorithm>

#include "cmm/tensor/ops.hpp"

namespace cmm::nn {

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw ShapeError("embedding_lookup: table must be [vocab, dim]");
  if (ids.empty()) throw std::invalid_argument("embedding_lookup: no ids");
  const std::size_t vocab = s[0], dim = s[1];
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " outside vocab of " +
                              std::to_string(vocab));
    }
  }
  Array<T> out({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.value().ptr() + static_cast<std::size_t>(ids[i]) * dim, dim, out.ptr() + i * dim);
  }
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  return table.tape().record("embedding", std::move(out), {table}, [rows = std::move(rows), dim](const GradContext<T>& c) {
    Array<T>* gt = c.in_grads[0];
    if (!gt) return;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      T* dst = gt->ptr() + static_cast<std::size_t>(rows[i]) * dim;
      const T* src = c.out_grad.ptr() + i * dim;
      for (std::size_t k = 0; k < dim; ++k) dst[k] += src[k];
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (b.shape().size() != 1 || w.shape().size() != 2 || b.shape()[0] != w.shape()[1]) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  return add(matmul(x, w), b);
}

template <typename T>
MaxPoolResult<T> global_max_pool_argmax(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("global_max_pool_argmax: expected [batch, ch, H, W], got " + shape_str(s));
  const std::size_t planes = s[0] * s[1], area = s[2] * s[3], w = s[3];
  const T* in = x.value().ptr();
  Array<T> out = Array<T>::uninitialized({s[0], s[1]});
  std::vector<std::size_t> flat(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* plane = in + p * area;
    // max_element keeps the first of equal maxima.
    flat[p] = static_cast<std::size_t>(std::max_element(plane, plane + area) - plane);
    out[p] = plane[flat[p]];
  }
  MaxPoolResult<T> result;
  result.argmax.reserve(planes);
  for (std::size_t f : flat) result.argmax.push_back({f / w, f % w});
  result.values = x.tape().record("global_max_pool", std::move(out), {x}, [flat, area](const GradContext<T>& c) {
    Array<T>* gx = c.in_grads[0];
    if (!gx) return;
    for (std::size_t p = 0; p < flat.size(); ++p) (*gx)[p * area + flat[p]] += c.out_grad[p];
  });
  return result;
}

template <typename T>
MaxPoolResult<T> bn_relu_max_pool(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                  BatchNormState<T>& state, bool training, bool apply_relu) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("bn_relu_max_pool: expected [batch, ch, H, W], got " + shape_str(s));
  check_batch_norm_inputs(s, gamma, beta, state, training);
  const std::size_t batch = s[0], ch = s[1], area = s[2] * s[3], w = s[3];
  const ChannelStats<T> stats = batch_norm_statistics(x.value(), state, training);
  const T* in = x.value().ptr();
  const T* gv = gamma.value().ptr();
  const T* bv = beta.value().ptr();

  Array<T> out = Array<T>::uninitialized({batch, ch});
  std::vector<std::size_t> flat(batch * ch);
  std::vector<std::uint8_t> active(batch * ch);
  std::vector<T> row(area);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t p = b * ch + c;
      const T* plane = in + p * area;
      const T mean = stats.mean[c], is = stats.inv_std[c], gc = gv[c], bc = bv[c];
      for (std::size_t i = 0; i < area; ++i) {
        const T xh = (plane[i] - mean) * is;
        const T y = gc * xh + bc;
        row[i] = apply_relu && !(y > T(0)) ? T(0) : y;
      }
      flat[p] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      out[p] = row[flat[p]];
      active[p] = !apply_relu || out[p] > T(0);
    }
  }

  MaxPoolResult<T> result;
  result.argmax.reserve(flat.size());
  for (std::size_t f : flat) result.argmax.push_back({f / w, f % w});
  result.values = x.tape().record(
      training ? "bn_relu_max_pool_train" : "bn_relu_max_pool_eval", std::move(out), {x, gamma, beta},
      [batch, ch, area, training, flat = std::move(flat), active = std::move(active),
       stats](const GradContext<T>& c) {
        const T* xv = c.in_values[0]->ptr();
        const T* gv = c.in_values[1]->ptr();
        Array<T>* gx = c.in_grads[0];
        Array<T>* ggamma = c.in_grads[1];
        Array<T>* gbeta = c.in_grads[2];
        const T n = static_cast<T>(batch * area);
        for (std::size_t k = 0; k < ch; ++k) {
          // The gradient reaching the normalized map is nonzero only at each plane's argmax.
          T sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t p = b * ch + k;
            if (!active[p]) continue;
            const T g = c.out_grad[p];
            sum_g += g;
            sum_gx += g * (xv[p * area + flat[p]] - stats.mean[k]) * stats.inv_std[k];
          }
          if (ggamma) (*ggamma)[k] += sum_gx;
          if (gbeta) (*gbeta)[k] += sum_g;
          if (!gx) continue;
          const T scale = gv[k] * stats.inv_std[k];
          const T mean_g = sum_g / n, mean_gx = sum_gx / n;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t p = b * ch + k;
            T* dst = gx->ptr() + p * area;
            if (training) {
              const T* src = xv + p * area;
              const T mean = stats.mean[k], is = stats.inv_std[k];
              for (std::size_t i = 0; i < area; ++i) dst[i] -= scale * (mean_g + (src[i] - mean) * is * mean_gx);
            }
            if (active[p]) dst[flat[p]] += scale * c.out_grad[p];
          }
        }
      });
  return result;
}

template <typename T>
Array<T> coordinate_maps(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("coordinate_maps: empty extent");
  // (2i - (n-1)) / (n-1) keeps the map exactly antisymmetric under flips.
  auto coord = [](std::size_t i, std::size_t n) -> T {
    if (n == 1) return T(0);
    return static_cast<T>((2.0 * static_cast<double>(i) - static_cast<double>(n - 1)) / static_cast<double>(n - 1));
  };
  Array<T> out({2, h, w});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      out[r * w + c] = coord(r, h);
      out[h * w + r * w + c] = coord(c, w);
    }
  }
  return out;
}

#define CMM_INSTANTIATE_LAYERS(T)                                                          \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const std::int32_t>);    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template MaxPoolResult<T> global_max_pool_argmax(const Tensor<T>&);                      \
  template MaxPoolResult<T> bn_relu_max_pool(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                             BatchNormState<T>&, bool, bool);                \
  template Array<T> coordinate_maps(std::size_t, std::size_t);

CMM_INSTANTIATE_LAYERS(float)
CMM_INSTANTIATE_LAYERS(double)

}  // namespace cmm::nn
