#include "cmm/tensor/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "cmm/tensor/detail/eigen.hpp"

namespace cmm {
namespace {

// Maps flat indices of the (larger) operand onto the broadcast operand.
class BroadcastPlan {
 public:
  static bool compatible(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    const std::size_t off = a.size() - b.size();
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b[i] != a[off + i] && b[i] != 1) return false;
    }
    return true;
  }

  BroadcastPlan(const Shape& a, const Shape& b) {
    if (!compatible(a, b)) {
      throw ShapeError("broadcast: " + shape_str(b) + " does not broadcast to " + shape_str(a));
    }
    const std::size_t n = shape_numel(a);
    b_size_ = shape_numel(b);
    if (a == b) {
      mode_ = Mode::same;
      return;
    }
    const std::size_t off = a.size() - b.size();
    bool suffix = true;
    for (std::size_t i = 0; i < b.size(); ++i) suffix = suffix && b[i] == a[off + i];
    if (suffix) {
      mode_ = Mode::suffix;
      return;
    }
    mode_ = Mode::general;
    // Stride of each of a's axes inside b (0 where b broadcasts).
    std::vector<std::size_t> bstride(a.size(), 0);
    std::size_t s = 1;
    for (std::size_t i = b.size(); i-- > 0;) {
      if (b[i] != 1) bstride[off + i] = s;
      s *= b[i];
    }
    index_.resize(n);
    std::vector<std::size_t> counter(a.size(), 0);
    std::size_t bi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      index_[i] = bi;
      for (std::size_t ax = a.size(); ax-- > 0;) {
        ++counter[ax];
        bi += bstride[ax];
        if (counter[ax] < a[ax]) break;
        bi -= bstride[ax] * a[ax];
        counter[ax] = 0;
      }
    }
  }

  std::size_t operator()(std::size_t i) const {
    switch (mode_) {
      case Mode::same: return i;
      case Mode::suffix: return i % b_size_;
      default: return index_[i];
    }
  }

 private:
  enum class Mode { same, suffix, general };
  Mode mode_ = Mode::same;
  std::size_t b_size_ = 1;
  std::vector<std::size_t> index_;
};

bool is_binary(Elementwise k) {
  return k == Elementwise::add || k == Elementwise::sub || k == Elementwise::mul;
}

const char* kind_name(Elementwise k) {
  switch (k) {
    case Elementwise::add: return "add";
    case Elementwise::sub: return "sub";
    case Elementwise::mul: return "mul";
    case Elementwise::relu: return "relu";
    case Elementwise::tanh: return "tanh";
    case Elementwise::sigmoid: return "sigmoid";
  }
  return "?";
}

template <typename T>
Tensor<T> unary(Elementwise kind, const Tensor<T>& a) {
  const Array<T>& x = a.value();
  Array<T> out = Array<T>::uninitialized(x.shape());
  const std::size_t n = x.size();
  const T* xs = x.ptr();
  T* ys = out.ptr();
  switch (kind) {
    case Elementwise::relu:
      for (std::size_t i = 0; i < n; ++i) ys[i] = xs[i] > T(0) ? xs[i] : T(0);
      break;
    case Elementwise::tanh:
      for (std::size_t i = 0; i < n; ++i) ys[i] = std::tanh(xs[i]);
      break;
    default:
      for (std::size_t i = 0; i < n; ++i) ys[i] = T(1) / (T(1) + std::exp(-xs[i]));
      break;
  }
  const bool faulty = debug::backward_is_faulty(kind_name(kind));
  return a.tape().record(kind_name(kind), std::move(out), {a}, [kind, faulty](const GradContext<T>& c) {
    Array<T>* gx = c.in_grads[0];
    if (!gx) return;
    const T* y = c.out_value.ptr();
    const T* g = c.out_grad.ptr();
    T* d = gx->ptr();
    const std::size_t n = c.out_value.size();
    const T f = faulty ? T(1.5) : T(1);
    switch (kind) {
      case Elementwise::relu:
        for (std::size_t i = 0; i < n; ++i) d[i] += y[i] > T(0) ? f * g[i] : T(0);
        break;
      case Elementwise::tanh:
        for (std::size_t i = 0; i < n; ++i) d[i] += f * g[i] * (T(1) - y[i] * y[i]);
        break;
      default:
        for (std::size_t i = 0; i < n; ++i) d[i] += f * g[i] * y[i] * (T(1) - y[i]);
        break;
    }
  });
}

template <typename T>
Tensor<T> binary(Elementwise kind, Tensor<T> a, Tensor<T> b) {
  if (kind != Elementwise::sub && !BroadcastPlan::compatible(a.shape(), b.shape()) &&
      BroadcastPlan::compatible(b.shape(), a.shape())) {
    std::swap(a, b);
  }
  auto plan = std::make_shared<const BroadcastPlan>(a.shape(), b.shape());
  const Array<T>& x = a.value();
  const Array<T>& y = b.value();
  Array<T> out = Array<T>::uninitialized(x.shape());
  const std::size_t n = x.size();
  const BroadcastPlan& p = *plan;
  switch (kind) {
    case Elementwise::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[p(i)];
      break;
    case Elementwise::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[p(i)];
      break;
    default:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[p(i)];
      break;
  }
  const bool faulty = debug::backward_is_faulty(kind_name(kind));
  return a.tape().record(kind_name(kind), std::move(out), {a, b},
                         [kind, plan, faulty](const GradContext<T>& c) {
    const Array<T>& g = c.out_grad;
    const Array<T>& x = *c.in_values[0];
    const Array<T>& y = *c.in_values[1];
    Array<T>* gx = c.in_grads[0];
    Array<T>* gy = c.in_grads[1];
    const BroadcastPlan& p = *plan;
    const std::size_t n = g.size();
    const T fault = faulty ? T(1.5) : T(1);
    if (kind == Elementwise::mul) {
      if (gx) for (std::size_t i = 0; i < n; ++i) (*gx)[i] += fault * g[i] * y[p(i)];
      if (gy) for (std::size_t i = 0; i < n; ++i) (*gy)[p(i)] += g[i] * x[i];
      return;
    }
    const T sign = kind == Elementwise::sub ? T(-1) : T(1);
    if (gx) for (std::size_t i = 0; i < n; ++i) (*gx)[i] += fault * g[i];
    if (gy) for (std::size_t i = 0; i < n; ++i) (*gy)[p(i)] += sign * g[i];
  });
}

}  // namespace

template <typename T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, std::optional<Tensor<T>> b) {
  if (is_binary(kind)) {
    if (!b) throw std::invalid_argument(std::string(kind_name(kind)) + ": second operand required");
    return binary(kind, a, *b);
  }
  if (b) throw std::invalid_argument(std::string(kind_name(kind)) + ": unary op takes one operand");
  return unary(kind, a);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2) {
    throw ShapeError("matmul: rank-2 operands required, got " + shape_str(sa) + " x " + shape_str(sb));
  }
  if (sa[1] != sb[0]) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(sa) + " x " + shape_str(sb));
  }
  const auto m = static_cast<Eigen::Index>(sa[0]);
  const auto k = static_cast<Eigen::Index>(sa[1]);
  const auto n = static_cast<Eigen::Index>(sb[1]);
  Array<T> out = Array<T>::uninitialized({sa[0], sb[1]});
  detail::MatMap<T>(out.ptr(), m, n).noalias() =
      detail::ConstMatMap<T>(a.value().ptr(), m, k) * detail::ConstMatMap<T>(b.value().ptr(), k, n);
  return a.tape().record("matmul", std::move(out), {a, b}, [m, k, n](const GradContext<T>& c) {
    detail::ConstMatMap<T> g(c.out_grad.ptr(), m, n);
    if (Array<T>* ga = c.in_grads[0]) {
      detail::MatMap<T>(ga->ptr(), m, k).noalias() +=
          g * detail::ConstMatMap<T>(c.in_values[1]->ptr(), k, n).transpose();
    }
    if (Array<T>* gb = c.in_grads[1]) {
      detail::MatMap<T>(gb->ptr(), k, n).noalias() +=
          detail::ConstMatMap<T>(c.in_values[0]->ptr(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis, std::span<const std::uint8_t> keep) {
  const AxisView v = axis_view(x.shape(), axis);
  const Array<T>& in = x.value();
  if (!keep.empty() && keep.size() != in.size()) {
    throw ShapeError("softmax: mask has " + std::to_string(keep.size()) + " entries for shape " +
                     shape_str(x.shape()));
  }
  Array<T> out(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      const std::size_t base = o * v.extent * v.inner + j;
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t t = 0; t < v.extent; ++t) {
        const std::size_t i = base + t * v.inner;
        if (!keep.empty() && !keep[i]) continue;
        any = true;
        mx = std::max(mx, in[i]);
      }
      if (!any) throw std::invalid_argument("softmax: every entry of a slice is masked");
      T total = 0;
      for (std::size_t t = 0; t < v.extent; ++t) {
        const std::size_t i = base + t * v.inner;
        const T e = (!keep.empty() && !keep[i]) ? T(0) : std::exp(in[i] - mx);
        out[i] = e;
        total += e;
      }
      for (std::size_t t = 0; t < v.extent; ++t) out[base + t * v.inner] /= total;
    }
  }
  return x.tape().record("softmax", std::move(out), {x}, [v](const GradContext<T>& c) {
    Array<T>* gx = c.in_grads[0];
    if (!gx) return;
    const Array<T>& y = c.out_value;
    const Array<T>& g = c.out_grad;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t j = 0; j < v.inner; ++j) {
        const std::size_t base = o * v.extent * v.inner + j;
        T dot = 0;
        for (std::size_t t = 0; t < v.extent; ++t) dot += y[base + t * v.inner] * g[base + t * v.inner];
        for (std::size_t t = 0; t < v.extent; ++t) {
          const std::size_t i = base + t * v.inner;
          (*gx)[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisView v = axis_view(out_shape, axis);
  Array<T> out = Array<T>::uninitialized(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Array<T>& in = parts[p].value();
    const std::size_t block = extents[p] * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(in.ptr() + o * block, block, out.ptr() + o * v.extent * v.inner + offset);
    }
    offset += block;
  }
  return parts[0].tape().record("concat", std::move(out), parts, [v, extents](const GradContext<T>& c) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      const std::size_t block = extents[p] * v.inner;
      if (Array<T>* gp = c.in_grads[p]) {
        for (std::size_t o = 0; o < v.outer; ++o) {
          const T* src = c.out_grad.ptr() + o * v.extent * v.inner + offset;
          T* dst = gp->ptr() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += block;
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisView v = axis_view(x.shape(), axis);
  if (begin >= end || end > v.extent) {
    throw std::out_of_range("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") outside extent " + std::to_string(v.extent));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * v.inner;
  Array<T> out = Array<T>::uninitialized(out_shape);
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(x.value().ptr() + o * v.extent * v.inner + begin * v.inner, block, out.ptr() + o * block);
  }
  return x.tape().record("slice", std::move(out), {x}, [v, begin, block](const GradContext<T>& c) {
    Array<T>* gx = c.in_grads[0];
    if (!gx) return;
    for (std::size_t o = 0; o < v.outer; ++o) {
      const T* src = c.out_grad.ptr() + o * block;
      T* dst = gx->ptr() + o * v.extent * v.inner + begin * v.inner;
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Array<T> out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [](const GradContext<T>& c) {
    Array<T>* gx = c.in_grads[0];
    if (!gx) return;
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += c.out_grad[i];
  });
}

template <typename T>
ReduceResult<T> reduce(Reduce kind, const Tensor<T>& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.shape().size(); ++i) {
    if (i != axis) out_shape.push_back(x.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  const Array<T>& in = x.value();
  Array<T> out(out_shape);
  std::vector<std::size_t> argmax;
  if (kind == Reduce::max) argmax.resize(out.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      const std::size_t base = o * v.extent * v.inner + j;
      const std::size_t dst = o * v.inner + j;
      if (kind == Reduce::max) {
        std::size_t best = 0;
        T mx = in[base];
        for (std::size_t t = 1; t < v.extent; ++t) {
          if (in[base + t * v.inner] > mx) {
            mx = in[base + t * v.inner];
            best = t;
          }
        }
        out[dst] = mx;
        argmax[dst] = best;
      } else {
        T total = 0;
        for (std::size_t t = 0; t < v.extent; ++t) total += in[base + t * v.inner];
        out[dst] = kind == Reduce::mean ? total / static_cast<T>(v.extent) : total;
      }
    }
  }
  const char* name = kind == Reduce::max ? "reduce_max" : kind == Reduce::mean ? "reduce_mean" : "reduce_sum";
  auto routes = std::make_shared<const std::vector<std::size_t>>(argmax);
  Tensor<T> values = x.tape().record(name, std::move(out), {x}, [kind, v, routes](const GradContext<T>& c) {
    Array<T>* gx = c.in_grads[0];
    if (!gx) return;
    const T scale = kind == Reduce::mean ? T(1) / static_cast<T>(v.extent) : T(1);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t j = 0; j < v.inner; ++j) {
        const std::size_t base = o * v.extent * v.inner + j;
        const T g = c.out_grad[o * v.inner + j];
        if (kind == Reduce::max) {
          (*gx)[base + (*routes)[o * v.inner + j] * v.inner] += g;
        } else {
          for (std::size_t t = 0; t < v.extent; ++t) (*gx)[base + t * v.inner] += g * scale;
        }
      }
    }
  });
  return {values, std::move(argmax)};
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  return reduce(Reduce::sum, reshape(x, Shape{x.size()}), 0).values;
}

template <typename T>
Tensor<T> select_rows(std::span<const std::uint8_t> take_a, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("select_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t rows = a.shape()[0];
  if (take_a.size() != rows) throw ShapeError("select_rows: mask length differs from row count");
  const std::size_t width = a.size() / rows;
  Array<T> out = Array<T>::uninitialized(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = (take_a[r] ? a.value().ptr() : b.value().ptr()) + r * width;
    std::copy_n(src, width, out.ptr() + r * width);
  }
  std::vector<std::uint8_t> mask(take_a.begin(), take_a.end());
  return a.tape().record("select_rows", std::move(out), {a, b},
                         [mask = std::move(mask), width](const GradContext<T>& c) {
    for (std::size_t r = 0; r < mask.size(); ++r) {
      Array<T>* dst = c.in_grads[mask[r] ? 0 : 1];
      if (!dst) continue;
      for (std::size_t i = r * width; i < (r + 1) * width; ++i) (*dst)[i] += c.out_grad[i];
    }
  });
}

#define CMM_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> elementwise(Elementwise, const Tensor<T>&, std::optional<Tensor<T>>);        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t, std::span<const std::uint8_t>);        \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                              \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template ReduceResult<T> reduce(Reduce, const Tensor<T>&, std::size_t);                          \
  template Tensor<T> sum_all(const Tensor<T>&);                                                    \
  template Tensor<T> select_rows(std::span<const std::uint8_t>, const Tensor<T>&, const Tensor<T>&);

CMM_INSTANTIATE_OPS(float)
CMM_INSTANTIATE_OPS(double)

}  // namespace cmm
