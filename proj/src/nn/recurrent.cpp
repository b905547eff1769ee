#include "cmm/nn/recurrent.hpp"

#include "cmm/tensor/ops.hpp"

namespace cmm::nn {

template <typename T>
RecurrentCell<T>::RecurrentCell(const std::string& name, CellKind k, std::size_t in, std::size_t hidden, Rng& rng)
    : kind(k), input_size(in), hidden_size(hidden) {
  static const char* kGru[] = {"z", "r", "n"};
  static const char* kLstm[] = {"i", "f", "g", "o"};
  for (std::size_t g = 0; g < gates(); ++g) {
    const std::string gate = name + "." + (kind == CellKind::gru ? kGru[g] : kLstm[g]);
    w.push_back(fan_in_uniform<T>(gate + ".w", {in, hidden}, in, rng));
    u.push_back(fan_in_uniform<T>(gate + ".u", {hidden, hidden}, hidden, rng));
    b.push_back(fan_in_uniform<T>(gate + ".b", {hidden}, hidden, rng));
  }
}

template <typename T>
void RecurrentCell<T>::register_into(ParamRegistry<T>& reg) {
  for (std::size_t g = 0; g < gates(); ++g) {
    reg.add(w[g]);
    reg.add(u[g]);
    reg.add(b[g]);
  }
}

template <typename T>
RnnState<T> zero_state(Tape<T>& tape, const RecurrentCell<T>& cell, std::size_t batch) {
  RnnState<T> s;
  s.h = tape.constant(Array<T>({batch, cell.hidden_size}));
  if (cell.kind == CellKind::lstm) s.c = tape.constant(Array<T>({batch, cell.hidden_size}));
  return s;
}

template <typename T>
RnnState<T> rnn_cell_step(Tape<T>& tape, RecurrentCell<T>& cell, const Tensor<T>& x, const RnnState<T>& state) {
  if (x.shape().size() != 2 || x.shape()[1] != cell.input_size) {
    throw ShapeError("rnn_cell_step: input " + shape_str(x.shape()) + " but cell expects width " +
                     std::to_string(cell.input_size));
  }
  if (state.h.shape() != Shape{x.shape()[0], cell.hidden_size}) {
    throw ShapeError("rnn_cell_step: state " + shape_str(state.h.shape()) + " does not match cell");
  }
  auto xw = [&](std::size_t g) { return add(matmul(x, tape.parameter(cell.w[g])), tape.parameter(cell.b[g])); };
  auto hu = [&](const Tensor<T>& h, std::size_t g) { return matmul(h, tape.parameter(cell.u[g])); };

  RnnState<T> next;
  if (cell.kind == CellKind::gru) {
    Tensor<T> z = sigmoid(add(xw(0), hu(state.h, 0)));
    Tensor<T> r = sigmoid(add(xw(1), hu(state.h, 1)));
    Tensor<T> n = tanh(add(xw(2), hu(mul(r, state.h), 2)));
    // (1 - z) * h + z * n, written as h + z * (n - h)
    next.h = add(state.h, mul(z, sub(n, state.h)));
  } else {
    Tensor<T> i = sigmoid(add(xw(0), hu(state.h, 0)));
    Tensor<T> f = sigmoid(add(xw(1), hu(state.h, 1)));
    Tensor<T> g = tanh(add(xw(2), hu(state.h, 2)));
    Tensor<T> o = sigmoid(add(xw(3), hu(state.h, 3)));
    next.c = add(mul(f, state.c), mul(i, g));
    next.h = mul(o, tanh(next.c));
  }
  return next;
}

template <typename T>
Tensor<T> bi_rnn(Tape<T>& tape, RecurrentCell<T>& fwd, RecurrentCell<T>& bwd, const Tensor<T>& inputs,
                 std::span<const std::uint8_t> valid) {
  if (fwd.hidden_size != bwd.hidden_size) throw ShapeError("bi_rnn: directions have different hidden sizes");
  if (fwd.kind != bwd.kind) throw std::invalid_argument("bi_rnn: directions use different cell kinds");
  const Shape& s = inputs.shape();
  if (s.size() != 3) throw ShapeError("bi_rnn: inputs must be [T, batch, emb], got " + shape_str(s));
  const std::size_t steps = s[0], batch = s[1], emb = s[2];
  if (!valid.empty() && valid.size() != steps * batch) throw ShapeError("bi_rnn: mask size mismatch");

  std::vector<Tensor<T>> xs;
  xs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) xs.push_back(reshape(slice(inputs, 0, t, t + 1), {batch, emb}));

  auto advance = [&](RecurrentCell<T>& cell, const RnnState<T>& st, std::size_t t) {
    RnnState<T> next = rnn_cell_step(tape, cell, xs[t], st);
    if (valid.empty()) return next;
    auto m = valid.subspan(t * batch, batch);
    next.h = select_rows(m, next.h, st.h);
    if (cell.kind == CellKind::lstm) next.c = select_rows(m, next.c, st.c);
    return next;
  };

  std::vector<Tensor<T>> fh(steps), bh(steps);
  RnnState<T> st = zero_state(tape, fwd, batch);
  for (std::size_t t = 0; t < steps; ++t) {
    st = advance(fwd, st, t);
    fh[t] = st.h;
  }
  st = zero_state(tape, bwd, batch);
  for (std::size_t t = steps; t-- > 0;) {
    st = advance(bwd, st, t);
    bh[t] = st.h;
  }
  const std::size_t d = 2 * fwd.hidden_size;
  std::vector<Tensor<T>> rows;
  rows.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) rows.push_back(reshape(concat({fh[t], bh[t]}, 1), {1, batch, d}));
  return concat(std::span<const Tensor<T>>(rows), 0);
}

#define CMM_INSTANTIATE_RNN(T)                                                                                \
  template struct RecurrentCell<T>;                                                                           \
  template RnnState<T> zero_state(Tape<T>&, const RecurrentCell<T>&, std::size_t);                            \
  template RnnState<T> rnn_cell_step(Tape<T>&, RecurrentCell<T>&, const Tensor<T>&, const RnnState<T>&);      \
  template Tensor<T> bi_rnn(Tape<T>&, RecurrentCell<T>&, RecurrentCell<T>&, const Tensor<T>&,                 \
                            std::span<const std::uint8_t>);

CMM_INSTANTIATE_RNN(float)
CMM_INSTANTIATE_RNN(double)

}  // namespace cmm::nn
