#pragma once

#include <cstdint>
#include <span>

#include "cmm/nn/module.hpp"

namespace cmm::nn {

enum class CellKind { gru, lstm };

// Gate weights are stored one matrix per gate, x-side as [input, hidden] and
// h-side as [hidden, hidden], so a gate pre-activation reads x*W + h*U + b.
//
// GRU gates (z, r, n):
//   z  = sigmoid(x Wz + h Uz + bz)
//   r  = sigmoid(x Wr + h Ur + br)
//   n  = tanh(x Wn + (r * h) Un + bn)
//   h' = (1 - z) * h + z * n
// LSTM gates (i, f, g, o):
//   c' = f * c + i * g,  h' = o * tanh(c')
template <typename T>
struct RecurrentCell {
  CellKind kind = CellKind::gru;
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  std::vector<Parameter<T>> w;
  std::vector<Parameter<T>> u;
  std::vector<Parameter<T>> b;

  RecurrentCell() = default;
  RecurrentCell(const std::string& name, CellKind kind, std::size_t input_size, std::size_t hidden_size, Rng& rng);

  std::size_t gates() const { return kind == CellKind::gru ? 3 : 4; }
  void register_into(ParamRegistry<T>& reg);
};

// c is only meaningful for LSTM cells.
template <typename T>
struct RnnState {
  Tensor<T> h;
  Tensor<T> c;
};

template <typename T>
RnnState<T> zero_state(Tape<T>& tape, const RecurrentCell<T>& cell, std::size_t batch);

template <typename T>
RnnState<T> rnn_cell_step(Tape<T>& tape, RecurrentCell<T>& cell, const Tensor<T>& x, const RnnState<T>& state);

// Runs `fwd` over t = 0..T-1 and `bwd` over t = T-1..0 from zero states and
// returns [T, batch, 2*hidden] with the forward half first.
//
// With a `valid` mask ([T*batch], time-major), a direction only advances its
// state on valid steps and carries it unchanged through padding, so the
// backward direction starts at each sample's last real token.
template <typename T>
Tensor<T> bi_rnn(Tape<T>& tape, RecurrentCell<T>& fwd, RecurrentCell<T>& bwd, const Tensor<T>& inputs,
                 std::span<const std::uint8_t> valid = {});

}  // namespace cmm::nn
