#pragma once

// Dense layers with a whitening matrix in front of the weights:
//   u = S x,  z = W u + b,  x_next = f(z).
// Backpropagation treats S as a constant; no gradient is ever formed for it.

#include "fisherflow/activation.hpp"
#include "fisherflow/fisher.hpp"
#include "fisherflow/linalg.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fisherflow {

template <typename T>
struct DenseLayer {
  Matrix<T> W;  // d_out x d_in
  Vector<T> b;  // d_out
  ActivationKind act = ActivationKind::Identity;
  FisherState<T> fisher;  // d_in x d_in

  Eigen::Index d_in() const { return W.cols(); }
  Eigen::Index d_out() const { return W.rows(); }
};

template <typename T>
struct MLPModel {
  std::vector<DenseLayer<T>> layers;
  double l2 = 0.0;

  Eigen::Index input_dim() const { return layers.front().d_in(); }
  Eigen::Index output_dim() const { return layers.back().d_out(); }

  /// Throws ShapeError if layer dimensions do not chain.
  void validate() const;
};

/// Glorot-uniform weights in +-sqrt(6 / (d_in + d_out)), zero biases.
/// Hidden layers use `hidden`, the last layer Identity. Every layer gets a
/// fresh identity FisherState built from `fisher`.
template <typename T>
MLPModel<T> make_mlp(std::span<const int> widths, ActivationKind hidden, double l2,
                     const FisherConfig& fisher, std::uint64_t seed);

template <typename T>
struct LayerTrace {
  Matrix<T> input;     // x_k
  Matrix<T> whitened;  // S x_k
  Matrix<T> preact;    // W S x_k + b
  Matrix<T> output;    // f(preact)
};

template <typename T>
struct ForwardTrace {
  std::vector<LayerTrace<T>> layers;
  Matrix<T> probs;  // column-wise softmax of the last layer's output

  const Matrix<T>& logits() const { return layers.back().output; }
};

template <typename T>
struct LayerGrad {
  Matrix<T> dW;
  Vector<T> db;
};

template <typename T>
using Gradients = std::vector<LayerGrad<T>>;

template <typename T>
struct LossResult {
  double loss = 0.0;
  Matrix<T> dlogits;  // (softmax - onehot) / B
};

/// W (S x) + b for one layer.
template <typename T>
Matrix<T> layer_preact(const DenseLayer<T>& layer, const Matrix<T>& whitened);

/// Runs one layer on a batch of inputs.
template <typename T>
LayerTrace<T> layer_forward(const DenseLayer<T>& layer, Matrix<T> input);

template <typename T>
ForwardTrace<T> forward(const MLPModel<T>& model, const Matrix<T>& X0);

/// Column-wise softmax.
template <typename T>
Matrix<T> softmax(const Matrix<T>& logits);

/// Mean cross-entropy over the batch plus (l2 / 2) * sum ||W||_F^2.
template <typename T>
LossResult<T> softmax_xent_l2(const Matrix<T>& logits, std::span<const int> labels,
                              const MLPModel<T>& model);

/// (l2 / 2) * sum ||W||_F^2.
template <typename T>
double l2_penalty(const MLPModel<T>& model);

template <typename T>
Gradients<T> backward(const MLPModel<T>& model, const ForwardTrace<T>& trace,
                      const Matrix<T>& dlogits);

/// Number of columns whose argmax matches the label.
template <typename T>
std::size_t count_correct(const Matrix<T>& scores, std::span<const int> labels);

/// FNV-1a over the raw bytes of every W and b.
template <typename T>
std::uint64_t model_hash(const MLPModel<T>& model);

}  // namespace fisherflow
