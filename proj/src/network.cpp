#include "fisherflow/network.hpp"

#include "fisherflow/error.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <string>

namespace fisherflow {

template <typename T>
void MLPModel<T>::validate() const {
  if (layers.empty()) {
    throw ShapeError("model has no layers");
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& L = layers[k];
    if (L.b.size() != L.d_out()) {
      throw ShapeError("layer " + std::to_string(k) + ": bias length " +
                       std::to_string(L.b.size()) + " != d_out " +
                       std::to_string(L.d_out()));
    }
    if (L.fisher.dim() != L.d_in()) {
      throw ShapeError("layer " + std::to_string(k) + ": Fisher matrix is " +
                       std::to_string(L.fisher.dim()) + "x" +
                       std::to_string(L.fisher.dim()) + ", expected d_in " +
                       std::to_string(L.d_in()));
    }
    if (k + 1 < layers.size() && layers[k + 1].d_in() != L.d_out()) {
      throw ShapeError("layer " + std::to_string(k + 1) + ": d_in " +
                       std::to_string(layers[k + 1].d_in()) +
                       " does not match previous d_out " + std::to_string(L.d_out()));
    }
  }
  if (!(l2 >= 0.0)) {
    throw Error("l2 coefficient must be nonnegative");
  }
}

template <typename T>
MLPModel<T> make_mlp(std::span<const int> widths, ActivationKind hidden, double l2,
                     const FisherConfig& fisher, std::uint64_t seed) {
  if (widths.size() < 2) {
    throw ShapeError("make_mlp: need at least input and output widths");
  }
  for (int w : widths) {
    if (w < 1) throw ShapeError("make_mlp: widths must be positive");
  }
  std::mt19937_64 rng(seed);
  MLPModel<T> model;
  model.l2 = l2;
  model.layers.reserve(widths.size() - 1);
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const int d_in = widths[k];
    const int d_out = widths[k + 1];
    const double r = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    std::uniform_real_distribution<double> dist(-r, r);
    Matrix<T> W(d_out, d_in);
    // Row-major fill so the draw order does not depend on storage order.
    for (int i = 0; i < d_out; ++i) {
      for (int j = 0; j < d_in; ++j) W(i, j) = static_cast<T>(dist(rng));
    }
    const bool last = k + 2 == widths.size();
    model.layers.push_back(DenseLayer<T>{std::move(W), Vector<T>::Zero(d_out),
                                         last ? ActivationKind::Identity : hidden,
                                         FisherState<T>(d_in, fisher)});
  }
  model.validate();
  return model;
}

template <typename T>
Matrix<T> layer_preact(const DenseLayer<T>& layer, const Matrix<T>& whitened) {
  Matrix<T> z = layer.W * whitened;
  z.colwise() += layer.b;
  return z;
}

template <typename T>
LayerTrace<T> layer_forward(const DenseLayer<T>& layer, Matrix<T> input) {
  LayerTrace<T> t;
  t.whitened = whiten(layer.fisher, input);
  t.input = std::move(input);
  t.preact = layer_preact(layer, t.whitened);
  t.output = activation_apply(layer.act, t.preact);
  return t;
}

template <typename T>
ForwardTrace<T> forward(const MLPModel<T>& model, const Matrix<T>& X0) {
  model.validate();
  ForwardTrace<T> trace;
  trace.layers.reserve(model.layers.size());
  Matrix<T> x = X0;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    if (x.rows() != layer.d_in()) {
      throw ShapeError("forward: layer " + std::to_string(k) + " expects " +
                       std::to_string(layer.d_in()) + " inputs, got " +
                       std::to_string(x.rows()));
    }
    trace.layers.push_back(layer_forward(layer, std::move(x)));
    x = trace.layers.back().output;
  }
  require_finite(trace.logits(), "forward output");
  trace.probs = softmax(trace.logits());
  return trace;
}

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits) {
  Matrix<T> p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    auto col = p.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return p;
}

template <typename T>
double l2_penalty(const MLPModel<T>& model) {
  double sq = 0.0;
  for (const auto& L : model.layers) sq += static_cast<double>(L.W.squaredNorm());
  return 0.5 * model.l2 * sq;
}

template <typename T>
LossResult<T> softmax_xent_l2(const Matrix<T>& logits, std::span<const int> labels,
                              const MLPModel<T>& model) {
  const auto K = logits.rows();
  const auto B = logits.cols();
  if (static_cast<std::size_t>(B) != labels.size()) {
    throw ShapeError("softmax_xent_l2: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(B) + " columns");
  }
  if (B == 0) {
    throw ShapeError("softmax_xent_l2: empty batch");
  }
  LossResult<T> out;
  out.dlogits.resize(K, B);
  double total = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= K) {
      throw Error("softmax_xent_l2: label " + std::to_string(y) + " out of range [0, " +
                  std::to_string(K) + ")");
    }
    const auto col = logits.col(j);
    const T m = col.maxCoeff();
    const T sum = (col.array() - m).exp().sum();
    const T log_z = m + std::log(sum);
    total += static_cast<double>(log_z - col(y));
    out.dlogits.col(j) = ((col.array() - log_z).exp()).matrix();
    out.dlogits(y, j) -= T(1);
  }
  out.dlogits /= static_cast<T>(B);
  out.loss = total / static_cast<double>(B) + l2_penalty(model);
  if (!std::isfinite(out.loss)) {
    throw NumericError("softmax_xent_l2: non-finite loss");
  }
  return out;
}

template <typename T>
Gradients<T> backward(const MLPModel<T>& model, const ForwardTrace<T>& trace,
                      const Matrix<T>& dlogits) {
  const std::size_t L = model.layers.size();
  if (trace.layers.size() != L) {
    throw ShapeError("backward: trace has " + std::to_string(trace.layers.size()) +
                     " layers, model has " + std::to_string(L));
  }
  const auto& last = trace.layers.back();
  if (dlogits.rows() != last.output.rows() || dlogits.cols() != last.output.cols()) {
    throw ShapeError("backward: dlogits shape does not match the trace");
  }
  const T lambda = static_cast<T>(model.l2);
  Gradients<T> grads(L);
  Matrix<T> delta = dlogits;
  for (std::size_t i = L; i-- > 0;) {
    const auto& layer = model.layers[i];
    const auto& lt = trace.layers[i];
    if (lt.whitened.rows() != layer.d_in() || lt.preact.rows() != layer.d_out()) {
      throw ShapeError("backward: trace does not match layer " + std::to_string(i));
    }
    if (layer.act != ActivationKind::Identity) {
      delta = delta.cwiseProduct(activation_v(layer.act, lt.preact));
    }
    grads[i].dW = delta * lt.whitened.transpose() + lambda * layer.W;
    grads[i].db = delta.rowwise().sum();
    require_finite(grads[i].dW, "weight gradient");
    if (i > 0) {
      Matrix<T> g = layer.W.transpose() * delta;
      // S is a constant here: it only routes the signal back to x_k.
      if (!layer.fisher.is_identity()) {
        g = layer.fisher.S().transpose() * g;
      }
      delta = std::move(g);
    }
  }
  return grads;
}

template <typename T>
std::size_t count_correct(const Matrix<T>& scores, std::span<const int> labels) {
  std::size_t hits = 0;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    Eigen::Index best = 0;
    scores.col(j).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(j)]) ++hits;
  }
  return hits;
}

template <typename T>
std::uint64_t model_hash(const MLPModel<T>& model) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const T* p, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& L : model.layers) {
    mix(L.W.data(), L.W.size());
    mix(L.b.data(), L.b.size());
  }
  return h;
}

#define FISHERFLOW_INSTANTIATE(T)                                                       \
  template struct MLPModel<T>;                                                          \
  template MLPModel<T> make_mlp<T>(std::span<const int>, ActivationKind, double,        \
                                   const FisherConfig&, std::uint64_t);                 \
  template Matrix<T> layer_preact<T>(const DenseLayer<T>&, const Matrix<T>&);           \
  template LayerTrace<T> layer_forward<T>(const DenseLayer<T>&, Matrix<T>);             \
  template ForwardTrace<T> forward<T>(const MLPModel<T>&, const Matrix<T>&);            \
  template Matrix<T> softmax<T>(const Matrix<T>&);                                      \
  template double l2_penalty<T>(const MLPModel<T>&);                                    \
  template LossResult<T> softmax_xent_l2<T>(const Matrix<T>&, std::span<const int>,     \
                                            const MLPModel<T>&);                        \
  template Gradients<T> backward<T>(const MLPModel<T>&, const ForwardTrace<T>&,         \
                                    const Matrix<T>&);                                  \
  template std::size_t count_correct<T>(const Matrix<T>&, std::span<const int>);        \
  template std::uint64_t model_hash<T>(const MLPModel<T>&);

FISHERFLOW_INSTANTIATE(double)
FISHERFLOW_INSTANTIATE(float)

#undef FISHERFLOW_INSTANTIATE

}  // namespace fisherflow
