#include "fisherflow/activation.hpp"

#include "fisherflow/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace fisherflow {

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::Identity: return "identity";
  }
  return "unknown";
}

ActivationKind parse_activation(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (lower == "sigmoid") return ActivationKind::Sigmoid;
  if (lower == "relu") return ActivationKind::ReLU;
  if (lower == "identity") return ActivationKind::Identity;
  throw Error("unknown activation '" + std::string(name) + "'");
}

namespace {

template <typename T>
T sigmoid(T z) {
  // Split on sign so exp never overflows.
  if (z >= T(0)) {
    return T(1) / (T(1) + std::exp(-z));
  }
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Matrix<T> activation_apply(ActivationKind kind, const Matrix<T>& Z) {
  switch (kind) {
    case ActivationKind::Sigmoid:
      return Z.unaryExpr([](T z) { return sigmoid(z); });
    case ActivationKind::ReLU:
      return Z.cwiseMax(T(0));
    case ActivationKind::Identity:
      return Z;
  }
  return Z;
}

template <typename T>
Matrix<T> activation_v(ActivationKind kind, const Matrix<T>& Z) {
  switch (kind) {
    case ActivationKind::Sigmoid:
      return Z.unaryExpr([](T z) {
        const T s = sigmoid(z);
        return s * (T(1) - s);
      });
    case ActivationKind::ReLU:
      return Z.unaryExpr([](T z) { return z > T(0) ? T(1) : T(0); });
    case ActivationKind::Identity:
      return Matrix<T>::Ones(Z.rows(), Z.cols());
  }
  return Matrix<T>::Ones(Z.rows(), Z.cols());
}

template Matrix<double> activation_apply<double>(ActivationKind, const Matrix<double>&);
template Matrix<float> activation_apply<float>(ActivationKind, const Matrix<float>&);
template Matrix<double> activation_v<double>(ActivationKind, const Matrix<double>&);
template Matrix<float> activation_v<float>(ActivationKind, const Matrix<float>&);

}  // namespace fisherflow
