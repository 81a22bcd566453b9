#pragma once

#include "fisherflow/linalg.hpp"

#include <string>
#include <string_view>

namespace fisherflow {

/// Elementwise nonlinearity of a dense layer. Identity is used for the
/// output layer, whose softmax lives inside the loss.
enum class ActivationKind { Sigmoid, ReLU, Identity };

std::string_view to_string(ActivationKind kind);
/// Accepts "sigmoid", "relu", "identity" (case-insensitive).
ActivationKind parse_activation(std::string_view name);

template <typename T>
Matrix<T> activation_apply(ActivationKind kind, const Matrix<T>& Z);

/// Sensitivity of each unit: sigma(z)(1 - sigma(z)) for Sigmoid,
/// 1[z > 0] for ReLU (0 at z = 0), 1 for Identity. Also the elementwise
/// derivative used by backpropagation.
template <typename T>
Matrix<T> activation_v(ActivationKind kind, const Matrix<T>& Z);

}  // namespace fisherflow
