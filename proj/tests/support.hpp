#pragma once

// Independent reference implementations used as test oracles. Everything here
// is written with plain loops over std::vector so that it shares no code path
// with the library under test.

#include "fisherflow/data.hpp"
#include "fisherflow/network.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testsupport {

using fisherflow::Mat;
using fisherflow::Vec;

inline Mat random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                         double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

inline Mat loop_matmul(const Mat& A, const Mat& B) {
  Mat C = Mat::Zero(A.rows(), B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < A.cols(); ++k) s += A(i, k) * B(k, j);
      C(i, j) = s;
    }
  return C;
}

inline Mat loop_gram(const Mat& X) {
  const auto d = X.rows(), B = X.cols();
  Mat G = Mat::Zero(d, d);
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) G(i, j) += X(i, b) * X(j, b);
  return G / static_cast<double>(B);
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) m = std::max(m, std::abs(a(i, j) - b(i, j)));
  return m;
}

inline double ref_act(fisherflow::ActivationKind k, double z) {
  switch (k) {
    case fisherflow::ActivationKind::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case fisherflow::ActivationKind::ReLU: return z > 0 ? z : 0.0;
    default: return z;
  }
}

inline double ref_act_grad(fisherflow::ActivationKind k, double z) {
  switch (k) {
    case fisherflow::ActivationKind::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1 - s);
    }
    case fisherflow::ActivationKind::ReLU: return z > 0 ? 1.0 : 0.0;
    default: return 1.0;
  }
}

/// Plain MLP (no whitening): per-sample loops, returns logits.
struct PlainMLP {
  struct Layer {
    std::vector<std::vector<double>> W;  // d_out rows of d_in
    std::vector<double> b;
    fisherflow::ActivationKind act;
  };
  std::vector<Layer> layers;
  double l2 = 0.0;

  static PlainMLP from(const fisherflow::MLPModel<double>& m) {
    PlainMLP p;
    p.l2 = m.l2;
    for (const auto& L : m.layers) {
      Layer pl;
      pl.act = L.act;
      pl.W.assign(static_cast<std::size_t>(L.W.rows()),
                  std::vector<double>(static_cast<std::size_t>(L.W.cols())));
      for (Eigen::Index i = 0; i < L.W.rows(); ++i)
        for (Eigen::Index j = 0; j < L.W.cols(); ++j)
          pl.W[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = L.W(i, j);
      pl.b.assign(L.b.data(), L.b.data() + L.b.size());
      p.layers.push_back(std::move(pl));
    }
    return p;
  }

  struct SampleTrace {
    std::vector<std::vector<double>> inputs;  // input of each layer
    std::vector<std::vector<double>> pre;     // pre-activation of each layer
    std::vector<double> logits;
  };

  SampleTrace run(const std::vector<double>& x0) const {
    SampleTrace t;
    std::vector<double> x = x0;
    for (const auto& L : layers) {
      t.inputs.push_back(x);
      std::vector<double> z(L.b);
      for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) z[i] += L.W[i][j] * x[j];
      t.pre.push_back(z);
      for (auto& v : z) v = ref_act(L.act, v);
      x = z;
    }
    t.logits = x;
    return t;
  }

  struct Grad {
    std::vector<std::vector<std::vector<double>>> dW;
    std::vector<std::vector<double>> db;
    double loss = 0.0;
  };

  /// Mean cross-entropy + l2/2 sum W^2 and its gradient, sample by sample.
  Grad loss_and_grad(const Mat& X, const std::vector<int>& y) const {
    Grad g;
    for (const auto& L : layers) {
      g.dW.emplace_back(L.W.size(), std::vector<double>(L.W[0].size(), 0.0));
      g.db.emplace_back(L.b.size(), 0.0);
    }
    const double B = static_cast<double>(X.cols());
    for (Eigen::Index s = 0; s < X.cols(); ++s) {
      std::vector<double> x0(static_cast<std::size_t>(X.rows()));
      for (Eigen::Index i = 0; i < X.rows(); ++i) x0[static_cast<std::size_t>(i)] = X(i, s);
      const SampleTrace t = run(x0);
      double m = t.logits[0];
      for (double v : t.logits) m = std::max(m, v);
      double zsum = 0.0;
      for (double v : t.logits) zsum += std::exp(v - m);
      const int label = y[static_cast<std::size_t>(s)];
      g.loss += (m + std::log(zsum) - t.logits[static_cast<std::size_t>(label)]) / B;
      std::vector<double> delta(t.logits.size());
      for (std::size_t k = 0; k < delta.size(); ++k) {
        delta[k] = (std::exp(t.logits[k] - m) / zsum - (static_cast<int>(k) == label ? 1 : 0)) / B;
      }
      for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& L = layers[l];
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= ref_act_grad(L.act, t.pre[l][i]);
        for (std::size_t i = 0; i < delta.size(); ++i) {
          g.db[l][i] += delta[i];
          for (std::size_t j = 0; j < t.inputs[l].size(); ++j) g.dW[l][i][j] += delta[i] * t.inputs[l][j];
        }
        std::vector<double> up(t.inputs[l].size(), 0.0);
        for (std::size_t i = 0; i < delta.size(); ++i)
          for (std::size_t j = 0; j < up.size(); ++j) up[j] += L.W[i][j] * delta[i];
        delta = up;
      }
    }
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (std::size_t i = 0; i < layers[l].W.size(); ++i)
        for (std::size_t j = 0; j < layers[l].W[i].size(); ++j) {
          g.dW[l][i][j] += l2 * layers[l].W[i][j];
          g.loss += 0.5 * l2 * layers[l].W[i][j] * layers[l].W[i][j];
        }
    return g;
  }
};

inline std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

/// IDX writer: magic, big-endian dims, raw payload.
inline std::vector<std::uint8_t> idx_bytes(std::uint32_t magic,
                                           const std::vector<std::uint32_t>& dims,
                                           const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> out = be32(magic);
  for (auto d : dims) {
    auto b = be32(d);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fisherflow_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testsupport
