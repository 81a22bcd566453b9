#include "fisherflow/linalg.hpp"

#include "fisherflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fisherflow {

template <typename T>
Tensor4<T>::Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_)
    : Tensor4(n_, c_, h_, w_, std::vector<T>(n_ * c_ * h_ * w_, T(0))) {}

template <typename T>
Tensor4<T>::Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_,
                    std::vector<T> values)
    : n(n_), c(c_), h(h_), w(w_), data(std::move(values)) {
  if (n == 0 || c == 0 || h == 0 || w == 0) {
    throw ShapeError("Tensor4: all dimensions must be positive");
  }
  if (data.size() != n * c * h * w) {
    throw ShapeError("Tensor4: data length " + std::to_string(data.size()) +
                     " does not match n*c*h*w = " + std::to_string(n * c * h * w));
  }
}

template <typename T>
void require_finite(const Matrix<T>& m, std::string_view what) {
  if (!m.allFinite()) {
    throw NumericError("non-finite value in " + std::string(what));
  }
}

template <typename T>
void require_finite(const Vector<T>& v, std::string_view what) {
  if (!v.allFinite()) {
    throw NumericError("non-finite value in " + std::string(what));
  }
}

template <typename T>
double asymmetry(const Matrix<T>& A) {
  if (A.rows() != A.cols()) {
    return std::numeric_limits<double>::infinity();
  }
  return static_cast<double>((A - A.transpose()).cwiseAbs().maxCoeff());
}

template <typename T>
Matrix<T> gram_mean(const Matrix<T>& X) {
  if (X.cols() == 0) {
    throw ShapeError("gram_mean: empty batch");
  }
  const auto d = X.rows();
  Matrix<T> G = Matrix<T>::Zero(d, d);
  G.template selfadjointView<Eigen::Lower>().rankUpdate(X, T(1) / T(X.cols()));
  // Mirror the lower triangle so the result is exactly symmetric.
  G.template triangularView<Eigen::StrictlyUpper>() = G.transpose();
  require_finite(G, "gram_mean output");
  return G;
}

template <typename T>
std::vector<Matrix<T>> gram_channels(const Tensor4<T>& F) {
  if (F.n == 0 || F.c == 0 || F.h == 0 || F.w == 0 ||
      F.data.size() != F.n * F.c * F.h * F.w) {
    throw ShapeError("gram_channels: malformed tensor");
  }
  const auto C = static_cast<Eigen::Index>(F.c);
  const auto HW = static_cast<Eigen::Index>(F.h * F.w);
  std::vector<Matrix<T>> out;
  out.reserve(F.n);
  for (std::size_t s = 0; s < F.n; ++s) {
    // Column-major view of one sample: column k is channel k over H*W pixels.
    Eigen::Map<const Matrix<T>> Mt(F.data.data() + s * F.c * F.h * F.w, HW, C);
    Matrix<T> G = Matrix<T>::Zero(C, C);
    G.template selfadjointView<Eigen::Lower>().rankUpdate(Mt.transpose());
    G.template triangularView<Eigen::StrictlyUpper>() = G.transpose();
    out.push_back(std::move(G));
  }
  return out;
}

template <typename T>
Matrix<T> damp_spd(const Matrix<T>& G, double eps_rel, double floor_abs) {
  if (G.rows() != G.cols() || G.rows() == 0) {
    throw ShapeError("damp_spd: matrix must be square and non-empty");
  }
  if (!(eps_rel >= 0.0) || !(floor_abs >= 0.0)) {
    throw NumericError("damp_spd: need eps_rel >= 0 and floor_abs >= 0");
  }
  require_finite(G, "damp_spd input");
  const double scale = std::max(1.0, static_cast<double>(G.cwiseAbs().maxCoeff()));
  const double sym_tol =
      std::max(1e-10, 100.0 * std::numeric_limits<T>::epsilon()) * scale;
  if (asymmetry(G) > sym_tol) {
    throw NumericError("damp_spd: input is not symmetric");
  }
  const double d = static_cast<double>(G.rows());
  const double shift = eps_rel * static_cast<double>(G.trace()) / d + floor_abs;
  if (!(shift > 0.0)) {
    throw NumericError("damp_spd: zero shift cannot guarantee a positive-definite result");
  }
  Matrix<T> out = G;
  out.diagonal().array() += static_cast<T>(shift);
  return out;
}

namespace {

template <typename T>
Matrix<T> checked_inverse(const Matrix<T>& M, int iteration, const char* which) {
  Eigen::PartialPivLU<Matrix<T>> lu(M);
  const T rc = lu.rcond();
  if (!(rc > std::numeric_limits<T>::epsilon())) {
    throw NumericError("db_sqrt: singular " + std::string(which) +
                       " iterate at iteration " + std::to_string(iteration));
  }
  Matrix<T> inv = lu.inverse();
  if (!inv.allFinite()) {
    throw NumericError("db_sqrt: non-finite inverse of " + std::string(which) +
                       " at iteration " + std::to_string(iteration));
  }
  return inv;
}

template <typename T>
void require_square(const Matrix<T>& A, const char* who) {
  if (A.rows() != A.cols() || A.rows() == 0) {
    throw ShapeError(std::string(who) + ": matrix must be square and non-empty");
  }
}

}  // namespace

template <typename T>
double invsqrt_residual(const Matrix<T>& A, const Matrix<T>& Z) {
  Matrix<T> R = Z * A * Z;
  R.diagonal().array() -= T(1);
  return static_cast<double>(R.norm());
}

template <typename T>
SqrtPair<T> db_sqrt(const Matrix<T>& A, int max_iters, double tol,
                    double residual_tol) {
  require_square(A, "db_sqrt");
  require_finite(A, "db_sqrt input");
  if (max_iters < 1) {
    throw NumericError("db_sqrt: max_iters must be positive");
  }
  const auto d = A.rows();
  Matrix<T> Y = A;
  Matrix<T> Z = Matrix<T>::Identity(d, d);
  SpdSolveReport report;
  bool stopped = false;
  for (int k = 1; k <= max_iters; ++k) {
    const Matrix<T> Zinv = checked_inverse(Z, k, "Z");
    const Matrix<T> Yinv = checked_inverse(Y, k, "Y");
    Matrix<T> Ynext = T(0.5) * (Y + Zinv);
    Z = T(0.5) * (Z + Yinv);
    const double change = static_cast<double>((Ynext - Y).norm() / Y.norm());
    Y = std::move(Ynext);
    report.iterations_used = k;
    if (!Y.allFinite() || !Z.allFinite()) {
      throw NumericError("db_sqrt: non-finite iterate at iteration " +
                         std::to_string(k));
    }
    if (change < tol) {
      stopped = true;
      break;
    }
  }
  report.residual = invsqrt_residual(A, Z);
  report.converged = stopped && report.residual <= residual_tol;
  return {std::move(Y), std::move(Z), report};
}

template <typename T>
InvSqrtResult<T> ns_invsqrt(const Matrix<T>& A, int iters, double tol) {
  require_square(A, "ns_invsqrt");
  require_finite(A, "ns_invsqrt input");
  const T trace = A.trace();
  if (!(trace > T(0))) {
    throw NumericError("ns_invsqrt: not positive-definite (trace <= 0)");
  }
  const auto d = A.rows();
  const Matrix<T> I = Matrix<T>::Identity(d, d);
  Matrix<T> Y = A / trace;
  Matrix<T> Z = I;
  Matrix<T> Tk(d, d);
  for (int k = 0; k < iters; ++k) {
    Tk.noalias() = -(Z * Y);
    Tk.diagonal().array() += T(3);
    Tk *= T(0.5);
    Y = Y * Tk;
    Z = Tk * Z;
  }
  Z /= std::sqrt(trace);
  if (!Z.allFinite()) {
    throw NumericError("ns_invsqrt: iteration diverged");
  }
  SpdSolveReport report;
  report.iterations_used = iters;
  report.residual = invsqrt_residual(A, Z);
  report.converged = report.residual <= tol;
  return {std::move(Z), report};
}

template <typename T>
SymmetricEigen<T> jacobi_eigen(const Matrix<T>& Ain) {
  require_square(Ain, "jacobi_eigen");
  require_finite(Ain, "jacobi_eigen input");
  const auto n = Ain.rows();
  Matrix<T> A = T(0.5) * (Ain + Ain.transpose());
  Matrix<T> V = Matrix<T>::Identity(n, n);
  const T total = A.squaredNorm();
  const T eps = std::numeric_limits<T>::epsilon();
  constexpr int kMaxSweeps = 100;

  auto off_diagonal = [&] {
    T s = 0;
    for (Eigen::Index q = 1; q < n; ++q) {
      for (Eigen::Index p = 0; p < q; ++p) s += 2 * A(p, q) * A(p, q);
    }
    return s;
  };

  int sweep = 0;
  for (;;) {
    const T off = off_diagonal();
    if (off <= eps * eps * total || total == T(0)) {
      break;
    }
    if (sweep == kMaxSweeps) {
      throw NumericError("jacobi_eigen: no convergence after 100 sweeps");
    }
    ++sweep;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const T apq = A(p, q);
        if (apq == T(0)) continue;
        const T app = A(p, p);
        const T aqq = A(q, q);
        // Skip rotations that can no longer change the diagonal.
        if (std::abs(apq) < eps * T(1e-3) * (std::abs(app) + std::abs(aqq)) &&
            sweep > 4) {
          A(p, q) = A(q, p) = T(0);
          continue;
        }
        const T theta = (aqq - app) / (2 * apq);
        const T t = (theta >= 0 ? T(1) : T(-1)) /
                    (std::abs(theta) + std::sqrt(theta * theta + T(1)));
        const T c = T(1) / std::sqrt(t * t + T(1));
        const T s = t * c;
        const T tau = s / (T(1) + c);
        A(p, p) = app - t * apq;
        A(q, q) = aqq + t * apq;
        A(p, q) = A(q, p) = T(0);
        for (Eigen::Index r = 0; r < n; ++r) {
          if (r != p && r != q) {
            const T arp = A(r, p);
            const T arq = A(r, q);
            A(r, p) = A(p, r) = arp - s * (arq + tau * arp);
            A(r, q) = A(q, r) = arq + s * (arp - tau * arq);
          }
          const T vrp = V(r, p);
          const T vrq = V(r, q);
          V(r, p) = vrp - s * (vrq + tau * vrp);
          V(r, q) = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }
  return {A.diagonal(), std::move(V), sweep};
}

namespace {

template <typename T, typename Fn>
Matrix<T> spectral_map(const Matrix<T>& A, Fn&& fn, const char* who) {
  const SymmetricEigen<T> eig = jacobi_eigen(A);
  if (!(eig.values.minCoeff() > T(0))) {
    throw NumericError(std::string(who) + ": matrix is not positive-definite");
  }
  const Vector<T> mapped = eig.values.unaryExpr(fn);
  Matrix<T> out = eig.vectors * mapped.asDiagonal() * eig.vectors.transpose();
  out = T(0.5) * (out + out.transpose()).eval();
  return out;
}

}  // namespace

template <typename T>
Matrix<T> spd_invsqrt_oracle(const Matrix<T>& A) {
  return spectral_map(A, [](T x) { return T(1) / std::sqrt(x); },
                      "spd_invsqrt_oracle");
}

template <typename T>
Matrix<T> spd_sqrt_oracle(const Matrix<T>& A) {
  return spectral_map(A, [](T x) { return std::sqrt(x); }, "spd_sqrt_oracle");
}

Mat random_spd(std::mt19937_64& rng, Eigen::Index d, double lo, double hi) {
  if (d < 1 || !(lo > 0.0) || !(hi >= lo)) {
    throw Error("random_spd: need d >= 1 and 0 < lo <= hi");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Mat A(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) A(i, j) = normal(rng);
  Eigen::HouseholderQR<Mat> qr(A);
  Mat Q = qr.householderQ();
  // Sign fix makes Q Haar-distributed.
  for (Eigen::Index i = 0; i < d; ++i) {
    if (qr.matrixQR()(i, i) < 0) Q.col(i) = -Q.col(i);
  }
  Vec lambda(d);
  const double span = std::log(hi / lo);
  for (Eigen::Index i = 0; i < d; ++i) lambda(i) = lo * std::exp(span * unit(rng));
  if (d >= 2) {
    lambda(0) = lo;
    lambda(d - 1) = hi;
  }
  Mat S = Q * lambda.asDiagonal() * Q.transpose();
  return 0.5 * (S + S.transpose());
}

#define FISHERFLOW_INSTANTIATE(T)                                              \
  template struct Tensor4<T>;                                                  \
  template void require_finite<T>(const Matrix<T>&, std::string_view);         \
  template void require_finite<T>(const Vector<T>&, std::string_view);         \
  template double asymmetry<T>(const Matrix<T>&);                              \
  template Matrix<T> gram_mean<T>(const Matrix<T>&);                           \
  template std::vector<Matrix<T>> gram_channels<T>(const Tensor4<T>&);         \
  template Matrix<T> damp_spd<T>(const Matrix<T>&, double, double);            \
  template double invsqrt_residual<T>(const Matrix<T>&, const Matrix<T>&);     \
  template SqrtPair<T> db_sqrt<T>(const Matrix<T>&, int, double, double);      \
  template InvSqrtResult<T> ns_invsqrt<T>(const Matrix<T>&, int, double);      \
  template SymmetricEigen<T> jacobi_eigen<T>(const Matrix<T>&);                \
  template Matrix<T> spd_invsqrt_oracle<T>(const Matrix<T>&);                  \
  template Matrix<T> spd_sqrt_oracle<T>(const Matrix<T>&);

FISHERFLOW_INSTANTIATE(double)
FISHERFLOW_INSTANTIATE(float)

#undef FISHERFLOW_INSTANTIATE

}  // namespace fisherflow
