#pragma once

// Dense matrix kernels: Gram means, SPD damping, and matrix (inverse) square
// roots. Samples are stored as columns throughout (d x B batches).

#include <Eigen/Dense>

#include <cstddef>
#include <random>
#include <string_view>
#include <vector>

namespace fisherflow {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Mat = Matrix<double>;
using Vec = Vector<double>;

/// Feature map in N-major, then C, H, W order.
template <typename T>
struct Tensor4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
          std::vector<T> values);

  T& at(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) {
    return data[((in * c + ic) * h + ih) * w + iw];
  }
  const T& at(std::size_t in, std::size_t ic, std::size_t ih,
              std::size_t iw) const {
    return data[((in * c + ic) * h + ih) * w + iw];
  }
};

/// Diagnostics from an iterative root solver.
struct SpdSolveReport {
  int iterations_used = 0;
  double residual = 0.0;  // ||Z A Z - I||_F in the caller's scale
  bool converged = false;
};

template <typename T>
struct SqrtPair {
  Matrix<T> sqrt;      // ~ A^(1/2)
  Matrix<T> inv_sqrt;  // ~ A^(-1/2)
  SpdSolveReport report;
};

template <typename T>
struct InvSqrtResult {
  Matrix<T> inv_sqrt;
  SpdSolveReport report;
};

template <typename T>
struct SymmetricEigen {
  Vector<T> values;   // unsorted, matching the columns of `vectors`
  Matrix<T> vectors;  // orthonormal columns
  int sweeps = 0;
};

/// Throws NumericError naming `what` if any entry is NaN or infinite.
template <typename T>
void require_finite(const Matrix<T>& m, std::string_view what);
template <typename T>
void require_finite(const Vector<T>& v, std::string_view what);

/// (1/B) * sum_b x_b x_b^T over the B columns of X.
template <typename T>
Matrix<T> gram_mean(const Matrix<T>& X);

/// Per-sample C x C channel Gram: M M^T with M the C x (H*W) flattening.
template <typename T>
std::vector<Matrix<T>> gram_channels(const Tensor4<T>& F);

/// G + (eps_rel * tr(G) / d + floor_abs) * I. A zero floor is accepted as
/// long as the total shift is positive.
template <typename T>
Matrix<T> damp_spd(const Matrix<T>& G, double eps_rel, double floor_abs);

/// Coupled Denman-Beavers iteration from Y0 = A, Z0 = I. Stops when the
/// relative Frobenius change of Y drops below `tol` or after `max_iters`.
/// The report counts as converged when the stopping rule fired and the
/// residual is within `residual_tol`.
template <typename T>
SqrtPair<T> db_sqrt(const Matrix<T>& A, int max_iters = 50, double tol = 1e-10,
                    double residual_tol = 1e-6);

/// Inverse-free Newton-Schulz iteration on A / tr(A), de-scaled on return.
/// `tol` only decides the `converged` flag of the report.
template <typename T>
InvSqrtResult<T> ns_invsqrt(const Matrix<T>& A, int iters = 20,
                            double tol = 1e-6);

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. At most 100 sweeps.
template <typename T>
SymmetricEigen<T> jacobi_eigen(const Matrix<T>& A);

/// Q diag(lambda^(-1/2)) Q^T via jacobi_eigen. Reference path, not for hot loops.
template <typename T>
Matrix<T> spd_invsqrt_oracle(const Matrix<T>& A);

/// Q diag(lambda^(1/2)) Q^T via jacobi_eigen.
template <typename T>
Matrix<T> spd_sqrt_oracle(const Matrix<T>& A);

/// ||Z A Z - I||_F.
template <typename T>
double invsqrt_residual(const Matrix<T>& A, const Matrix<T>& Z);

/// Q diag(lambda) Q^T with Q Haar-random orthogonal and lambda log-uniform in
/// [lo, hi]; for d >= 2 the two extremes are exactly lo and hi.
Mat random_spd(std::mt19937_64& rng, Eigen::Index d, double lo, double hi);

/// max |A - A^T|.
template <typename T>
double asymmetry(const Matrix<T>& A);

}  // namespace fisherflow
