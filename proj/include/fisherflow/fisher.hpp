#pragma once

// Local Fisher whitening: each dense layer keeps a non-learned matrix
// S = G^(-1/2), where G = E(v^2) E(x x^T) is estimated from the current batch
// and damped. S multiplies the layer input before the weights and is a
// constant as far as backpropagation is concerned.

#include "fisherflow/activation.hpp"
#include "fisherflow/linalg.hpp"

#include <cstddef>
#include <string>
#include <string_view>

namespace fisherflow {

enum class SpdSolver { NewtonSchulz, DenmanBeavers, Oracle };

std::string_view to_string(SpdSolver solver);
/// Accepts "newton_schulz"/"ns", "denman_beavers"/"db", "oracle".
SpdSolver parse_solver(std::string_view name);

struct FisherConfig {
  double eps_rel = 0.1;
  double floor_abs = 1e-8;
  int interval = 1;   // refresh every `interval` training steps
  double ema = 0.0;   // weight kept on the old S; 0 replaces it outright
  SpdSolver solver = SpdSolver::NewtonSchulz;
  int solver_iters = 15;
  bool frozen = false;
  // A solve whose ||S G S - I||_F exceeds this is treated as failed.
  double max_residual = 1e-2;

  /// Throws Error on out-of-range fields.
  void validate() const;
};

template <typename T>
class FisherState {
 public:
  /// S starts as the dim x dim identity.
  FisherState(Eigen::Index dim, FisherConfig config);
  /// Starts from a caller-supplied symmetric S (tests, restored models).
  FisherState(Matrix<T> initial, FisherConfig config);

  const Matrix<T>& S() const noexcept { return S_; }
  Eigen::Index dim() const noexcept { return S_.rows(); }
  const FisherConfig& config() const noexcept { return config_; }
  bool frozen() const noexcept { return config_.frozen; }
  /// True while S is exactly the identity.
  bool is_identity() const noexcept { return identity_; }

  std::size_t step_counter() const noexcept { return step_counter_; }
  std::size_t refreshes() const noexcept { return refreshes_; }
  std::size_t failures() const noexcept { return failures_; }
  const SpdSolveReport& last_report() const noexcept { return last_report_; }
  const std::string& last_failure() const noexcept { return last_failure_; }

  /// Advances the schedule by one training step. Returns true when this
  /// step is due for a refresh (never for a frozen state).
  bool tick();

  /// Overwrites S. Throws if the state is frozen or the shape is wrong.
  void set_matrix(Matrix<T> S);

 private:
  template <typename U>
  friend class FisherRefresher;

  void accept(Matrix<T> S_new, const SpdSolveReport& report);
  void reject(std::string reason);

  Matrix<T> S_;
  FisherConfig config_;
  bool identity_ = true;
  std::size_t step_counter_ = 0;
  std::size_t refreshes_ = 0;
  std::size_t failures_ = 0;
  SpdSolveReport last_report_;
  std::string last_failure_;
};

template <typename T>
struct FisherEstimate {
  double scalar_v = 0.0;  // E(V_f^2) over batch and output units
  Matrix<T> gram;         // E(x x^T)
  Matrix<T> g_damped;     // damp_spd(scalar_v * gram)
};

/// Local Fisher estimate from layer inputs X (d x B) and unit sensitivities
/// Vf (d_out x B).
template <typename T>
FisherEstimate<T> local_fisher(const Matrix<T>& X, const Matrix<T>& Vf,
                               double eps_rel, double floor_abs);

/// A^(-1/2) of an SPD matrix with the configured solver.
template <typename T>
InvSqrtResult<T> solve_invsqrt(const Matrix<T>& A, SpdSolver solver, int iters);

enum class RefreshOutcome { Skipped, Refreshed, Failed };

/// Recomputes S from the batch unconditionally (the schedule is the
/// caller's business). X holds the layer's raw inputs, Z the pre-activations
/// W (S x) + b computed with the current S. A failed solve leaves S intact
/// and bumps the failure counter.
template <typename T>
RefreshOutcome refresh_now(FisherState<T>& state, const Matrix<T>& X,
                           const Matrix<T>& Z, ActivationKind act);

/// One scheduled step: tick(), then refresh_now() if due.
template <typename T>
RefreshOutcome fisher_refresh(FisherState<T>& state, const Matrix<T>& X,
                              const Matrix<T>& Z, ActivationKind act);

/// S X. Returns X unchanged while S is the identity.
template <typename T>
Matrix<T> whiten(const FisherState<T>& state, const Matrix<T>& X);

}  // namespace fisherflow
