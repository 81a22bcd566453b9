#include "fisherflow/fisher.hpp"

#include "fisherflow/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <utility>

namespace fisherflow {

std::string_view to_string(SpdSolver solver) {
  switch (solver) {
    case SpdSolver::NewtonSchulz: return "newton_schulz";
    case SpdSolver::DenmanBeavers: return "denman_beavers";
    case SpdSolver::Oracle: return "oracle";
  }
  return "unknown";
}

SpdSolver parse_solver(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (lower == "newton_schulz" || lower == "ns") return SpdSolver::NewtonSchulz;
  if (lower == "denman_beavers" || lower == "db") return SpdSolver::DenmanBeavers;
  if (lower == "oracle") return SpdSolver::Oracle;
  throw Error("unknown solver '" + std::string(name) + "'");
}

void FisherConfig::validate() const {
  if (!(eps_rel >= 0.0)) throw Error("fisher eps_rel must be >= 0");
  if (!(floor_abs > 0.0)) throw Error("fisher floor_abs must be > 0");
  if (interval < 1) throw Error("fisher interval must be >= 1");
  if (!(ema >= 0.0 && ema < 1.0)) throw Error("fisher ema must lie in [0, 1)");
  if (solver_iters < 1) throw Error("fisher solver_iters must be >= 1");
  if (!(max_residual > 0.0)) throw Error("fisher max_residual must be > 0");
}

template <typename T>
FisherState<T>::FisherState(Eigen::Index dim, FisherConfig config)
    : config_(config) {
  if (dim < 1) {
    throw ShapeError("FisherState: dimension must be positive");
  }
  config_.validate();
  S_ = Matrix<T>::Identity(dim, dim);
}

template <typename T>
FisherState<T>::FisherState(Matrix<T> initial, FisherConfig config)
    : S_(std::move(initial)), config_(config) {
  config_.validate();
  if (S_.rows() != S_.cols() || S_.rows() < 1) {
    throw ShapeError("FisherState: initial S must be square and non-empty");
  }
  require_finite(S_, "initial Fisher matrix");
  identity_ = S_.isIdentity(0);
}

template <typename T>
bool FisherState<T>::tick() {
  ++step_counter_;
  if (config_.frozen) {
    return false;
  }
  return step_counter_ % static_cast<std::size_t>(config_.interval) == 0;
}

template <typename T>
void FisherState<T>::set_matrix(Matrix<T> S) {
  if (config_.frozen) {
    throw Error("FisherState: cannot overwrite a frozen state");
  }
  if (S.rows() != S_.rows() || S.cols() != S_.cols()) {
    throw ShapeError("FisherState: replacement has the wrong shape");
  }
  require_finite(S, "Fisher matrix");
  identity_ = S.isIdentity(0);
  S_ = std::move(S);
}

template <typename T>
void FisherState<T>::accept(Matrix<T> S_new, const SpdSolveReport& report) {
  if (config_.ema > 0.0) {
    const T keep = static_cast<T>(config_.ema);
    S_new = (T(1) - keep) * S_new + keep * S_;
  }
  S_ = T(0.5) * (S_new + S_new.transpose());
  identity_ = false;
  ++refreshes_;
  last_report_ = report;
}

template <typename T>
void FisherState<T>::reject(std::string reason) {
  ++failures_;
  last_failure_ = std::move(reason);
}

template <typename T>
FisherEstimate<T> local_fisher(const Matrix<T>& X, const Matrix<T>& Vf,
                               double eps_rel, double floor_abs) {
  if (X.cols() != Vf.cols()) {
    throw ShapeError("local_fisher: batch mismatch (" + std::to_string(X.cols()) +
                     " inputs vs " + std::to_string(Vf.cols()) + " sensitivities)");
  }
  if (X.cols() == 0 || Vf.rows() == 0) {
    throw ShapeError("local_fisher: empty batch");
  }
  FisherEstimate<T> est;
  est.scalar_v = static_cast<double>(Vf.squaredNorm()) /
                 static_cast<double>(Vf.rows() * Vf.cols());
  est.gram = gram_mean(X);
  est.g_damped = damp_spd<T>(static_cast<T>(est.scalar_v) * est.gram, eps_rel, floor_abs);
  return est;
}

template <typename T>
InvSqrtResult<T> solve_invsqrt(const Matrix<T>& A, SpdSolver solver, int iters) {
  switch (solver) {
    case SpdSolver::NewtonSchulz:
      return ns_invsqrt(A, iters);
    case SpdSolver::DenmanBeavers: {
      auto r = db_sqrt(A, iters, 1e-10);
      return {std::move(r.inv_sqrt), r.report};
    }
    case SpdSolver::Oracle: {
      InvSqrtResult<T> r{spd_invsqrt_oracle(A), {}};
      r.report.residual = invsqrt_residual(A, r.inv_sqrt);
      r.report.converged = true;
      return r;
    }
  }
  throw Error("solve_invsqrt: unknown solver");
}

template <typename U>
class FisherRefresher {
 public:
  static RefreshOutcome run(FisherState<U>& state, const Matrix<U>& X,
                            const Matrix<U>& Z, ActivationKind act) {
    if (X.rows() != state.dim()) {
      throw ShapeError("fisher refresh: input has " + std::to_string(X.rows()) +
                       " rows, state expects " + std::to_string(state.dim()));
    }
    const FisherConfig& cfg = state.config();
    const FisherEstimate<U> est =
        local_fisher(X, activation_v(act, Z), cfg.eps_rel, cfg.floor_abs);
    try {
      InvSqrtResult<U> solved = solve_invsqrt(est.g_damped, cfg.solver, cfg.solver_iters);
      if (!solved.inv_sqrt.allFinite()) {
        state.reject("solver produced non-finite values");
        return RefreshOutcome::Failed;
      }
      if (!(solved.report.residual <= cfg.max_residual)) {
        state.reject("solver residual " + std::to_string(solved.report.residual) +
                     " above limit");
        return RefreshOutcome::Failed;
      }
      state.accept(std::move(solved.inv_sqrt), solved.report);
      return RefreshOutcome::Refreshed;
    } catch (const NumericError& e) {
      state.reject(e.what());
      return RefreshOutcome::Failed;
    }
  }
};

template <typename T>
RefreshOutcome refresh_now(FisherState<T>& state, const Matrix<T>& X,
                           const Matrix<T>& Z, ActivationKind act) {
  return FisherRefresher<T>::run(state, X, Z, act);
}

template <typename T>
RefreshOutcome fisher_refresh(FisherState<T>& state, const Matrix<T>& X,
                              const Matrix<T>& Z, ActivationKind act) {
  if (!state.tick()) {
    return RefreshOutcome::Skipped;
  }
  return refresh_now(state, X, Z, act);
}

template <typename T>
Matrix<T> whiten(const FisherState<T>& state, const Matrix<T>& X) {
  if (X.rows() != state.dim()) {
    throw ShapeError("whiten: input has " + std::to_string(X.rows()) +
                     " rows, Fisher matrix is " + std::to_string(state.dim()) + "x" +
                     std::to_string(state.dim()));
  }
  if (state.is_identity()) {
    return X;
  }
  Matrix<T> out = state.S() * X;
  return out;
}

#define FISHERFLOW_INSTANTIATE(T)                                                   \
  template class FisherState<T>;                                                    \
  template FisherEstimate<T> local_fisher<T>(const Matrix<T>&, const Matrix<T>&,    \
                                             double, double);                       \
  template InvSqrtResult<T> solve_invsqrt<T>(const Matrix<T>&, SpdSolver, int);     \
  template RefreshOutcome refresh_now<T>(FisherState<T>&, const Matrix<T>&,         \
                                         const Matrix<T>&, ActivationKind);         \
  template RefreshOutcome fisher_refresh<T>(FisherState<T>&, const Matrix<T>&,      \
                                            const Matrix<T>&, ActivationKind);      \
  template Matrix<T> whiten<T>(const FisherState<T>&, const Matrix<T>&);

FISHERFLOW_INSTANTIATE(double)
FISHERFLOW_INSTANTIATE(float)

#undef FISHERFLOW_INSTANTIATE

}  // namespace fisherflow
