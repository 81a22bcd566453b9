#pragma once

#include "fisherflow/data.hpp"
#include "fisherflow/linalg.hpp"
#include "fisherflow/metrics.hpp"
#include "fisherflow/network.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace fisherflow {

enum class OptimizerKind { SGD, SNGD };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SNGD;
  double lr = 0.1;
  double momentum = 0.0;

  void validate() const;
};

/// v <- momentum * v + grad;  param <- param - lr * v.
template <typename T>
void sgd_step(Matrix<T>& param, const Matrix<T>& grad, double lr, double momentum,
              Matrix<T>& velocity);
template <typename T>
void sgd_step(Vector<T>& param, const Vector<T>& grad, double lr, double momentum,
              Vector<T>& velocity);

struct StepStats {
  double loss = 0.0;  // loss of the pre-update model on the batch
  std::size_t correct = 0;
  std::size_t batch = 0;
  std::size_t refreshed = 0;  // layers whose S was replaced this step
  std::size_t failed = 0;     // layers whose refresh was rejected this step
};

/// Owns a model and its momentum buffers and applies training steps.
///
/// In SNGD mode every step walks the layers in order: tick the layer's
/// Fisher schedule, refresh S from the layer's current input when due, then
/// forward through the (possibly new) S. Loss and gradients follow with all S
/// held constant, and every W and b takes an SGD step. SGD mode skips the
/// Fisher schedule and requires every S to be the identity.
template <typename T>
class Trainer {
 public:
  Trainer(MLPModel<T> model, OptimizerConfig opt);

  StepStats train_step(const Matrix<T>& X, std::span<const int> labels);

  const MLPModel<T>& model() const noexcept { return model_; }
  const OptimizerConfig& optimizer() const noexcept { return opt_; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t total_refreshes() const;
  std::size_t total_failures() const;

  /// Test seam: replaces backward() for every subsequent step.
  using BackwardFn = std::function<Gradients<T>(const MLPModel<T>&, const ForwardTrace<T>&,
                                                const Matrix<T>&)>;
  void set_backward(BackwardFn fn) { backward_ = std::move(fn); }

 private:
  MLPModel<T> model_;
  OptimizerConfig opt_;
  std::vector<Matrix<T>> vel_W_;
  std::vector<Vector<T>> vel_b_;
  std::size_t steps_ = 0;
  BackwardFn backward_;
};

struct EvalResult {
  double loss = 0.0;  // mean cross-entropy plus the L2 term
  double accuracy = 0.0;
};

/// Forward-only pass in chunks; never touches Fisher state or weights.
template <typename T>
EvalResult evaluate(const MLPModel<T>& model, const Dataset<T>& data,
                    std::size_t chunk = 1000);

struct RunOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 50;
  std::uint64_t shuffle_seed = 1;
  bool per_step = false;  // one row per step instead of per epoch
  bool timing = false;    // fill wall_time_s (otherwise 0, keeping logs reproducible)
  std::function<void(const MetricsRow&)> on_epoch;
};

template <typename T>
struct RunResult {
  std::vector<MetricsRow> rows;
  MLPModel<T> model;
  std::uint64_t initial_hash = 0;
};

/// Epoch loop with a full seeded reshuffle each epoch. Epoch rows carry the
/// running mean of batch loss/accuracy over the epoch and a full validation
/// pass; per-step rows carry the batch values and the latest validation pass.
template <typename T>
RunResult<T> run_training(MLPModel<T> model, const OptimizerConfig& opt,
                          const Dataset<T>& train, const Dataset<T>& val,
                          const RunOptions& options);

/// Both sides of one reparameterized update on l(w) = 1/2 (w-c)^T H (w-c).
struct Lemma1Result {
  Vec ngd;      // w - alpha G^-1 grad l(w)
  Vec reparam;  // M w'_new, w' = M^-1 w, one GD step on l(M w'), M = G^(-1/2)
  double discrepancy = 0.0;  // max |ngd - reparam|
};

Lemma1Result lemma1_step(const Mat& G, const Mat& H, const Vec& c, const Vec& w,
                         double alpha);

/// Random SPD metric, random quadratic loss, one step each way.
double lemma1_equivalence_check(int dim, std::uint64_t seed);

}  // namespace fisherflow
