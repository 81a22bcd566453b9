#include "fisherflow/training.hpp"

#include "fisherflow/error.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <numeric>
#include <random>
#include <string>

namespace fisherflow {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::SGD ? "sgd" : "sngd";
}

OptimizerKind parse_optimizer(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (lower == "sgd") return OptimizerKind::SGD;
  if (lower == "sngd") return OptimizerKind::SNGD;
  throw Error("unknown optimizer '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw Error("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must lie in [0, 1)");
}

namespace {

template <typename Dense>
void momentum_update(Dense& param, const Dense& grad, double lr, double momentum,
                     Dense& velocity) {
  using T = typename Dense::Scalar;
  if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
      velocity.rows() != grad.rows() || velocity.cols() != grad.cols()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity shapes differ");
  }
  velocity = static_cast<T>(momentum) * velocity + grad;
  param -= static_cast<T>(lr) * velocity;
}

}  // namespace

template <typename T>
void sgd_step(Matrix<T>& param, const Matrix<T>& grad, double lr, double momentum,
              Matrix<T>& velocity) {
  momentum_update(param, grad, lr, momentum, velocity);
}

template <typename T>
void sgd_step(Vector<T>& param, const Vector<T>& grad, double lr, double momentum,
              Vector<T>& velocity) {
  momentum_update(param, grad, lr, momentum, velocity);
}

template <typename T>
Trainer<T>::Trainer(MLPModel<T> model, OptimizerConfig opt)
    : model_(std::move(model)), opt_(opt) {
  opt_.validate();
  model_.validate();
  if (opt_.kind == OptimizerKind::SGD) {
    for (std::size_t k = 0; k < model_.layers.size(); ++k) {
      if (!model_.layers[k].fisher.is_identity()) {
        throw Error("SGD requires identity Fisher matrices (layer " +
                    std::to_string(k) + " has a non-identity S)");
      }
    }
  }
  for (const auto& L : model_.layers) {
    vel_W_.push_back(Matrix<T>::Zero(L.W.rows(), L.W.cols()));
    vel_b_.push_back(Vector<T>::Zero(L.b.size()));
  }
}

template <typename T>
StepStats Trainer<T>::train_step(const Matrix<T>& X, std::span<const int> labels) {
  if (X.cols() == 0) {
    throw ShapeError("train_step: empty batch");
  }
  if (static_cast<std::size_t>(X.cols()) != labels.size()) {
    throw ShapeError("train_step: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(X.cols()) + " samples");
  }
  if (X.rows() != model_.input_dim()) {
    throw ShapeError("train_step: layer 0 expects " + std::to_string(model_.input_dim()) +
                     " inputs, got " + std::to_string(X.rows()));
  }
  StepStats stats;
  stats.batch = labels.size();

  ForwardTrace<T> trace;
  trace.layers.reserve(model_.layers.size());
  Matrix<T> x = X;
  for (auto& layer : model_.layers) {
    if (opt_.kind == OptimizerKind::SNGD && layer.fisher.tick()) {
      const Matrix<T> z_current = layer_preact(layer, whiten(layer.fisher, x));
      switch (refresh_now(layer.fisher, x, z_current, layer.act)) {
        case RefreshOutcome::Refreshed: ++stats.refreshed; break;
        case RefreshOutcome::Failed: ++stats.failed; break;
        case RefreshOutcome::Skipped: break;
      }
    }
    trace.layers.push_back(layer_forward(layer, std::move(x)));
    x = trace.layers.back().output;
  }
  require_finite(trace.logits(), "forward output");
  trace.probs = softmax(trace.logits());

  const LossResult<T> loss = softmax_xent_l2(trace.logits(), labels, model_);
  stats.loss = loss.loss;
  stats.correct = count_correct(trace.logits(), labels);

  const Gradients<T> grads =
      backward_ ? backward_(model_, trace, loss.dlogits) : backward(model_, trace, loss.dlogits);
  if (grads.size() != model_.layers.size()) {
    throw ShapeError("train_step: gradient count does not match layer count");
  }
  for (std::size_t k = 0; k < model_.layers.size(); ++k) {
    auto& L = model_.layers[k];
    sgd_step(L.W, grads[k].dW, opt_.lr, opt_.momentum, vel_W_[k]);
    sgd_step(L.b, grads[k].db, opt_.lr, opt_.momentum, vel_b_[k]);
    require_finite(L.W, "weights after update");
    require_finite(L.b, "biases after update");
  }
  ++steps_;
  return stats;
}

template <typename T>
std::size_t Trainer<T>::total_refreshes() const {
  std::size_t n = 0;
  for (const auto& L : model_.layers) n += L.fisher.refreshes();
  return n;
}

template <typename T>
std::size_t Trainer<T>::total_failures() const {
  std::size_t n = 0;
  for (const auto& L : model_.layers) n += L.fisher.failures();
  return n;
}

template <typename T>
EvalResult evaluate(const MLPModel<T>& model, const Dataset<T>& data, std::size_t chunk) {
  const std::size_t n = data.size();
  if (n == 0) {
    throw DataError("evaluate: empty dataset");
  }
  if (chunk == 0) chunk = n;
  double xent_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    const auto cols = static_cast<Eigen::Index>(len);
    const Matrix<T> Xb = data.X.middleCols(static_cast<Eigen::Index>(start), cols);
    const std::span<const int> yb(data.labels.data() + start, len);
    const ForwardTrace<T> trace = forward(model, Xb);
    const auto& logits = trace.logits();
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto col = logits.col(j);
      const T m = col.maxCoeff();
      const double log_z = static_cast<double>(m) +
                           std::log(static_cast<double>((col.array() - m).exp().sum()));
      xent_sum += log_z - static_cast<double>(col(yb[static_cast<std::size_t>(j)]));
    }
    hits += count_correct(logits, yb);
  }
  EvalResult r;
  r.loss = xent_sum / static_cast<double>(n) + l2_penalty(model);
  r.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  return r;
}

template <typename T>
RunResult<T> run_training(MLPModel<T> model, const OptimizerConfig& opt,
                          const Dataset<T>& train, const Dataset<T>& val,
                          const RunOptions& options) {
  if (train.size() == 0) throw DataError("run_training: empty training set");
  if (options.batch_size == 0) throw Error("batch_size must be >= 1");
  if (train.dim() != model.input_dim()) {
    throw ShapeError("run_training: data has " + std::to_string(train.dim()) +
                     " features, model expects " + std::to_string(model.input_dim()));
  }
  RunResult<T> result;
  result.initial_hash = model_hash(model);
  Trainer<T> trainer(std::move(model), opt);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (!options.timing) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  auto eval_val = [&] {
    return val.size() > 0 ? evaluate(trainer.model(), val) : EvalResult{};
  };

  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(options.shuffle_seed);

  EvalResult latest_val = options.per_step ? eval_val() : EvalResult{};
  Matrix<T> Xb;
  std::vector<int> yb;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t len = std::min(options.batch_size, n - start);
      Xb.resize(train.dim(), static_cast<Eigen::Index>(len));
      yb.resize(len);
      for (std::size_t j = 0; j < len; ++j) {
        Xb.col(static_cast<Eigen::Index>(j)) =
            train.X.col(static_cast<Eigen::Index>(order[start + j]));
        yb[j] = train.labels[order[start + j]];
      }
      const StepStats s = trainer.train_step(Xb, yb);
      loss_sum += s.loss * static_cast<double>(len);
      correct += s.correct;
      if (options.per_step) {
        result.rows.push_back(MetricsRow{epoch, trainer.steps(), s.loss,
                                         static_cast<double>(s.correct) /
                                             static_cast<double>(len),
                                         latest_val.loss, latest_val.accuracy,
                                         trainer.total_refreshes(),
                                         trainer.total_failures(), elapsed()});
      }
    }
    latest_val = eval_val();
    const MetricsRow summary{epoch,
                             trainer.steps(),
                             loss_sum / static_cast<double>(n),
                             static_cast<double>(correct) / static_cast<double>(n),
                             latest_val.loss,
                             latest_val.accuracy,
                             trainer.total_refreshes(),
                             trainer.total_failures(),
                             elapsed()};
    if (!options.per_step) result.rows.push_back(summary);
    if (options.on_epoch) options.on_epoch(summary);
  }
  result.model = trainer.model();
  return result;
}

Lemma1Result lemma1_step(const Mat& G, const Mat& H, const Vec& c, const Vec& w,
                         double alpha) {
  const auto d = G.rows();
  if (G.cols() != d || H.rows() != d || H.cols() != d || c.size() != d || w.size() != d) {
    throw ShapeError("lemma1_step: inconsistent dimensions");
  }
  Lemma1Result r;
  // Natural-gradient side: solve against G directly.
  const Vec grad_w = H * (w - c);
  r.ngd = w - alpha * G.ldlt().solve(grad_w);

  // Reparameterized side: w = M w', plain GD on w'.
  const Mat M = spd_invsqrt_oracle(G);
  const Vec w_prime = M.partialPivLu().solve(w);
  const Vec grad_prime = M.transpose() * (H * (M * w_prime - c));
  const Vec w_prime_new = w_prime - alpha * grad_prime;
  r.reparam = M * w_prime_new;

  r.discrepancy = (r.ngd - r.reparam).cwiseAbs().maxCoeff();
  return r;
}


double lemma1_equivalence_check(int dim, std::uint64_t seed) {
  if (dim < 1) {
    throw ShapeError("lemma1_equivalence_check: dim must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Mat G = random_spd(rng, dim, 0.5, 4.0);
  const Mat H = random_spd(rng, dim, 0.1, 2.0);
  Vec c(dim), w(dim);
  for (int i = 0; i < dim; ++i) c(i) = normal(rng);
  for (int i = 0; i < dim; ++i) w(i) = normal(rng);
  return lemma1_step(G, H, c, w, 0.1).discrepancy;
}

#define FISHERFLOW_INSTANTIATE(T)                                                       \
  template void sgd_step<T>(Matrix<T>&, const Matrix<T>&, double, double, Matrix<T>&);  \
  template void sgd_step<T>(Vector<T>&, const Vector<T>&, double, double, Vector<T>&);  \
  template class Trainer<T>;                                                            \
  template EvalResult evaluate<T>(const MLPModel<T>&, const Dataset<T>&, std::size_t);  \
  template RunResult<T> run_training<T>(MLPModel<T>, const OptimizerConfig&,            \
                                        const Dataset<T>&, const Dataset<T>&,           \
                                        const RunOptions&);

FISHERFLOW_INSTANTIATE(double)
FISHERFLOW_INSTANTIATE(float)

#undef FISHERFLOW_INSTANTIATE

}  // namespace fisherflow
