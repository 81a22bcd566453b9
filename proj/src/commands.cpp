#include "fisherflow/commands.hpp"

#include "fisherflow/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <random>
#include <sstream>
#include <string>

namespace fisherflow {

std::filesystem::path resolve_data_dir(const TrainConfig& config) {
  if (!config.data_dir.empty()) return config.data_dir;
  if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') {
    return env;
  }
  throw DataError(std::string("no data_dir in config and ") + kDataDirEnv + " is not set");
}

template <typename T>
ExperimentData<T> prepare_data(const TrainConfig& config) {
  ExperimentData<T> data;
  const int classes = config.arch.back();
  if (config.dataset == DatasetKind::Blobs) {
    const auto dim = static_cast<std::size_t>(config.arch.front());
    data.train = gen_blobs<T>(config.seed, config.blobs.n_per_class, dim, classes,
                              config.blobs.separation);
    if (config.blobs.val_per_class > 0) {
      data.val = gen_blobs<T>(config.seed + 1, config.blobs.val_per_class, dim, classes,
                              config.blobs.separation);
      data.val.split = Split::Val;
    } else {
      data.val.X.resize(static_cast<Eigen::Index>(dim), 0);
      data.val.num_classes = classes;
      data.val.split = Split::Val;
    }
  } else {
    const auto dir = resolve_data_dir(config);
    auto require = [](const std::filesystem::path& p) {
      if (!std::filesystem::exists(p)) throw DataError("missing data file " + p.string());
      return p;
    };
    const Dataset<T> full = load_idx<T>(require(dir / "train-images-idx3-ubyte"),
                                        require(dir / "train-labels-idx1-ubyte"), classes);
    auto [train, val] = split_train_val(full, config.val_size, kMnistSplitSeed);
    data.train = std::move(train);
    data.val = std::move(val);
    Dataset<T> test = load_idx<T>(require(dir / "t10k-images-idx3-ubyte"),
                                  require(dir / "t10k-labels-idx1-ubyte"), classes);
    test.split = Split::Test;
    data.test = std::move(test);
  }
  if (config.train_subset > 0 && config.train_subset < data.train.size()) {
    std::vector<std::size_t> head(config.train_subset);
    for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
    data.train = data.train.subset(head);
  }
  data.train.validate();
  data.val.validate();
  if (data.train.dim() != config.arch.front()) {
    throw ConfigError("arch", "input width " + std::to_string(config.arch.front()) +
                                  " does not match data dimension " +
                                  std::to_string(data.train.dim()));
  }
  return data;
}

namespace {

void print_epoch(std::ostream& log, std::string_view tag, const MetricsRow& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "[%s] epoch %3zu  step %7zu  train_loss %.5f  train_acc %.4f  val_loss %.5f"
                "  val_acc %.4f  refreshes %zu  failures %zu",
                std::string(tag).c_str(), r.epoch, r.step, r.train_loss, r.train_acc,
                r.val_loss, r.val_acc, r.fisher_refreshes, r.fisher_failures);
  log << buf << '\n' << std::flush;
}

}  // namespace

template <typename T>
ExperimentOutcome run_experiment(const TrainConfig& config, OptimizerKind kind,
                                 const ExperimentData<T>& data, std::ostream* log) {
  config.validate();
  MLPModel<T> model = make_mlp<T>(config.arch, config.activation, config.l2,
                                  config.fisher_for(kind), config.seed);
  OptimizerConfig opt = config.optimizer_config();
  opt.kind = kind;
  RunOptions ro;
  ro.epochs = config.epochs;
  ro.batch_size = config.batch_size;
  ro.shuffle_seed = config.seed ^ 0x9E3779B97F4A7C15ull;
  ro.per_step = config.per_step;
  ro.timing = config.timing;
  if (log != nullptr) {
    ro.on_epoch = [log, kind](const MetricsRow& r) { print_epoch(*log, to_string(kind), r); };
  }
  RunResult<T> run = run_training(std::move(model), opt, data.train, data.val, ro);
  ExperimentOutcome outcome;
  outcome.optimizer = kind;
  outcome.rows = std::move(run.rows);
  outcome.initial_hash = run.initial_hash;
  if (data.val.size() > 0) outcome.final_val = evaluate(run.model, data.val);
  if (data.test) outcome.test = evaluate(run.model, *data.test);
  return outcome;
}

ExperimentOutcome run_experiment(const TrainConfig& config, OptimizerKind kind,
                                 std::ostream* log) {
  if (config.precision == Precision::F32) {
    return run_experiment<float>(config, kind, prepare_data<float>(config), log);
  }
  return run_experiment<double>(config, kind, prepare_data<double>(config), log);
}

std::filesystem::path tagged_output(const std::string& out, std::string_view tag) {
  std::string base = out;
  if (base.size() >= 4 && base.compare(base.size() - 4, 4, ".csv") == 0) {
    base.resize(base.size() - 4);
  }
  return base + "." + std::string(tag) + ".csv";
}

namespace {

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadConfig;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

void print_hash(std::ostream& out, std::string_view tag, std::uint64_t h) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  out << "[" << tag << "] initial weights hash " << buf << '\n';
}

void print_final(std::ostream& out, std::string_view tag, const ExperimentOutcome& o) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "[%s] final val_acc %.4f  val_loss %.5f",
                std::string(tag).c_str(), o.final_val.accuracy, o.final_val.loss);
  out << buf;
  if (o.test) {
    std::snprintf(buf, sizeof buf, "  test_acc %.4f  test_loss %.5f", o.test->accuracy,
                  o.test->loss);
    out << buf;
  }
  out << '\n';
}

}  // namespace

int cmd_train(const TrainConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentOutcome o = run_experiment(config, config.optimizer, &out);
    write_metrics(o.rows, config.out);
    print_hash(out, to_string(config.optimizer), o.initial_hash);
    print_final(out, to_string(config.optimizer), o);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "metrics written to " << config.out << " (" << secs << " s)\n";
    return static_cast<int>(kExitOk);
  });
}

int cmd_compare(const TrainConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    auto run = [&config](OptimizerKind kind) {
      std::ostringstream log;
      ExperimentOutcome o;
      if (config.precision == Precision::F32) {
        o = run_experiment<float>(config, kind, prepare_data<float>(config), &log);
      } else {
        o = run_experiment<double>(config, kind, prepare_data<double>(config), &log);
      }
      return std::pair{std::move(o), log.str()};
    };
    // Independent models and data copies; nothing mutable is shared.
    auto sgd_future = std::async(std::launch::async, run, OptimizerKind::SGD);
    auto [sngd, sngd_log] = run(OptimizerKind::SNGD);
    auto [sgd, sgd_log] = sgd_future.get();

    out << sgd_log << sngd_log;
    print_hash(out, "sgd", sgd.initial_hash);
    print_hash(out, "sngd", sngd.initial_hash);
    if (sgd.initial_hash != sngd.initial_hash) {
      err << "error: runs did not start from identical weights\n";
      return static_cast<int>(kExitFailure);
    }
    write_metrics(sgd.rows, tagged_output(config.out, "sgd"));
    write_metrics(sngd.rows, tagged_output(config.out, "sngd"));

    out << "epoch  sgd_val_acc  sngd_val_acc  delta(sngd-sgd)\n";
    for (std::size_t i = 0; i < std::min(sgd.rows.size(), sngd.rows.size()); ++i) {
      const auto& a = sgd.rows[i];
      const auto& b = sngd.rows[i];
      char buf[128];
      std::snprintf(buf, sizeof buf, "%5zu  %11.4f  %12.4f  %+15.4f", a.epoch, a.val_acc,
                    b.val_acc, b.val_acc - a.val_acc);
      out << buf << '\n';
    }
    print_final(out, "sgd", sgd);
    print_final(out, "sngd", sngd);
    out << "metrics written to " << tagged_output(config.out, "sgd").string() << " and "
        << tagged_output(config.out, "sngd").string() << '\n';
    return static_cast<int>(kExitOk);
  });
}

int cmd_matsqrt(int dim, int trials, std::uint64_t seed, std::ostream& out,
                std::ostream& err) {
  return guarded(err, [&] {
    if (dim < 1) throw Error("matsqrt: dim must be >= 1");
    if (trials < 1) throw Error("matsqrt: trials must be >= 1");
    using clock = std::chrono::steady_clock;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> log_cond(3.0, 4.0);
    double t_ns = 0, t_db = 0, t_or = 0;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%5s %6s %10s  %-14s %5s %12s %12s %10s", "trial", "dim",
                  "cond", "method", "iters", "residual", "rel_err", "time_ms");
    out << buf << '\n';
    for (int t = 0; t < trials; ++t) {
      const double cond = std::pow(10.0, log_cond(rng));
      const Mat A = random_spd(rng, dim, 1.0, cond);

      auto t0 = clock::now();
      const Mat oracle = spd_invsqrt_oracle(A);
      auto t1 = clock::now();
      const auto ns = ns_invsqrt(A, 20);
      auto t2 = clock::now();
      const auto db = db_sqrt(A, 50, 1e-10);
      auto t3 = clock::now();

      const double ms_or = std::chrono::duration<double, std::milli>(t1 - t0).count();
      const double ms_ns = std::chrono::duration<double, std::milli>(t2 - t1).count();
      const double ms_db = std::chrono::duration<double, std::milli>(t3 - t2).count();
      t_or += ms_or;
      t_ns += ms_ns;
      t_db += ms_db;
      const double on = oracle.norm();
      auto line = [&](const char* method, int iters, double residual, double rel, double ms) {
        std::snprintf(buf, sizeof buf, "%5d %6d %10.1f  %-14s %5d %12.3e %12.3e %10.3f", t,
                      dim, cond, method, iters, residual, rel, ms);
        out << buf << '\n';
      };
      line("newton_schulz", ns.report.iterations_used, ns.report.residual,
           (ns.inv_sqrt - oracle).norm() / on, ms_ns);
      line("denman_beavers", db.report.iterations_used, db.report.residual,
           (db.inv_sqrt - oracle).norm() / on, ms_db);
      line("oracle", 0, invsqrt_residual(A, oracle), 0.0, ms_or);
    }
    std::snprintf(buf, sizeof buf,
                  "mean time (ms): newton_schulz %.3f  denman_beavers %.3f  oracle %.3f\n"
                  "oracle/newton_schulz time ratio %.2f  oracle/denman_beavers %.2f",
                  t_ns / trials, t_db / trials, t_or / trials, t_or / std::max(t_ns, 1e-12),
                  t_or / std::max(t_db, 1e-12));
    out << buf << '\n';
    return static_cast<int>(kExitOk);
  });
}

namespace {

struct CheckLine {
  std::ostream& out;
  bool all_ok = true;

  void report(bool ok, std::string_view name, const std::string& detail) {
    all_ok = all_ok && ok;
    out << (ok ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
  }
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double model_loss(const MLPModel<double>& m, const Mat& X, std::span<const int> y) {
  return softmax_xent_l2(forward(m, X).logits(), y, m).loss;
}

// Central differences of the full loss against every W and b entry.
double gradient_max_rel_error(const MLPModel<double>& model, const Mat& X,
                              std::span<const int> y,
                              const Trainer<double>::BackwardFn& custom) {
  constexpr double h = 1e-5;
  const ForwardTrace<double> trace = forward(model, X);
  const LossResult<double> loss = softmax_xent_l2(trace.logits(), y, model);
  const Gradients<double> g =
      custom ? custom(model, trace, loss.dlogits) : backward(model, trace, loss.dlogits);
  double worst = 0.0;
  MLPModel<double> probe = model;
  auto rel = [](double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4});
  };
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    auto& W = probe.layers[k].W;
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index j = 0; j < W.cols(); ++j) {
        const double w0 = W(i, j);
        W(i, j) = w0 + h;
        const double up = model_loss(probe, X, y);
        W(i, j) = w0 - h;
        const double dn = model_loss(probe, X, y);
        W(i, j) = w0;
        worst = std::max(worst, rel(g[k].dW(i, j), (up - dn) / (2 * h)));
      }
    }
    auto& b = probe.layers[k].b;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double b0 = b(i);
      b(i) = b0 + h;
      const double up = model_loss(probe, X, y);
      b(i) = b0 - h;
      const double dn = model_loss(probe, X, y);
      b(i) = b0;
      worst = std::max(worst, rel(g[k].db(i), (up - dn) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace

int cmd_selftest(std::ostream& out, const SelfTestHooks& hooks) {
  CheckLine check{out};
  std::mt19937_64 rng(2024);
  try {
    // Gradients, with non-identity whitening in every layer.
    {
      double worst = 0.0;
      std::uniform_int_distribution<int> width(2, 12);
      std::normal_distribution<double> normal(0.0, 1.0);
      for (int trial = 0; trial < 8; ++trial) {
        const int layers = 1 + trial % 3;
        std::vector<int> widths{width(rng)};
        for (int l = 0; l < layers; ++l) widths.push_back(width(rng));
        MLPModel<double> m =
            make_mlp<double>(widths, ActivationKind::Sigmoid, 1e-3, FisherConfig{}, rng());
        for (auto& L : m.layers) {
          L.b = Vec::NullaryExpr(L.b.size(), [&] { return 0.1 * normal(rng); });
          L.fisher.set_matrix(random_spd(rng, L.d_in(), 0.3, 3.0));
        }
        const int B = 5;
        Mat X(widths.front(), B);
        for (Eigen::Index j = 0; j < X.cols(); ++j)
          for (Eigen::Index i = 0; i < X.rows(); ++i) X(i, j) = normal(rng);
        std::vector<int> y(B);
        for (auto& v : y) v = static_cast<int>(rng() % static_cast<unsigned>(widths.back()));
        worst = std::max(worst, gradient_max_rel_error(m, X, y, hooks.backward));
      }
      check.report(worst < 1e-6, "gradient-check", "max relative error " + sci(worst));
    }
    // GD on the reparameterized weights equals the NGD step.
    {
      double worst = 0.0;
      for (int dim : {1, 2, 4, 8, 16, 32}) {
        for (std::uint64_t s = 0; s < 10; ++s) {
          worst = std::max(worst, lemma1_equivalence_check(dim, 1000 * dim + s));
        }
      }
      check.report(worst < 1e-10, "reparam-equivalence", "max discrepancy " + sci(worst));
    }
    // Inverse square roots against the Jacobi oracle.
    {
      double worst_ns = 0.0, worst_db = 0.0;
      std::uniform_int_distribution<int> dim(1, 32);
      std::uniform_real_distribution<double> log_cond(0.0, 4.0);
      for (int t = 0; t < 10; ++t) {
        const Mat A = random_spd(rng, dim(rng), 1.0, std::pow(10.0, log_cond(rng)));
        const Mat ref = spd_invsqrt_oracle(A);
        worst_ns = std::max(worst_ns, (ns_invsqrt(A, 20).inv_sqrt - ref).norm() / ref.norm());
        worst_db = std::max(worst_db, (db_sqrt(A, 50, 1e-10).inv_sqrt - ref).norm() / ref.norm());
      }
      check.report(worst_ns < 1e-6 && worst_db < 1e-6, "spd-solvers",
                   "newton_schulz " + sci(worst_ns) + ", denman_beavers " + sci(worst_db));
    }
    // Frozen identity whitening reproduces plain SGD exactly.
    {
      const Dataset<double> data = gen_blobs<double>(7, 40, 4, 3, 4.0);
      const std::vector<int> widths{4, 8, 3};
      FisherConfig frozen;
      frozen.frozen = true;
      Trainer<double> sgd(make_mlp<double>(widths, ActivationKind::ReLU, 1e-3, frozen, 11),
                          {OptimizerKind::SGD, 0.1, 0.0});
      Trainer<double> sngd(make_mlp<double>(widths, ActivationKind::ReLU, 1e-3, frozen, 11),
                           {OptimizerKind::SNGD, 0.1, 0.0});
      bool same = true;
      for (std::size_t s = 0; s < 30; ++s) {
        const std::size_t start = (s * 8) % (data.size() - 8);
        const Mat Xb = data.X.middleCols(static_cast<Eigen::Index>(start), 8);
        const std::span<const int> yb(data.labels.data() + start, 8);
        same = same && sgd.train_step(Xb, yb).loss == sngd.train_step(Xb, yb).loss;
      }
      same = same && model_hash(sgd.model()) == model_hash(sngd.model());
      check.report(same, "identity-reduction",
                   same ? "30 steps bitwise identical" : "trajectories differ");
    }
  } catch (const std::exception& e) {
    check.report(false, "selftest", std::string("exception: ") + e.what());
  }
  out << (check.all_ok ? "selftest passed\n" : "selftest FAILED\n");
  return check.all_ok ? kExitOk : kExitFailure;
}

template ExperimentData<double> prepare_data<double>(const TrainConfig&);
template ExperimentData<float> prepare_data<float>(const TrainConfig&);
template ExperimentOutcome run_experiment<double>(const TrainConfig&, OptimizerKind,
                                                  const ExperimentData<double>&, std::ostream*);
template ExperimentOutcome run_experiment<float>(const TrainConfig&, OptimizerKind,
                                                 const ExperimentData<float>&, std::ostream*);

}  // namespace fisherflow
