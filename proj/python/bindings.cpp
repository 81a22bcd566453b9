// Python bindings over the double-precision API.

#include "fisherflow/commands.hpp"
#include "fisherflow/config.hpp"
#include "fisherflow/error.hpp"
#include "fisherflow/fisher.hpp"
#include "fisherflow/linalg.hpp"
#include "fisherflow/network.hpp"
#include "fisherflow/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <vector>

namespace py = pybind11;
using namespace fisherflow;

namespace {

std::vector<int> as_labels(const std::vector<int>& labels, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(labels.size()) != cols)
    throw ShapeError("labels must have one entry per column of X");
  return labels;
}

py::dict report_dict(const SpdSolveReport& r) {
  py::dict d;
  d["iterations"] = r.iterations_used;
  d["residual"] = r.residual;
  d["converged"] = r.converged;
  return d;
}

py::dict row_dict(const MetricsRow& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["step"] = r.step;
  d["train_loss"] = r.train_loss;
  d["train_acc"] = r.train_acc;
  d["val_loss"] = r.val_loss;
  d["val_acc"] = r.val_acc;
  d["fisher_refreshes"] = r.fisher_refreshes;
  d["fisher_failures"] = r.fisher_failures;
  d["wall_time_s"] = r.wall_time_s;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "MLP training with per-layer Fisher whitening";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.def("gram_mean", &gram_mean<double>, py::arg("X"),
        "X X^T / N for a d x N matrix.");
  m.def("damp_spd", &damp_spd<double>, py::arg("G"), py::arg("eps_rel"),
        py::arg("floor_abs"));
  m.def(
      "ns_invsqrt",
      [](const Mat& A, int iters) {
        auto r = ns_invsqrt<double>(A, iters);
        return py::make_tuple(r.inv_sqrt, report_dict(r.report));
      },
      py::arg("A"), py::arg("iters") = 20,
      "Newton-Schulz inverse square root. Returns (Z, report).");
  m.def(
      "db_sqrt",
      [](const Mat& A, int max_iters, double tol) {
        auto r = db_sqrt<double>(A, max_iters, tol);
        return py::make_tuple(r.sqrt, r.inv_sqrt, report_dict(r.report));
      },
      py::arg("A"), py::arg("max_iters") = 50, py::arg("tol") = 1e-10,
      "Denman-Beavers iteration. Returns (sqrt, inv_sqrt, report).");
  m.def("spd_invsqrt_oracle", &spd_invsqrt_oracle<double>, py::arg("A"));
  m.def("spd_sqrt_oracle", &spd_sqrt_oracle<double>, py::arg("A"));
  m.def("invsqrt_residual", &invsqrt_residual<double>, py::arg("A"), py::arg("Z"));
  m.def(
      "local_fisher",
      [](const Mat& X, const Mat& V, double eps_rel, double floor_abs) {
        auto est = local_fisher<double>(X, V, eps_rel, floor_abs);
        return est.g_damped;
      },
      py::arg("X"), py::arg("V"), py::arg("eps_rel"), py::arg("floor_abs"),
      "Damped E[V^2] E[x x^T] for one layer.");
  m.def("reparam_discrepancy", &lemma1_equivalence_check, py::arg("dim"),
        py::arg("seed"),
        "Max gap between a natural-gradient step and a GD step in whitened coordinates.");

  py::class_<FisherConfig>(m, "FisherConfig")
      .def(py::init<>())
      .def_readwrite("eps_rel", &FisherConfig::eps_rel)
      .def_readwrite("floor_abs", &FisherConfig::floor_abs)
      .def_readwrite("interval", &FisherConfig::interval)
      .def_readwrite("ema", &FisherConfig::ema)
      .def_property(
          "solver", [](const FisherConfig& c) { return std::string(to_string(c.solver)); },
          [](FisherConfig& c, const std::string& s) { c.solver = parse_solver(s); })
      .def_readwrite("solver_iters", &FisherConfig::solver_iters)
      .def_readwrite("frozen", &FisherConfig::frozen)
      .def_readwrite("max_residual", &FisherConfig::max_residual);

  py::class_<MLPModel<double>>(m, "Model")
      .def(py::init([](const std::vector<int>& widths, const std::string& activation,
                       double l2, const FisherConfig& fisher, std::uint64_t seed) {
             return make_mlp<double>(widths, parse_activation(activation), l2, fisher, seed);
           }),
           py::arg("widths"), py::arg("activation") = "relu", py::arg("l2") = 0.0,
           py::arg("fisher") = FisherConfig{}, py::arg("seed") = 1)
      .def_property_readonly("num_layers",
                             [](const MLPModel<double>& mdl) { return mdl.layers.size(); })
      .def("weight", [](const MLPModel<double>& mdl, std::size_t i) { return mdl.layers.at(i).W; })
      .def("bias", [](const MLPModel<double>& mdl, std::size_t i) { return mdl.layers.at(i).b; })
      .def("whitener",
           [](const MLPModel<double>& mdl, std::size_t i) { return mdl.layers.at(i).fisher.S(); })
      .def("forward",
           [](const MLPModel<double>& mdl, const Mat& X) { return forward(mdl, X).probs; },
           py::arg("X"), "Class probabilities, one column per sample.")
      .def(
          "loss_and_grads",
          [](const MLPModel<double>& mdl, const Mat& X, const std::vector<int>& labels) {
            const auto lab = as_labels(labels, X.cols());
            const auto trace = forward(mdl, X);
            const auto loss = softmax_xent_l2<double>(trace.logits(), lab, mdl);
            const auto grads = backward(mdl, trace, loss.dlogits);
            py::list out;
            for (const auto& g : grads) out.append(py::make_tuple(g.dW, g.db));
            return py::make_tuple(loss.loss, out);
          },
          py::arg("X"), py::arg("labels"),
          "Returns (loss, [(dW, db) per layer]).")
      .def("hash", &model_hash<double>);

  py::class_<Trainer<double>>(m, "Trainer")
      .def(py::init([](const MLPModel<double>& model, const std::string& optimizer, double lr,
                       double momentum) {
             return Trainer<double>(model, OptimizerConfig{parse_optimizer(optimizer), lr, momentum});
           }),
           py::arg("model"), py::arg("optimizer") = "sngd", py::arg("lr") = 0.1,
           py::arg("momentum") = 0.0)
      .def(
          "step",
          [](Trainer<double>& t, const Mat& X, const std::vector<int>& labels) {
            const auto s = t.train_step(X, as_labels(labels, X.cols()));
            py::dict d;
            d["loss"] = s.loss;
            d["correct"] = s.correct;
            d["batch"] = s.batch;
            d["refreshed"] = s.refreshed;
            d["failed"] = s.failed;
            return d;
          },
          py::arg("X"), py::arg("labels"))
      .def_property_readonly("model", &Trainer<double>::model, py::return_value_policy::copy)
      .def_property_readonly("steps", &Trainer<double>::steps)
      .def_property_readonly("refreshes", &Trainer<double>::total_refreshes)
      .def_property_readonly("failures", &Trainer<double>::total_failures);

  m.def(
      "run_experiment",
      [](const std::filesystem::path& config_path, const std::string& optimizer,
         py::dict overrides) {
        TrainConfig cfg = load_config(config_path);
        for (auto [k, v] : overrides) {
          const auto key = py::cast<std::string>(k);
          if (key == "epochs") cfg.epochs = py::cast<std::size_t>(v);
          else if (key == "seed") cfg.seed = py::cast<std::uint64_t>(v);
          else if (key == "lr") cfg.lr = py::cast<double>(v);
          else if (key == "train_subset") cfg.train_subset = py::cast<std::size_t>(v);
          else if (key == "data_dir") cfg.data_dir = py::cast<std::string>(v);
          else throw ConfigError(key, "not overridable from Python");
        }
        cfg.validate();
        ExperimentOutcome res;
        {
          py::gil_scoped_release nogil;
          res = run_experiment(cfg, parse_optimizer(optimizer), nullptr);
        }
        py::dict d;
        py::list rows;
        for (const auto& r : res.rows) rows.append(row_dict(r));
        d["rows"] = rows;
        d["initial_hash"] = res.initial_hash;
        d["val_acc"] = res.final_val.accuracy;
        d["val_loss"] = res.final_val.loss;
        if (res.test) {
          d["test_acc"] = res.test->accuracy;
          d["test_loss"] = res.test->loss;
        }
        return d;
      },
      py::arg("config"), py::arg("optimizer") = "sngd", py::arg("overrides") = py::dict(),
      "Runs one training run from a TOML config and returns its metrics.");
}
