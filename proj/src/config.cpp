#include "fisherflow/config.hpp"

#include "fisherflow/error.hpp"

#include <toml.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace fisherflow {

void TrainConfig::validate() const {
  if (arch.size() < 2) throw ConfigError("arch", "needs at least two widths");
  for (int w : arch) {
    if (w < 1) throw ConfigError("arch", "widths must be positive");
  }
  if (arch.back() < 2) throw ConfigError("arch", "need at least two output classes");
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr", "must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (!(l2 >= 0.0)) throw ConfigError("l2", "must be >= 0");
  if (!(fisher.eps_rel >= 0.0)) throw ConfigError("fisher.eps_rel", "must be >= 0");
  if (!(fisher.floor_abs > 0.0)) throw ConfigError("fisher.floor_abs", "must be > 0");
  if (fisher.interval < 1) throw ConfigError("fisher.interval", "must be >= 1");
  if (!(fisher.ema >= 0.0 && fisher.ema < 1.0)) throw ConfigError("fisher.ema", "must lie in [0, 1)");
  if (fisher.solver_iters < 1) throw ConfigError("fisher.solver_iters", "must be >= 1");
  if (!(fisher.max_residual > 0.0)) throw ConfigError("fisher.max_residual", "must be > 0");
  if (out.empty()) throw ConfigError("out", "must not be empty");
  if (dataset == DatasetKind::Mnist && arch.front() != 784) {
    throw ConfigError("arch", "MNIST inputs have 784 features");
  }
  if (dataset == DatasetKind::Blobs) {
    if (blobs.n_per_class < 1) throw ConfigError("blobs.n_per_class", "must be >= 1");
    if (!(blobs.separation >= 0.0)) throw ConfigError("blobs.separation", "must be >= 0");
  }
}

FisherConfig TrainConfig::fisher_for(OptimizerKind kind) const {
  FisherConfig f = fisher;
  if (kind == OptimizerKind::SGD) f.frozen = true;
  return f;
}

namespace {

using KeySet = std::set<std::string, std::less<>>;

void reject_unknown(const toml::table& table, const KeySet& allowed, const std::string& prefix) {
  for (const auto& [key, node] : table) {
    if (!allowed.contains(key.str())) {
      throw ConfigError(prefix + std::string(key.str()), "unknown key");
    }
  }
}

template <typename V>
V required_type(const toml::node& node, const std::string& key);

template <>
std::string required_type<std::string>(const toml::node& node, const std::string& key) {
  if (auto v = node.value<std::string>()) return *v;
  throw ConfigError(key, "expected a string");
}

template <>
bool required_type<bool>(const toml::node& node, const std::string& key) {
  if (auto v = node.as_boolean()) return v->get();
  throw ConfigError(key, "expected a boolean");
}

template <>
double required_type<double>(const toml::node& node, const std::string& key) {
  if (auto v = node.as_floating_point()) return v->get();
  if (auto v = node.as_integer()) return static_cast<double>(v->get());
  throw ConfigError(key, "expected a number");
}

template <>
std::int64_t required_type<std::int64_t>(const toml::node& node, const std::string& key) {
  if (auto v = node.as_integer()) return v->get();
  throw ConfigError(key, "expected an integer");
}

std::size_t count(const toml::node& node, const std::string& key) {
  const auto v = required_type<std::int64_t>(node, key);
  if (v < 0) throw ConfigError(key, "must be >= 0");
  return static_cast<std::size_t>(v);
}

int small_int(const toml::node& node, const std::string& key) {
  const auto v = required_type<std::int64_t>(node, key);
  if (v < -(1 << 30) || v > (1 << 30)) throw ConfigError(key, "out of range");
  return static_cast<int>(v);
}

template <typename Fn>
auto parse_enum(const toml::node& node, const std::string& key, Fn&& fn) {
  const std::string text = required_type<std::string>(node, key);
  try {
    return fn(text);
  } catch (const Error& e) {
    throw ConfigError(key, e.what());
  }
}

void read_fisher(const toml::table& t, FisherConfig& f) {
  reject_unknown(t, {"eps_rel", "floor_abs", "interval", "ema", "solver", "solver_iters",
                     "frozen", "max_residual"},
                 "fisher.");
  if (auto n = t.get("eps_rel")) f.eps_rel = required_type<double>(*n, "fisher.eps_rel");
  if (auto n = t.get("floor_abs")) f.floor_abs = required_type<double>(*n, "fisher.floor_abs");
  if (auto n = t.get("interval")) f.interval = small_int(*n, "fisher.interval");
  if (auto n = t.get("ema")) f.ema = required_type<double>(*n, "fisher.ema");
  if (auto n = t.get("solver")) f.solver = parse_enum(*n, "fisher.solver", parse_solver);
  if (auto n = t.get("solver_iters")) f.solver_iters = small_int(*n, "fisher.solver_iters");
  if (auto n = t.get("frozen")) f.frozen = required_type<bool>(*n, "fisher.frozen");
  if (auto n = t.get("max_residual"))
    f.max_residual = required_type<double>(*n, "fisher.max_residual");
}

void read_blobs(const toml::table& t, BlobsConfig& b) {
  reject_unknown(t, {"n_per_class", "val_per_class", "separation"}, "blobs.");
  if (auto n = t.get("n_per_class")) b.n_per_class = count(*n, "blobs.n_per_class");
  if (auto n = t.get("val_per_class")) b.val_per_class = count(*n, "blobs.val_per_class");
  if (auto n = t.get("separation")) b.separation = required_type<double>(*n, "blobs.separation");
}

}  // namespace

TrainConfig parse_config(std::string_view toml_text) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML syntax error: " << e.description() << " at line "
        << e.source().begin.line;
    throw ConfigError("<file>", msg.str());
  }
  reject_unknown(root,
                 {"dataset", "data_dir", "arch", "activation", "epochs", "batch_size", "lr",
                  "momentum", "l2", "optimizer", "fisher", "seed", "precision", "out",
                  "per_step", "timing", "val_size", "train_subset", "blobs"},
                 "");
  TrainConfig cfg;
  if (auto n = root.get("dataset")) {
    const auto v = required_type<std::string>(*n, "dataset");
    if (v == "mnist") {
      cfg.dataset = DatasetKind::Mnist;
    } else if (v == "blobs") {
      cfg.dataset = DatasetKind::Blobs;
    } else {
      throw ConfigError("dataset", "expected 'mnist' or 'blobs', got '" + v + "'");
    }
  }
  if (auto n = root.get("data_dir")) cfg.data_dir = required_type<std::string>(*n, "data_dir");
  if (auto n = root.get("arch")) {
    const auto* arr = n->as_array();
    if (!arr) throw ConfigError("arch", "expected an array of integers");
    cfg.arch.clear();
    for (const auto& el : *arr) cfg.arch.push_back(small_int(el, "arch"));
  }
  if (auto n = root.get("activation"))
    cfg.activation = parse_enum(*n, "activation", parse_activation);
  if (auto n = root.get("epochs")) cfg.epochs = count(*n, "epochs");
  if (auto n = root.get("batch_size")) cfg.batch_size = count(*n, "batch_size");
  if (auto n = root.get("lr")) cfg.lr = required_type<double>(*n, "lr");
  if (auto n = root.get("momentum")) cfg.momentum = required_type<double>(*n, "momentum");
  if (auto n = root.get("l2")) cfg.l2 = required_type<double>(*n, "l2");
  if (auto n = root.get("optimizer"))
    cfg.optimizer = parse_enum(*n, "optimizer", parse_optimizer);
  if (auto n = root.get("seed")) {
    const auto v = required_type<std::int64_t>(*n, "seed");
    if (v < 0) throw ConfigError("seed", "must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(v);
  }
  if (auto n = root.get("precision")) {
    const auto v = required_type<std::string>(*n, "precision");
    if (v == "f64") {
      cfg.precision = Precision::F64;
    } else if (v == "f32") {
      cfg.precision = Precision::F32;
    } else {
      throw ConfigError("precision", "expected 'f64' or 'f32', got '" + v + "'");
    }
  }
  if (auto n = root.get("out")) cfg.out = required_type<std::string>(*n, "out");
  if (auto n = root.get("per_step")) cfg.per_step = required_type<bool>(*n, "per_step");
  if (auto n = root.get("timing")) cfg.timing = required_type<bool>(*n, "timing");
  if (auto n = root.get("val_size")) cfg.val_size = count(*n, "val_size");
  if (auto n = root.get("train_subset")) cfg.train_subset = count(*n, "train_subset");
  if (auto n = root.get("fisher")) {
    const auto* t = n->as_table();
    if (!t) throw ConfigError("fisher", "expected a table");
    read_fisher(*t, cfg.fisher);
  }
  if (auto n = root.get("blobs")) {
    const auto* t = n->as_table();
    if (!t) throw ConfigError("blobs", "expected a table");
    read_blobs(*t, cfg.blobs);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("<file>", "cannot read config file " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace fisherflow
