#pragma once

// Experiment drivers behind the command-line tool.

#include "fisherflow/config.hpp"
#include "fisherflow/data.hpp"
#include "fisherflow/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

namespace fisherflow {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitBadConfig = 2,
  kExitMissingData = 3,
};

inline constexpr const char* kDataDirEnv = "FISHERFLOW_DATA_DIR";
/// Seed of the shuffled-index split that carves validation out of the MNIST
/// training file.
inline constexpr std::uint64_t kMnistSplitSeed = 12345;

template <typename T>
struct ExperimentData {
  Dataset<T> train;
  Dataset<T> val;
  std::optional<Dataset<T>> test;
};

/// config.data_dir, else $FISHERFLOW_DATA_DIR. Throws DataError when neither is set.
std::filesystem::path resolve_data_dir(const TrainConfig& config);

/// Builds train/val(/test) for the configured dataset. Throws DataError.
template <typename T>
ExperimentData<T> prepare_data(const TrainConfig& config);

struct ExperimentOutcome {
  OptimizerKind optimizer = OptimizerKind::SNGD;
  std::vector<MetricsRow> rows;
  std::uint64_t initial_hash = 0;
  EvalResult final_val;
  std::optional<EvalResult> test;
};

/// Initializes a model from config.seed and trains it with `kind`. Epoch
/// summaries go to `log` when given.
template <typename T>
ExperimentOutcome run_experiment(const TrainConfig& config, OptimizerKind kind,
                                 const ExperimentData<T>& data, std::ostream* log);

/// Loads data per config.precision and runs one experiment.
ExperimentOutcome run_experiment(const TrainConfig& config, OptimizerKind kind,
                                 std::ostream* log);

/// `<out>` minus a trailing ".csv", plus ".<tag>.csv".
std::filesystem::path tagged_output(const std::string& out, std::string_view tag);

int cmd_train(const TrainConfig& config, std::ostream& out, std::ostream& err);
int cmd_compare(const TrainConfig& config, std::ostream& out, std::ostream& err);
int cmd_matsqrt(int dim, int trials, std::uint64_t seed, std::ostream& out,
                std::ostream& err);

struct SelfTestHooks {
  /// Replaces backward() inside the gradient check when set.
  Trainer<double>::BackwardFn backward;
};

int cmd_selftest(std::ostream& out, const SelfTestHooks& hooks = {});

}  // namespace fisherflow
