#pragma once

#include "fisherflow/activation.hpp"
#include "fisherflow/fisher.hpp"
#include "fisherflow/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fisherflow {

enum class DatasetKind { Mnist, Blobs };
enum class Precision { F64, F32 };

struct BlobsConfig {
  std::size_t n_per_class = 500;
  std::size_t val_per_class = 100;
  double separation = 10.0;
};

/// Everything one experiment needs. Defaults reproduce the MNIST setup:
/// 784-80-80-80-10 ReLU, batch 50, L2 1e-3.
struct TrainConfig {
  DatasetKind dataset = DatasetKind::Mnist;
  std::string data_dir;
  std::vector<int> arch{784, 80, 80, 80, 10};
  ActivationKind activation = ActivationKind::ReLU;
  std::size_t epochs = 100;
  std::size_t batch_size = 50;
  double lr = 0.1;
  double momentum = 0.0;
  double l2 = 1e-3;
  OptimizerKind optimizer = OptimizerKind::SNGD;
  FisherConfig fisher;
  std::uint64_t seed = 1;
  Precision precision = Precision::F64;
  std::string out = "metrics.csv";
  bool per_step = false;
  bool timing = false;
  std::size_t val_size = 10000;  // carved from the MNIST training file
  std::size_t train_subset = 0;  // 0 keeps the whole training split
  BlobsConfig blobs;

  /// Throws ConfigError naming the first bad key.
  void validate() const;

  OptimizerConfig optimizer_config() const { return {optimizer, lr, momentum}; }
  /// Fisher settings for the given optimizer: SGD gets frozen identities.
  FisherConfig fisher_for(OptimizerKind kind) const;
};

/// Parses TOML text. Unknown keys, wrong types and out-of-range values raise
/// ConfigError.
TrainConfig parse_config(std::string_view toml_text);
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace fisherflow
