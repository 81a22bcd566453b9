#pragma once

#include <cstddef>

namespace fisherflow {

/// One row of a learning-curve log.
struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  std::size_t fisher_refreshes = 0;
  std::size_t fisher_failures = 0;
  double wall_time_s = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

}  // namespace fisherflow
