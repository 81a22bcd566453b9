#pragma once

// Datasets (MNIST IDX files and synthetic Gaussian blobs) and the metrics
// CSV.

#include "fisherflow/linalg.hpp"
#include "fisherflow/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace fisherflow {

enum class Split { Train, Val, Test };

std::string_view to_string(Split split);

template <typename T>
struct Dataset {
  Matrix<T> X;              // d x N, one sample per column
  std::vector<int> labels;  // N entries in [0, num_classes)
  int num_classes = 0;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  Eigen::Index dim() const { return X.rows(); }

  /// Throws DataError if labels and columns disagree or a label is out of range.
  void validate() const;

  /// Columns `indices`, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;

  template <typename U>
  Dataset<U> cast() const {
    return Dataset<U>{X.template cast<U>(), labels, num_classes, split};
  }
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxHeader {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;

  std::size_t payload_size() const;
};

/// Parses an IDX file image: big-endian magic, one big-endian size per
/// dimension, unsigned-byte payload. Returns the header and payload bytes.
std::pair<IdxHeader, std::vector<std::uint8_t>> parse_idx(
    std::span<const std::uint8_t> bytes, std::uint32_t expected_magic);

/// Loads an image/label IDX pair. Pixels are divided by 255 and each image is
/// flattened row-major into one column. `num_classes` = 0 infers max label + 1.
template <typename T>
Dataset<T> load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path, int num_classes = 0);

/// Seeded disjoint split: the last `val_size` entries of a shuffled index
/// order become validation. Both parts keep the original sample order.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> split_train_val(const Dataset<T>& full,
                                                  std::size_t val_size,
                                                  std::uint64_t seed);

/// Gaussian clusters with unit covariance. With d >= num_classes the class
/// means are separation/sqrt(2) * e_c (every pair `separation` apart);
/// otherwise they sit on the first axis at multiples of `separation`.
template <typename T>
Dataset<T> gen_blobs(std::uint64_t seed, std::size_t n_per_class, std::size_t d,
                     int num_classes, double separation);

inline constexpr std::string_view kMetricsHeader =
    "epoch,step,train_loss,train_acc,val_loss,val_acc,fisher_refreshes,"
    "fisher_failures,wall_time_s";

/// Writes the metrics CSV (header plus one line per row, reals at 17
/// significant digits).
void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path);

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

}  // namespace fisherflow
