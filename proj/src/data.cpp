#include "fisherflow/data.hpp"

#include "fisherflow/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

namespace fisherflow {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

template <typename T>
void Dataset<T>::validate() const {
  if (static_cast<std::size_t>(X.cols()) != labels.size()) {
    throw DataError("dataset has " + std::to_string(X.cols()) + " samples but " +
                    std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw DataError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

template <typename T>
Dataset<T> Dataset<T>::subset(std::span<const std::size_t> indices) const {
  Dataset<T> out;
  out.num_classes = num_classes;
  out.split = split;
  out.X.resize(X.rows(), static_cast<Eigen::Index>(indices.size()));
  out.labels.reserve(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    out.X.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(indices[j]));
    out.labels.push_back(labels[indices[j]]);
  }
  return out;
}

std::size_t IdxHeader::payload_size() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

}  // namespace

std::pair<IdxHeader, std::vector<std::uint8_t>> parse_idx(
    std::span<const std::uint8_t> bytes, std::uint32_t expected_magic) {
  if (bytes.size() < 4) {
    throw DataError("truncated IDX payload: missing magic");
  }
  IdxHeader header;
  header.magic = read_be32(bytes.data());
  std::size_t ndims = 0;
  if (header.magic == kIdxImagesMagic) {
    ndims = 3;
  } else if (header.magic == kIdxLabelsMagic) {
    ndims = 1;
  }
  if (ndims == 0 || header.magic != expected_magic) {
    throw DataError("unrecognized IDX magic " + hex32(header.magic) + " (expected " +
                    hex32(expected_magic) + ")");
  }
  const std::size_t header_bytes = 4 + 4 * ndims;
  if (bytes.size() < header_bytes) {
    throw DataError("truncated IDX payload: incomplete header");
  }
  for (std::size_t i = 0; i < ndims; ++i) {
    header.dims.push_back(read_be32(bytes.data() + 4 + 4 * i));
  }
  const std::size_t need = header.payload_size();
  const std::size_t have = bytes.size() - header_bytes;
  if (have < need) {
    throw DataError("truncated IDX payload: header promises " + std::to_string(need) +
                    " bytes, file has " + std::to_string(have));
  }
  if (have > need) {
    throw DataError("IDX file has " + std::to_string(have - need) +
                    " trailing bytes after the payload");
  }
  return {std::move(header),
          std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(header_bytes),
                                    bytes.end())};
}

template <typename T>
Dataset<T> load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path, int num_classes) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);
  auto [ih, pixels] = parse_idx(image_bytes, kIdxImagesMagic);
  auto [lh, raw_labels] = parse_idx(label_bytes, kIdxLabelsMagic);
  const std::size_t n = ih.dims[0];
  if (lh.dims[0] != n) {
    throw DataError("image count " + std::to_string(n) + " != label count " +
                    std::to_string(lh.dims[0]));
  }
  const std::size_t d = std::size_t{ih.dims[1]} * ih.dims[2];
  Dataset<T> ds;
  ds.X.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  // Column-major storage: sample j occupies data()[j*d, (j+1)*d), which is
  // exactly the row-major pixel order of image j in the file.
  T* dst = ds.X.data();
  for (std::size_t i = 0; i < n * d; ++i) {
    dst[i] = static_cast<T>(pixels[i]) / T(255);
  }
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  const int max_label =
      ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end());
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  ds.validate();
  return ds;
}

template <typename T>
std::pair<Dataset<T>, Dataset<T>> split_train_val(const Dataset<T>& full,
                                                  std::size_t val_size,
                                                  std::uint64_t seed) {
  const std::size_t n = full.size();
  if (val_size >= n) {
    throw DataError("validation size " + std::to_string(val_size) +
                    " must be smaller than the dataset (" + std::to_string(n) + ")");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(val_size));
  std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(val_size), order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  Dataset<T> train = full.subset(train_idx);
  Dataset<T> val = full.subset(val_idx);
  train.split = Split::Train;
  val.split = Split::Val;
  return {std::move(train), std::move(val)};
}

template <typename T>
Dataset<T> gen_blobs(std::uint64_t seed, std::size_t n_per_class, std::size_t d,
                     int num_classes, double separation) {
  if (n_per_class < 1 || d < 1 || num_classes < 1) {
    throw DataError("gen_blobs: counts must be positive");
  }
  const auto C = static_cast<std::size_t>(num_classes);
  Matrix<double> means = Matrix<double>::Zero(static_cast<Eigen::Index>(d),
                                              static_cast<Eigen::Index>(C));
  for (std::size_t c = 0; c < C; ++c) {
    if (d >= C) {
      means(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)) =
          separation / std::sqrt(2.0);
    } else {
      means(0, static_cast<Eigen::Index>(c)) = separation * static_cast<double>(c);
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset<T> ds;
  ds.num_classes = num_classes;
  ds.X.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n_per_class * C));
  ds.labels.reserve(n_per_class * C);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t c = 0; c < C; ++c, ++col) {
      for (std::size_t r = 0; r < d; ++r) {
        ds.X(static_cast<Eigen::Index>(r), col) = static_cast<T>(
            means(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) + noise(rng));
      }
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

namespace {

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename V>
V parse_field(std::string_view text, std::size_t line, const char* name) {
  V value{};
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw DataError("metrics CSV line " + std::to_string(line) + ": bad " + name +
                    " '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write metrics to " + path.string());
  }
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.step << ',' << format_real(r.train_loss) << ','
        << format_real(r.train_acc) << ',' << format_real(r.val_loss) << ','
        << format_real(r.val_acc) << ',' << r.fisher_refreshes << ','
        << r.fisher_failures << ',' << format_real(r.wall_time_s) << '\n';
  }
  out.flush();
  if (!out) {
    throw DataError("failed writing metrics to " + path.string());
  }
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw DataError("metrics CSV " + path.string() + " has a missing or wrong header");
  }
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (f.size() != 9) {
      throw DataError("metrics CSV line " + std::to_string(lineno) + ": expected 9 fields");
    }
    MetricsRow r;
    r.epoch = parse_field<std::size_t>(f[0], lineno, "epoch");
    r.step = parse_field<std::size_t>(f[1], lineno, "step");
    r.train_loss = parse_field<double>(f[2], lineno, "train_loss");
    r.train_acc = parse_field<double>(f[3], lineno, "train_acc");
    r.val_loss = parse_field<double>(f[4], lineno, "val_loss");
    r.val_acc = parse_field<double>(f[5], lineno, "val_acc");
    r.fisher_refreshes = parse_field<std::size_t>(f[6], lineno, "fisher_refreshes");
    r.fisher_failures = parse_field<std::size_t>(f[7], lineno, "fisher_failures");
    r.wall_time_s = parse_field<double>(f[8], lineno, "wall_time_s");
    rows.push_back(r);
  }
  return rows;
}

#define FISHERFLOW_INSTANTIATE(T)                                                       \
  template struct Dataset<T>;                                                           \
  template Dataset<T> load_idx<T>(const std::filesystem::path&,                         \
                                  const std::filesystem::path&, int);                   \
  template std::pair<Dataset<T>, Dataset<T>> split_train_val<T>(const Dataset<T>&,      \
                                                                std::size_t,            \
                                                                std::uint64_t);         \
  template Dataset<T> gen_blobs<T>(std::uint64_t, std::size_t, std::size_t, int, double);

FISHERFLOW_INSTANTIATE(double)
FISHERFLOW_INSTANTIATE(float)

#undef FISHERFLOW_INSTANTIATE

}  // namespace fisherflow
