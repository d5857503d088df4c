#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "detrame/net.hpp"

namespace detrame::data {

struct Dataset {
  net::Tensor features;  // rank-2 (features x N) or rank-4 (N, C, H, W)
  std::vector<int> labels;
  int class_count = 0;
  std::string split;       // "train" or "test"
  std::string provenance;  // where the data came from
};

class IdxError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, Truncated, DimOverflow, LabelRange, CountMismatch, Io };

  IdxError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Parses a pair of IDX containers (big-endian 32-bit magic, then big-endian
/// 32-bit dims): magic 2051 with dims (N, rows, cols) for images, 2049 with
/// dim (N) for labels. Pixels are scaled to [0, 1]. Images become a rank-2
/// tensor of rows*cols features per column.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int class_count = 10);

/// Two interleaved half-circles: class 0 at (cos t, sin t) and class 1 at
/// (1 - cos t, 0.5 - sin t) with t uniform on [0, pi], plus isotropic Gaussian
/// noise of the given sigma. Deterministic per seed; class 0 comes first.
Dataset gen_two_moons(int n_per_class, double noise, std::uint64_t seed);

/// Per-feature standardization fitted on a training split. Zero-variance
/// features keep a unit scale.
struct Standardizer {
  Vector mean;
  Vector stddev;

  static Standardizer fit(const net::Tensor& features);
  void apply(net::Tensor& features) const;
};

}  // namespace detrame::data
