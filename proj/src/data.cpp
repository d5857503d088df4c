#include "detrame/data.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace detrame::data {

namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;
constexpr std::uint64_t kMaxElements = 1ull << 31;  // dim-overflow guard

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::Io, "idx: cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset) {
  return (static_cast<std::uint32_t>(buf[offset]) << 24) |
         (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[offset + 2]) << 8) |
         static_cast<std::uint32_t>(buf[offset + 3]);
}

struct IdxHeader {
  std::vector<std::uint64_t> dims;
  std::size_t payload_offset;
};

IdxHeader parse_header(const std::vector<unsigned char>& buf, std::uint32_t expected_magic,
                       std::size_t ndims, const std::string& path) {
  if (buf.size() < 4) throw IdxError(IdxError::Kind::Truncated, "idx: no magic in " + path);
  const std::uint32_t magic = read_be32(buf, 0);
  if (magic != expected_magic) {
    throw IdxError(IdxError::Kind::BadMagic,
                   "idx: wrong magic " + std::to_string(magic) + " in " + path + " (expected " +
                       std::to_string(expected_magic) + ")");
  }
  const std::size_t header = 4 + 4 * ndims;
  if (buf.size() < header) {
    throw IdxError(IdxError::Kind::Truncated, "idx: truncated dimension block in " + path);
  }
  IdxHeader h;
  h.payload_offset = header;
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    const std::uint64_t d = read_be32(buf, 4 + 4 * i);
    if (d == 0 || d > kMaxElements || total > kMaxElements / d) {
      throw IdxError(IdxError::Kind::DimOverflow, "idx: dimension overflow in " + path);
    }
    total *= d;
    h.dims.push_back(d);
  }
  if (buf.size() < header + total) {
    throw IdxError(IdxError::Kind::Truncated, "idx: truncated payload in " + path);
  }
  return h;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int class_count) {
  if (class_count < 1) throw std::invalid_argument("load_idx: class_count must be >= 1");

  const auto img_buf = read_all(images_path);
  const auto img_hdr = parse_header(img_buf, kImageMagic, 3, images_path);
  const auto lbl_buf = read_all(labels_path);
  const auto lbl_hdr = parse_header(lbl_buf, kLabelMagic, 1, labels_path);

  const Index n = static_cast<Index>(img_hdr.dims[0]);
  const Index rows = static_cast<Index>(img_hdr.dims[1]);
  const Index cols = static_cast<Index>(img_hdr.dims[2]);
  if (lbl_hdr.dims[0] != img_hdr.dims[0]) {
    throw IdxError(IdxError::Kind::CountMismatch, "idx: image/label counts differ");
  }

  Dataset ds;
  ds.class_count = class_count;
  ds.provenance = "idx:" + images_path;
  const Index per = rows * cols;
  ds.features.shape = {per, n};
  ds.features.data.resize(per * n);
  for (Index j = 0; j < n; ++j) {
    const std::size_t base = img_hdr.payload_offset + static_cast<std::size_t>(j * per);
    for (Index f = 0; f < per; ++f) {
      ds.features.data(j * per + f) =
          static_cast<double>(img_buf[base + static_cast<std::size_t>(f)]) / 255.0;
    }
  }

  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    const int y = static_cast<int>(lbl_buf[lbl_hdr.payload_offset + static_cast<std::size_t>(j)]);
    if (y < 0 || y >= class_count) {
      throw IdxError(IdxError::Kind::LabelRange,
                     "idx: label " + std::to_string(y) + " outside [0, " +
                         std::to_string(class_count) + ")");
    }
    ds.labels[static_cast<std::size_t>(j)] = y;
  }
  return ds;
}

Dataset gen_two_moons(int n_per_class, double noise, std::uint64_t seed) {
  if (n_per_class < 1) throw std::invalid_argument("gen_two_moons: n must be >= 1");
  if (noise < 0.0) throw std::invalid_argument("gen_two_moons: sigma must be >= 0");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, M_PI);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const Index n = 2 * static_cast<Index>(n_per_class);
  Dataset ds;
  ds.class_count = 2;
  ds.provenance = "two-moons";
  ds.features.shape = {2, n};
  ds.features.data.resize(2 * n);
  ds.labels.resize(static_cast<std::size_t>(n));

  auto emit = [&](Index j, double px, double py, int label) {
    ds.features.data(2 * j) = px + noise * gauss(rng);
    ds.features.data(2 * j + 1) = py + noise * gauss(rng);
    ds.labels[static_cast<std::size_t>(j)] = label;
  };
  for (Index j = 0; j < n_per_class; ++j) {
    const double t = angle(rng);
    emit(j, std::cos(t), std::sin(t), 0);
  }
  for (Index j = 0; j < n_per_class; ++j) {
    const double t = angle(rng);
    emit(n_per_class + j, 1.0 - std::cos(t), 0.5 - std::sin(t), 1);
  }
  return ds;
}

Standardizer Standardizer::fit(const net::Tensor& features) {
  if (features.rank() != 2) {
    throw std::invalid_argument("Standardizer: rank-2 feature tensors only");
  }
  const auto X = features.as_matrix();
  const double n = static_cast<double>(X.cols());
  Standardizer s;
  s.mean = X.rowwise().sum() / n;
  s.stddev.resize(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    const double var = (X.row(i).array() - s.mean(i)).square().sum() / n;
    const double sd = std::sqrt(var);
    s.stddev(i) = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

void Standardizer::apply(net::Tensor& features) const {
  if (features.rank() != 2) {
    throw std::invalid_argument("Standardizer: rank-2 feature tensors only");
  }
  auto X = features.as_matrix();
  if (X.rows() != mean.size()) throw std::invalid_argument("Standardizer: feature count mismatch");
  X = ((X.colwise() - mean).array().colwise() / stddev.array()).matrix();
}

}  // namespace detrame::data
