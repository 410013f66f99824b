#include "coupledgeom/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>

#include "coupledgeom/cvae.hpp"
#include "coupledgeom/errors.hpp"

namespace coupled {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Dataset generate_mixture(std::size_t n, int d, const MixtureSpec& spec, Rng& rng, std::vector<int>* labels) {
  if (n == 0 || d <= 0) throw ContractError("generate_mixture: n and d must be positive");
  Eigen::MatrixXd means;
  if (spec.means) {
    means = *spec.means;
    if (means.cols() != d || means.rows() < 1) throw ContractError("generate_mixture: means must be k x d");
  } else {
    if (spec.components < 1) throw ContractError("generate_mixture: need at least one component");
    std::uniform_real_distribution<double> u(0.2, 0.8);
    means.resize(spec.components, d);
    for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = u(rng);
  }
  const int k = static_cast<int>(means.rows());
  std::uniform_int_distribution<int> pick(0, k - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset x(static_cast<Eigen::Index>(n), d);
  if (labels) labels->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = pick(rng);
    if (labels) (*labels)[i] = c;
    for (int j = 0; j < d; ++j) x(i, j) = clip01(means(c, j) + spec.sigma * noise(rng));
  }
  return x;
}

Dataset generate_heavytail(std::size_t n, int d, const HeavyTailSpec& spec, Rng& rng) {
  if (n == 0 || d <= 0) throw ContractError("generate_heavytail: n and d must be positive");
  const CoupledGaussian dist = CoupledGaussian::diagonal(
      Eigen::VectorXd::Zero(d), Eigen::VectorXd::Constant(d, spec.scale * spec.scale), spec.kappa);
  Eigen::MatrixXd z = cg_sample(dist, rng, n);
  return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Dataset parse_idx_images(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16) throw FormatError("idx: header truncated");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    std::ostringstream msg;
    msg << "idx: bad magic 0x" << std::hex << magic << " (want 0x803)";
    throw FormatError(msg.str());
  }
  const std::uint64_t count = read_be32(bytes, 4), rows = read_be32(bytes, 8), cols = read_be32(bytes, 12);
  const std::uint64_t pixels = rows * cols;  // < 2^64, both < 2^32
  if (pixels != 0 && count > std::numeric_limits<std::uint64_t>::max() / pixels)
    throw FormatError("idx: dimension overflow");
  const std::uint64_t total = count * pixels;
  if (pixels > static_cast<std::uint64_t>(std::numeric_limits<Eigen::Index>::max()) ||
      total > static_cast<std::uint64_t>(std::numeric_limits<std::ptrdiff_t>::max()))
    throw FormatError("idx: dimension overflow");
  if (bytes.size() - 16 < total) throw FormatError("idx: payload truncated");
  Dataset x(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
  for (std::uint64_t i = 0; i < count; ++i)
    for (std::uint64_t j = 0; j < pixels; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = bytes[16 + i * pixels + j] / 255.0;
  return x;
}

Dataset load_idx_images(const std::string& path) { return parse_idx_images(read_file(path)); }

std::vector<unsigned char> idx_image_bytes(const std::vector<unsigned char>& pixels, std::uint32_t count,
                                           std::uint32_t rows, std::uint32_t cols) {
  if (static_cast<std::uint64_t>(count) * rows * cols != pixels.size())
    throw ContractError("idx: pixel count does not match dimensions");
  std::vector<unsigned char> out;
  out.reserve(16 + pixels.size());
  put_be32(out, kIdxImageMagic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

void write_idx_images(const std::string& path, const std::vector<unsigned char>& pixels, std::uint32_t count,
                      std::uint32_t rows, std::uint32_t cols) {
  const auto bytes = idx_image_bytes(pixels, count, rows, cols);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Dataset load_csv_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv: missing header in " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::size_t width = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      while (end && (*end == ' ' || *end == '\t')) ++end;
      if (cell.empty() || end == cell.c_str() || *end != '\0')
        throw FormatError("csv: bad number '" + cell + "' on line " + std::to_string(line_no));
      row.push_back(v);
    }
    if (row.size() != width) throw FormatError("csv: row width differs from the header on line " + std::to_string(line_no));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("csv: no data rows in " + path);
  Dataset x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) x(i, j) = rows[i][j];
  return x;
}

void write_csv(const std::string& path, const Eigen::MatrixXd& rows, const std::vector<std::string>& header) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out.precision(17);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) out << (c ? "," : "") << rows(r, c);
    out << '\n';
  }
}

CorruptedDataset inject_outliers(const Dataset& x, double fraction, double scale, Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ContractError("inject_outliers: fraction must be in [0, 1]");
  const std::size_t n = static_cast<std::size_t>(x.rows());
  CorruptedDataset out{x, std::vector<bool>(n, false)};
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::cauchy_distribution<double> cauchy(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const auto r = static_cast<Eigen::Index>(order[i]);
    out.corrupted[order[i]] = true;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double e = cauchy(rng);
      if (scale != 0.0) out.data(r, c) = clip01(x(r, c) + scale * e);
    }
  }
  return out;
}

SplitIndices split_indices(std::size_t n, double f_train, double f_val, double f_test, std::uint64_t seed) {
  if (f_train < 0 || f_val < 0 || f_test < 0 || std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw ContractError("split fractions must be non-negative and sum to 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 7));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(f_train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::floor(f_val * static_cast<double>(n))));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

Dataset take_rows(const Dataset& x, const std::vector<std::size_t>& idx) {
  Dataset out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

}  // namespace coupled
