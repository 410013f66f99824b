#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coupledgeom/distributions.hpp"

namespace coupled {

// Rows are examples, values in [0, 1].
using Dataset = Eigen::MatrixXd;

struct MixtureSpec {
  int components = 4;
  double sigma = 0.05;
  // components x d; drawn uniformly in [0.2, 0.8] when absent
  std::optional<Eigen::MatrixXd> means;
};

struct HeavyTailSpec {
  double kappa = 1.0;
  double scale = 1.0;
};

// Equal-weight Gaussian mixture, clipped to [0, 1]. `labels` (if given)
// receives each row's component.
Dataset generate_mixture(std::size_t n, int d, const MixtureSpec& spec, Rng& rng,
                         std::vector<int>* labels = nullptr);
// sigmoid of coupled Gaussian draws with scale^2 I and the given coupling.
Dataset generate_heavytail(std::size_t n, int d, const HeavyTailSpec& spec, Rng& rng);

// IDX image files: big-endian u32 magic 0x00000803, count, rows, cols, then
// count * rows * cols unsigned bytes. Rows of the result are images
// flattened row-major and divided by 255. FormatError on bad input.
Dataset parse_idx_images(const std::vector<unsigned char>& bytes);
Dataset load_idx_images(const std::string& path);
std::vector<unsigned char> idx_image_bytes(const std::vector<unsigned char>& pixels, std::uint32_t count,
                                           std::uint32_t rows, std::uint32_t cols);
void write_idx_images(const std::string& path, const std::vector<unsigned char>& pixels, std::uint32_t count,
                      std::uint32_t rows, std::uint32_t cols);

// Header row, then comma-separated decimals; every row the same width.
Dataset load_csv_vectors(const std::string& path);
void write_csv(const std::string& path, const Eigen::MatrixXd& rows, const std::vector<std::string>& header);

struct CorruptedDataset {
  Dataset data;
  std::vector<bool> corrupted;
};

// round(fraction * n) rows chosen at random get scale * Cauchy noise added
// per entry, then clipped to [0, 1].
CorruptedDataset inject_outliers(const Dataset& x, double fraction, double scale, Rng& rng);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Seeded permutation cut into floor(n f_train), floor(n f_val) and the rest.
// Depends only on (seed, n).
SplitIndices split_indices(std::size_t n, double f_train, double f_val, double f_test, std::uint64_t seed);
Dataset take_rows(const Dataset& x, const std::vector<std::size_t>& idx);

}  // namespace coupled
