#pragma once

#include <Eigen/Dense>

namespace coupled {

// Mean squared error over every entry.
double mse(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat);
// 10 log10(1 / mse) for data in [0, 1]; +inf when mse == 0.
double psnr(double mse_value);

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased; zero for a single row
};
GaussianStats gaussian_stats(const Eigen::MatrixXd& rows);

// |mu1 - mu2|^2 + tr(C1 + C2 - 2 (C1^1/2 C2 C1^1/2)^1/2). Eigenvalues in
// (-1e-10, 0) are treated as 0; anything more negative, or an asymmetric
// input, is a DomainError.
double frechet_gaussian(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2);

// Top-k principal directions (d x k) of `reference`, by covariance eigenvectors.
Eigen::MatrixXd pca_basis(const Eigen::MatrixXd& reference, int k);

// Frechet distance between the Gaussian fits of two sample sets, on raw
// features (pca_k == 0) or projected onto the reference's top pca_k directions.
double frechet_between(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& other, int pca_k = 0);

}  // namespace coupled
