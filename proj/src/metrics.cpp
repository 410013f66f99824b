#include "coupledgeom/metrics.hpp"

#include <cmath>
#include <limits>

#include "coupledgeom/errors.hpp"

namespace coupled {

namespace {

constexpr double kEigenFloor = -1e-10;

void require_psd(const Eigen::MatrixXd& c, const char* which) {
  if (c.rows() != c.cols()) throw DomainError(std::string("frechet_gaussian: ") + which + " is not square");
  if (c.size() == 0) return;
  const double tol = 1e-10 * std::max(1.0, c.cwiseAbs().maxCoeff());
  if (!((c - c.transpose()).cwiseAbs().maxCoeff() <= tol))
    throw DomainError(std::string("frechet_gaussian: ") + which + " is not symmetric");
}

// Symmetric square root with tiny negative eigenvalues clamped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& c, const char* which) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < kEigenFloor) throw DomainError(std::string("frechet_gaussian: ") + which + " is not PSD");
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double mse(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw ContractError("mse: shape mismatch");
  if (x.size() == 0) throw ContractError("mse: empty input");
  return (x - x_hat).squaredNorm() / static_cast<double>(x.size());
}

double psnr(double mse_value) {
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse_value);
}

GaussianStats gaussian_stats(const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) throw ContractError("gaussian_stats: no rows");
  GaussianStats s;
  s.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - s.mean.transpose();
  s.cov = rows.rows() > 1 ? Eigen::MatrixXd(centered.transpose() * centered / static_cast<double>(rows.rows() - 1))
                          : Eigen::MatrixXd::Zero(rows.cols(), rows.cols());
  return s;
}

double frechet_gaussian(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2) {
  const Eigen::Index d = mu1.size();
  if (mu2.size() != d || cov1.rows() != d || cov2.rows() != d)
    throw ContractError("frechet_gaussian: dimension mismatch");
  if (d == 0) return 0.0;
  require_psd(cov1, "cov1");
  require_psd(cov2, "cov2");
  const Eigen::MatrixXd s1 = psd_sqrt(cov1, "cov1");
  psd_sqrt(cov2, "cov2");
  Eigen::MatrixXd m = s1 * cov2 * s1;
  m = 0.5 * (m + m.transpose());
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues();
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < kEigenFloor * std::max(1.0, ev.cwiseAbs().maxCoeff()))
      throw DomainError("frechet_gaussian: product has a negative eigenvalue");
    tr_sqrt += std::sqrt(std::max(ev(i), 0.0));
  }
  const double value = (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

Eigen::MatrixXd pca_basis(const Eigen::MatrixXd& reference, int k) {
  const GaussianStats s = gaussian_stats(reference);
  const Eigen::Index d = s.cov.rows();
  if (k < 1 || k > d) throw ContractError("pca_basis: k must be in [1, d]");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.cov);
  // eigenvalues ascend; keep the last k, largest first
  return es.eigenvectors().rightCols(k).rowwise().reverse();
}

double frechet_between(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& other, int pca_k) {
  if (reference.cols() != other.cols()) throw ContractError("frechet_between: feature widths differ");
  if (pca_k > 0) {
    const Eigen::MatrixXd basis = pca_basis(reference, pca_k);
    return frechet_between(reference * basis, other * basis, 0);
  }
  const GaussianStats a = gaussian_stats(reference), b = gaussian_stats(other);
  return frechet_gaussian(a.mean, a.cov, b.mean, b.cov);
}

}  // namespace coupled
