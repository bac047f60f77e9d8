#include "sd2ail/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "sd2ail/io.hpp"

namespace sd2ail::metrics {

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson: series lengths differ");
  if (x.size() < 2) throw ShapeError("pearson: need at least two points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw std::domain_error("pearson: zero variance, correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Matrix covariance(const Matrix& rows, const Vector& mean) {
  const Matrix centered = rows.rowwise() - mean.transpose();
  return (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
}

namespace {

// Symmetric PSD square root; eigenvalues below -tol are an error, the rest
// are clipped at zero.
Matrix psd_sqrt(const Matrix& m, double tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  Vector ev = es.eigenvalues();
  if (ev.size() && ev.minCoeff() < -tol)
    throw std::domain_error("covariance is not positive semidefinite");
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double tolerance_for(const Matrix& m) { return 1e-8 * std::max(1.0, m.cwiseAbs().maxCoeff()); }

}  // namespace

double frechet_distance(const Vector& mean_a, const Matrix& cov_a, const Vector& mean_b,
                        const Matrix& cov_b) {
  if (mean_a.size() != mean_b.size() || cov_a.rows() != cov_b.rows())
    throw ShapeError("frechet_distance: feature dimensions differ");
  const Matrix root_a = psd_sqrt(cov_a, tolerance_for(cov_a));
  const Matrix inner = root_a * cov_b * root_a;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const Vector ev = es.eigenvalues();
  if (ev.size() && ev.minCoeff() < -tolerance_for(inner))
    throw std::domain_error("frechet_distance: product of covariances is not PSD");
  const double trace_root = ev.cwiseMax(0.0).cwiseSqrt().sum();
  const double fd =
      (mean_a - mean_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * trace_root;
  return std::max(fd, 0.0);
}

double frechet_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("frechet_distance: feature dimensions differ");
  if (a.rows() < a.cols() + 1 || b.rows() < b.cols() + 1)
    throw ShapeError("frechet_distance: need at least dim + 1 samples per set");
  const Vector ma = a.colwise().mean().transpose();
  const Vector mb = b.colwise().mean().transpose();
  return frechet_distance(ma, covariance(a, ma), mb, covariance(b, mb));
}

Pca pca(const Matrix& data, int components) {
  if (data.rows() < 3) throw ShapeError("pca: need at least three rows");
  if (components < 1 || components > data.cols()) throw ShapeError("pca: invalid component count");
  Pca p;
  p.mean = data.colwise().mean().transpose();
  const Matrix cov = covariance(data, p.mean);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Vector ev = es.eigenvalues();  // ascending
  if (ev.maxCoeff() <= 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
    throw std::domain_error("pca: data has rank zero");
  const Eigen::Index d = cov.rows();
  p.components.resize(d, components);
  p.variances.resize(components);
  for (int k = 0; k < components; ++k) {
    p.components.col(k) = es.eigenvectors().col(d - 1 - k);
    p.variances(k) = ev(d - 1 - k);
  }
  p.projected = (data.rowwise() - p.mean.transpose()) * p.components;
  return p;
}

void write_pca_csv(const std::filesystem::path& path, const Pca& p) {
  io::write_atomically(path, [&](std::ostream& os) {
    for (Eigen::Index k = 0; k < p.projected.cols(); ++k) os << (k ? ",pc" : "pc") << k + 1;
    os << '\n';
    for (Eigen::Index i = 0; i < p.projected.rows(); ++i) {
      for (Eigen::Index k = 0; k < p.projected.cols(); ++k)
        os << (k ? "," : "") << io::format_double(p.projected(i, k));
      os << '\n';
    }
  });
}

}  // namespace sd2ail::metrics
