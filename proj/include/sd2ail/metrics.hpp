#pragma once

#include <filesystem>
#include <span>

#include "sd2ail/common.hpp"

namespace sd2ail::metrics {

/// Pearson correlation. Throws ShapeError on unequal/short series and
/// std::domain_error when either series has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

/// Gaussian Frechet distance between two sample sets (rows = samples):
/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2}).
double frechet_distance(const Matrix& features_a, const Matrix& features_b);

/// Same quantity from moments.
double frechet_distance(const Vector& mean_a, const Matrix& cov_a, const Vector& mean_b,
                        const Matrix& cov_b);

/// Unbiased sample covariance of rows.
Matrix covariance(const Matrix& rows, const Vector& mean);

struct Pca {
  Vector mean;
  Matrix components;  // dim x k, columns ordered by decreasing variance
  Vector variances;   // k eigenvalues
  Matrix projected;   // n x k
};

/// Top-k principal directions of the rows of `data`.
Pca pca(const Matrix& data, int components = 2);

/// CSV with header pc1,pc2,... and one row per projected sample.
void write_pca_csv(const std::filesystem::path& path, const Pca& p);

}  // namespace sd2ail::metrics
