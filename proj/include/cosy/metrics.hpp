#pragma once

// Feature-space statistics used by the evaluation protocols: Fréchet
// distance between Gaussian fits and PCA of latent samples.

#include <Eigen/Core>

namespace cosy {

/// Rows are samples. Throws Error(NonFiniteFeatures) on NaN/Inf input.
double frechet_distance(const Eigen::MatrixXd& feats_a, const Eigen::MatrixXd& feats_b);

/// Same, from precomputed moments.
double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& sigma_a, const Eigen::VectorXd& mu_b,
                        const Eigen::MatrixXd& sigma_b);

/// Unbiased covariance of row samples.
Eigen::MatrixXd covariance(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mean);

struct PcaResult {
    Eigen::VectorXd mean;
    Eigen::MatrixXd directions;  // k x d, orthonormal rows
    Eigen::VectorXd variances;   // k, non-increasing
};

/// Top-k principal directions of row samples.
PcaResult pca(const Eigen::MatrixXd& samples, int k);
PcaResult pca_from_moments(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int k);

/// Largest principal angle (radians) between the row spaces of a and b.
double max_principal_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace cosy
