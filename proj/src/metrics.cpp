#include "cosy/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "cosy/error.hpp"

namespace cosy {

namespace {

constexpr double kEigenTolerance = -1e-8;

// Symmetric PSD square root; eigenvalues slightly below zero from round-off
// are clamped, clearly negative ones are clamped with a warning.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < kEigenTolerance * scale) {
            std::fprintf(stderr, "frechet: clamping eigenvalue %g\n", ev[i]);
        }
        ev[i] = std::sqrt(std::max(0.0, ev[i]));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void require_finite(const Eigen::MatrixXd& m) {
    if (!m.allFinite()) throw Error(ErrorCode::NonFiniteFeatures, "features contain NaN or Inf");
}

}  // namespace

Eigen::MatrixXd covariance(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mean) {
    const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
    const double denom = std::max<Eigen::Index>(1, samples.rows() - 1);
    return (centered.transpose() * centered) / denom;
}

double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& sigma_a, const Eigen::VectorXd& mu_b,
                        const Eigen::MatrixXd& sigma_b) {
    require_finite(mu_a);
    require_finite(mu_b);
    require_finite(sigma_a);
    require_finite(sigma_b);
    if (mu_a.size() != mu_b.size() || sigma_a.rows() != sigma_b.rows()) {
        throw Error(ErrorCode::ShapeMismatch, "feature dimensions differ");
    }
    // tr((A B)^1/2) = tr((A^1/2 B A^1/2)^1/2), the symmetric form.
    const Eigen::MatrixXd sa = psd_sqrt(sigma_a);
    const Eigen::MatrixXd inner = sa * sigma_b * sa;
    const double tr_cross = psd_sqrt(inner).trace();
    const double d = (mu_a - mu_b).squaredNorm() + sigma_a.trace() + sigma_b.trace() - 2.0 * tr_cross;
    if (!std::isfinite(d)) throw Error(ErrorCode::NonFiniteFeatures, "distance is not finite");
    return std::max(0.0, d);
}

double frechet_distance(const Eigen::MatrixXd& feats_a, const Eigen::MatrixXd& feats_b) {
    require_finite(feats_a);
    require_finite(feats_b);
    if (feats_a.cols() != feats_b.cols()) throw Error(ErrorCode::ShapeMismatch, "feature dimensions differ");
    if (feats_a.rows() <= feats_a.cols() || feats_b.rows() <= feats_b.cols()) {
        std::fprintf(stderr, "frechet: fewer samples (%ld, %ld) than dimensions (%ld)\n", long(feats_a.rows()),
                     long(feats_b.rows()), long(feats_a.cols()));
    }
    const Eigen::VectorXd mu_a = feats_a.colwise().mean();
    const Eigen::VectorXd mu_b = feats_b.colwise().mean();
    return frechet_distance(mu_a, covariance(feats_a, mu_a), mu_b, covariance(feats_b, mu_b));
}

PcaResult pca(const Eigen::MatrixXd& samples, int k) {
    require_finite(samples);
    const Eigen::VectorXd mean = samples.colwise().mean();
    return pca_from_moments(mean, covariance(samples, mean), k);
}

PcaResult pca_from_moments(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int k) {
    const auto d = cov.cols();
    if (k < 1 || k > d) throw Error(ErrorCode::ConfigError, "pca: k must be in [1, dim]");
    PcaResult out;
    out.mean = mean;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    // Eigen sorts ascending; take the top k in descending order.
    out.directions.resize(k, d);
    out.variances.resize(k);
    for (int i = 0; i < k; ++i) {
        const auto col = d - 1 - i;
        Eigen::VectorXd v = es.eigenvectors().col(col);
        // Sign convention: largest-magnitude coordinate positive.
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        out.directions.row(i) = v.transpose();
        out.variances[i] = std::max(0.0, es.eigenvalues()[col]);
    }
    return out;
}

double max_principal_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    // Orthonormal bases of the row spaces, then the smallest singular value of
    // their cross-product is cos of the largest angle.
    auto basis = [](const Eigen::MatrixXd& m) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(m.transpose());
        return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(m.cols(), m.rows()));
    };
    const Eigen::MatrixXd qa = basis(a), qb = basis(b);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(qa.transpose() * qb);
    const double smin = svd.singularValues().minCoeff();
    return std::acos(std::clamp(smin, -1.0, 1.0));
}

}  // namespace cosy
