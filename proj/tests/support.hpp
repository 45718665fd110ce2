#pragma once

// Data generators and brute-force oracles shared by the test binaries.
// Oracles avoid the library's cached Gram matrices and normal equations:
// residuals come from a pseudo-inverse of the full design, correlations from
// explicit loops.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "debias/debias.hpp"

namespace testing_support {

using debias::Index;
using debias::Matrix;
using debias::Vector;

/// Random longitudinal dataset with some treatment signal in every item.
inline debias::LongitudinalDataset random_dataset(Index n, Index q, Index m, Index p, Index r, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> unif(-0.6, 0.6);

    debias::LongitudinalDataset d;
    for (Index i = 0; i < n; ++i) d.subject_ids.push_back("s" + std::to_string(i));
    d.treatments.resize(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) d.treatments(i, j) = coin(rng) ? 1.0 : 0.0;
    d.covariates.resize(n, r);
    for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < r; ++c) d.covariates(i, c) = normal(rng);
    for (Index c = 0; c < r; ++c) d.covariate_names.push_back("x_c" + std::to_string(c));
    for (Index l = 0; l < q; ++l) d.item_names.push_back("item" + std::to_string(l));

    Vector latent(n);
    for (Index i = 0; i < n; ++i) latent(i) = normal(rng);
    for (Index t = p; t < m; ++t) {
        Matrix y(n, q);
        for (Index l = 0; l < q; ++l) {
            const double a = unif(rng), b = unif(rng), c = unif(rng);
            for (Index i = 0; i < n; ++i) {
                double v = a * d.treatments(i, p - 1) + c * latent(i) + normal(rng);
                for (Index j = 0; j + 1 < p; ++j) v += b * d.treatments(i, j);
                for (Index k = 0; k < r; ++k) v += 0.1 * d.covariates(i, k);
                y(i, l) = v;
            }
        }
        d.outcomes.push_back(std::move(y));
    }
    return d;
}

/**
 * Item `planted` equals T_p exactly at every outcome time point; every other
 * item is independent N(0, noise_sd^2) noise.
 */
inline debias::LongitudinalDataset planted_dataset(Index n, Index q, Index planted, std::uint64_t seed,
                                                   double noise_sd = 1.0, Index m = 4, Index p = 2, Index r = 2) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    debias::LongitudinalDataset d;
    for (Index i = 0; i < n; ++i) d.subject_ids.push_back("s" + std::to_string(i));
    d.treatments.resize(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) d.treatments(i, j) = coin(rng) ? 1.0 : 0.0;
    d.covariates.resize(n, r);
    for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < r; ++c) d.covariates(i, c) = normal(rng);
    for (Index c = 0; c < r; ++c) d.covariate_names.push_back("x_c" + std::to_string(c));
    for (Index l = 0; l < q; ++l) d.item_names.push_back("item" + std::to_string(l));
    for (Index t = p; t < m; ++t) {
        Matrix y(n, q);
        for (Index l = 0; l < q; ++l)
            for (Index i = 0; i < n; ++i) y(i, l) = l == planted ? d.treatments(i, p - 1) : noise_sd * normal(rng);
        d.outcomes.push_back(std::move(y));
    }
    return d;
}

// -----------------------------------------------------------------------------
// Oracles
// -----------------------------------------------------------------------------

/// Residuals of `target` on [1, z] via a complete orthogonal decomposition.
inline Vector oracle_residual(const Vector& target, const Matrix& z) {
    Matrix design(target.size(), z.cols() + 1);
    design.col(0).setOnes();
    if (z.cols() > 0) design.rightCols(z.cols()) = z;
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(design);
    const Vector beta = cod.solve(target);
    return target - design * beta;
}

inline double oracle_pearson(const Vector& a, const Vector& b) {
    const Index n = a.size();
    double ma = 0, mb = 0;
    for (Index i = 0; i < n; ++i) {
        ma += a(i);
        mb += b(i);
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (Index i = 0; i < n; ++i) {
        sab += (a(i) - ma) * (b(i) - mb);
        saa += (a(i) - ma) * (a(i) - ma);
        sbb += (b(i) - mb) * (b(i) - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

inline Matrix oracle_correlation_matrix(const Matrix& y) {
    Matrix out(y.cols(), y.cols());
    for (Index a = 0; a < y.cols(); ++a)
        for (Index b = 0; b < y.cols(); ++b) out(a, b) = oracle_pearson(y.col(a), y.col(b));
    return out;
}

inline Matrix hcat(const Vector& v, const Matrix& m) {
    Matrix out(v.size(), m.cols() + 1);
    out.col(0) = v;
    if (m.cols() > 0) out.rightCols(m.cols()) = m;
    return out;
}

/// From-scratch objective on the raw dataset.
inline double oracle_objective(const debias::LongitudinalDataset& d, const Vector& alpha, double lambda,
                               const std::vector<Vector>& previous, bool mse = false) {
    const Index p = d.p();
    const Vector t1 = d.treatments.col(0);
    const Vector tp = d.treatments.col(p - 1);
    const Matrix main_z = hcat(t1, d.covariates);
    const Matrix conf_z = hcat(tp, d.covariates);
    const Vector tp_res = oracle_residual(tp, main_z);
    double total = 0.0;
    for (const auto& y : d.outcomes) {
        const Vector score = y * alpha;
        const Vector s_main = oracle_residual(score, main_z);
        if (mse) {
            total -= (s_main - tp_res).squaredNorm() / static_cast<double>(d.n());
        } else {
            total += oracle_pearson(s_main, tp_res);
        }
        if (lambda > 0.0 && p > 1) {
            const Vector s_conf = oracle_residual(score, conf_z);
            double pen = 0.0;
            for (Index j = 0; j + 1 < p; ++j) {
                const double rho = oracle_pearson(s_conf, oracle_residual(d.treatments.col(j), conf_z));
                pen += rho * rho;
            }
            total -= lambda / static_cast<double>(p - 1) * pen;
        }
        if (!previous.empty()) {
            const Matrix corr = oracle_correlation_matrix(y);
            double cos = 0.0;
            for (const auto& ak : previous) {
                cos += alpha.dot(corr * ak) / std::sqrt(alpha.dot(corr * alpha) * ak.dot(corr * ak));
            }
            total -= cos / static_cast<double>(previous.size());
        }
    }
    return total;
}

inline std::vector<debias::WeightVector> random_previous(Index q, int k, std::mt19937_64& rng) {
    std::vector<debias::WeightVector> out;
    for (int i = 0; i < k; ++i) out.push_back(debias::WeightVector::from_values(debias::random_simplex_point(q, rng)));
    return out;
}

inline std::vector<Vector> values_of(const std::vector<debias::WeightVector>& ws) {
    std::vector<Vector> out;
    for (const auto& w : ws) out.push_back(w.values());
    return out;
}

}  // namespace testing_support
