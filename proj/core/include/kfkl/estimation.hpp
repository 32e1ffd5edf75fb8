#pragma once

#include <optional>
#include <span>
#include <vector>

#include "kfkl/common.hpp"
#include "kfkl/dynamics.hpp"

namespace kfkl {

/// Scaled unscented transform parameters.
struct UtParams {
    double alpha = 0.1;
    double kappa = -1.0;
    double beta = 2.0;

    double lambda(int dim) const { return alpha * alpha * (dim + kappa) - dim; }
};

struct GaussianBelief {
    Vector mean;
    Matrix cov;

    int dim() const { return static_cast<int>(mean.size()); }
};

struct UtWeights {
    Vector mean;
    Vector cov;
};

/// 2d+1 sigma vectors stored as matrix columns, plus their weights.
struct SigmaSet {
    Matrix points;
    UtWeights weights;

    Vector weighted_mean() const { return points * weights.mean; }
    /// Weighted spread about `center`.
    Matrix weighted_cov(const Vector& center) const;
    /// Weighted cross covariance between this set (about `center`) and `other`
    /// (about `other_center`).
    Matrix cross_cov(const Vector& center, const SigmaSet& other, const Vector& other_center) const;
    SigmaSet mapped(const DiscreteMap& f) const;
};

UtWeights ut_weights(int dim, const UtParams& params);

/// Lower Cholesky factor. On failure adds 1e-9 * trace(P)/d * I, escalating
/// the jitter x10 up to three times.
Matrix cholesky_with_jitter(const Matrix& p);

/// Symmetrizes and, if the matrix is indefinite beyond round-off, clamps the
/// negative eigenvalues to zero.
void make_psd(Matrix& p);

SigmaSet sigma_points(const GaussianBelief& belief, const UtParams& params);

struct Prediction {
    SigmaSet propagated;
    GaussianBelief belief;
};

Prediction ukf_predict(const GaussianBelief& belief, const DiscreteMap& f, const Matrix& process_cov,
                       const UtParams& params);

GaussianBelief ukf_correct(const GaussianBelief& predicted, const SigmaSet& propagated,
                           const DiscreteMap& h, const Matrix& obs_cov, const Vector& z);

struct FilterOutput {
    std::vector<GaussianBelief> beliefs;
    /// Steps whose correction failed and kept the predicted belief.
    std::vector<std::size_t> skipped_corrections;
};

struct FilterProblem {
    DiscreteMap f;
    DiscreteMap h;
    Matrix process_cov;
    Matrix obs_cov;
    GaussianBelief prior;
};

/// One belief per observation. Each step predicts from the previous belief
/// (the prior for the first observation) and corrects with the observation.
/// With `resample` set, the correction uses a fresh sigma set drawn from the
/// predicted belief instead of the propagated one.
FilterOutput ukf_filter(std::span<const Vector> observations, const FilterProblem& problem,
                        const UtParams& params, bool resample);

/// Jacobian by central differences with step 1e-6 * max(1, |x_i|).
Matrix numerical_jacobian(const DiscreteMap& f, const Vector& x);

FilterOutput ekf_filter(std::span<const Vector> observations, const FilterProblem& problem);

struct SmootherOutput {
    std::vector<GaussianBelief> beliefs;
    /// Index at which the backward pass stopped on a singular prediction
    /// covariance; beliefs at and before it are the filtered ones.
    std::optional<std::size_t> stopped_at;
};

/// Unscented Rauch-Tung-Striebel backward pass over filtered beliefs.
SmootherOutput urts_smooth(std::span<const GaussianBelief> filtered, const DiscreteMap& f,
                           const Matrix& process_cov, const UtParams& params);

enum class EstimatorKind { Ukf, UkfResample, Ekf };

const char* to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(const std::string& name);

FilterOutput run_filter(EstimatorKind kind, std::span<const Vector> observations,
                        const FilterProblem& problem, const UtParams& params);

}  // namespace kfkl
