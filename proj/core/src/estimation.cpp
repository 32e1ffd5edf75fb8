#include "kfkl/estimation.hpp"

#include <cmath>

namespace kfkl {

Matrix SigmaSet::weighted_cov(const Vector& center) const
{
    const Matrix dev = points.colwise() - center;
    return dev * weights.cov.asDiagonal() * dev.transpose();
}

Matrix SigmaSet::cross_cov(const Vector& center, const SigmaSet& other,
                           const Vector& other_center) const
{
    const Matrix dev = points.colwise() - center;
    const Matrix other_dev = other.points.colwise() - other_center;
    return dev * weights.cov.asDiagonal() * other_dev.transpose();
}

SigmaSet SigmaSet::mapped(const DiscreteMap& f) const
{
    SigmaSet out;
    out.weights = weights;
    const Vector first = f(points.col(0));
    out.points.resize(first.size(), points.cols());
    out.points.col(0) = first;
    for (Eigen::Index j = 1; j < points.cols(); ++j) out.points.col(j) = f(points.col(j));
    return out;
}

UtWeights ut_weights(int dim, const UtParams& params)
{
    if (dim < 1) throw InvalidParametersError("unscented transform needs dim >= 1");
    const double lambda = params.lambda(dim);
    const double scale = dim + lambda;
    // scale = alpha^2 (d + kappa). A non-positive scale makes the spread matrix
    // (d + lambda) P non-positive, so no real sigma set reproduces P.
    if (!(scale > 0.0))
        throw InvalidParametersError("unscented transform requires alpha^2 (d + kappa) > 0");
    const Eigen::Index n = 2 * dim + 1;
    UtWeights w;
    w.mean = Vector::Constant(n, 1.0 / (2.0 * scale));
    w.cov = w.mean;
    w.mean(0) = lambda / scale;
    w.cov(0) = lambda / scale + 1.0 - params.alpha * params.alpha + params.beta;
    return w;
}

Matrix cholesky_with_jitter(const Matrix& p)
{
    Eigen::LLT<Matrix> llt(p);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    const auto d = static_cast<double>(p.rows());
    if (p.isZero(0.0)) return Matrix::Zero(p.rows(), p.cols());
    double jitter = 1e-9 * std::abs(p.trace()) / d;
    if (!(jitter > 0.0)) jitter = 1e-12;
    for (int attempt = 0; attempt < 4; ++attempt, jitter *= 10.0) {
        llt.compute(p + jitter * Matrix::Identity(p.rows(), p.cols()));
        if (llt.info() == Eigen::Success) return llt.matrixL();
    }
    throw CovarianceDegenerateError("covariance is not positive semi-definite");
}

void make_psd(Matrix& p)
{
    symmetrize(p);
    Eigen::LLT<Matrix> llt(p);
    if (llt.info() == Eigen::Success) return;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(p);
    if (eig.eigenvalues().minCoeff() >= -1e-10) return;
    const Vector clamped = eig.eigenvalues().cwiseMax(0.0);
    p = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
    symmetrize(p);
}

SigmaSet sigma_points(const GaussianBelief& belief, const UtParams& params)
{
    const int d = belief.dim();
    SigmaSet set;
    set.weights = ut_weights(d, params);
    const double scale = d + params.lambda(d);
    const Matrix root = cholesky_with_jitter(scale * belief.cov);
    set.points.resize(d, 2 * d + 1);
    set.points.col(0) = belief.mean;
    for (int j = 0; j < d; ++j) {
        set.points.col(1 + j) = belief.mean + root.col(j);
        set.points.col(1 + d + j) = belief.mean - root.col(j);
    }
    return set;
}

Prediction ukf_predict(const GaussianBelief& belief, const DiscreteMap& f, const Matrix& process_cov,
                       const UtParams& params)
{
    Prediction out;
    out.propagated = sigma_points(belief, params).mapped(f);
    out.belief.mean = out.propagated.weighted_mean();
    out.belief.cov = out.propagated.weighted_cov(out.belief.mean) + process_cov;
    symmetrize(out.belief.cov);
    return out;
}

GaussianBelief ukf_correct(const GaussianBelief& predicted, const SigmaSet& propagated,
                           const DiscreteMap& h, const Matrix& obs_cov, const Vector& z)
{
    const SigmaSet obs = propagated.mapped(h);
    const Vector z_pred = obs.weighted_mean();
    Matrix p_zz = obs.weighted_cov(z_pred) + obs_cov;
    symmetrize(p_zz);
    const Matrix p_xz = propagated.cross_cov(predicted.mean, obs, z_pred);

    Eigen::LLT<Matrix> llt(p_zz);
    if (llt.info() != Eigen::Success)
        throw CorrectionFailureError("innovation covariance is not positive definite");
    // gain = P_xz P_zz^{-1}, via P_zz gain^T = P_xz^T
    const Matrix gain = llt.solve(p_xz.transpose()).transpose();
    if (!gain.allFinite()) throw CorrectionFailureError("Kalman gain is not finite");

    GaussianBelief out;
    out.mean = predicted.mean + gain * (z - z_pred);
    out.cov = predicted.cov - gain * p_zz * gain.transpose();
    make_psd(out.cov);
    return out;
}

FilterOutput ukf_filter(std::span<const Vector> observations, const FilterProblem& problem,
                        const UtParams& params, bool resample)
{
    if (observations.empty()) throw InvalidParametersError("filter needs at least one observation");
    FilterOutput out;
    out.beliefs.reserve(observations.size());
    GaussianBelief current = problem.prior;
    for (std::size_t k = 0; k < observations.size(); ++k) {
        Prediction pred = ukf_predict(current, problem.f, problem.process_cov, params);
        try {
            if (resample) {
                const SigmaSet fresh = sigma_points(pred.belief, params);
                current = ukf_correct(pred.belief, fresh, problem.h, problem.obs_cov, observations[k]);
            } else {
                current = ukf_correct(pred.belief, pred.propagated, problem.h, problem.obs_cov,
                                      observations[k]);
            }
        } catch (const CorrectionFailureError&) {
            out.skipped_corrections.push_back(k);
            current = std::move(pred.belief);
            make_psd(current.cov);
        }
        out.beliefs.push_back(current);
    }
    return out;
}

Matrix numerical_jacobian(const DiscreteMap& f, const Vector& x)
{
    const Vector f0 = f(x);
    Matrix jac(f0.size(), x.size());
    Vector xp = x;
    Vector xm = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double step = 1e-6 * std::max(1.0, std::abs(x(i)));
        xp(i) = x(i) + step;
        xm(i) = x(i) - step;
        jac.col(i) = (f(xp) - f(xm)) / (xp(i) - xm(i));
        xp(i) = x(i);
        xm(i) = x(i);
    }
    return jac;
}

FilterOutput ekf_filter(std::span<const Vector> observations, const FilterProblem& problem)
{
    if (observations.empty()) throw InvalidParametersError("filter needs at least one observation");
    FilterOutput out;
    out.beliefs.reserve(observations.size());
    GaussianBelief current = problem.prior;
    for (std::size_t k = 0; k < observations.size(); ++k) {
        const Matrix jf = numerical_jacobian(problem.f, current.mean);
        GaussianBelief pred;
        pred.mean = problem.f(current.mean);
        if (!pred.mean.allFinite()) throw IntegrationError("EKF prediction diverged");
        pred.cov = jf * current.cov * jf.transpose() + problem.process_cov;
        symmetrize(pred.cov);

        const Matrix jh = numerical_jacobian(problem.h, pred.mean);
        const Vector z_pred = problem.h(pred.mean);
        Matrix p_zz = jh * pred.cov * jh.transpose() + problem.obs_cov;
        symmetrize(p_zz);
        Eigen::LLT<Matrix> llt(p_zz);
        if (llt.info() != Eigen::Success) {
            out.skipped_corrections.push_back(k);
            current = std::move(pred);
            out.beliefs.push_back(current);
            continue;
        }
        const Matrix gain = llt.solve(jh * pred.cov).transpose();
        current.mean = pred.mean + gain * (observations[k] - z_pred);
        current.cov = pred.cov - gain * p_zz * gain.transpose();
        make_psd(current.cov);
        out.beliefs.push_back(current);
    }
    return out;
}

SmootherOutput urts_smooth(std::span<const GaussianBelief> filtered, const DiscreteMap& f,
                           const Matrix& process_cov, const UtParams& params)
{
    if (filtered.empty()) throw InvalidParametersError("smoother needs at least one belief");
    SmootherOutput out;
    out.beliefs.assign(filtered.begin(), filtered.end());
    for (std::size_t step = filtered.size() - 1; step-- > 0;) {
        const GaussianBelief& est = filtered[step];
        const SigmaSet set = sigma_points(est, params);
        const SigmaSet next = set.mapped(f);
        const Vector x_plus = next.weighted_mean();
        Matrix p_plus = next.weighted_cov(x_plus) + process_cov;
        symmetrize(p_plus);
        const Matrix cross = set.cross_cov(est.mean, next, x_plus);

        Eigen::LLT<Matrix> llt(p_plus);
        if (llt.info() != Eigen::Success) {
            out.stopped_at = step;
            break;
        }
        const Matrix gain = llt.solve(cross.transpose()).transpose();
        const GaussianBelief& later = out.beliefs[step + 1];
        GaussianBelief smoothed;
        smoothed.mean = est.mean + gain * (later.mean - x_plus);
        smoothed.cov = est.cov + gain * (later.cov - p_plus) * gain.transpose();
        make_psd(smoothed.cov);
        out.beliefs[step] = std::move(smoothed);
    }
    return out;
}

const char* to_string(EstimatorKind kind)
{
    switch (kind) {
    case EstimatorKind::Ukf: return "ukf";
    case EstimatorKind::UkfResample: return "ukf-resample";
    case EstimatorKind::Ekf: return "ekf";
    }
    return "?";
}

EstimatorKind estimator_from_string(const std::string& name)
{
    if (name == "ukf") return EstimatorKind::Ukf;
    if (name == "ukf-resample") return EstimatorKind::UkfResample;
    if (name == "ekf") return EstimatorKind::Ekf;
    throw InvalidParametersError("unknown estimator '" + name + "'");
}

FilterOutput run_filter(EstimatorKind kind, std::span<const Vector> observations,
                        const FilterProblem& problem, const UtParams& params)
{
    switch (kind) {
    case EstimatorKind::Ukf: return ukf_filter(observations, problem, params, false);
    case EstimatorKind::UkfResample: return ukf_filter(observations, problem, params, true);
    case EstimatorKind::Ekf: return ekf_filter(observations, problem);
    }
    throw InvalidParametersError("unknown estimator");
}

}  // namespace kfkl
