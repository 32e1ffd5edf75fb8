#include <doctest.h>

#include "kfkl/estimation.hpp"
#include "oracles.hpp"

using namespace kfkl;

namespace {

DiscreteMap affine_map(const Matrix& a, const Vector& b)
{
    return [a, b](const Vector& x) { return Vector(a * x + b); };
}

double max_abs(const Matrix& m)
{
    return m.cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("ut weights with lambda = 0")
{
    const UtWeights w = ut_weights(1, {1.0, 0.0, 0.0});
    CHECK(w.mean(0) == doctest::Approx(0.0));
    CHECK(w.mean(1) == doctest::Approx(0.5));
    CHECK(w.mean(2) == doctest::Approx(0.5));
    CHECK(w.cov(0) == doctest::Approx(0.0));
    CHECK(w.cov(1) == doctest::Approx(0.5));
}

TEST_CASE("ut weights in the reference regime")
{
    const UtParams params;
    CHECK(params.lambda(3) == doctest::Approx(-2.98));
    const UtWeights w = ut_weights(3, params);
    CHECK(w.mean(0) == doctest::Approx(-149.0));
    for (int j = 1; j < 7; ++j) CHECK(w.mean(j) == doctest::Approx(25.0));
    CHECK(w.mean.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.cov(0) == doctest::Approx(-149.0 + 1.0 - 0.01 + 2.0));
}

TEST_CASE("ut weights sum to one for any valid parameters")
{
    Rng rng(11);
    std::uniform_real_distribution<double> a(0.05, 2.0), k(-0.5, 3.0), b(0.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        const int d = 1 + i % 7;
        const UtWeights w = ut_weights(d, {a(rng), k(rng), b(rng)});
        CHECK(std::abs(w.mean.sum() - 1.0) < 1e-10);
    }
}

TEST_CASE("ut weights reject a non-positive spread scale")
{
    CHECK_THROWS_AS(ut_weights(1, {0.1, -1.0, 2.0}), InvalidParametersError);
    CHECK_THROWS_AS(ut_weights(2, {0.1, -3.0, 2.0}), InvalidParametersError);
    CHECK_THROWS_AS(ut_weights(0, {}), InvalidParametersError);
}

TEST_CASE("sigma points for a scalar unit belief")
{
    const SigmaSet s = sigma_points({Vector::Zero(1), Matrix::Identity(1, 1)}, {1.0, 0.0, 0.0});
    CHECK(s.points(0, 0) == doctest::Approx(0.0));
    CHECK(s.points(0, 1) == doctest::Approx(1.0));
    CHECK(s.points(0, 2) == doctest::Approx(-1.0));
}

TEST_CASE("sigma sets reconstruct mean and covariance")
{
    Rng rng(3);
    for (int d = 1; d <= 7; ++d) {
        for (const UtParams& params : {UtParams{}, UtParams{1.0, 0.0, 0.0}, UtParams{0.5, 2.0, 2.0}}) {
            if (!(params.alpha * params.alpha * (d + params.kappa) > 0)) continue;
            const GaussianBelief b{oracle::random_matrix(d, 1, rng), oracle::random_spd(d, rng)};
            const SigmaSet s = sigma_points(b, params);
            CHECK(max_abs(s.weighted_mean() - b.mean) < 1e-10);
            CHECK(max_abs(s.weighted_cov(b.mean) - b.cov) < 1e-10);
        }
    }
    const SigmaSet unit = sigma_points({Vector::Zero(2), Matrix::Identity(2, 2)}, {1.0, 0.0, 0.0});
    CHECK(max_abs(unit.weighted_cov(Vector::Zero(2)) - Matrix::Identity(2, 2)) < 1e-12);
}

TEST_CASE("cholesky jitter handles semi-definite input")
{
    Matrix p = Matrix::Zero(3, 3);
    p(0, 0) = 1.0;
    const Matrix l = cholesky_with_jitter(p);
    CHECK(max_abs(l * l.transpose() - p) < 1e-6);
    CHECK(max_abs(cholesky_with_jitter(Matrix::Zero(2, 2))) == 0.0);
    Matrix neg = -Matrix::Identity(2, 2);
    CHECK_THROWS_AS(cholesky_with_jitter(neg), CovarianceDegenerateError);
}

TEST_CASE("make_psd clamps negative eigenvalues")
{
    Matrix p(2, 2);
    p << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3, -1
    make_psd(p);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(p);
    CHECK(eig.eigenvalues().minCoeff() > -1e-12);
    CHECK(eig.eigenvalues().maxCoeff() == doctest::Approx(3.0));
}

TEST_CASE("prediction through the identity without noise is a no-op")
{
    Rng rng(4);
    const GaussianBelief b{oracle::random_matrix(3, 1, rng), oracle::random_spd(3, rng)};
    const Prediction p = ukf_predict(b, [](const Vector& x) { return x; }, Matrix::Zero(3, 3), {});
    CHECK(max_abs(p.belief.mean - b.mean) < 1e-12);
    CHECK(max_abs(p.belief.cov - b.cov) < 1e-12);
}

TEST_CASE("prediction through affine maps is exact")
{
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const int d = 1 + i % 7;
        const Matrix a = oracle::random_matrix(d, d, rng);
        const Vector c = oracle::random_matrix(d, 1, rng);
        const Matrix q = oracle::random_spd(d, rng);
        const GaussianBelief b{oracle::random_matrix(d, 1, rng), oracle::random_spd(d, rng)};
        const UtParams params = d > 1 ? UtParams{} : UtParams{1.0, 0.0, 2.0};
        const Prediction p = ukf_predict(b, affine_map(a, c), q, params);
        CHECK(max_abs(p.belief.mean - (a * b.mean + c)) < 1e-10);
        CHECK(max_abs(p.belief.cov - (a * b.cov * a.transpose() + q)) < 1e-10);
    }
}

TEST_CASE("scalar prediction adds process noise")
{
    const GaussianBelief b{Vector::Zero(1), Matrix::Identity(1, 1)};
    const Prediction p = ukf_predict(b, [](const Vector& x) { return x; }, Matrix::Constant(1, 1, 0.5),
                                     {1.0, 0.0, 2.0});
    CHECK(p.belief.cov(0, 0) == doctest::Approx(1.5));
}

TEST_CASE("correction: zero innovation, scalar gain and weak observations")
{
    const UtParams params{1.0, 0.0, 2.0};
    const GaussianBelief pred{Vector::Constant(1, 2.0), Matrix::Identity(1, 1)};
    const SigmaSet set = sigma_points(pred, params);
    const DiscreteMap id = [](const Vector& x) { return x; };

    const GaussianBelief same = ukf_correct(pred, set, id, Matrix::Identity(1, 1), pred.mean);
    CHECK(same.mean(0) == doctest::Approx(2.0));

    const GaussianBelief half = ukf_correct(pred, set, id, Matrix::Identity(1, 1), Vector::Constant(1, 4.0));
    CHECK(half.cov(0, 0) == doctest::Approx(0.5));
    CHECK(half.mean(0) == doctest::Approx(3.0));  // gain 0.5

    const GaussianBelief weak =
        ukf_correct(pred, set, id, Matrix::Constant(1, 1, 1e12), Vector::Constant(1, 100.0));
    CHECK(std::abs(weak.mean(0) - 2.0) < 1e-4 * 2.0);
    CHECK(std::abs(weak.cov(0, 0) - 1.0) < 1e-4);
}

TEST_CASE("static scalar system matches the scalar Kalman recursion")
{
    const DiscreteMap id = [](const Vector& x) { return x; };
    const FilterProblem problem{id, id, Matrix::Zero(1, 1), Matrix::Identity(1, 1),
                                {Vector::Constant(1, 5.0), Matrix::Identity(1, 1)}};
    const std::vector<Vector> zeros(20, Vector::Zero(1));
    const FilterOutput out = ukf_filter(zeros, problem, {1.0, 0.0, 2.0}, false);
    double mean = 5.0;
    double var = 1.0;
    for (std::size_t k = 0; k < zeros.size(); ++k) {
        const double gain = var / (var + 1.0);
        mean = mean - gain * mean;
        var = var - gain * var;
        CHECK(std::abs(out.beliefs[k].mean(0) - mean) < 1e-8);
        CHECK(std::abs(out.beliefs[k].cov(0, 0) - var) < 1e-8);
    }
    CHECK(out.beliefs.back().cov(0, 0) < out.beliefs.front().cov(0, 0));
}

TEST_CASE("filters return one belief per observation")
{
    const DiscreteMap id = [](const Vector& x) { return x; };
    const FilterProblem problem{id, id, Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                                {Vector::Zero(2), Matrix::Identity(2, 2)}};
    const std::vector<Vector> one{Vector::Ones(2)};
    for (EstimatorKind kind : {EstimatorKind::Ukf, EstimatorKind::UkfResample, EstimatorKind::Ekf})
        CHECK(run_filter(kind, one, problem, {}).beliefs.size() == 1);
    CHECK_THROWS_AS(ukf_filter(std::vector<Vector>{}, problem, {}, false), InvalidParametersError);
}

namespace {

struct LinearCase {
    oracle::LinearSystem sys;
    FilterProblem problem;
    std::vector<Vector> observations;
    oracle::Belief prior;
};

LinearCase make_linear_case(std::uint64_t seed, int steps, bool zero_process_noise)
{
    Rng rng(seed);
    LinearCase c;
    c.sys = oracle::random_linear_system(3, 2, rng);
    if (zero_process_noise) c.sys.Q.setZero();
    c.prior = {oracle::random_matrix(3, 1, rng), oracle::random_spd(3, rng)};
    Vector x = oracle::gaussian(c.prior.mean, c.prior.cov, rng);
    for (int k = 0; k < steps; ++k) {
        x = c.sys.A * x + c.sys.b;
        if (!zero_process_noise) x = oracle::gaussian(x, c.sys.Q, rng);
        c.observations.push_back(oracle::gaussian(c.sys.C * x + c.sys.e, c.sys.R, rng));
    }
    c.problem = {affine_map(c.sys.A, c.sys.b), affine_map(c.sys.C, c.sys.e), c.sys.Q, c.sys.R,
                 {c.prior.mean, c.prior.cov}};
    return c;
}

}  // namespace

TEST_CASE("resampling is a no-op on noiseless linear dynamics")
{
    const LinearCase c = make_linear_case(21, 40, true);
    const FilterOutput a = ukf_filter(c.observations, c.problem, {}, false);
    const FilterOutput b = ukf_filter(c.observations, c.problem, {}, true);
    for (std::size_t k = 0; k < a.beliefs.size(); ++k) {
        CHECK(max_abs(a.beliefs[k].mean - b.beliefs[k].mean) < 1e-10);
        CHECK(max_abs(a.beliefs[k].cov - b.beliefs[k].cov) < 1e-10);
    }
}

TEST_CASE("linear filters agree with their closed forms")
{
    const LinearCase c = make_linear_case(22, 60, false);
    const auto kf = oracle::kalman_filter(c.sys, c.prior, c.observations);
    const auto spread = oracle::spread_kalman_filter(c.sys, c.prior, c.observations);
    const FilterOutput resampled = ukf_filter(c.observations, c.problem, {}, true);
    const FilterOutput plain = ukf_filter(c.observations, c.problem, {}, false);
    const FilterOutput ekf = ekf_filter(c.observations, c.problem);
    for (std::size_t k = 0; k < kf.size(); ++k) {
        CHECK(max_abs(resampled.beliefs[k].mean - kf[k].mean) < 1e-8);
        CHECK(max_abs(resampled.beliefs[k].cov - kf[k].cov) < 1e-8);
        CHECK(max_abs(ekf.beliefs[k].mean - kf[k].mean) < 1e-6);
        CHECK(max_abs(ekf.beliefs[k].cov - kf[k].cov) < 1e-6);
        // without resampling the innovation statistics exclude process noise
        CHECK(max_abs(plain.beliefs[k].mean - spread[k].mean) < 1e-8);
        CHECK(max_abs(plain.beliefs[k].cov - spread[k].cov) < 1e-8);
    }
}

TEST_CASE("numerical jacobian of a linear map")
{
    Rng rng(6);
    const Matrix a = oracle::random_matrix(3, 4, rng);
    const Vector x = oracle::random_matrix(4, 1, rng);
    CHECK(max_abs(numerical_jacobian(affine_map(a, Vector::Zero(3)), x) - a) < 1e-8);
}

TEST_CASE("smoother: single belief and linear RTS oracle")
{
    const LinearCase c = make_linear_case(23, 50, false);
    const auto kf = oracle::kalman_filter(c.sys, c.prior, c.observations);
    const auto rts = oracle::rts_smoother(c.sys, kf);

    std::vector<GaussianBelief> filtered;
    for (const auto& b : kf) filtered.push_back({b.mean, b.cov});
    const SmootherOutput out = urts_smooth(filtered, c.problem.f, c.sys.Q, {});
    CHECK_FALSE(out.stopped_at.has_value());
    for (std::size_t k = 0; k < rts.size(); ++k) {
        CHECK(max_abs(out.beliefs[k].mean - rts[k].mean) < 1e-8);
        CHECK(max_abs(out.beliefs[k].cov - rts[k].cov) < 1e-8);
    }

    const std::vector<GaussianBelief> single{filtered.front()};
    const SmootherOutput one = urts_smooth(single, c.problem.f, c.sys.Q, {});
    REQUIRE(one.beliefs.size() == 1);
    CHECK(one.beliefs[0].mean == single[0].mean);
    CHECK(one.beliefs[0].cov == single[0].cov);
}

TEST_CASE("smoothing reduces error on lorenz63")
{
    const SystemModel sys = make_lorenz63();
    const DiscreteMap f = sys.discrete_map();
    const Matrix q = Matrix::Identity(3, 3);
    double filtered_err = 0.0;
    double smoothed_err = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng = make_stream(seed, StreamRole::Estimation);
        const ObservationModel obs = make_projection_observer(3, Matrix::Identity(2, 2), rng);
        const Trajectory truth = simulate_trajectory(sys, sys.sample_initial_state(rng), 201);
        std::vector<Vector> z;
        for (std::size_t k = 1; k < truth.size(); ++k) z.push_back(obs.observe(truth[k], rng));
        const FilterProblem problem{f, obs.map(), q, obs.noise_cov(), {Vector::Zero(3), Matrix::Identity(3, 3)}};
        const FilterOutput filt = ukf_filter(z, problem, {}, false);
        const SmootherOutput smooth = urts_smooth(filt.beliefs, f, q, {});
        for (std::size_t k = 0; k < z.size(); ++k) {
            filtered_err += (filt.beliefs[k].mean - truth[k + 1]).squaredNorm();
            smoothed_err += (smooth.beliefs[k].mean - truth[k + 1]).squaredNorm();
        }
    }
    CHECK(smoothed_err <= filtered_err);
}

TEST_CASE("estimator names round-trip")
{
    for (EstimatorKind k : {EstimatorKind::Ukf, EstimatorKind::UkfResample, EstimatorKind::Ekf})
        CHECK(estimator_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(estimator_from_string("pf"), InvalidParametersError);
}
