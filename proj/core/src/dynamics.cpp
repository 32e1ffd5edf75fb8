#include "kfkl/dynamics.hpp"

#include <cmath>
#include <numbers>

namespace kfkl {

void SystemModel::validate() const
{
    if (dim <= 0) throw InvalidParametersError("system dimension must be positive");
    if (!(nu > 0.0)) throw InvalidParametersError("sampling interval must be positive");
    if (substeps < 1) throw InvalidParametersError("substeps must be >= 1");
    if (!drift) throw InvalidParametersError("system has no drift");
    if (init_low.size() != dim || init_high.size() != dim)
        throw InvalidParametersError("initial-state box does not match dimension");
}

Vector SystemModel::step(const Vector& x) const
{
    const double dt = nu / substeps;
    Vector out = x;
    for (int s = 0; s < substeps; ++s) out = rk4_step(out, drift, dt);
    return out;
}

DiscreteMap SystemModel::discrete_map() const
{
    return [self = *this](const Vector& x) { return self.step(x); };
}

Vector SystemModel::sample_initial_state(Rng& rng) const
{
    Vector x(dim);
    for (int i = 0; i < dim; ++i) {
        std::uniform_real_distribution<double> u(init_low(i), init_high(i));
        x(i) = u(rng);
    }
    return x;
}

Vector rk4_step(const Vector& x, const Drift& drift, double dt)
{
    if (!(dt > 0.0)) throw InvalidParametersError("rk4 step requires dt > 0");
    const Vector k1 = drift(x);
    const Vector k2 = drift(x + 0.5 * dt * k1);
    const Vector k3 = drift(x + 0.5 * dt * k2);
    const Vector k4 = drift(x + dt * k3);
    Vector out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!out.allFinite()) throw IntegrationError("integration diverged (non-finite state)");
    return out;
}

Vector lorenz63_drift(const Vector& x, double a, double b, double c)
{
    Vector d(3);
    d << a * (x(1) - x(0)), x(0) * (b - x(2)) - x(1), x(0) * x(1) - c * x(2);
    return d;
}

Vector vanderpol_drift(const Vector& x, double a)
{
    Vector d(2);
    d << x(1), a * (1.0 - x(0) * x(0)) * x(1) - x(0);
    return d;
}

Vector pendulum_drift(const Vector& x, double length, double g)
{
    Vector d(2);
    d << x(1), -(g / length) * std::sin(x(0));
    return d;
}

Vector double_pendulum_drift(const Vector& x, double l1, double l2, double m1, double m2,
                             double g)
{
    const double th1 = x(0), w1 = x(1), th2 = x(2), w2 = x(3);
    const double delta = th2 - th1;
    const double s = std::sin(delta);
    const double c = std::cos(delta);
    const double den1 = l1 * (m1 + m2) - l1 * m2 * c * c;
    const double den2 = l2 * (m1 + m2) - l2 * m2 * c * c;
    if (den1 < 1e-12 || den2 < 1e-12)
        throw SingularConfigurationError("double pendulum denominator is singular");

    const double dw1 = (l1 * m2 * w1 * w1 * s * c + g * m2 * std::sin(th2) * c
                        + l2 * m2 * w2 * w2 * s - g * (m1 + m2) * std::sin(th1))
                       / den1;
    const double dw2 = (-l2 * m2 * w2 * w2 * s * c
                        + (m1 + m2) * (g * std::sin(th1) * c - l1 * w1 * w1 * s - g * std::sin(th2)))
                       / den2;
    Vector d(4);
    d << w1, dw1, w2, dw2;
    return d;
}

SystemModel make_lorenz63(double a, double b, double c)
{
    SystemModel m;
    m.name = "lorenz63";
    m.dim = 3;
    m.params = {{"a", a}, {"b", b}, {"c", c}};
    m.drift = [a, b, c](const Vector& x) { return lorenz63_drift(x, a, b, c); };
    m.init_low = Vector::Constant(3, -10.0);
    m.init_high = Vector::Constant(3, 10.0);
    return m;
}

SystemModel make_vanderpol(double a)
{
    SystemModel m;
    m.name = "vanderpol";
    m.dim = 2;
    m.params = {{"a", a}};
    m.drift = [a](const Vector& x) { return vanderpol_drift(x, a); };
    m.init_low = Vector::Constant(2, -2.0);
    m.init_high = Vector::Constant(2, 2.0);
    return m;
}

SystemModel make_pendulum(double length, double g)
{
    SystemModel m;
    m.name = "pendulum";
    m.dim = 2;
    m.params = {{"L", length}, {"g", g}};
    m.drift = [length, g](const Vector& x) { return pendulum_drift(x, length, g); };
    m.init_low = Vector::Zero(2);
    m.init_high = Vector::Zero(2);
    m.init_high(0) = 2.0 * std::numbers::pi;
    return m;
}

SystemModel make_double_pendulum(double l1, double l2, double m1, double m2, double g)
{
    SystemModel m;
    m.name = "double_pendulum";
    m.dim = 4;
    m.params = {{"L1", l1}, {"L2", l2}, {"m1", m1}, {"m2", m2}, {"g", g}};
    m.drift = [=](const Vector& x) { return double_pendulum_drift(x, l1, l2, m1, m2, g); };
    // Released from rest at moderate angles; the measured dataset has no
    // stated initial range.
    m.init_low = Vector::Zero(4);
    m.init_high = Vector::Zero(4);
    m.init_low(0) = m.init_low(2) = -std::numbers::pi / 2.0;
    m.init_high(0) = m.init_high(2) = std::numbers::pi / 2.0;
    m.nu = 0.002;
    m.substeps = 4;
    return m;
}

SystemModel make_system(const std::string& name)
{
    if (name == "lorenz63") return make_lorenz63();
    if (name == "vanderpol") return make_vanderpol();
    if (name == "pendulum") return make_pendulum();
    if (name == "double_pendulum") return make_double_pendulum();
    throw InvalidParametersError("unknown system '" + name + "'");
}

Trajectory simulate_trajectory(const SystemModel& system, const Vector& x0, std::size_t length)
{
    if (length < 1) throw InvalidParametersError("trajectory length must be >= 1");
    if (x0.size() != system.dim) throw ShapeError("initial state has wrong dimension");
    if (!x0.allFinite()) throw IntegrationError("initial state is not finite");
    Trajectory traj;
    traj.states.reserve(length);
    traj.states.push_back(x0);
    for (std::size_t k = 1; k < length; ++k) traj.states.push_back(system.step(traj.states.back()));
    return traj;
}

ObservationModel ObservationModel::projection(Vector offset, Matrix basis, Matrix noise_cov)
{
    if (basis.cols() != offset.size())
        throw ShapeError("projection basis and offset dimensions differ");
    if (basis.rows() != noise_cov.rows())
        throw ShapeError("projection output dimension does not match noise covariance");
    ObservationModel m;
    m.kind_ = ObservationKind::Projection;
    m.state_dim_ = static_cast<int>(offset.size());
    m.offset_ = std::move(offset);
    m.basis_ = std::move(basis);
    m.set_noise(std::move(noise_cov));
    return m;
}

ObservationModel ObservationModel::affine_identity(Matrix perturbation, Matrix noise_cov)
{
    if (perturbation.rows() != perturbation.cols())
        throw ShapeError("perturbation must be square");
    if (perturbation.rows() != noise_cov.rows())
        throw ShapeError("perturbation and noise covariance dimensions differ");
    ObservationModel m;
    m.kind_ = ObservationKind::AffineIdentity;
    m.state_dim_ = static_cast<int>(perturbation.rows());
    m.perturbation_ = std::move(perturbation);
    m.set_noise(std::move(noise_cov));
    return m;
}

void ObservationModel::set_noise(Matrix noise_cov)
{
    if (noise_cov.rows() != noise_cov.cols()) throw ShapeError("noise covariance must be square");
    if ((noise_cov - noise_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw InvalidParametersError("noise covariance is not symmetric");
    Eigen::LLT<Matrix> llt(noise_cov);
    if (llt.info() != Eigen::Success)
        throw InvalidParametersError("noise covariance is not positive definite");
    noise_chol_ = llt.matrixL();
    noise_cov_ = std::move(noise_cov);
}

Vector ObservationModel::apply(const Vector& x) const
{
    if (kind_ == ObservationKind::Projection) return basis_ * (x - offset_);
    return x + perturbation_ * x;
}

DiscreteMap ObservationModel::map() const
{
    return [self = *this](const Vector& x) { return self.apply(x); };
}

Vector ObservationModel::observe(const Vector& x, Rng& rng) const
{
    return apply(x) + noise_chol_ * standard_normal(rng, noise_chol_.rows());
}

ObservationModel make_projection_observer(int state_dim, const Matrix& noise_cov, Rng& rng)
{
    if (state_dim != 3)
        throw InvalidParametersError("projection observer is defined for 3-dimensional states");
    std::uniform_real_distribution<double> length(0.5, 2.0);
    for (;;) {
        Matrix g(3, 3);
        for (int c = 0; c < 3; ++c) g.col(c) = standard_normal(rng, 3);
        Eigen::HouseholderQR<Matrix> qr(g);
        const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
        if (r.diagonal().cwiseAbs().minCoeff() < 1e-6) continue;
        const Matrix q = qr.householderQ() * Matrix::Identity(3, 3);
        Matrix rows(3, 3);
        for (int i = 0; i < 3; ++i) rows.row(i) = length(rng) * q.col(i).transpose();
        return ObservationModel::projection(rows.row(2).transpose(), rows.topRows(2), noise_cov);
    }
}

ObservationModel make_affine_identity_observer(int state_dim, double max_entry,
                                               const Matrix& noise_cov, Rng& rng)
{
    std::uniform_real_distribution<double> u(0.0, max_entry);
    Matrix xi(state_dim, state_dim);
    for (int c = 0; c < state_dim; ++c)
        for (int r = 0; r < state_dim; ++r) xi(r, c) = u(rng);
    return ObservationModel::affine_identity(std::move(xi), noise_cov);
}

std::vector<Vector> observe_trajectory(const Trajectory& traj, const ObservationModel& model,
                                       Rng& rng)
{
    std::vector<Vector> z;
    z.reserve(traj.size());
    for (const auto& x : traj.states) z.push_back(model.observe(x, rng));
    return z;
}

}  // namespace kfkl
