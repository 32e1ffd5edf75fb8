#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kfkl/common.hpp"

namespace kfkl {

using Drift = std::function<Vector(const Vector&)>;
using DiscreteMap = std::function<Vector(const Vector&)>;

/// Continuous-time system sampled every `nu` time units.
struct SystemModel {
    std::string name;
    int dim = 0;
    Drift drift;
    std::map<std::string, double> params;
    double nu = 0.01;
    int substeps = 10;
    /// Box from which fresh initial states are drawn uniformly.
    Vector init_low;
    Vector init_high;

    void validate() const;

    /// One sampling interval: `substeps` RK4 steps of size nu / substeps.
    Vector step(const Vector& x) const;

    /// The discrete map handed to the filters.
    DiscreteMap discrete_map() const;

    Vector sample_initial_state(Rng& rng) const;
};

struct Trajectory {
    std::vector<Vector> states;
    std::size_t start_index = 0;

    std::size_t size() const { return states.size(); }
    const Vector& operator[](std::size_t k) const { return states[k]; }
};

Vector rk4_step(const Vector& x, const Drift& drift, double dt);

Vector lorenz63_drift(const Vector& x, double a, double b, double c);
Vector vanderpol_drift(const Vector& x, double a);
Vector pendulum_drift(const Vector& x, double length, double g);
/// State ordering (theta1, omega1, theta2, omega2).
Vector double_pendulum_drift(const Vector& x, double l1, double l2, double m1, double m2,
                             double g);

SystemModel make_lorenz63(double a = 10.0, double b = 28.0, double c = 8.0 / 3.0);
SystemModel make_vanderpol(double a = 2.0);
SystemModel make_pendulum(double length = 1.0, double g = 9.8);
SystemModel make_double_pendulum(double l1 = 0.172, double l2 = 0.143, double m1 = 0.311,
                                 double m2 = 0.111, double g = 9.8);
/// Looks a system up by name: lorenz63, vanderpol, pendulum, double_pendulum.
SystemModel make_system(const std::string& name);

/// Ground truth of `length` samples starting at x0. No process noise.
Trajectory simulate_trajectory(const SystemModel& system, const Vector& x0, std::size_t length);

enum class ObservationKind { Projection, AffineIdentity };

/// z = h(x) + v with v ~ N(0, noise_cov).
///   Projection:      h(x) = B (x - o), B has rows b_1, b_2
///   AffineIdentity:  h(x) = (I + Xi) x
class ObservationModel {
public:
    ObservationModel() = default;
    static ObservationModel projection(Vector offset, Matrix basis, Matrix noise_cov);
    static ObservationModel affine_identity(Matrix perturbation, Matrix noise_cov);

    ObservationKind kind() const { return kind_; }
    int state_dim() const { return state_dim_; }
    int output_dim() const { return static_cast<int>(noise_cov_.rows()); }
    const Vector& offset() const { return offset_; }
    const Matrix& basis() const { return basis_; }
    const Matrix& perturbation() const { return perturbation_; }
    const Matrix& noise_cov() const { return noise_cov_; }

    /// Noiseless observation map.
    Vector apply(const Vector& x) const;
    DiscreteMap map() const;

    Vector observe(const Vector& x, Rng& rng) const;

private:
    void set_noise(Matrix noise_cov);

    ObservationKind kind_ = ObservationKind::Projection;
    int state_dim_ = 0;
    Vector offset_;
    Matrix basis_;
    Matrix perturbation_;
    Matrix noise_cov_;
    Matrix noise_chol_;
};

/// Three mutually orthogonal random 3-vectors with lengths in [0.5, 2]; the
/// first two form the basis rows, the third is the offset.
ObservationModel make_projection_observer(int state_dim, const Matrix& noise_cov, Rng& rng);

/// I + Xi with every entry of Xi uniform on [0, max_entry].
ObservationModel make_affine_identity_observer(int state_dim, double max_entry,
                                               const Matrix& noise_cov, Rng& rng);

std::vector<Vector> observe_trajectory(const Trajectory& traj, const ObservationModel& model,
                                       Rng& rng);

}  // namespace kfkl
