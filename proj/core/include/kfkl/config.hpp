#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kfkl/dkn.hpp"
#include "kfkl/estimation.hpp"
#include "kfkl/federation.hpp"

namespace kfkl {

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Table IV weight rows.
std::vector<LossWeights> default_ablation_weights();

/// Every experiment knob. Defaults reproduce the reference parameter table
/// (N=5, p=0.7, zeta=300, M=200, identity noise, alpha=0.1, kappa=-1, beta=2,
/// mu=tau=1, latent 4*d_x, one hidden layer of 30, E=10, B=64, eta=1e-3,
/// decay=1e-7, gamma=0.995, rho=5, equal loss weights).
struct ExperimentConfig {
    // system
    std::string system = "lorenz63";
    double nu = 0.01;
    int substeps = 10;

    // federation
    int clients = 5;
    double success_prob = 0.7;
    std::size_t zeta = 300;
    std::size_t rounds = 200;
    std::string policy = "threshold";
    double rho = 5.0;
    std::string scheme = "fedkl";

    // estimation; diagonal entries, a single value means value * I
    std::vector<double> sigma_f{1.0};
    std::vector<double> sigma_h{1.0};
    std::vector<double> x0_hat{0.0};
    std::vector<double> p0_hat{1.0};
    double alpha = 0.1;
    double kappa = -1.0;
    double beta = 2.0;
    std::string estimator = "ukf";
    bool smooth = true;
    std::string observer = "projection";
    double xi_max = 0.5;

    // network and training
    int window = 1;
    int depth = 1;
    int latent_dim = 0;  // 0 selects 4 * d_x
    int hidden_layers = 1;
    int hidden_width = 30;
    int epochs = 10;
    int batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 1e-7;
    double gamma = 0.995;
    LossWeights weights;
    bool reset_moments = true;
    bool persist_lr = true;

    // evaluation
    int l1 = 5;
    int l2 = 5;
    std::size_t final_window = 50;
    int bench_trajectories = 10;
    std::size_t bench_final_steps = 100;
    int ablation_seeds = 5;
    std::vector<LossWeights> ablation_weights = default_ablation_weights();

    // measured double pendulum
    std::vector<std::string> pendulum_files;
    std::size_t pendulum_begin = 1000;
    std::size_t pendulum_end = 6000;
    std::size_t velocity_window = 200;
    double sample_period = 0.002;
    bool negate_velocity = false;
    std::size_t test_begin = 1000;
    std::size_t test_end = 3000;

    // run
    std::uint64_t seed = 0;
    std::string out = "runs/default";

    bool operator==(const ExperimentConfig&) const = default;

    /// Cross-field checks; throws ConfigError.
    void validate() const;

    SystemModel make_system() const;
    DknConfig dkn_config(int state_dim) const;
    UtParams ut_params() const { return {alpha, kappa, beta}; }
    EstimationSettings estimation_settings(int state_dim) const;
    FederationSettings federation_settings() const;
    AdamState initial_optimizer() const;
    Policy make_policy() const;
};

/// `key = value` lines; `#` starts a comment. Unknown keys are rejected and
/// missing keys keep their defaults.
ExperimentConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
ExperimentConfig parse_config(const std::string& path);

/// Applies one key/value pair (used by command-line overrides).
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Every key in a fixed order with full-precision values.
std::string serialize_config(const ExperimentConfig& config);

/// Decimal text with 17 significant digits, enough to round-trip a double.
std::string format_real(double value);

/// Builds the diagonal matrix described by a scalar-or-diagonal list.
Matrix diagonal_from(const std::vector<double>& values, int dim, const std::string& name);
Vector vector_from(const std::vector<double>& values, int dim, const std::string& name);

}  // namespace kfkl
