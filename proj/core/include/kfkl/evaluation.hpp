#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kfkl/config.hpp"
#include "kfkl/dkn.hpp"
#include "kfkl/dynamics.hpp"
#include "kfkl/federation.hpp"

namespace kfkl {

/// Mean over every valid start k of (1/d)||x_{k+l} - dec(K^l enc(x_k))||^2,
/// where x_k is the window of `window` states starting at k. Throws
/// DomainError when the trajectory is too short for depth l.
double prediction_error_state(const DknParameters& p, std::span<const Vector> states, int depth,
                              int window = 1);

/// Same average in latent space: (1/d_y)||enc(x_{k+l}) - K^l enc(x_k)||^2.
double prediction_error_latent(const DknParameters& p, std::span<const Vector> states, int depth,
                               int window = 1);

/// Half the mean state error plus half the mean latent error.
double composite_metric(std::span<const double> state_errors, std::span<const double> latent_errors);
double composite_metric(const DknParameters& p, std::span<const Vector> states, int l1, int l2,
                        int window = 1);

struct MetricReport {
    std::vector<double> state_errors;   // depths 1..l1
    std::vector<double> latent_errors;  // depths 1..l2
    double composite = 0.0;
    LossBreakdown test_loss;
};

struct EvaluationSettings {
    int l1 = 5;
    int l2 = 5;
    int window = 1;
    int depth = 1;
    LossWeights weights;
};

MetricReport evaluate_model(const DknParameters& p, std::span<const Vector> test,
                            const EvaluationSettings& settings);

enum class Scheme { SingleClient, PerfectData, Centralized, KfFedKl };

const char* to_string(Scheme scheme);
/// Accepts single, perfect, central, fedkl.
Scheme scheme_from_string(const std::string& name);

/// Where states come from during a run.
struct Environment {
    /// Dynamics handed to the clients' estimators.
    SystemModel system;
    /// Ground truth for one time slot: the unobserved state preceding the
    /// block followed by zeta block states.
    std::function<Trajectory(Rng&)> slot_source;
    /// Held-out true states used for every per-round evaluation.
    Trajectory test;
    /// Observation model of client n.
    std::function<ObservationModel(int client, Rng&)> observer_factory;
};

/// Simulated system from the configuration; a fresh initial state per slot.
Environment synthetic_environment(const ExperimentConfig& config);

/// Observer family selected by `config.observer` with noise covariance sigma_h.
ObservationModel make_observer(const ExperimentConfig& config, int state_dim, Rng& rng);

struct RoundRecord {
    std::size_t round = 0;
    std::vector<int> active;
    /// Total data size aggregated this round (l_m).
    double aggregate_size = 0.0;
    std::vector<std::size_t> sample_counts;
    MetricReport metrics;
    double wall_seconds = 0.0;
};

struct RunResult {
    std::vector<RoundRecord> rounds;
    DknParameters model;
    std::size_t discarded_blocks = 0;
    std::size_t dropped_updates = 0;
};

/// Runs `config.rounds` time slots of the chosen scheme. All randomness
/// derives from `config.seed`.
RunResult run_scheme(Scheme scheme, const ExperimentConfig& config, const Environment& env);
RunResult run_scheme(Scheme scheme, const ExperimentConfig& config);

/// Mean of `value(record)` over the last `count` rounds (all rounds if fewer).
double final_window_mean(std::span<const RoundRecord> rounds, std::size_t count,
                         const std::function<double(const RoundRecord&)>& value);

struct EstimatorRow {
    EstimatorKind kind = EstimatorKind::Ukf;
    /// Mean per-step (1/d)|x - x_hat|_1 over the final steps of every trajectory.
    double mean_error = 0.0;
    /// Per-step standard deviation across trajectories, averaged over steps.
    double spread = 0.0;
    /// Trajectories replaced after a filter failure.
    std::size_t reseeded = 0;
};

/// Filters `config.bench_trajectories` seeded trajectories of zeta
/// observations with every method. Trajectories and observations are shared
/// across methods.
std::vector<EstimatorRow> estimator_benchmark(std::span<const EstimatorKind> methods,
                                              const ExperimentConfig& config);

struct AblationRow {
    LossWeights weights;
    double linear = 0.0;
    double reconstruction = 0.0;
    double prediction = 0.0;
};

/// KfFedKl with each weight triple and seeds config.seed .. config.seed+seeds-1;
/// each loss component is averaged over the final window and the seeds.
std::vector<AblationRow> ablation_run(std::span<const LossWeights> settings,
                                      const ExperimentConfig& config, int seeds);

}  // namespace kfkl
