#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kfkl/config.hpp"
#include "kfkl/evaluation.hpp"

namespace kfkl {

class IngestionError : public Error {
public:
    using Error::Error;
};

/// rounds.csv columns, in order.
std::string rounds_csv_header();
/// Full-precision rows; list fields are ';'-separated. Wall time is excluded
/// so the file is a pure function of config and seed.
void write_rounds_csv(std::ostream& os, std::span<const RoundRecord> rounds);
void write_timing_csv(std::ostream& os, std::span<const RoundRecord> rounds);

/// Writes config.resolved and seed.txt into `dir`, creating it if needed.
void write_run_header(const std::filesystem::path& dir, const ExperimentConfig& config);

/// Each command returns the run directory it populated.
std::filesystem::path cmd_train_fed(const ExperimentConfig& config, Scheme scheme);
std::filesystem::path cmd_bench_estimators(const ExperimentConfig& config);
std::filesystem::path cmd_ablate(const ExperimentConfig& config);
/// Ground truth and client-0 observations of one simulated block.
std::filesystem::path cmd_simulate(const ExperimentConfig& config);

/// Angular velocity by the centred difference
///   w_k = (theta_i - theta_j) / (period * (j - i)),
///   i = max(0, k - window), j = min(k + window, n - 1),
/// taken literally (a rising angle yields a negative rate); `negate` flips it.
std::vector<double> angular_velocity(std::span<const double> angles, std::size_t window,
                                     double period, bool negate);

struct PendulumIngestOptions {
    std::size_t begin = 1000;
    std::size_t end = 6000;
    std::size_t window = 200;
    double period = 0.002;
    bool negate = false;
};

/// One trial: rows of "theta1,theta2" (a leading header line is allowed).
/// Returns (theta1, omega1, theta2, omega2) over samples [begin, end), with
/// `start_index` set to `begin`.
Trajectory ingest_double_pendulum(std::istream& is, const PendulumIngestOptions& options,
                                  const std::string& source = "<input>");
Trajectory ingest_double_pendulum(const std::string& path, const PendulumIngestOptions& options);

PendulumIngestOptions ingest_options(const ExperimentConfig& config);

/// Ingests every configured pendulum file into `dir` as trial_<n>.csv.
std::filesystem::path cmd_ingest_pendulum(const ExperimentConfig& config);

/// Double pendulum at 500 Hz, 100 states per observation, 50 slots, 25 local
/// epochs, diag(0.01, 1, 0.01, 1) noise and I + Xi observers with Xi in [0, 0.5].
ExperimentConfig real_data_profile();

/// Three simulated trials covering samples [0, pendulum_end), used when no
/// measured files are configured.
std::vector<Trajectory> synthetic_pendulum_trials(const ExperimentConfig& config);

/// Trials 1 and 2 feed the slots, samples [test_begin, test_end) of trial 3 are
/// the test set. Requires at least three trials.
Environment real_data_environment(const ExperimentConfig& config, std::span<const Trajectory> trials);

std::filesystem::path cmd_real_data(const ExperimentConfig& config);

}  // namespace kfkl
