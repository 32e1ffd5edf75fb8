#pragma once

#include <span>
#include <vector>

#include "kfkl/common.hpp"
#include "kfkl/dkn.hpp"
#include "kfkl/dynamics.hpp"
#include "kfkl/estimation.hpp"

namespace kfkl {

/// How a client turns a successful observation into training states.
enum class DataSource {
    Estimated,  // filter + smoother over noisy observations
    Perfect,    // true states
};

struct EstimationSettings {
    EstimatorKind kind = EstimatorKind::Ukf;
    UtParams ut;
    GaussianBelief prior;
    bool smooth = true;
    DataSource source = DataSource::Estimated;
};

struct ClientNode {
    int id = 0;
    double success_prob = 0.7;
    ObservationModel observer;
    Matrix process_cov;
    AdamState optimizer;
    /// Smoothed-estimate blocks awaiting training.
    std::vector<std::vector<Vector>> buffer;
    std::size_t discarded_blocks = 0;
    Rng arrival_rng;
    Rng observation_rng;
    Rng training_rng;

    /// Number of buffered states.
    std::size_t buffer_size() const;
};

/// Client whose streams are derived from (master seed, id).
ClientNode make_client(int id, std::uint64_t master_seed, double success_prob,
                       ObservationModel observer, Matrix process_cov, const AdamState& optimizer);

enum class ObservationOutcome { Missed, Appended, Discarded };

/// With probability p_n the client observes `truth` and buffers one block.
/// `truth` holds the state preceding the block followed by the block states;
/// the first state is never observed (it is what the filter prior describes).
ObservationOutcome observation_phase(ClientNode& client, const Trajectory& truth,
                                     const DiscreteMap& dynamics,
                                     const EstimationSettings& settings);

/// Variant that simulates its own fresh block of `zeta` states.
ObservationOutcome observation_phase(ClientNode& client, const SystemModel& system,
                                     std::size_t zeta, const EstimationSettings& settings,
                                     Rng& rng);

/// Turns one block of observations into states for training.
std::vector<Vector> estimate_block(const std::vector<Vector>& observations,
                                   const DiscreteMap& dynamics, const ObservationModel& observer,
                                   const Matrix& process_cov, const EstimationSettings& settings);

struct Policy {
    enum class Kind { Random, RoundRobin, Threshold };
    Kind kind = Kind::Threshold;
    /// Threshold multiplier: a client qualifies once it holds rho * zeta states.
    double rho = 5.0;

    void validate() const;
};

const char* to_string(Policy::Kind kind);
Policy::Kind policy_from_string(const std::string& name);

std::vector<int> select_clients(const Policy& policy, std::span<const std::size_t> buffer_sizes,
                                std::size_t round, std::size_t zeta, Rng& rng);

/// Sum_n (size_n / sum sizes) * model_n, coordinate-wise.
DknParameters aggregate(std::span<const DknParameters> models, std::span<const double> sizes);

struct ServerState {
    DknParameters global;
    std::size_t round = 0;
    Rng policy_rng;
};

struct FederationSettings {
    Policy policy;
    std::size_t zeta = 300;
    TrainOptions train;
    int window = 1;
    /// Adam moments restart whenever a client receives the global model.
    bool reset_moments = true;
    /// Learning rate keeps decaying across rounds at each client.
    bool persist_lr = true;
    double initial_lr = 1e-3;
};

struct RoundOutcome {
    std::vector<int> active;
    double aggregate_size = 0.0;
    /// Buffered states per client at selection time.
    std::vector<std::size_t> sample_counts;
    std::vector<int> dropped;
};

/// Server side of one round: selection, local training of the active
/// clients, buffer reset and aggregation. Observation phases have already run.
RoundOutcome train_round(ServerState& server, std::vector<ClientNode>& clients,
                         const FederationSettings& settings);

/// Observation phase for every client on the shared slot trajectory, then
/// the training round.
RoundOutcome fedavg_m_round(ServerState& server, std::vector<ClientNode>& clients,
                            const FederationSettings& settings, const Trajectory& slot_truth,
                            const DiscreteMap& dynamics, const EstimationSettings& estimation);

/// Coefficient C_k of the convergence bound, evaluated with log-factorials.
double convergence_coefficient(int clients, int k, double p);

}  // namespace kfkl
