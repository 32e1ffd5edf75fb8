#include "kfkl/federation.hpp"

#include <cmath>

namespace kfkl {

std::size_t ClientNode::buffer_size() const
{
    std::size_t n = 0;
    for (const auto& block : buffer) n += block.size();
    return n;
}

ClientNode make_client(int id, std::uint64_t master_seed, double success_prob,
                       ObservationModel observer, Matrix process_cov, const AdamState& optimizer)
{
    if (!(success_prob >= 0.0 && success_prob <= 1.0))
        throw InvalidParametersError("success probability must lie in [0, 1]");
    ClientNode c;
    c.id = id;
    c.success_prob = success_prob;
    c.observer = std::move(observer);
    c.process_cov = std::move(process_cov);
    c.optimizer = optimizer;
    const auto key = static_cast<std::uint64_t>(id);
    c.arrival_rng = make_stream(master_seed, StreamRole::ClientArrival, key);
    c.observation_rng = make_stream(master_seed, StreamRole::ClientObservation, key);
    c.training_rng = make_stream(master_seed, StreamRole::ClientTraining, key);
    return c;
}

std::vector<Vector> estimate_block(const std::vector<Vector>& observations,
                                   const DiscreteMap& dynamics, const ObservationModel& observer,
                                   const Matrix& process_cov, const EstimationSettings& settings)
{
    FilterProblem problem{dynamics, observer.map(), process_cov, observer.noise_cov(),
                          settings.prior};
    const FilterOutput filtered = run_filter(settings.kind, observations, problem, settings.ut);
    std::vector<GaussianBelief> beliefs = filtered.beliefs;
    if (settings.smooth) {
        SmootherOutput smoothed = urts_smooth(beliefs, dynamics, process_cov, settings.ut);
        beliefs = std::move(smoothed.beliefs);
    }
    std::vector<Vector> states;
    states.reserve(beliefs.size());
    for (auto& b : beliefs) {
        if (!b.mean.allFinite()) throw IntegrationError("state estimate is not finite");
        states.push_back(std::move(b.mean));
    }
    return states;
}

ObservationOutcome observation_phase(ClientNode& client, const Trajectory& truth,
                                     const DiscreteMap& dynamics,
                                     const EstimationSettings& settings)
{
    std::bernoulli_distribution success(client.success_prob);
    if (!success(client.arrival_rng)) return ObservationOutcome::Missed;
    if (truth.size() < 2) return ObservationOutcome::Missed;

    if (settings.source == DataSource::Perfect) {
        client.buffer.emplace_back(truth.states.begin() + 1, truth.states.end());
        return ObservationOutcome::Appended;
    }

    std::vector<Vector> observations;
    observations.reserve(truth.size() - 1);
    for (std::size_t k = 1; k < truth.size(); ++k)
        observations.push_back(client.observer.observe(truth[k], client.observation_rng));
    try {
        client.buffer.push_back(
            estimate_block(observations, dynamics, client.observer, client.process_cov, settings));
    } catch (const Error&) {
        ++client.discarded_blocks;
        return ObservationOutcome::Discarded;
    }
    return ObservationOutcome::Appended;
}

ObservationOutcome observation_phase(ClientNode& client, const SystemModel& system,
                                     std::size_t zeta, const EstimationSettings& settings,
                                     Rng& rng)
{
    const Trajectory truth = simulate_trajectory(system, system.sample_initial_state(rng), zeta + 1);
    return observation_phase(client, truth, system.discrete_map(), settings);
}

void Policy::validate() const
{
    if (kind == Kind::Threshold && !(rho >= 1.0))
        throw InvalidParametersError("threshold multiplier rho must be >= 1");
}

const char* to_string(Policy::Kind kind)
{
    switch (kind) {
    case Policy::Kind::Random: return "random";
    case Policy::Kind::RoundRobin: return "roundrobin";
    case Policy::Kind::Threshold: return "threshold";
    }
    return "?";
}

Policy::Kind policy_from_string(const std::string& name)
{
    if (name == "random") return Policy::Kind::Random;
    if (name == "roundrobin") return Policy::Kind::RoundRobin;
    if (name == "threshold") return Policy::Kind::Threshold;
    throw InvalidParametersError("unknown policy '" + name + "'");
}

std::vector<int> select_clients(const Policy& policy, std::span<const std::size_t> buffer_sizes,
                                std::size_t round, std::size_t zeta, Rng& rng)
{
    const int n = static_cast<int>(buffer_sizes.size());
    if (n == 0) return {};
    switch (policy.kind) {
    case Policy::Kind::Random: {
        std::uniform_int_distribution<int> pick(0, n - 1);
        return {pick(rng)};
    }
    case Policy::Kind::RoundRobin:
        return {static_cast<int>(round % static_cast<std::size_t>(n))};
    case Policy::Kind::Threshold: {
        const double threshold = policy.rho * static_cast<double>(zeta);
        std::vector<int> active;
        for (int i = 0; i < n; ++i)
            if (static_cast<double>(buffer_sizes[static_cast<std::size_t>(i)]) >= threshold)
                active.push_back(i);
        return active;
    }
    }
    return {};
}

DknParameters aggregate(std::span<const DknParameters> models, std::span<const double> sizes)
{
    if (models.empty()) throw InvalidParametersError("aggregation needs at least one model");
    if (models.size() != sizes.size()) throw ShapeError("one size per model is required");
    double total = 0.0;
    for (double s : sizes) {
        if (!(s > 0.0)) throw InvalidParametersError("aggregation sizes must be positive");
        total += s;
    }
    if (models.size() == 1) return models.front();

    Vector acc = Vector::Zero(static_cast<Eigen::Index>(models.front().parameter_count()));
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (!models[i].same_shape(models.front())) throw ShapeError("aggregated models differ in shape");
        acc += (sizes[i] / total) * models[i].flatten();
    }
    DknParameters out = models.front();
    out.assign(acc);
    return out;
}

RoundOutcome train_round(ServerState& server, std::vector<ClientNode>& clients,
                         const FederationSettings& settings)
{
    const std::size_t round = ++server.round;
    RoundOutcome outcome;
    outcome.sample_counts.reserve(clients.size());
    for (const auto& c : clients) outcome.sample_counts.push_back(c.buffer_size());

    outcome.active =
        select_clients(settings.policy, outcome.sample_counts, round, settings.zeta, server.policy_rng);
    if (outcome.active.empty()) return outcome;

    std::vector<DknParameters> trained;
    std::vector<double> sizes;
    for (int id : outcome.active) {
        ClientNode& client = clients[static_cast<std::size_t>(id)];
        const TrainingSet data = build_training_set(client.buffer, settings.window, settings.train.depth);
        const double size = static_cast<double>(outcome.sample_counts[static_cast<std::size_t>(id)]);
        client.buffer.clear();
        if (data.size() == 0) continue;

        if (settings.reset_moments) client.optimizer.reset_moments(server.global.parameter_count());
        if (!settings.persist_lr) client.optimizer.lr = settings.initial_lr;
        ClientUpdateResult result =
            client_update(server.global, data, client.optimizer, settings.train, client.training_rng);
        if (result.diverged) {
            outcome.dropped.push_back(id);
            continue;
        }
        trained.push_back(std::move(result.params));
        sizes.push_back(size);
    }

    if (!trained.empty()) {
        server.global = aggregate(trained, sizes);
        for (double s : sizes) outcome.aggregate_size += s;
    }
    return outcome;
}

RoundOutcome fedavg_m_round(ServerState& server, std::vector<ClientNode>& clients,
                            const FederationSettings& settings, const Trajectory& slot_truth,
                            const DiscreteMap& dynamics, const EstimationSettings& estimation)
{
    for (auto& client : clients) observation_phase(client, slot_truth, dynamics, estimation);
    return train_round(server, clients, settings);
}

double convergence_coefficient(int clients, int k, double p)
{
    if (clients < 2) throw DomainError("convergence coefficient needs at least two clients");
    if (k < 1 || k > clients) throw DomainError("k must lie in [1, N]");
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("p must lie in [0, 1]");
    if (k == clients) return 0.0;
    if (p == 0.0 || p == 1.0) return 0.0;
    const double n = clients;
    const double kk = k;
    const double log_value = std::log(4.0 * (n - kk)) + std::lgamma(n + 1.0) + kk * std::log(p)
                             + (n - kk) * std::log1p(-p) - std::log(kk * (n - 1.0))
                             - std::lgamma(kk + 1.0) - std::lgamma(n - kk + 1.0);
    return std::exp(log_value);
}

}  // namespace kfkl
