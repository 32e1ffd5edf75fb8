#include "kfkl/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace kfkl {

namespace {

TrainingSet windows_of(std::span<const Vector> states, int window, int depth)
{
    if (depth < 1) throw DomainError("prediction depth must be >= 1");
    if (window < 1) throw DomainError("window must be >= 1");
    const auto needed = static_cast<std::size_t>(window + depth);
    if (states.size() < needed)
        throw DomainError("trajectory of " + std::to_string(states.size())
                          + " states is too short for depth " + std::to_string(depth));
    const std::vector<std::vector<Vector>> block{std::vector<Vector>(states.begin(), states.end())};
    return build_training_set(block, window, depth);
}

double mean(std::span<const double> values)
{
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace

double prediction_error_state(const DknParameters& p, std::span<const Vector> states, int depth,
                              int window)
{
    const TrainingSet w = windows_of(states, window, depth);
    const Matrix predicted = decode(p, advance(p, encode(p, w.inputs), depth));
    return (predicted - w.targets).squaredNorm()
           / static_cast<double>(w.targets.rows() * w.targets.cols());
}

double prediction_error_latent(const DknParameters& p, std::span<const Vector> states, int depth,
                               int window)
{
    const TrainingSet w = windows_of(states, window, depth);
    const Matrix predicted = advance(p, encode(p, w.inputs), depth);
    const Matrix actual = encode(p, w.targets);
    return (actual - predicted).squaredNorm() / static_cast<double>(actual.rows() * actual.cols());
}

double composite_metric(std::span<const double> state_errors, std::span<const double> latent_errors)
{
    return 0.5 * mean(state_errors) + 0.5 * mean(latent_errors);
}

double composite_metric(const DknParameters& p, std::span<const Vector> states, int l1, int l2,
                        int window)
{
    std::vector<double> s;
    std::vector<double> z;
    for (int l = 1; l <= l1; ++l) s.push_back(prediction_error_state(p, states, l, window));
    for (int l = 1; l <= l2; ++l) z.push_back(prediction_error_latent(p, states, l, window));
    return composite_metric(s, z);
}

MetricReport evaluate_model(const DknParameters& p, std::span<const Vector> test,
                            const EvaluationSettings& settings)
{
    MetricReport r;
    for (int l = 1; l <= settings.l1; ++l)
        r.state_errors.push_back(prediction_error_state(p, test, l, settings.window));
    for (int l = 1; l <= settings.l2; ++l)
        r.latent_errors.push_back(prediction_error_latent(p, test, l, settings.window));
    r.composite = composite_metric(r.state_errors, r.latent_errors);
    const TrainingSet w = windows_of(test, settings.window, settings.depth);
    r.test_loss = dkn_loss(p, w.inputs, w.targets, settings.weights, settings.depth);
    return r;
}

const char* to_string(Scheme scheme)
{
    switch (scheme) {
    case Scheme::SingleClient: return "single";
    case Scheme::PerfectData: return "perfect";
    case Scheme::Centralized: return "central";
    case Scheme::KfFedKl: return "fedkl";
    }
    return "?";
}

Scheme scheme_from_string(const std::string& name)
{
    if (name == "single") return Scheme::SingleClient;
    if (name == "perfect") return Scheme::PerfectData;
    if (name == "central") return Scheme::Centralized;
    if (name == "fedkl") return Scheme::KfFedKl;
    throw InvalidParametersError("unknown scheme '" + name + "'");
}

ObservationModel make_observer(const ExperimentConfig& config, int state_dim, Rng& rng)
{
    if (config.observer == "projection")
        return make_projection_observer(state_dim, diagonal_from(config.sigma_h, 2, "sigma_h"), rng);
    const Matrix noise = diagonal_from(config.sigma_h, state_dim, "sigma_h");
    if (config.observer == "identity")
        return ObservationModel::affine_identity(Matrix::Zero(state_dim, state_dim), noise);
    if (config.observer == "affine")
        return make_affine_identity_observer(state_dim, config.xi_max, noise, rng);
    throw InvalidParametersError("unknown observer '" + config.observer + "'");
}

Environment synthetic_environment(const ExperimentConfig& config)
{
    Environment env;
    env.system = config.make_system();
    const std::size_t length = config.zeta + 1;
    env.slot_source = [system = env.system, length](Rng& rng) {
        return simulate_trajectory(system, system.sample_initial_state(rng), length);
    };
    Rng test_rng = make_stream(config.seed, StreamRole::TestTrajectory);
    env.test = simulate_trajectory(env.system, env.system.sample_initial_state(test_rng), length);
    env.observer_factory = [config, dim = env.system.dim](int, Rng& rng) {
        return make_observer(config, dim, rng);
    };
    return env;
}

namespace {

/// Clients above the trigger ship their buffers; the server trains on the pool.
RoundOutcome centralized_round(ServerState& server, std::vector<ClientNode>& clients,
                               const FederationSettings& settings, AdamState& optimizer, Rng& rng,
                               std::size_t& dropped)
{
    const std::size_t round = ++server.round;
    RoundOutcome outcome;
    for (const auto& c : clients) outcome.sample_counts.push_back(c.buffer_size());
    outcome.active =
        select_clients(settings.policy, outcome.sample_counts, round, settings.zeta, server.policy_rng);

    std::vector<std::vector<Vector>> pooled;
    double size = 0.0;
    for (int id : outcome.active) {
        auto& client = clients[static_cast<std::size_t>(id)];
        size += static_cast<double>(outcome.sample_counts[static_cast<std::size_t>(id)]);
        for (auto& block : client.buffer) pooled.push_back(std::move(block));
        client.buffer.clear();
    }
    const TrainingSet data = build_training_set(pooled, settings.window, settings.train.depth);
    if (data.size() == 0) return outcome;

    if (settings.reset_moments) optimizer.reset_moments(server.global.parameter_count());
    if (!settings.persist_lr) optimizer.lr = settings.initial_lr;
    ClientUpdateResult result = client_update(server.global, data, optimizer, settings.train, rng);
    if (result.diverged) {
        ++dropped;
        return outcome;
    }
    server.global = std::move(result.params);
    outcome.aggregate_size = size;
    return outcome;
}

}  // namespace

RunResult run_scheme(Scheme scheme, const ExperimentConfig& base, const Environment& env)
{
    ExperimentConfig config = base;
    if (scheme == Scheme::SingleClient) config.clients = 1;
    const int d = env.system.dim;
    const std::uint64_t seed = config.seed;

    EstimationSettings estimation = config.estimation_settings(d);
    estimation.source = scheme == Scheme::PerfectData ? DataSource::Perfect : DataSource::Estimated;
    const FederationSettings federation = config.federation_settings();
    const Matrix process_cov = diagonal_from(config.sigma_f, d, "sigma_f");

    std::vector<ClientNode> clients;
    clients.reserve(static_cast<std::size_t>(config.clients));
    for (int n = 0; n < config.clients; ++n) {
        Rng observer_rng = make_stream(seed, StreamRole::Observer, static_cast<std::uint64_t>(n));
        clients.push_back(make_client(n, seed, config.success_prob, env.observer_factory(n, observer_rng),
                                      process_cov, config.initial_optimizer()));
    }

    ServerState server;
    Rng init_rng = make_stream(seed, StreamRole::ServerInit, 0);
    server.global = init_dkn(config.dkn_config(d), init_rng);
    server.policy_rng = make_stream(seed, StreamRole::ServerPolicy);
    AdamState central_optimizer = config.initial_optimizer();
    Rng central_rng = make_stream(seed, StreamRole::ServerInit, 1);

    Rng slot_rng = make_stream(seed, StreamRole::System);
    const DiscreteMap dynamics = env.system.discrete_map();
    const EvaluationSettings eval{config.l1, config.l2, config.window, config.depth, config.weights};

    RunResult result;
    result.rounds.reserve(config.rounds);
    for (std::size_t m = 0; m < config.rounds; ++m) {
        const auto start = std::chrono::steady_clock::now();
        const Trajectory truth = env.slot_source(slot_rng);
        RoundOutcome outcome;
        if (scheme == Scheme::Centralized) {
            for (auto& c : clients) observation_phase(c, truth, dynamics, estimation);
            outcome = centralized_round(server, clients, federation, central_optimizer, central_rng,
                                        result.dropped_updates);
        } else {
            outcome = fedavg_m_round(server, clients, federation, truth, dynamics, estimation);
            result.dropped_updates += outcome.dropped.size();
        }

        RoundRecord record;
        record.round = server.round;
        record.active = std::move(outcome.active);
        record.aggregate_size = outcome.aggregate_size;
        record.sample_counts = std::move(outcome.sample_counts);
        record.metrics = evaluate_model(server.global, env.test.states, eval);
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.rounds.push_back(std::move(record));
    }
    for (const auto& c : clients) result.discarded_blocks += c.discarded_blocks;
    result.model = std::move(server.global);
    return result;
}

RunResult run_scheme(Scheme scheme, const ExperimentConfig& config)
{
    return run_scheme(scheme, config, synthetic_environment(config));
}

double final_window_mean(std::span<const RoundRecord> rounds, std::size_t count,
                         const std::function<double(const RoundRecord&)>& value)
{
    if (rounds.empty()) throw DomainError("no rounds to average");
    const std::size_t n = std::min(count, rounds.size());
    double sum = 0.0;
    for (std::size_t i = rounds.size() - n; i < rounds.size(); ++i) sum += value(rounds[i]);
    return sum / static_cast<double>(n);
}

std::vector<EstimatorRow> estimator_benchmark(std::span<const EstimatorKind> methods,
                                              const ExperimentConfig& config)
{
    const SystemModel system = config.make_system();
    const int d = system.dim;
    const std::size_t steps = config.zeta;
    const std::size_t tail = config.bench_final_steps;
    if (tail > steps) throw InvalidParametersError("bench_final_steps exceeds zeta");
    const auto trajectories = static_cast<std::size_t>(config.bench_trajectories);
    const EstimationSettings settings = config.estimation_settings(d);
    const Matrix process_cov = diagonal_from(config.sigma_f, d, "sigma_f");
    const DiscreteMap dynamics = system.discrete_map();
    constexpr std::size_t max_attempts = 20;

    std::vector<EstimatorRow> rows;
    for (EstimatorKind kind : methods) {
        EstimatorRow row;
        row.kind = kind;
        // errors[t][s]: step s of the final window on trajectory t
        std::vector<std::vector<double>> errors(trajectories, std::vector<double>(tail));
        for (std::size_t t = 0; t < trajectories; ++t) {
            for (std::size_t attempt = 0;; ++attempt) {
                if (attempt == max_attempts)
                    throw CorrectionFailureError("estimator failed on every reseeded trajectory");
                Rng rng = make_stream(config.seed, StreamRole::Estimation, t + attempt * trajectories);
                const ObservationModel observer = make_observer(config, d, rng);
                const Trajectory truth =
                    simulate_trajectory(system, system.sample_initial_state(rng), steps + 1);
                std::vector<Vector> observations;
                observations.reserve(steps);
                for (std::size_t k = 1; k <= steps; ++k) observations.push_back(observer.observe(truth[k], rng));
                const FilterProblem problem{dynamics, observer.map(), process_cov, observer.noise_cov(),
                                            settings.prior};
                try {
                    const FilterOutput out = run_filter(kind, observations, problem, settings.ut);
                    bool finite = true;
                    for (std::size_t s = 0; s < tail; ++s) {
                        const std::size_t k = steps - tail + s;
                        const Vector& estimate = out.beliefs[k].mean;
                        finite = finite && estimate.allFinite();
                        errors[t][s] = (truth[k + 1] - estimate).lpNorm<1>() / d;
                    }
                    if (finite) break;
                } catch (const Error&) {
                }
                ++row.reseeded;
            }
        }
        double total = 0.0;
        double spread = 0.0;
        for (std::size_t s = 0; s < tail; ++s) {
            double m = 0.0;
            for (std::size_t t = 0; t < trajectories; ++t) m += errors[t][s];
            m /= static_cast<double>(trajectories);
            double var = 0.0;
            for (std::size_t t = 0; t < trajectories; ++t) var += (errors[t][s] - m) * (errors[t][s] - m);
            total += m;
            spread += std::sqrt(var / static_cast<double>(trajectories));
        }
        row.mean_error = total / static_cast<double>(tail);
        row.spread = spread / static_cast<double>(tail);
        rows.push_back(row);
    }
    return rows;
}

std::vector<AblationRow> ablation_run(std::span<const LossWeights> settings,
                                      const ExperimentConfig& config, int seeds)
{
    if (seeds < 1) throw InvalidParametersError("ablation needs at least one seed");
    std::vector<AblationRow> rows;
    for (const LossWeights& w : settings) {
        AblationRow row;
        row.weights = w;
        for (int s = 0; s < seeds; ++s) {
            ExperimentConfig run = config;
            run.weights = w;
            run.seed = config.seed + static_cast<std::uint64_t>(s);
            const RunResult r = run_scheme(Scheme::KfFedKl, run);
            const auto window = config.final_window;
            row.linear += final_window_mean(r.rounds, window,
                                            [](const RoundRecord& x) { return x.metrics.test_loss.linear; });
            row.reconstruction += final_window_mean(
                r.rounds, window, [](const RoundRecord& x) { return x.metrics.test_loss.reconstruction; });
            row.prediction += final_window_mean(
                r.rounds, window, [](const RoundRecord& x) { return x.metrics.test_loss.prediction; });
        }
        row.linear /= seeds;
        row.reconstruction /= seeds;
        row.prediction /= seeds;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace kfkl
