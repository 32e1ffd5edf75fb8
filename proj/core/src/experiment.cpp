#include "kfkl/experiment.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace kfkl {

namespace fs = std::filesystem;

namespace {

template <class T>
std::string join(const std::vector<T>& values, char sep)
{
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += sep;
        if constexpr (std::is_floating_point_v<T>)
            s += format_real(values[i]);
        else
            s += std::to_string(values[i]);
    }
    return s;
}

std::ofstream open_output(const fs::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    return os;
}

fs::path prepare_dir(const ExperimentConfig& config)
{
    const fs::path dir(config.out);
    write_run_header(dir, config);
    return dir;
}

void write_training_run(const fs::path& dir, const ExperimentConfig& config, Scheme scheme,
                        const RunResult& result)
{
    {
        auto os = open_output(dir / "rounds.csv");
        write_rounds_csv(os, result.rounds);
    }
    {
        auto os = open_output(dir / "timing.csv");
        write_timing_csv(os, result.rounds);
    }
    save_parameters((dir / "model.dkn").string(), result.model);

    const std::span<const RoundRecord> rounds(result.rounds);
    const auto window = config.final_window;
    auto os = open_output(dir / "summary.csv");
    os << "key,value\n";
    os << "scheme," << to_string(scheme) << "\n";
    os << "rounds," << rounds.size() << "\n";
    os << "final_window," << std::min(window, rounds.size()) << "\n";
    if (!rounds.empty()) {
        os << "first_test_loss," << format_real(rounds.front().metrics.test_loss.total) << "\n";
        const std::pair<const char*, double LossBreakdown::*> losses[] = {
            {"final_test_loss", &LossBreakdown::total},
            {"final_test_linear", &LossBreakdown::linear},
            {"final_test_reconstruction", &LossBreakdown::reconstruction},
            {"final_test_prediction", &LossBreakdown::prediction},
        };
        for (const auto& [name, member] : losses)
            os << name << ","
               << format_real(final_window_mean(rounds, window,
                                                [m = member](const RoundRecord& r) {
                                                    return r.metrics.test_loss.*m;
                                                }))
               << "\n";
        os << "final_composite,"
           << format_real(final_window_mean(rounds, window,
                                            [](const RoundRecord& r) { return r.metrics.composite; }))
           << "\n";
    }
    os << "discarded_blocks," << result.discarded_blocks << "\n";
    os << "dropped_updates," << result.dropped_updates << "\n";
}

}  // namespace

std::string rounds_csv_header()
{
    return "round,active,aggregate_size,sample_counts,test_loss,test_linear,test_reconstruction,"
           "test_prediction,composite,state_errors,latent_errors";
}

void write_rounds_csv(std::ostream& os, std::span<const RoundRecord> rounds)
{
    os << rounds_csv_header() << "\n";
    for (const auto& r : rounds) {
        const auto& m = r.metrics;
        os << r.round << "," << join(r.active, ';') << "," << format_real(r.aggregate_size) << ","
           << join(r.sample_counts, ';') << "," << format_real(m.test_loss.total) << ","
           << format_real(m.test_loss.linear) << "," << format_real(m.test_loss.reconstruction) << ","
           << format_real(m.test_loss.prediction) << "," << format_real(m.composite) << ","
           << join(m.state_errors, ';') << "," << join(m.latent_errors, ';') << "\n";
    }
}

void write_timing_csv(std::ostream& os, std::span<const RoundRecord> rounds)
{
    os << "round,wall_seconds\n";
    for (const auto& r : rounds) os << r.round << "," << format_real(r.wall_seconds) << "\n";
}

void write_run_header(const fs::path& dir, const ExperimentConfig& config)
{
    fs::create_directories(dir);
    {
        auto os = open_output(dir / "config.resolved");
        os << serialize_config(config);
    }
    auto os = open_output(dir / "seed.txt");
    os << config.seed << "\n";
}

fs::path cmd_train_fed(const ExperimentConfig& config, Scheme scheme)
{
    config.validate();
    const RunResult result = run_scheme(scheme, config);
    const fs::path dir = prepare_dir(config);
    write_training_run(dir, config, scheme, result);
    return dir;
}

fs::path cmd_bench_estimators(const ExperimentConfig& config)
{
    config.validate();
    const EstimatorKind methods[] = {EstimatorKind::Ukf, EstimatorKind::UkfResample, EstimatorKind::Ekf};
    const auto rows = estimator_benchmark(methods, config);
    const fs::path dir = prepare_dir(config);
    auto os = open_output(dir / "summary.csv");
    os << "method,mean_error,spread,reseeded\n";
    for (const auto& r : rows)
        os << to_string(r.kind) << "," << format_real(r.mean_error) << "," << format_real(r.spread) << ","
           << r.reseeded << "\n";
    return dir;
}

fs::path cmd_ablate(const ExperimentConfig& config)
{
    config.validate();
    const auto rows = ablation_run(config.ablation_weights, config, config.ablation_seeds);
    const fs::path dir = prepare_dir(config);
    auto os = open_output(dir / "summary.csv");
    os << "w1,w2,w3,test_linear,test_reconstruction,test_prediction\n";
    for (const auto& r : rows)
        os << format_real(r.weights.linear) << "," << format_real(r.weights.reconstruction) << ","
           << format_real(r.weights.prediction) << "," << format_real(r.linear) << ","
           << format_real(r.reconstruction) << "," << format_real(r.prediction) << "\n";
    return dir;
}

fs::path cmd_simulate(const ExperimentConfig& config)
{
    config.validate();
    const Environment env = synthetic_environment(config);
    Rng slot_rng = make_stream(config.seed, StreamRole::System);
    const Trajectory truth = env.slot_source(slot_rng);
    Rng observer_rng = make_stream(config.seed, StreamRole::Observer, 0);
    const ObservationModel observer = env.observer_factory(0, observer_rng);
    Rng noise_rng = make_stream(config.seed, StreamRole::ClientObservation, 0);

    const fs::path dir = prepare_dir(config);
    {
        auto os = open_output(dir / "states.csv");
        os << "k";
        for (int i = 0; i < env.system.dim; ++i) os << ",x" << i + 1;
        os << "\n";
        for (std::size_t k = 0; k < truth.size(); ++k) {
            os << k;
            for (double v : truth[k]) os << "," << format_real(v);
            os << "\n";
        }
    }
    {
        auto os = open_output(dir / "observations.csv");
        os << "k";
        for (int i = 0; i < observer.output_dim(); ++i) os << ",z" << i + 1;
        os << "\n";
        for (std::size_t k = 1; k < truth.size(); ++k) {
            os << k;
            for (double v : observer.observe(truth[k], noise_rng)) os << "," << format_real(v);
            os << "\n";
        }
    }
    auto os = open_output(dir / "summary.csv");
    os << "key,value\nsystem," << env.system.name << "\ndim," << env.system.dim << "\nstates,"
       << truth.size() << "\n";
    return dir;
}

std::vector<double> angular_velocity(std::span<const double> angles, std::size_t window,
                                     double period, bool negate)
{
    const std::size_t n = angles.size();
    if (n < 2) throw IngestionError("angular velocity needs at least two samples");
    std::vector<double> omega(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = k > window ? k - window : 0;
        const std::size_t j = std::min(k + window, n - 1);
        const double w = (angles[i] - angles[j]) / (period * static_cast<double>(j - i));
        omega[k] = negate ? -w : w;
    }
    return omega;
}

namespace {

bool parse_number(const std::string& text, double& out)
{
    const auto b = text.find_first_not_of(" \t\r");
    if (b == std::string::npos) return false;
    const auto e = text.find_last_not_of(" \t\r");
    const std::string s = text.substr(b, e - b + 1);
    errno = 0;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && errno != ERANGE && std::isfinite(out);
}

}  // namespace

Trajectory ingest_double_pendulum(std::istream& is, const PendulumIngestOptions& options,
                                  const std::string& source)
{
    if (options.begin >= options.end) throw IngestionError("empty sample range");
    std::vector<double> theta1;
    std::vector<double> theta2;
    std::string line;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::stringstream ss(line);
        std::string a;
        std::string b;
        std::string extra;
        std::getline(ss, a, ',');
        std::getline(ss, b, ',');
        double t1 = 0.0;
        double t2 = 0.0;
        const bool ok = parse_number(a, t1) && parse_number(b, t2) && !std::getline(ss, extra, ',');
        if (!ok) {
            const bool header = row == 1 && line.find_first_of("abcdefghijklmnopqrstuvwxyz") != std::string::npos;
            if (header) continue;
            throw IngestionError(source + ": row " + std::to_string(row)
                                 + ": expected two numeric angles");
        }
        theta1.push_back(t1);
        theta2.push_back(t2);
    }
    if (theta1.size() < options.end)
        throw IngestionError(source + ": " + std::to_string(theta1.size()) + " samples, need at least "
                             + std::to_string(options.end));

    const auto omega1 = angular_velocity(theta1, options.window, options.period, options.negate);
    const auto omega2 = angular_velocity(theta2, options.window, options.period, options.negate);
    Trajectory traj;
    traj.start_index = options.begin;
    traj.states.reserve(options.end - options.begin);
    for (std::size_t k = options.begin; k < options.end; ++k) {
        Vector x(4);
        x << theta1[k], omega1[k], theta2[k], omega2[k];
        traj.states.push_back(std::move(x));
    }
    return traj;
}

Trajectory ingest_double_pendulum(const std::string& path, const PendulumIngestOptions& options)
{
    std::ifstream is(path);
    if (!is) throw IngestionError("cannot open '" + path + "'");
    return ingest_double_pendulum(is, options, path);
}

PendulumIngestOptions ingest_options(const ExperimentConfig& config)
{
    return {config.pendulum_begin, config.pendulum_end, config.velocity_window, config.sample_period,
            config.negate_velocity};
}

fs::path cmd_ingest_pendulum(const ExperimentConfig& config)
{
    if (config.pendulum_files.empty()) throw IngestionError("no pendulum_files configured");
    const fs::path dir = prepare_dir(config);
    const auto options = ingest_options(config);
    for (std::size_t n = 0; n < config.pendulum_files.size(); ++n) {
        const Trajectory traj = ingest_double_pendulum(config.pendulum_files[n], options);
        auto os = open_output(dir / ("trial_" + std::to_string(n + 1) + ".csv"));
        os << "k,theta1,omega1,theta2,omega2\n";
        for (std::size_t i = 0; i < traj.size(); ++i) {
            os << traj.start_index + i;
            for (double v : traj[i]) os << "," << format_real(v);
            os << "\n";
        }
    }
    return dir;
}

ExperimentConfig real_data_profile()
{
    ExperimentConfig c;
    c.system = "double_pendulum";
    c.nu = 0.002;
    c.substeps = 4;
    c.zeta = 100;
    c.rounds = 50;
    c.epochs = 25;
    c.sigma_f = {0.01, 1.0, 0.01, 1.0};
    c.sigma_h = {0.01, 1.0, 0.01, 1.0};
    c.observer = "affine";
    c.xi_max = 0.5;
    c.final_window = 10;
    c.out = "runs/real-data";
    return c;
}

std::vector<Trajectory> synthetic_pendulum_trials(const ExperimentConfig& config)
{
    const SystemModel system = config.make_system();
    std::vector<Trajectory> trials;
    for (std::uint64_t n = 0; n < 3; ++n) {
        Rng rng = make_stream(config.seed, StreamRole::System, 1000 + n);
        const Trajectory full =
            simulate_trajectory(system, system.sample_initial_state(rng), config.pendulum_end);
        Trajectory t;
        t.start_index = config.pendulum_begin;
        t.states.assign(full.states.begin() + static_cast<std::ptrdiff_t>(config.pendulum_begin),
                        full.states.end());
        trials.push_back(std::move(t));
    }
    return trials;
}

Environment real_data_environment(const ExperimentConfig& config, std::span<const Trajectory> trials)
{
    if (trials.size() < 3) throw InvalidParametersError("real-data experiment needs three trials");
    const std::size_t length = config.zeta + 1;
    for (std::size_t n = 0; n < 2; ++n)
        if (trials[n].size() < length)
            throw InvalidParametersError("training trial shorter than one slot");

    Environment env;
    env.system = config.make_system();
    std::vector<Trajectory> training(trials.begin(), trials.begin() + 2);
    env.slot_source = [training = std::move(training), length](Rng& rng) {
        std::uniform_int_distribution<std::size_t> pick_trial(0, training.size() - 1);
        const Trajectory& trial = training[pick_trial(rng)];
        std::uniform_int_distribution<std::size_t> pick_start(0, trial.size() - length);
        const std::size_t start = pick_start(rng);
        Trajectory slot;
        slot.start_index = trial.start_index + start;
        slot.states.assign(trial.states.begin() + static_cast<std::ptrdiff_t>(start),
                           trial.states.begin() + static_cast<std::ptrdiff_t>(start + length));
        return slot;
    };

    const Trajectory& test = trials[2];
    if (config.test_begin < test.start_index || config.test_end > test.start_index + test.size())
        throw InvalidParametersError("test range lies outside the third trial");
    env.test.start_index = config.test_begin;
    env.test.states.assign(test.states.begin() + static_cast<std::ptrdiff_t>(config.test_begin - test.start_index),
                           test.states.begin() + static_cast<std::ptrdiff_t>(config.test_end - test.start_index));

    env.observer_factory = [config, dim = env.system.dim](int, Rng& rng) {
        return make_observer(config, dim, rng);
    };
    return env;
}

fs::path cmd_real_data(const ExperimentConfig& config)
{
    config.validate();
    std::vector<Trajectory> trials;
    if (config.pendulum_files.empty()) {
        trials = synthetic_pendulum_trials(config);
    } else {
        const auto options = ingest_options(config);
        for (const auto& path : config.pendulum_files) trials.push_back(ingest_double_pendulum(path, options));
    }
    const Scheme scheme = scheme_from_string(config.scheme);
    const RunResult result = run_scheme(scheme, config, real_data_environment(config, trials));
    const fs::path dir = prepare_dir(config);
    write_training_run(dir, config, scheme, result);
    return dir;
}

}  // namespace kfkl
