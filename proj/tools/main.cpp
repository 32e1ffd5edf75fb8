#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kfkl/experiment.hpp"

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string scheme;
    std::string policy;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o)
{
    cmd->add_option("--config", o.config_path, "Configuration file (key = value lines)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Master seed");
    cmd->add_option("--out", o.out, "Run directory");
    cmd->add_option("--scheme", o.scheme, "single | perfect | central | fedkl");
    cmd->add_option("--policy", o.policy, "random | roundrobin | threshold");
    cmd->add_option("--set", o.overrides, "Extra key=value override (repeatable)");
}

kfkl::ExperimentConfig resolve(const CommonOptions& o, kfkl::ExperimentConfig base)
{
    kfkl::ExperimentConfig config = o.config_path.empty() ? std::move(base) : kfkl::parse_config(o.config_path);
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw kfkl::ConfigError("--set expects key=value, got '" + kv + "'");
        kfkl::set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed) config.seed = *o.seed;
    if (!o.out.empty()) kfkl::set_config_value(config, "out", o.out);
    if (!o.scheme.empty()) kfkl::set_config_value(config, "scheme", o.scheme);
    if (!o.policy.empty()) kfkl::set_config_value(config, "policy", o.policy);
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Federated Koopman learning from filtered state estimates"};
    app.require_subcommand(1);

    CommonOptions opts;
    auto* simulate = app.add_subcommand("simulate", "Simulate one block and its observations");
    auto* train = app.add_subcommand("train-fed", "Run a training scheme and record every round");
    auto* bench = app.add_subcommand("bench-estimators", "Compare UKF, UKF with resampling and EKF");
    auto* ablate = app.add_subcommand("ablate", "Loss-weight ablation");
    auto* ingest = app.add_subcommand("ingest-pendulum", "Convert measured double-pendulum angles to states");
    auto* real = app.add_subcommand("real-data", "Double-pendulum experiment (simulated trials if no files)");
    for (auto* cmd : {simulate, train, bench, ablate, ingest, real}) add_common(cmd, opts);

    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::path dir;
        if (*simulate) {
            dir = kfkl::cmd_simulate(resolve(opts, {}));
        } else if (*train) {
            const auto config = resolve(opts, {});
            dir = kfkl::cmd_train_fed(config, kfkl::scheme_from_string(config.scheme));
        } else if (*bench) {
            dir = kfkl::cmd_bench_estimators(resolve(opts, {}));
        } else if (*ablate) {
            dir = kfkl::cmd_ablate(resolve(opts, {}));
        } else if (*ingest) {
            dir = kfkl::cmd_ingest_pendulum(resolve(opts, kfkl::real_data_profile()));
        } else if (*real) {
            dir = kfkl::cmd_real_data(resolve(opts, kfkl::real_data_profile()));
        }
        std::cout << dir.string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "kfkl: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
