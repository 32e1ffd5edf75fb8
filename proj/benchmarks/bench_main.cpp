#include <benchmark/benchmark.h>

#include "kfkl/config.hpp"
#include "kfkl/dkn.hpp"
#include "kfkl/estimation.hpp"
#include "kfkl/evaluation.hpp"

using namespace kfkl;

namespace {

struct LorenzCase {
    SystemModel system = make_lorenz63();
    DiscreteMap f = system.discrete_map();
    Matrix q = Matrix::Identity(3, 3);
    ObservationModel observer;
    std::vector<Vector> states;
    std::vector<Vector> observations;
    GaussianBelief prior{Vector::Zero(3), Matrix::Identity(3, 3)};

    explicit LorenzCase(std::size_t steps)
    {
        Rng rng = make_stream(0, StreamRole::Estimation);
        observer = make_projection_observer(3, Matrix::Identity(2, 2), rng);
        const Trajectory truth = simulate_trajectory(system, system.sample_initial_state(rng), steps + 1);
        states = truth.states;
        for (std::size_t k = 1; k < truth.size(); ++k) observations.push_back(observer.observe(truth[k], rng));
    }
};

void BM_UkfStep(benchmark::State& state)
{
    const LorenzCase c(1);
    const UtParams ut;
    const DiscreteMap h = c.observer.map();
    for (auto _ : state) {
        const Prediction p = ukf_predict(c.prior, c.f, c.q, ut);
        benchmark::DoNotOptimize(ukf_correct(p.belief, p.propagated, h, c.observer.noise_cov(), c.observations[0]));
    }
}
BENCHMARK(BM_UkfStep);

void BM_FilterAndSmooth(benchmark::State& state)
{
    const LorenzCase c(static_cast<std::size_t>(state.range(0)));
    const UtParams ut;
    const FilterProblem problem{c.f, c.observer.map(), c.q, c.observer.noise_cov(), c.prior};
    for (auto _ : state) {
        const FilterOutput out = run_filter(EstimatorKind::Ukf, c.observations, problem, ut);
        benchmark::DoNotOptimize(urts_smooth(out.beliefs, c.f, c.q, ut));
    }
}
BENCHMARK(BM_FilterAndSmooth)->Arg(300)->Unit(benchmark::kMillisecond);

void BM_DknGradients(benchmark::State& state)
{
    Rng rng(1);
    const DknConfig config = DknConfig::defaults_for(3);
    const DknParameters p = init_dkn(config, rng);
    const auto batch = static_cast<Eigen::Index>(state.range(0));
    const Matrix x = Matrix::Random(config.input_dim(), batch);
    const Matrix t = Matrix::Random(config.input_dim(), batch);
    for (auto _ : state) benchmark::DoNotOptimize(dkn_gradients(p, x, t, config.weights, 1));
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_DknGradients)->Arg(1)->Arg(64);

void BM_ClientUpdate(benchmark::State& state)
{
    Rng rng(2);
    const DknConfig config = DknConfig::defaults_for(3);
    const DknParameters start = init_dkn(config, rng);
    const LorenzCase c(300);
    const std::vector<std::vector<Vector>> blocks{c.states};
    const TrainingSet data = build_training_set(blocks, 1, 1);
    TrainOptions options;
    options.epochs = 10;
    for (auto _ : state) {
        AdamState adam;
        adam.reset_moments(start.parameter_count());
        benchmark::DoNotOptimize(client_update(start, data, adam, options, rng));
    }
}
BENCHMARK(BM_ClientUpdate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
