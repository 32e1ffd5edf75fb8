#include <doctest.h>

#include <cmath>
#include <sstream>

#include "kfkl/dkn.hpp"
#include "kfkl/dynamics.hpp"
#include "oracles.hpp"

using namespace kfkl;

namespace {

Matrix row(std::initializer_list<double> v)
{
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) m(0, i++) = x;
    return m;
}

DknConfig small_config(int dx, int hidden, int latent, int layers = 1)
{
    DknConfig c;
    c.state_dim = dx;
    c.latent_dim = latent;
    c.hidden_width = hidden;
    c.hidden_layers = layers;
    return c;
}

}  // namespace

TEST_CASE("default network shapes")
{
    DknConfig c = DknConfig::defaults_for(3);
    CHECK(c.latent_dim == 12);
    Rng rng(1);
    const DknParameters p = init_dkn(c, rng);
    REQUIRE(p.encoder.size() == 2);
    CHECK(p.encoder[0].weight.rows() == 30);
    CHECK(p.encoder[0].weight.cols() == 3);
    CHECK(p.encoder[1].weight.rows() == 12);
    CHECK(p.encoder[1].weight.cols() == 30);
    CHECK(p.koopman.rows() == 12);
    CHECK(p.koopman.cols() == 12);
    REQUIRE(p.decoder.size() == 2);
    CHECK(p.decoder[0].weight.rows() == 30);
    CHECK(p.decoder[0].weight.cols() == 12);
    CHECK(p.decoder[1].weight.rows() == 3);
    CHECK(p.decoder[1].weight.cols() == 30);
    CHECK(p.parameter_count() == static_cast<std::size_t>(p.flatten().size()));
}

TEST_CASE("init is deterministic and He-scaled")
{
    const DknConfig c = DknConfig::defaults_for(3);
    Rng a(7), b(7);
    CHECK(init_dkn(c, a) == init_dkn(c, b));

    double var_sum = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        Rng rng = make_stream(s, StreamRole::ServerInit);
        const Matrix w = init_dkn(c, rng).encoder[0].weight;
        const double mean = w.mean();
        var_sum += (w.array() - mean).square().sum() / static_cast<double>(w.size() - 1);
    }
    const double var = var_sum / 50.0;
    CHECK(var > (2.0 / 3.0) * 0.7);
    CHECK(var < (2.0 / 3.0) * 1.3);
}

TEST_CASE("config validation")
{
    DknConfig c = DknConfig::defaults_for(3);
    c.latent_dim = 0;
    CHECK_THROWS_AS(c.validate(), InvalidParametersError);
    c = DknConfig::defaults_for(3);
    c.weights.linear = -1;
    CHECK_THROWS_AS(c.validate(), InvalidParametersError);
}

TEST_CASE("advance with zero steps or identity K")
{
    Rng rng(2);
    DknParameters p = init_dkn(small_config(2, 4, 3), rng);
    const Matrix y = oracle::random_matrix(3, 5, rng);
    CHECK(advance(p, y, 0) == y);
    p.koopman = Matrix::Identity(3, 3);
    CHECK(advance(p, y, 5) == y);
}

TEST_CASE("hand-built scalar network")
{
    const DknParameters p = oracle::scalar_net(2.0, 3.0, 0.5);
    const Matrix x = row({1.0});
    const Matrix y = encode(p, x);
    CHECK(y(0, 0) == doctest::Approx(2.0));
    const Matrix y_next = advance(p, y, 1);
    CHECK(y_next(0, 0) == doctest::Approx(6.0));
    CHECK(decode(p, y_next)(0, 0) == doctest::Approx(3.0));

    const LossBreakdown l = dkn_loss(p, row({1.0}), row({2.0}), {}, 1);
    CHECK(l.linear == doctest::Approx(4.0));
    CHECK(l.reconstruction == doctest::Approx(0.0));
    CHECK(l.prediction == doctest::Approx(1.0));
    CHECK(l.total == doctest::Approx(5.0 / 3.0));
    CHECK(dkn_loss(p, row({1.0}), row({2.0}), {0, 0, 0}, 1).total == 0.0);
}

TEST_CASE("identity network has zero loss and zero gradient on a fixed point")
{
    const DknParameters p = oracle::identity_net(2);
    Matrix x(2, 3);
    x << 1, 2, 3, -1, 0, 4;
    const GradientResult g = dkn_gradients(p, x, x, {}, 1);
    CHECK(g.loss.total == 0.0);
    CHECK(g.grad.flatten().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("analytic gradients match central differences")
{
    Rng rng(9);
    DknConfig c = small_config(2, 4, 3);
    c.depth = 2;
    const DknParameters p = init_dkn(c, rng);
    const Matrix x = oracle::random_matrix(2, 6, rng);
    const Matrix t = oracle::random_matrix(2, 6, rng);
    const LossWeights w{0.2, 0.3, 0.5};
    const Vector analytic = dkn_gradients(p, x, t, w, c.depth).grad.flatten();
    const Vector numeric = oracle::finite_difference_gradient(
        p, [&](const DknParameters& q) { return dkn_loss(q, x, t, w, c.depth).total; }, 1e-5);
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double scale = std::max({std::abs(analytic(i)), std::abs(numeric(i)), 1e-4});
        CHECK(std::abs(analytic(i) - numeric(i)) / scale < 1e-5);
    }
}

TEST_CASE("gradient of a duplicated batch equals the single-sample gradient")
{
    Rng rng(10);
    const DknParameters p = init_dkn(small_config(3, 5, 4), rng);
    const Matrix x = oracle::random_matrix(3, 1, rng);
    const Matrix t = oracle::random_matrix(3, 1, rng);
    Matrix xx(3, 2), tt(3, 2);
    xx << x, x;
    tt << t, t;
    const Vector one = dkn_gradients(p, x, t, {}, 1).grad.flatten();
    const Vector two = dkn_gradients(p, xx, tt, {}, 1).grad.flatten();
    CHECK((one - two).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam update rules")
{
    Rng rng(12);
    const DknParameters start = init_dkn(small_config(2, 3, 2), rng);

    SUBCASE("zero gradient and zero decay leave parameters unchanged")
    {
        DknParameters p = start;
        AdamState s;
        s.decay = 0.0;
        adam_step(p, p.zeros_like(), s);
        CHECK(p == start);
    }
    SUBCASE("first step is a signed unit step")
    {
        DknParameters p = start;
        AdamState s;
        s.decay = 0.0;
        DknParameters g = start.zeros_like();
        Vector gv = oracle::random_matrix(static_cast<int>(start.parameter_count()), 1, rng);
        g.assign(gv);
        adam_step(p, g, s);
        const Vector expected =
            start.flatten().array() - s.lr * gv.array() / (gv.array().abs() + s.eps);
        CHECK((p.flatten() - expected).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("weight decay shrinks parameters")
    {
        DknParameters p = start;
        AdamState s;
        adam_step(p, p.zeros_like(), s);
        const Vector expected = start.flatten() * (1.0 - 1e-10);
        CHECK((p.flatten() - expected).cwiseAbs().maxCoeff() < 1e-18);
    }
}

TEST_CASE("learning-rate decay")
{
    AdamState s;
    s.gamma = 1.0;
    lr_decay(s);
    CHECK(s.lr == 1e-3);
    AdamState t;
    lr_decay(t);
    CHECK(t.lr == doctest::Approx(0.000995));
    AdamState u;
    for (int i = 0; i < 10; ++i) lr_decay(u);
    CHECK(u.lr == doctest::Approx(0.001 * std::pow(0.995, 10)));
    CHECK(u.lr == doctest::Approx(0.0009511).epsilon(1e-4));
}

TEST_CASE("training windows never cross blocks")
{
    std::vector<std::vector<Vector>> blocks(2);
    for (int k = 0; k < 4; ++k) blocks[0].push_back(Vector::Constant(1, k));
    for (int k = 0; k < 3; ++k) blocks[1].push_back(Vector::Constant(1, 100 + k));
    const TrainingSet s = build_training_set(blocks, 2, 1);
    // block 0 yields 2 windows, block 1 yields 1
    REQUIRE(s.size() == 3);
    CHECK(s.inputs(0, 0) == 0);
    CHECK(s.inputs(1, 0) == 1);
    CHECK(s.targets(0, 0) == 1);
    CHECK(s.targets(1, 0) == 2);
    CHECK(s.inputs(0, 2) == 100);
    CHECK(s.targets(1, 2) == 102);
    CHECK(build_training_set({}, 1, 1).size() == 0);
}

TEST_CASE("client update edge cases")
{
    Rng rng(13);
    const DknParameters start = init_dkn(small_config(2, 4, 3), rng);
    std::vector<std::vector<Vector>> blocks(1);
    for (int k = 0; k < 20; ++k) blocks[0].push_back(Vector::Constant(2, 0.1 * k));
    const TrainingSet data = build_training_set(blocks, 1, 1);

    TrainOptions none;
    none.epochs = 0;
    AdamState s;
    CHECK(client_update(start, data, s, none, rng).params == start);

    const DknParameters id = oracle::identity_net(2);
    std::vector<std::vector<Vector>> fixed(1, std::vector<Vector>(5, Vector::Constant(2, 1.5)));
    TrainOptions one;
    one.epochs = 1;
    one.batch_size = 64;
    AdamState t;
    const ClientUpdateResult r = client_update(id, build_training_set(fixed, 1, 1), t, one, rng);
    CHECK((r.params.flatten() - id.flatten() * (1.0 - 1e-10)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("client update is deterministic and reduces loss on lorenz63 data")
{
    const SystemModel sys = make_lorenz63();
    int improved = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng sim = make_stream(seed, StreamRole::System);
        std::vector<std::vector<Vector>> blocks{
            simulate_trajectory(sys, sys.sample_initial_state(sim), 501).states};
        const TrainingSet data = build_training_set(blocks, 1, 1);
        Rng init = make_stream(seed, StreamRole::ServerInit);
        const DknParameters start = init_dkn(DknConfig::defaults_for(3), init);
        const double before = dkn_loss(start, data.inputs, data.targets, {}, 1).total;

        AdamState s1, s2;
        Rng r1 = make_stream(seed, StreamRole::ClientTraining);
        Rng r2 = make_stream(seed, StreamRole::ClientTraining);
        const ClientUpdateResult a = client_update(start, data, s1, {}, r1);
        const ClientUpdateResult b = client_update(start, data, s2, {}, r2);
        CHECK(a.params == b.params);
        const double after = dkn_loss(a.params, data.inputs, data.targets, {}, 1).total;
        if (after < before) ++improved;
    }
    CHECK(improved >= 19);
}

TEST_CASE("parameter files round-trip bit-exactly")
{
    Rng rng(14);
    const DknParameters p = init_dkn(small_config(3, 5, 4, 2), rng);
    std::stringstream ss;
    save_parameters(ss, p);
    CHECK(load_parameters(ss) == p);

    std::stringstream bad("not a model");
    CHECK_THROWS_AS(load_parameters(bad), Error);
}

TEST_CASE("flatten and assign are inverse")
{
    Rng rng(15);
    DknParameters p = init_dkn(small_config(2, 3, 2, 2), rng);
    const Vector v = oracle::random_matrix(static_cast<int>(p.parameter_count()), 1, rng);
    p.assign(v);
    CHECK(p.flatten() == v);
    CHECK_THROWS_AS(p.assign(Vector::Zero(3)), ShapeError);
}
