#include "kfkl/dkn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace kfkl {

void DknConfig::validate() const
{
    if (state_dim < 1) throw InvalidParametersError("DKN state dimension must be >= 1");
    if (window < 1) throw InvalidParametersError("DKN input window must be >= 1");
    if (depth < 1) throw InvalidParametersError("DKN prediction depth must be >= 1");
    if (latent_dim < 1) throw InvalidParametersError("DKN latent dimension must be >= 1");
    if (hidden_layers < 0) throw InvalidParametersError("DKN hidden layer count must be >= 0");
    if (hidden_width < 1) throw InvalidParametersError("DKN hidden width must be >= 1");
    if (weights.linear < 0 || weights.reconstruction < 0 || weights.prediction < 0)
        throw InvalidParametersError("loss weights must be non-negative");
}

DknConfig DknConfig::defaults_for(int state_dim)
{
    DknConfig c;
    c.state_dim = state_dim;
    c.latent_dim = 4 * state_dim;
    return c;
}

int DknParameters::input_dim() const
{
    return encoder.empty() ? 0 : static_cast<int>(encoder.front().weight.cols());
}

namespace {

template <typename Fn>
void for_each_array(const DknParameters& p, Fn&& fn)
{
    for (const auto& l : p.encoder) {
        fn(l.weight);
        fn(l.bias);
    }
    fn(p.koopman);
    for (const auto& l : p.decoder) {
        fn(l.weight);
        fn(l.bias);
    }
}

template <typename Fn>
void for_each_array_mut(DknParameters& p, Fn&& fn)
{
    for (auto& l : p.encoder) {
        fn(l.weight);
        fn(l.bias);
    }
    fn(p.koopman);
    for (auto& l : p.decoder) {
        fn(l.weight);
        fn(l.bias);
    }
}

struct StackCache {
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre;
};

Matrix forward_stack(const std::vector<DenseLayer>& layers, const Matrix& x, StackCache* cache)
{
    Matrix a = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Matrix z = layers[i].weight * a;
        z.colwise() += layers[i].bias;
        const bool last = i + 1 == layers.size();
        if (cache) {
            cache->inputs.push_back(std::move(a));
            cache->pre.push_back(z);
        }
        a = last ? std::move(z) : Matrix(z.cwiseMax(0.0));
    }
    return a;
}

/// Accumulates into `grads` and returns the gradient with respect to the stack input.
Matrix backward_stack(const std::vector<DenseLayer>& layers, const StackCache& cache, Matrix g,
                      std::vector<DenseLayer>& grads)
{
    for (std::size_t i = layers.size(); i-- > 0;) {
        if (i + 1 != layers.size()) g = g.cwiseProduct((cache.pre[i].array() > 0.0).cast<double>().matrix());
        grads[i].weight.noalias() += g * cache.inputs[i].transpose();
        grads[i].bias += g.rowwise().sum();
        g = layers[i].weight.transpose() * g;
    }
    return g;
}

void check_shapes(const DknParameters& p, const Matrix& inputs, const Matrix& targets)
{
    if (p.encoder.empty() || p.decoder.empty()) throw ShapeError("DKN has no layers");
    if (inputs.rows() != p.input_dim() || targets.rows() != p.input_dim())
        throw ShapeError("sample dimension does not match DKN input");
    if (inputs.cols() != targets.cols()) throw ShapeError("inputs and targets differ in count");
}

}  // namespace

std::size_t DknParameters::parameter_count() const
{
    std::size_t n = 0;
    for_each_array(*this, [&](const auto& a) { n += static_cast<std::size_t>(a.size()); });
    return n;
}

Vector DknParameters::flatten() const
{
    Vector flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index offset = 0;
    for_each_array(*this, [&](const auto& a) {
        flat.segment(offset, a.size()) = Eigen::Map<const Vector>(a.data(), a.size());
        offset += a.size();
    });
    return flat;
}

void DknParameters::assign(const Vector& flat)
{
    if (static_cast<std::size_t>(flat.size()) != parameter_count())
        throw ShapeError("flat parameter vector has wrong length");
    Eigen::Index offset = 0;
    for_each_array_mut(*this, [&](auto& a) {
        Eigen::Map<Vector>(a.data(), a.size()) = flat.segment(offset, a.size());
        offset += a.size();
    });
}

bool DknParameters::same_shape(const DknParameters& other) const
{
    if (encoder.size() != other.encoder.size() || decoder.size() != other.decoder.size())
        return false;
    auto layers_match = [](const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].weight.rows() != b[i].weight.rows() || a[i].weight.cols() != b[i].weight.cols()
                || a[i].bias.size() != b[i].bias.size())
                return false;
        }
        return true;
    };
    return layers_match(encoder, other.encoder) && layers_match(decoder, other.decoder)
           && koopman.rows() == other.koopman.rows() && koopman.cols() == other.koopman.cols();
}

bool DknParameters::all_finite() const
{
    bool ok = true;
    for_each_array(*this, [&](const auto& a) { ok = ok && a.allFinite(); });
    return ok;
}

DknParameters DknParameters::zeros_like() const
{
    DknParameters z = *this;
    for_each_array_mut(z, [](auto& a) { a.setZero(); });
    return z;
}

bool DknParameters::operator==(const DknParameters& other) const
{
    return same_shape(other) && flatten() == other.flatten();
}

DknParameters init_dkn(const DknConfig& config, Rng& rng)
{
    config.validate();
    std::normal_distribution<double> normal(0.0, 1.0);
    auto make_layer = [&](int in, int out) {
        DenseLayer l;
        const double sd = std::sqrt(2.0 / in);
        l.weight.resize(out, in);
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = sd * normal(rng);
        l.bias = Vector::Zero(out);
        return l;
    };
    auto make_stack = [&](int in, int out) {
        std::vector<DenseLayer> stack;
        int width = in;
        for (int h = 0; h < config.hidden_layers; ++h) {
            stack.push_back(make_layer(width, config.hidden_width));
            width = config.hidden_width;
        }
        stack.push_back(make_layer(width, out));
        return stack;
    };

    DknParameters p;
    p.encoder = make_stack(config.input_dim(), config.latent_dim);
    p.koopman.resize(config.latent_dim, config.latent_dim);
    for (Eigen::Index c = 0; c < p.koopman.cols(); ++c)
        for (Eigen::Index r = 0; r < p.koopman.rows(); ++r) p.koopman(r, c) = 1e-2 * normal(rng);
    p.decoder = make_stack(config.latent_dim, config.input_dim());
    return p;
}

Matrix encode(const DknParameters& p, const Matrix& x)
{
    if (x.rows() != p.input_dim()) throw ShapeError("encoder input has wrong dimension");
    return forward_stack(p.encoder, x, nullptr);
}

Matrix advance(const DknParameters& p, const Matrix& y, int steps)
{
    if (y.rows() != p.latent_dim()) throw ShapeError("latent state has wrong dimension");
    Matrix out = y;
    for (int s = 0; s < steps; ++s) out = p.koopman * out;
    return out;
}

Matrix decode(const DknParameters& p, const Matrix& y)
{
    if (y.rows() != p.latent_dim()) throw ShapeError("decoder input has wrong dimension");
    return forward_stack(p.decoder, y, nullptr);
}

LossBreakdown dkn_loss(const DknParameters& p, const Matrix& inputs, const Matrix& targets,
                       const LossWeights& weights, int depth)
{
    check_shapes(p, inputs, targets);
    const auto batch = static_cast<double>(inputs.cols());
    const double dy = p.latent_dim();
    const double dx = p.input_dim();
    const Matrix y = encode(p, inputs);
    const Matrix y_target = encode(p, targets);
    const Matrix y_pred = advance(p, y, depth);

    LossBreakdown l;
    l.linear = (y_pred - y_target).squaredNorm() / (dy * batch);
    l.reconstruction = (inputs - decode(p, y)).squaredNorm() / (dx * batch);
    l.prediction = (decode(p, y_pred) - targets).squaredNorm() / (dx * batch);
    l.total = weights.linear * l.linear + weights.reconstruction * l.reconstruction
              + weights.prediction * l.prediction;
    return l;
}

GradientResult dkn_gradients(const DknParameters& p, const Matrix& inputs, const Matrix& targets,
                             const LossWeights& weights, int depth)
{
    check_shapes(p, inputs, targets);
    if (inputs.cols() == 0) throw InvalidParametersError("gradient needs a non-empty batch");
    const auto batch = static_cast<double>(inputs.cols());
    const double dy = p.latent_dim();
    const double dx = p.input_dim();

    StackCache enc_in, enc_target, dec_recon, dec_pred;
    const Matrix y = forward_stack(p.encoder, inputs, &enc_in);
    const Matrix y_target = forward_stack(p.encoder, targets, &enc_target);
    std::vector<Matrix> latent_path{y};
    for (int s = 0; s < depth; ++s) latent_path.push_back(p.koopman * latent_path.back());
    const Matrix& y_pred = latent_path.back();
    const Matrix x_recon = forward_stack(p.decoder, y, &dec_recon);
    const Matrix x_pred = forward_stack(p.decoder, y_pred, &dec_pred);

    const Matrix r_linear = y_pred - y_target;
    const Matrix r_recon = x_recon - inputs;
    const Matrix r_pred = x_pred - targets;

    GradientResult out;
    out.loss.linear = r_linear.squaredNorm() / (dy * batch);
    out.loss.reconstruction = r_recon.squaredNorm() / (dx * batch);
    out.loss.prediction = r_pred.squaredNorm() / (dx * batch);
    out.loss.total = weights.linear * out.loss.linear
                     + weights.reconstruction * out.loss.reconstruction
                     + weights.prediction * out.loss.prediction;

    out.grad = p.zeros_like();
    DknParameters& g = out.grad;

    Matrix g_pred_latent = (2.0 * weights.linear / (dy * batch)) * r_linear;
    const Matrix g_target_latent = -g_pred_latent;
    g_pred_latent += backward_stack(p.decoder, dec_pred,
                                    (2.0 * weights.prediction / (dx * batch)) * r_pred, g.decoder);
    const Matrix g_latent_recon = backward_stack(
        p.decoder, dec_recon, (2.0 * weights.reconstruction / (dx * batch)) * r_recon, g.decoder);

    Matrix g_latent = std::move(g_pred_latent);
    for (int s = depth; s >= 1; --s) {
        g.koopman.noalias() += g_latent * latent_path[static_cast<std::size_t>(s - 1)].transpose();
        g_latent = p.koopman.transpose() * g_latent;
    }
    g_latent += g_latent_recon;

    backward_stack(p.encoder, enc_in, g_latent, g.encoder);
    backward_stack(p.encoder, enc_target, g_target_latent, g.encoder);
    return out;
}

void AdamState::reset_moments(std::size_t parameter_count)
{
    first_moment = Vector::Zero(static_cast<Eigen::Index>(parameter_count));
    second_moment = Vector::Zero(static_cast<Eigen::Index>(parameter_count));
    step = 0;
}

void adam_step(DknParameters& p, const DknParameters& grads, AdamState& state)
{
    if (!p.same_shape(grads)) throw ShapeError("gradient shape does not match parameters");
    const std::size_t n = p.parameter_count();
    if (static_cast<std::size_t>(state.first_moment.size()) != n) state.reset_moments(n);

    Vector w = p.flatten();
    const Vector g = grads.flatten();
    w *= 1.0 - state.lr * state.decay;

    ++state.step;
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * g;
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    w.array() -= state.lr * (state.first_moment.array() / c1)
                 / ((state.second_moment.array() / c2).sqrt() + state.eps);
    p.assign(w);
}

void lr_decay(AdamState& state)
{
    state.lr *= state.gamma;
}

TrainingSet build_training_set(std::span<const std::vector<Vector>> blocks, int window, int depth)
{
    if (window < 1 || depth < 1) throw InvalidParametersError("window and depth must be >= 1");
    Eigen::Index dim = -1;
    Eigen::Index count = 0;
    for (const auto& block : blocks) {
        const auto len = static_cast<Eigen::Index>(block.size());
        count += std::max<Eigen::Index>(0, len - window - depth + 1);
        if (!block.empty()) {
            if (dim >= 0 && block.front().size() != dim) throw ShapeError("blocks differ in state dimension");
            dim = block.front().size();
        }
    }
    TrainingSet set;
    if (dim < 0) return set;
    set.inputs.resize(dim * window, count);
    set.targets.resize(dim * window, count);
    Eigen::Index col = 0;
    for (const auto& block : blocks) {
        const auto len = static_cast<Eigen::Index>(block.size());
        for (Eigen::Index k = 0; k + window + depth <= len; ++k, ++col) {
            for (int w = 0; w < window; ++w) {
                set.inputs.col(col).segment(w * dim, dim) = block[static_cast<std::size_t>(k + w)];
                set.targets.col(col).segment(w * dim, dim) =
                    block[static_cast<std::size_t>(k + w + depth)];
            }
        }
    }
    return set;
}

ClientUpdateResult client_update(const DknParameters& start, const TrainingSet& data,
                                 AdamState& state, const TrainOptions& options, Rng& rng)
{
    ClientUpdateResult out{start, std::nan(""), false};
    if (options.epochs <= 0) return out;
    if (data.size() == 0) throw InvalidParametersError("client update needs training data");
    if (options.batch_size < 1) throw InvalidParametersError("batch size must be >= 1");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto batch_size = static_cast<std::size_t>(options.batch_size);
    Matrix batch_in, batch_target;

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
            const std::size_t end = std::min(order.size(), begin + batch_size);
            const auto n = static_cast<Eigen::Index>(end - begin);
            batch_in.resize(data.inputs.rows(), n);
            batch_target.resize(data.targets.rows(), n);
            for (Eigen::Index j = 0; j < n; ++j) {
                const Eigen::Index src = order[begin + static_cast<std::size_t>(j)];
                batch_in.col(j) = data.inputs.col(src);
                batch_target.col(j) = data.targets.col(src);
            }
            const GradientResult g =
                dkn_gradients(out.params, batch_in, batch_target, options.weights, options.depth);
            if (!std::isfinite(g.loss.total) || !g.grad.all_finite()) {
                out.diverged = true;
                out.final_loss = g.loss.total;
                return out;
            }
            adam_step(out.params, g.grad, state);
            epoch_loss += g.loss.total;
            ++batches;
        }
        lr_decay(state);
        out.final_loss = epoch_loss / batches;
    }
    if (!out.params.all_finite()) out.diverged = true;
    return out;
}

namespace {

void write_array(std::ostream& os, const std::string& name, const Matrix& a)
{
    os << "array " << name << ' ' << a.rows() << ' ' << a.cols() << '\n';
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        for (Eigen::Index c = 0; c < a.cols(); ++c) os << (c ? " " : "") << std::hexfloat << a(r, c);
        os << std::defaultfloat << '\n';
    }
}

Matrix read_array(std::istream& is, const std::string& expected)
{
    std::string tag, name;
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> tag >> name >> rows >> cols) || tag != "array" || name != expected)
        throw Error("parameter file: expected array '" + expected + "'");
    Matrix a(rows, cols);
    std::string token;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            if (!(is >> token)) throw Error("parameter file: truncated array '" + expected + "'");
            char* end = nullptr;
            a(r, c) = std::strtod(token.c_str(), &end);
            if (end == token.c_str() || *end != '\0')
                throw Error("parameter file: bad value '" + token + "' in '" + expected + "'");
        }
    }
    return a;
}

}  // namespace

void save_parameters(std::ostream& os, const DknParameters& p)
{
    os << "kfkl-dkn 1\n";
    os << "layers " << p.encoder.size() << ' ' << p.decoder.size() << '\n';
    for (std::size_t i = 0; i < p.encoder.size(); ++i) {
        write_array(os, "encoder." + std::to_string(i) + ".weight", p.encoder[i].weight);
        write_array(os, "encoder." + std::to_string(i) + ".bias", p.encoder[i].bias);
    }
    write_array(os, "koopman", p.koopman);
    for (std::size_t i = 0; i < p.decoder.size(); ++i) {
        write_array(os, "decoder." + std::to_string(i) + ".weight", p.decoder[i].weight);
        write_array(os, "decoder." + std::to_string(i) + ".bias", p.decoder[i].bias);
    }
}

DknParameters load_parameters(std::istream& is)
{
    std::string magic, tag;
    int version = 0;
    std::size_t n_enc = 0, n_dec = 0;
    if (!(is >> magic >> version) || magic != "kfkl-dkn" || version != 1)
        throw Error("parameter file: bad header");
    if (!(is >> tag >> n_enc >> n_dec) || tag != "layers")
        throw Error("parameter file: missing layer counts");
    DknParameters p;
    for (std::size_t i = 0; i < n_enc; ++i) {
        DenseLayer l;
        l.weight = read_array(is, "encoder." + std::to_string(i) + ".weight");
        l.bias = read_array(is, "encoder." + std::to_string(i) + ".bias");
        p.encoder.push_back(std::move(l));
    }
    p.koopman = read_array(is, "koopman");
    for (std::size_t i = 0; i < n_dec; ++i) {
        DenseLayer l;
        l.weight = read_array(is, "decoder." + std::to_string(i) + ".weight");
        l.bias = read_array(is, "decoder." + std::to_string(i) + ".bias");
        p.decoder.push_back(std::move(l));
    }
    return p;
}

void save_parameters(const std::string& path, const DknParameters& p)
{
    std::ofstream os(path);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    save_parameters(os, p);
}

DknParameters load_parameters(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw Error("cannot open '" + path + "'");
    return load_parameters(is);
}

}  // namespace kfkl
