#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kfkl/common.hpp"

namespace kfkl {

struct LossWeights {
    double linear = 1.0 / 3.0;          // w1, latent one-step consistency
    double reconstruction = 1.0 / 3.0;  // w2, autoencoder round trip
    double prediction = 1.0 / 3.0;      // w3, decoded prediction

    bool operator==(const LossWeights&) const = default;
};

struct DknConfig {
    int state_dim = 3;
    int window = 1;        // consecutive states stacked into one input
    int depth = 1;         // prediction depth (applications of K)
    int latent_dim = 12;
    int hidden_layers = 1;
    int hidden_width = 30;
    LossWeights weights;

    int input_dim() const { return window * state_dim; }
    void validate() const;

    /// Latent dimension 4 * state_dim, one hidden layer of width 30.
    static DknConfig defaults_for(int state_dim);
};

/// y = W x + b
struct DenseLayer {
    Matrix weight;
    Vector bias;
};

/// Encoder stack, Koopman matrix and mirror-image decoder stack. Every layer
/// but the last of each stack is followed by a ReLU.
struct DknParameters {
    std::vector<DenseLayer> encoder;
    Matrix koopman;
    std::vector<DenseLayer> decoder;

    int input_dim() const;
    int latent_dim() const { return static_cast<int>(koopman.rows()); }

    std::size_t parameter_count() const;
    /// Parameters in a fixed order: encoder layers (weight, bias), K, decoder.
    Vector flatten() const;
    void assign(const Vector& flat);
    bool same_shape(const DknParameters& other) const;
    bool all_finite() const;

    /// Zero-valued parameters with the same shapes.
    DknParameters zeros_like() const;

    bool operator==(const DknParameters& other) const;
};

/// He (Kaiming normal) weights, zero biases, K entries ~ N(0, 1e-4).
DknParameters init_dkn(const DknConfig& config, Rng& rng);

/// Columns are samples.
Matrix encode(const DknParameters& p, const Matrix& x);
Matrix advance(const DknParameters& p, const Matrix& y, int steps);
Matrix decode(const DknParameters& p, const Matrix& y);

struct LossBreakdown {
    double total = 0.0;
    double linear = 0.0;          // l1
    double reconstruction = 0.0;  // l2
    double prediction = 0.0;      // l3
};

/// Batch-mean composite loss. `inputs` and `targets` hold one sample per column;
/// targets are the input windows shifted forward by `depth` steps.
LossBreakdown dkn_loss(const DknParameters& p, const Matrix& inputs, const Matrix& targets,
                       const LossWeights& weights, int depth);

struct GradientResult {
    DknParameters grad;
    LossBreakdown loss;
};

/// Exact gradient of the batch-mean composite loss.
GradientResult dkn_gradients(const DknParameters& p, const Matrix& inputs, const Matrix& targets,
                             const LossWeights& weights, int depth);

struct AdamState {
    Vector first_moment;
    Vector second_moment;
    long step = 0;
    double lr = 1e-3;
    double gamma = 0.995;
    double decay = 1e-7;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    /// Zeroes the moments and step counter; keeps the learning rate.
    void reset_moments(std::size_t parameter_count);
};

/// Decoupled weight decay followed by a bias-corrected Adam update.
void adam_step(DknParameters& p, const DknParameters& grads, AdamState& state);

/// Exponential schedule: lr <- gamma * lr.
void lr_decay(AdamState& state);

/// Training pairs, one per column.
struct TrainingSet {
    Matrix inputs;
    Matrix targets;

    Eigen::Index size() const { return inputs.cols(); }
};

/// Builds windows from each block independently; no window spans two blocks.
TrainingSet build_training_set(std::span<const std::vector<Vector>> blocks, int window, int depth);

struct TrainOptions {
    int epochs = 10;
    int batch_size = 64;
    int depth = 1;
    LossWeights weights;
};

struct ClientUpdateResult {
    DknParameters params;
    /// Mean batch loss of the final epoch (NaN if no epoch ran).
    double final_loss = 0.0;
    bool diverged = false;
};

/// E epochs of shuffled mini-batch Adam, one lr_decay per epoch.
ClientUpdateResult client_update(const DknParameters& start, const TrainingSet& data,
                                 AdamState& state, const TrainOptions& options, Rng& rng);

/// Text container: a header line followed by named arrays whose values are
/// written as hexadecimal floats, so a round trip is bit-exact.
void save_parameters(std::ostream& os, const DknParameters& p);
DknParameters load_parameters(std::istream& is);
void save_parameters(const std::string& path, const DknParameters& p);
DknParameters load_parameters(const std::string& path);

}  // namespace kfkl
