#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace kfkl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state produced by the ODE integrator.
class IntegrationError : public Error {
public:
    using Error::Error;
};

/// Physically singular configuration (e.g. double pendulum denominator).
class SingularConfigurationError : public Error {
public:
    using Error::Error;
};

class InvalidParametersError : public Error {
public:
    using Error::Error;
};

/// Covariance could not be factored even after jitter escalation.
class CovarianceDegenerateError : public Error {
public:
    using Error::Error;
};

/// Innovation covariance (or smoother prediction covariance) not invertible.
class CorrectionFailureError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

/// Independent RNG streams. Every stream is keyed by (master seed, role, index)
/// so that the order in which clients are processed never changes results.
enum class StreamRole : std::uint64_t {
    System = 1,
    ClientArrival = 2,
    ClientObservation = 3,
    ClientTraining = 4,
    ServerInit = 5,
    ServerPolicy = 6,
    TestTrajectory = 7,
    Observer = 8,
    Estimation = 9,
};

inline Rng make_stream(std::uint64_t master_seed, StreamRole role, std::uint64_t index = 0)
{
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed & 0xffffffffu),
                      static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(role),
                      static_cast<std::uint32_t>(index & 0xffffffffu),
                      static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

/// Standard normal draws. std::normal_distribution caches a second value, so a
/// fresh distribution object is used per call site to keep streams reproducible.
inline Vector standard_normal(Rng& rng, Eigen::Index n)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) out(i) = dist(rng);
    return out;
}

inline void symmetrize(Matrix& m)
{
    m = 0.5 * (m + m.transpose()).eval();
}

inline bool all_finite(const Matrix& m)
{
    return m.allFinite();
}

}  // namespace kfkl
