#pragma once

// Independent reference implementations used by unit and acceptance tests.
// None of these call into the library's filtering or training code.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "kfkl/common.hpp"
#include "kfkl/dkn.hpp"

namespace oracle {

using kfkl::Matrix;
using kfkl::Rng;
using kfkl::Vector;

struct Belief {
    Vector mean;
    Matrix cov;
};

/// x' = A x + b,  z = C x + e
struct LinearSystem {
    Matrix A;
    Vector b;
    Matrix C;
    Vector e;
    Matrix Q;
    Matrix R;
};

inline Matrix random_spd(int d, Rng& rng, double floor = 0.1)
{
    const Matrix g = Matrix::NullaryExpr(d, d, [&] { return std::normal_distribution<double>(0.0, 1.0)(rng); });
    return g * g.transpose() / d + floor * Matrix::Identity(d, d);
}

inline Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    return Matrix::NullaryExpr(rows, cols, [&] { return n(rng); });
}

/// Random stable linear-Gaussian system (spectral radius of A at most 0.95)
/// with a `dz`-dimensional output.
inline LinearSystem random_linear_system(int dx, int dz, Rng& rng)
{
    LinearSystem s;
    s.A = random_matrix(dx, dx, rng, 0.4) + 0.5 * Matrix::Identity(dx, dx);
    const double radius = s.A.eigenvalues().cwiseAbs().maxCoeff();
    if (radius > 0.95) s.A *= 0.95 / radius;
    s.b = random_matrix(dx, 1, rng);
    s.C = random_matrix(dz, dx, rng);
    s.e = random_matrix(dz, 1, rng);
    s.Q = random_spd(dx, rng);
    s.R = random_spd(dz, rng);
    return s;
}

inline Vector gaussian(const Vector& mean, const Matrix& cov, Rng& rng)
{
    const Matrix l = Eigen::LLT<Matrix>(cov).matrixL();
    std::normal_distribution<double> n(0.0, 1.0);
    Vector w(mean.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = n(rng);
    return mean + l * w;
}

/// Textbook Kalman filter.
inline std::vector<Belief> kalman_filter(const LinearSystem& s, const Belief& prior,
                                         const std::vector<Vector>& observations)
{
    std::vector<Belief> out;
    Belief cur = prior;
    for (const auto& z : observations) {
        const Vector xp = s.A * cur.mean + s.b;
        const Matrix pp = s.A * cur.cov * s.A.transpose() + s.Q;
        const Matrix sk = s.C * pp * s.C.transpose() + s.R;
        const Matrix k = pp * s.C.transpose() * sk.inverse();
        cur.mean = xp + k * (z - s.C * xp - s.e);
        cur.cov = pp - k * sk * k.transpose();
        out.push_back(cur);
    }
    return out;
}

/// Kalman filter whose innovation statistics use only the propagated prior
/// spread A P A^T, i.e. the sigma set is not redrawn after adding process noise.
inline std::vector<Belief> spread_kalman_filter(const LinearSystem& s, const Belief& prior,
                                                const std::vector<Vector>& observations)
{
    std::vector<Belief> out;
    Belief cur = prior;
    for (const auto& z : observations) {
        const Vector xp = s.A * cur.mean + s.b;
        const Matrix spread = s.A * cur.cov * s.A.transpose();
        const Matrix pp = spread + s.Q;
        const Matrix szz = s.C * spread * s.C.transpose() + s.R;
        const Matrix pxz = spread * s.C.transpose();
        const Matrix k = pxz * szz.inverse();
        cur.mean = xp + k * (z - s.C * xp - s.e);
        cur.cov = pp - k * szz * k.transpose();
        out.push_back(cur);
    }
    return out;
}

/// Rauch-Tung-Striebel backward pass anchored at the last filtered belief.
inline std::vector<Belief> rts_smoother(const LinearSystem& s, const std::vector<Belief>& filtered)
{
    std::vector<Belief> out = filtered;
    for (std::size_t k = filtered.size() - 1; k-- > 0;) {
        const Belief& f = filtered[k];
        const Vector xp = s.A * f.mean + s.b;
        const Matrix pp = s.A * f.cov * s.A.transpose() + s.Q;
        const Matrix g = f.cov * s.A.transpose() * pp.inverse();
        out[k].mean = f.mean + g * (out[k + 1].mean - xp);
        out[k].cov = f.cov + g * (out[k + 1].cov - pp) * g.transpose();
    }
    return out;
}

/// Convergence coefficient by explicit factorial products in long double.
inline long double naive_coefficient(int n, int k, long double p)
{
    long double fact_n = 1;
    long double fact_k = 1;
    long double fact_nk = 1;
    for (int i = 2; i <= n; ++i) fact_n *= i;
    for (int i = 2; i <= k; ++i) fact_k *= i;
    for (int i = 2; i <= n - k; ++i) fact_nk *= i;
    long double pk = 1;
    long double qk = 1;
    for (int i = 0; i < k; ++i) pk *= p;
    for (int i = 0; i < n - k; ++i) qk *= (1 - p);
    return 4.0L * (n - k) * fact_n * pk * qk / (static_cast<long double>(k) * (n - 1) * fact_k * fact_nk);
}

/// Single-layer 1-d network: encoder weight `enc`, K = `koop`, decoder weight `dec`.
inline kfkl::DknParameters scalar_net(double enc, double koop, double dec)
{
    kfkl::DknParameters p;
    p.encoder.push_back({Matrix::Constant(1, 1, enc), Vector::Zero(1)});
    p.koopman = Matrix::Constant(1, 1, koop);
    p.decoder.push_back({Matrix::Constant(1, 1, dec), Vector::Zero(1)});
    return p;
}

/// Identity encoder/decoder and K = I on a d-dimensional state.
inline kfkl::DknParameters identity_net(int d)
{
    kfkl::DknParameters p;
    p.encoder.push_back({Matrix::Identity(d, d), Vector::Zero(d)});
    p.koopman = Matrix::Identity(d, d);
    p.decoder.push_back({Matrix::Identity(d, d), Vector::Zero(d)});
    return p;
}

/// Central finite-difference gradient of the flattened parameter vector.
template <class Loss>
Vector finite_difference_gradient(const kfkl::DknParameters& p, Loss&& loss, double step)
{
    const Vector base = p.flatten();
    Vector grad(base.size());
    kfkl::DknParameters probe = p;
    for (Eigen::Index i = 0; i < base.size(); ++i) {
        Vector x = base;
        x(i) = base(i) + step;
        probe.assign(x);
        const double up = loss(probe);
        x(i) = base(i) - step;
        probe.assign(x);
        const double down = loss(probe);
        grad(i) = (up - down) / (2.0 * step);
    }
    return grad;
}

}  // namespace oracle
