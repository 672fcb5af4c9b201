#pragma once

// Shared test utilities: deterministic random problem generators and
// finite-difference oracles. Everything here is independent of the code
// paths it is used to check.

#include <functional>
#include <vector>

#include "iftk/common.hpp"
#include "iftk/dataset.hpp"
#include "iftk/mlp.hpp"

namespace iftk_test {

using iftk::Dataset;
using iftk::Example;
using iftk::Matrix;
using iftk::ParamVector;
using iftk::SplitMix64;
using iftk::Vector;

inline Dataset random_dataset(int n, int feature_dim, int num_classes, std::uint64_t seed) {
    SplitMix64 rng(seed);
    Dataset ds;
    ds.feature_dim = feature_dim;
    ds.num_classes = num_classes;
    ds.name = "random";
    for (int i = 0; i < n; ++i) {
        Example ex;
        ex.features = Vector(feature_dim);
        for (int j = 0; j < feature_dim; ++j) ex.features[j] = rng.next_gaussian();
        ex.label = static_cast<int>(rng.next_below(static_cast<std::size_t>(num_classes)));
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

inline ParamVector random_theta(int p, std::uint64_t seed, double scale = 0.5) {
    SplitMix64 rng(seed);
    ParamVector theta(p);
    for (int i = 0; i < p; ++i) theta[i] = scale * rng.next_gaussian();
    return theta;
}

inline Vector random_unit(int p, std::uint64_t seed) {
    Vector v = random_theta(p, seed, 1.0);
    return v / v.norm();
}

/// Central finite difference of a scalar function along direction d.
inline double central_difference(const std::function<double(const ParamVector&)>& f,
                                 const ParamVector& theta, const Vector& d, double eps) {
    return (f(theta + eps * d) - f(theta - eps * d)) / (2.0 * eps);
}

/// Central finite difference of a vector function along direction d.
inline Vector central_difference_vec(const std::function<Vector(const ParamVector&)>& g,
                                     const ParamVector& theta, const Vector& d, double eps) {
    return (g(theta + eps * d) - g(theta - eps * d)) / (2.0 * eps);
}

/// Random symmetric positive-definite matrix with condition number roughly
/// `cond`, built from a seeded orthogonal-ish basis.
inline Matrix random_spd(int p, std::uint64_t seed, double cond = 100.0) {
    SplitMix64 rng(seed);
    Matrix a(p, p);
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) a(i, j) = rng.next_gaussian();
    }
    const Eigen::HouseholderQR<Matrix> qr(a);
    const Matrix q = qr.householderQ();
    Vector eigs(p);
    for (int i = 0; i < p; ++i) {
        eigs[i] = 1.0 + (cond - 1.0) * rng.next_double();
    }
    return q * eigs.asDiagonal() * q.transpose();
}

}  // namespace iftk_test
