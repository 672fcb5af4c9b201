#pragma once

#include <functional>
#include <string>

#include <Eigen/Cholesky>

#include "iftk/common.hpp"
#include "iftk/objective.hpp"

namespace iftk {

using HvpOracle = std::function<Vector(const Vector&)>;

/// Materialized objective Hessian for small parameter counts.
struct DenseHessian {
    Matrix entries;
    double damping_applied = 0.0;
    std::string theta_fingerprint;

    Eigen::Index dim() const { return entries.rows(); }
};

inline constexpr int kDenseHessianCap = 2000;

/// Assemble H column by column as hvp against standard basis vectors, then
/// symmetrize (independent column computations leave floating-point
/// asymmetry).
inline DenseHessian exact_hessian_from_oracle(const HvpOracle& hvp, int p,
                                              const std::string& theta_fingerprint,
                                              int cap = kDenseHessianCap) {
    require(p > 0, "exact_hessian: p must be positive");
    if (p > cap) {
        throw config_error("exact_hessian: p = " + std::to_string(p) +
                           " exceeds the dense cap " + std::to_string(cap));
    }
    Matrix h(p, p);
    Vector e = Vector::Zero(p);
    for (int i = 0; i < p; ++i) {
        e[i] = 1.0;
        h.col(i) = hvp(e);
        e[i] = 0.0;
    }
    DenseHessian out;
    out.entries = 0.5 * (h + h.transpose());
    out.damping_applied = 0.0;
    out.theta_fingerprint = theta_fingerprint;
    return out;
}

template <PerExampleObjective M>
DenseHessian exact_hessian(const M& m, const ParamVector& theta, const Objective& obj,
                           int cap = kDenseHessianCap) {
    Fnv1a fp;
    fp.add(theta);
    return exact_hessian_from_oracle(
        [&](const Vector& v) { return objective_hvp(m, theta, obj, v); }, m.param_count(),
        fp.hex(), cap);
}

inline DenseHessian exact_hessian(const Mlp& mlp, const ParamVector& theta,
                                  const Dataset& dataset, const Objective& obj,
                                  int cap = kDenseHessianCap) {
    return exact_hessian(MlpObjective(mlp, dataset), theta, obj, cap);
}

/// H + lambda_d * I; damping accumulates across calls and is recorded.
inline DenseHessian damp(const DenseHessian& h, double lambda_d) {
    require(lambda_d >= 0.0 && std::isfinite(lambda_d),
            "damp: lambda_d must be non-negative and finite");
    DenseHessian out = h;
    if (lambda_d > 0.0) {
        out.entries.diagonal().array() += lambda_d;
        out.damping_applied += lambda_d;
    }
    return out;
}

struct PowerIterationResult {
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Dominant eigenvalue (by magnitude) of a symmetric linear operator via
/// power iteration from a deterministic seeded start. Convergence is on
/// successive Rayleigh quotients; non-convergence flags the result instead
/// of throwing.
inline PowerIterationResult top_eigenvalue(const HvpOracle& hvp, int p, double tol = 1e-8,
                                           int max_iters = 10000, std::uint64_t seed = 0) {
    require(p > 0, "top_eigenvalue: p must be positive");
    require(tol > 0.0, "top_eigenvalue: tol must be positive");

    SplitMix64 rng(seed);
    Vector x(p);
    for (int i = 0; i < p; ++i) x[i] = rng.uniform(-1.0, 1.0);
    x.normalize();

    PowerIterationResult out;
    double prev = 0.0;
    for (int k = 1; k <= max_iters; ++k) {
        Vector y = hvp(x);
        const double rayleigh = x.dot(y);
        const double ynorm = y.norm();
        out.iterations = k;
        out.value = rayleigh;
        if (k > 1 && std::abs(rayleigh - prev) <= tol * (1.0 + std::abs(rayleigh))) {
            out.converged = true;
            return out;
        }
        prev = rayleigh;
        if (ynorm == 0.0) {  // operator annihilated the iterate; eigenvalue 0
            out.value = 0.0;
            out.converged = true;
            return out;
        }
        x = y / ynorm;
    }
    return out;  // converged stays false
}

/// Solve H t = v for positive-definite H via Cholesky with one round of
/// iterative refinement.
inline Vector solve_dense(const DenseHessian& h, const Vector& v) {
    require(h.entries.rows() == h.entries.cols(), "solve_dense: H must be square");
    require(v.size() == h.entries.rows(), "solve_dense: dimension mismatch");

    Eigen::LLT<Matrix> llt(h.entries);
    if (llt.info() != Eigen::Success) {
        throw numerical_error(
            "solve_dense: Cholesky failed (matrix not positive definite); "
            "increase damping");
    }
    Vector t = llt.solve(v);
    t += llt.solve(v - h.entries * t);
    return t;
}

}  // namespace iftk
