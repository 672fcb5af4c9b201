#pragma once

#include <map>
#include <memory>
#include <string>

#include "iftk/common.hpp"
#include "iftk/curvature.hpp"
#include "iftk/objective.hpp"

namespace iftk {

enum class IhvpMethod { Exact, Cg, Lissa };

inline std::string to_string(IhvpMethod m) {
    switch (m) {
        case IhvpMethod::Exact: return "exact";
        case IhvpMethod::Cg: return "cg";
        case IhvpMethod::Lissa: return "lissa";
    }
    return "exact";
}

inline IhvpMethod ihvp_method_from_string(const std::string& s) {
    if (s == "exact") return IhvpMethod::Exact;
    if (s == "cg") return IhvpMethod::Cg;
    if (s == "lissa") return IhvpMethod::Lissa;
    throw config_error("unknown ihvp solver '" + s + "' (expected exact, cg or lissa)");
}

struct IhvpConfig {
    IhvpMethod solver = IhvpMethod::Exact;
    double damping = 0.0;
    double cg_tol = 1e-10;
    int cg_max_iters = 0;   // 0 means p
    int lissa_depth = 5000;
    double lissa_scale = 0.0;  // 0 selects the automatic scale (see below)
    int lissa_repeats = 10;
    std::uint64_t lissa_seed = 0;

    void validate() const {
        require(damping >= 0.0 && std::isfinite(damping),
                "IhvpConfig: damping must be non-negative and finite");
        if (solver == IhvpMethod::Cg) {
            require(cg_tol > 0.0, "IhvpConfig: cg_tol must be positive");
            require(cg_max_iters >= 0, "IhvpConfig: cg_max_iters must be non-negative");
        }
        if (solver == IhvpMethod::Lissa) {
            require(lissa_depth >= 1, "IhvpConfig: lissa_depth must be >= 1");
            require(lissa_repeats >= 1, "IhvpConfig: lissa_repeats must be >= 1");
            require(lissa_scale >= 0.0 && std::isfinite(lissa_scale),
                    "IhvpConfig: lissa_scale must be non-negative (0 = automatic)");
        }
    }

    std::string hash() const {
        Fnv1a h;
        h.add(to_string(solver));
        h.add(damping);
        h.add(cg_tol);
        h.add(cg_max_iters);
        h.add(lissa_depth);
        h.add(lissa_scale);
        h.add(lissa_repeats);
        h.add(static_cast<std::uint64_t>(lissa_seed));
        return h.hex();
    }
};

struct IhvpResult {
    Vector t;
    double residual_norm = -1.0;  // relative residual; -1 when not computable
    IhvpMethod solver_used = IhvpMethod::Exact;
    int iterations_or_depth = 0;
    std::map<std::string, double> diagnostics;
};

// ---------------------------------------------------------------------------
// Exact dense solve.
// ---------------------------------------------------------------------------

inline IhvpResult ihvp_exact(const DenseHessian& h, const Vector& v, double lambda_d) {
    const DenseHessian damped = damp(h, lambda_d);
    IhvpResult out;
    out.t = solve_dense(damped, v);
    const double vnorm = v.norm();
    out.residual_norm =
        vnorm > 0.0 ? (damped.entries * out.t - v).norm() / vnorm : 0.0;
    out.solver_used = IhvpMethod::Exact;
    out.iterations_or_depth = 1;
    out.diagnostics["damping_used"] = damped.damping_applied;
    return out;
}

// ---------------------------------------------------------------------------
// Conjugate gradient on (H + damping I) t = v from t0 = 0.
// ---------------------------------------------------------------------------

inline IhvpResult ihvp_cg(const HvpOracle& hvp, const Vector& v, const IhvpConfig& config) {
    config.validate();
    const int p = static_cast<int>(v.size());
    const int max_iters = config.cg_max_iters > 0 ? config.cg_max_iters : p;
    const double vnorm = v.norm();

    IhvpResult out;
    out.solver_used = IhvpMethod::Cg;
    out.diagnostics["damping_used"] = config.damping;
    if (vnorm == 0.0) {
        out.t = Vector::Zero(p);
        out.residual_norm = 0.0;
        return out;
    }

    const auto apply = [&](const Vector& x) -> Vector {
        return hvp(x) + config.damping * x;
    };

    Vector x = Vector::Zero(p);
    Vector r = v;
    Vector d = r;
    double rs = r.squaredNorm();
    double prev_resid = std::sqrt(rs);
    int stalled = 0;

    for (int k = 1; k <= max_iters; ++k) {
        const Vector ad = apply(d);
        const double curvature = d.dot(ad);
        if (!std::isfinite(curvature) || curvature <= 0.0) {
            throw numerical_error(
                "ihvp_cg: non-positive curvature encountered (Hessian indefinite); "
                "increase damping");
        }
        const double alpha = rs / curvature;
        x += alpha * d;
        r -= alpha * ad;
        const double resid = r.norm();
        out.iterations_or_depth = k;
        if (!std::isfinite(resid)) {
            throw numerical_error("ihvp_cg: residual became non-finite; increase damping");
        }
        stalled = resid >= prev_resid ? stalled + 1 : 0;
        if (stalled >= 10) {
            throw numerical_error(
                "ihvp_cg: residual non-decreasing for 10 consecutive iterations "
                "(Hessian likely indefinite); increase damping");
        }
        prev_resid = resid;
        if (resid <= config.cg_tol * vnorm) break;
        const double rs_next = r.squaredNorm();
        d = r + (rs_next / rs) * d;
        rs = rs_next;
    }

    out.t = std::move(x);
    out.residual_norm = (apply(out.t) - v).norm() / vnorm;
    return out;
}

// ---------------------------------------------------------------------------
// LiSSA stochastic estimation. Each repeat runs the recursion
//   t_0 = v,  t_k = v + (I - A_i / gamma) t_{k-1},
// where A_i = per-example Hessian of the sampled training point plus the
// objective's decay contribution plus damping, so E[A_i] matches the full
// (damped) objective Hessian. The averaged final iterate divided by gamma
// estimates (H + damping I)^{-1} v.
// ---------------------------------------------------------------------------

/// Automatic scale: twice a power-iteration estimate of the full-batch
/// top eigenvalue, plus damping. Keeps the scaled spectrum inside (0, 2)
/// without hand tuning.
template <PerExampleObjective M>
double default_lissa_scale(const M& m, const ParamVector& theta, const Objective& obj,
                           double damping, std::uint64_t seed = 0) {
    const auto top = top_eigenvalue(
        [&](const Vector& x) { return objective_hvp(m, theta, obj, x); }, m.param_count(),
        1e-6, 2000, seed);
    return 2.0 * std::abs(top.value) + damping;
}

template <PerExampleObjective M>
IhvpResult ihvp_lissa(const M& m, const ParamVector& theta, const Objective& obj,
                      const Vector& v, const IhvpConfig& config) {
    config.validate();
    require(v.size() == m.param_count(), "ihvp_lissa: dimension mismatch");

    const double gamma = config.lissa_scale > 0.0
                             ? config.lissa_scale
                             : default_lissa_scale(m, theta, obj, config.damping,
                                                   config.lissa_seed);
    const double diag_shift = 2.0 * obj.weight_decay + config.damping;
    const double vnorm = v.norm();
    const double blowup = 1e8 * (vnorm > 0.0 ? vnorm : 1.0);
    const int n = m.num_examples();

    Vector sum = Vector::Zero(v.size());
    for (int rep = 0; rep < config.lissa_repeats; ++rep) {
        // Derived per-repeat stream; aggregation order is fixed.
        SplitMix64 rng(config.lissa_seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(rep + 1));
        Vector t = v;
        for (int k = 0; k < config.lissa_depth; ++k) {
            const int idx = static_cast<int>(rng.next_below(static_cast<std::size_t>(n)));
            t = v + t - (m.example_hvp(theta, idx, t) + diag_shift * t) / gamma;
            if (!t.allFinite() || t.norm() > blowup) {
                throw numerical_error(
                    "ihvp_lissa: iterate diverged at depth " + std::to_string(k) +
                    " (scale gamma = " + std::to_string(gamma) +
                    " too small for this spectrum)");
            }
        }
        sum += t;
    }

    IhvpResult out;
    out.t = sum / (gamma * static_cast<double>(config.lissa_repeats));
    out.solver_used = IhvpMethod::Lissa;
    out.iterations_or_depth = config.lissa_depth;
    out.diagnostics["gamma"] = gamma;
    out.diagnostics["gamma_auto"] = config.lissa_scale > 0.0 ? 0.0 : 1.0;
    out.diagnostics["repeats"] = static_cast<double>(config.lissa_repeats);
    out.diagnostics["damping_used"] = config.damping;
    return out;
}

// ---------------------------------------------------------------------------
// Solver context: one interface over the three methods, with the expensive
// per-(theta, dataset) preparation done once so many right-hand sides can be
// solved cheaply (test-side caching depends on this).
// ---------------------------------------------------------------------------

template <PerExampleObjective M>
class IhvpSolver {
public:
    IhvpSolver(const M& m, ParamVector theta, Objective obj, IhvpConfig config)
        : m_(&m), theta_(std::move(theta)), obj_(std::move(obj)), config_(std::move(config)) {
        config_.validate();
        damping_used_ = config_.damping;
        if (config_.solver == IhvpMethod::Exact) {
            prepare_exact();
        } else if (config_.solver == IhvpMethod::Lissa && config_.lissa_scale <= 0.0) {
            config_.lissa_scale =
                default_lissa_scale(*m_, theta_, obj_, config_.damping, config_.lissa_seed);
            gamma_was_auto_ = true;
        }
    }

    IhvpResult solve(const Vector& v) const {
        switch (config_.solver) {
            case IhvpMethod::Exact: {
                IhvpResult out;
                out.t = solve_dense(*damped_, v);
                const double vnorm = v.norm();
                out.residual_norm =
                    vnorm > 0.0 ? (damped_->entries * out.t - v).norm() / vnorm : 0.0;
                out.solver_used = IhvpMethod::Exact;
                out.iterations_or_depth = 1;
                out.diagnostics["damping_used"] = damping_used_;
                return out;
            }
            case IhvpMethod::Cg: {
                IhvpConfig cfg = config_;
                cfg.damping = damping_used_;
                return ihvp_cg(
                    [this](const Vector& x) { return objective_hvp(*m_, theta_, obj_, x); },
                    v, cfg);
            }
            case IhvpMethod::Lissa: {
                IhvpResult out = ihvp_lissa(*m_, theta_, obj_, v, config_);
                if (gamma_was_auto_) out.diagnostics["gamma_auto"] = 1.0;
                return out;
            }
        }
        throw std::logic_error("IhvpSolver: unreachable");
    }

    double damping_used() const { return damping_used_; }
    const IhvpConfig& config() const { return config_; }
    const ParamVector& theta() const { return theta_; }

private:
    // Escalate damping when the configured value leaves the Hessian
    // non-positive-definite: first to 1e-3, then tenfold. The value actually
    // used is recorded and surfaces in reports.
    void prepare_exact() {
        hessian_ = std::make_shared<DenseHessian>(exact_hessian(*m_, theta_, obj_));
        double lambda = config_.damping;
        for (;;) {
            DenseHessian candidate = damp(*hessian_, lambda);
            Eigen::LLT<Matrix> llt(candidate.entries);
            if (llt.info() == Eigen::Success) {
                damped_ = std::make_shared<DenseHessian>(std::move(candidate));
                damping_used_ = lambda;
                return;
            }
            if (lambda >= 1e3) {
                throw numerical_error("IhvpSolver: Hessian not positive definite even at "
                                      "damping 1e3");
            }
            lambda = lambda < 1e-3 ? 1e-3 : lambda * 10.0;
        }
    }

    const M* m_;
    ParamVector theta_;
    Objective obj_;
    IhvpConfig config_;
    double damping_used_ = 0.0;
    bool gamma_was_auto_ = false;
    std::shared_ptr<DenseHessian> hessian_;
    std::shared_ptr<DenseHessian> damped_;
};

}  // namespace iftk
