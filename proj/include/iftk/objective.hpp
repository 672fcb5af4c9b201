#pragma once

#include <concepts>
#include <optional>
#include <vector>

#include "iftk/common.hpp"
#include "iftk/dataset.hpp"
#include "iftk/mlp.hpp"

namespace iftk {

/// Training objective: sum_i w_i * loss(z_i) + weight_decay * ||theta||^2.
/// Weights default to uniform 1/n. The decay penalty covers all parameters,
/// biases included.
struct Objective {
    double weight_decay = 0.0;
    std::optional<std::vector<double>> per_example_weights;

    std::vector<double> resolve_weights(int n) const {
        require(weight_decay >= 0.0 && std::isfinite(weight_decay),
                "Objective: weight_decay must be finite and non-negative");
        if (!per_example_weights.has_value()) {
            return std::vector<double>(static_cast<std::size_t>(n),
                                       1.0 / static_cast<double>(n));
        }
        const auto& w = *per_example_weights;
        require(static_cast<int>(w.size()) == n, "Objective: weight length mismatch");
        for (double x : w) require(std::isfinite(x), "Objective: non-finite weight");
        return w;
    }
};

/// Anything that exposes per-example losses, gradients, and Hessian-vector
/// products over a fixed set of examples. The MLP-on-dataset adapter below is
/// the production model; quadratic surrogates implement the same surface for
/// tests.
template <class M>
concept PerExampleObjective =
    requires(const M& m, const ParamVector& th, int i, const ParamVector& v) {
        { m.param_count() } -> std::convertible_to<int>;
        { m.num_examples() } -> std::convertible_to<int>;
        { m.example_loss(th, i) } -> std::convertible_to<double>;
        { m.example_gradient(th, i) } -> std::convertible_to<ParamVector>;
        { m.example_hvp(th, i, v) } -> std::convertible_to<ParamVector>;
    };

template <class M>
concept BatchedObjective =
    PerExampleObjective<M> &&
    requires(const M& m, const ParamVector& th, const std::vector<double>& w,
             const ParamVector& v) {
        { m.weighted_loss(th, w) } -> std::convertible_to<double>;
        { m.weighted_gradient(th, w) } -> std::convertible_to<ParamVector>;
        { m.weighted_hvp(th, w, v) } -> std::convertible_to<ParamVector>;
    };

/// Mlp bound to a dataset, with the batch matrices built once.
class MlpObjective {
public:
    MlpObjective(const Mlp& mlp, const Dataset& ds)
        : mlp_(&mlp), ds_(&ds), batch_(mlp.make_batch(ds)) {}

    int param_count() const { return mlp_->param_count(); }
    int num_examples() const { return batch_.n(); }

    double example_loss(const ParamVector& theta, int i) const {
        return mlp_->loss(theta, example(i));
    }
    ParamVector example_gradient(const ParamVector& theta, int i) const {
        return mlp_->loss_gradient(theta, example(i));
    }
    ParamVector example_hvp(const ParamVector& theta, int i, const ParamVector& v) const {
        return mlp_->loss_hvp(theta, example(i), v);
    }

    double weighted_loss(const ParamVector& theta, const std::vector<double>& w) const {
        return mlp_->weighted_loss(theta, batch_, w);
    }
    ParamVector weighted_gradient(const ParamVector& theta, const std::vector<double>& w,
                                  double* loss_out = nullptr) const {
        return mlp_->weighted_gradient(theta, batch_, w, loss_out);
    }
    ParamVector weighted_hvp(const ParamVector& theta, const std::vector<double>& w,
                             const ParamVector& v) const {
        return mlp_->weighted_hvp(theta, batch_, w, v);
    }

    const Mlp& mlp() const { return *mlp_; }
    const Dataset& dataset() const { return *ds_; }

private:
    const Example& example(int i) const {
        require(i >= 0 && i < ds_->size(), "MlpObjective: example index out of range");
        return ds_->examples[static_cast<std::size_t>(i)];
    }

    const Mlp* mlp_;
    const Dataset* ds_;
    Mlp::Batch batch_;
};

// ---------------------------------------------------------------------------
// Objective-level operations. The decay term enters here: loss adds
// lambda*||theta||^2, gradient adds 2*lambda*theta, HVP adds 2*lambda*v.
// ---------------------------------------------------------------------------

template <PerExampleObjective M>
double objective_loss(const M& m, const ParamVector& theta, const Objective& obj) {
    const auto w = obj.resolve_weights(m.num_examples());
    double total;
    if constexpr (BatchedObjective<M>) {
        total = m.weighted_loss(theta, w);
    } else {
        total = 0.0;
        for (int i = 0; i < m.num_examples(); ++i) {
            total += w[static_cast<std::size_t>(i)] * m.example_loss(theta, i);
        }
    }
    return total + obj.weight_decay * theta.squaredNorm();
}

template <PerExampleObjective M>
ParamVector objective_gradient(const M& m, const ParamVector& theta, const Objective& obj,
                               double* loss_out = nullptr) {
    const auto w = obj.resolve_weights(m.num_examples());
    ParamVector g;
    if constexpr (BatchedObjective<M>) {
        g = m.weighted_gradient(theta, w, loss_out);
    } else {
        g = ParamVector::Zero(theta.size());
        double total = 0.0;
        for (int i = 0; i < m.num_examples(); ++i) {
            const double wi = w[static_cast<std::size_t>(i)];
            if (loss_out != nullptr) total += wi * m.example_loss(theta, i);
            g += wi * m.example_gradient(theta, i);
        }
        if (loss_out != nullptr) *loss_out = total;
    }
    if (loss_out != nullptr) *loss_out += obj.weight_decay * theta.squaredNorm();
    return g + 2.0 * obj.weight_decay * theta;
}

template <PerExampleObjective M>
ParamVector objective_hvp(const M& m, const ParamVector& theta, const Objective& obj,
                          const ParamVector& v) {
    const auto w = obj.resolve_weights(m.num_examples());
    ParamVector hv;
    if constexpr (BatchedObjective<M>) {
        hv = m.weighted_hvp(theta, w, v);
    } else {
        hv = ParamVector::Zero(theta.size());
        for (int i = 0; i < m.num_examples(); ++i) {
            hv += w[static_cast<std::size_t>(i)] * m.example_hvp(theta, i, v);
        }
    }
    return hv + 2.0 * obj.weight_decay * v;
}

// Spec-facing convenience overloads for the MLP engine.

inline double example_loss(const Mlp& mlp, const ParamVector& theta, const Example& z) {
    return mlp.loss(theta, z);
}

/// Gradient of the bare per-example loss; the weight-decay term is not
/// per-example and is excluded here.
inline ParamVector per_example_gradient(const Mlp& mlp, const ParamVector& theta,
                                        const Example& z) {
    return mlp.loss_gradient(theta, z);
}

inline double objective_loss(const Mlp& mlp, const ParamVector& theta, const Dataset& ds,
                             const Objective& obj) {
    return objective_loss(MlpObjective(mlp, ds), theta, obj);
}

inline ParamVector objective_gradient(const Mlp& mlp, const ParamVector& theta,
                                      const Dataset& ds, const Objective& obj) {
    return objective_gradient(MlpObjective(mlp, ds), theta, obj);
}

inline ParamVector objective_hvp(const Mlp& mlp, const ParamVector& theta, const Dataset& ds,
                                 const Objective& obj, const ParamVector& v) {
    return objective_hvp(MlpObjective(mlp, ds), theta, obj, v);
}

inline double accuracy(const Mlp& mlp, const ParamVector& theta, const Dataset& ds) {
    int hits = 0;
    for (const auto& ex : ds.examples) {
        if (mlp.predict(theta, ex.features) == ex.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

}  // namespace iftk
