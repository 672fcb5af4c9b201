#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "iftk/common.hpp"
#include "iftk/dataset.hpp"
#include "iftk/mlp.hpp"
#include "iftk/objective.hpp"

namespace iftk {

struct TrainConfig {
    double learning_rate = 0.1;
    int steps = 0;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    int record_grad_norm_every = 0;  // 0 disables history sampling

    void validate() const {
        require(std::isfinite(learning_rate) && learning_rate > 0.0,
                "TrainConfig: learning_rate must be positive and finite");
        require(steps >= 0, "TrainConfig: steps must be non-negative");
        require(std::isfinite(weight_decay) && weight_decay >= 0.0,
                "TrainConfig: weight_decay must be non-negative and finite");
    }

    void hash_into(Fnv1a& h) const {
        h.add(learning_rate);
        h.add(steps);
        h.add(weight_decay);
        h.add(static_cast<std::uint64_t>(seed));
        h.add(record_grad_norm_every);
    }
};

struct HistoryRecord {
    int step = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
};

struct TrainedModel {
    ModelSpec spec;
    ParamVector theta_star;
    TrainConfig config;
    std::string dataset_fingerprint;
    double final_grad_norm = 0.0;
    std::vector<HistoryRecord> history;

    /// Stable content hash; the identity of this checkpoint for caching.
    std::string checkpoint_hash() const {
        Fnv1a h;
        spec.hash_into(h);
        config.hash_into(h);
        h.add(dataset_fingerprint);
        h.add(theta_star);
        return h.hex();
    }
};

enum class RetrainMode { WarmStart, Scratch };

inline std::string to_string(RetrainMode m) {
    return m == RetrainMode::WarmStart ? "warm_start" : "scratch";
}

inline RetrainMode retrain_mode_from_string(const std::string& s) {
    if (s == "warm_start") return RetrainMode::WarmStart;
    if (s == "scratch") return RetrainMode::Scratch;
    throw config_error("unknown retrain mode '" + s + "'");
}

/// Perturbation of the training weights. Removing index i is shorthand for
/// adding epsilon_i = -1/n to its uniform weight; both spellings produce
/// bit-identical trajectories.
struct UpweightSpec {
    std::set<int> removed_indices;
    std::map<int, double> epsilon_overrides;

    bool empty() const { return removed_indices.empty() && epsilon_overrides.empty(); }

    std::vector<double> resolve_weights(int n) const {
        const double base = 1.0 / static_cast<double>(n);
        std::vector<double> w(static_cast<std::size_t>(n), base);
        for (int i : removed_indices) {
            require(i >= 0 && i < n, "UpweightSpec: removed index out of range");
            w[static_cast<std::size_t>(i)] += -base;
        }
        for (const auto& [i, eps] : epsilon_overrides) {
            require(i >= 0 && i < n, "UpweightSpec: override index out of range");
            require(std::isfinite(eps), "UpweightSpec: non-finite epsilon");
            w[static_cast<std::size_t>(i)] += eps;
        }
        return w;
    }
};

// ---------------------------------------------------------------------------
// Full-batch gradient descent.
// ---------------------------------------------------------------------------

struct GdResult {
    ParamVector theta;
    double final_grad_norm = 0.0;
    int steps_run = 0;
    std::vector<HistoryRecord> history;
};

/// theta <- theta - lr * grad, for exactly `steps` updates (or until the
/// gradient norm drops below `stop_grad_norm` when that is positive).
/// Divergence (non-finite objective or gradient) is an error naming the step.
template <PerExampleObjective M>
GdResult gd_minimize(const M& m, ParamVector theta, const Objective& obj,
                     double learning_rate, int steps, double stop_grad_norm = 0.0,
                     int record_every = 0) {
    require(std::isfinite(learning_rate) && learning_rate > 0.0,
            "gd_minimize: learning_rate must be positive and finite");
    require(steps >= 0, "gd_minimize: steps must be non-negative");
    const auto weights = obj.resolve_weights(m.num_examples());

    const auto grad_and_loss = [&](const ParamVector& th, double* loss) {
        ParamVector g;
        if constexpr (BatchedObjective<M>) {
            g = m.weighted_gradient(th, weights, loss);
        } else {
            g = ParamVector::Zero(th.size());
            double total = 0.0;
            for (int i = 0; i < m.num_examples(); ++i) {
                const double wi = weights[static_cast<std::size_t>(i)];
                total += wi * m.example_loss(th, i);
                g += wi * m.example_gradient(th, i);
            }
            if (loss != nullptr) *loss = total;
        }
        if (loss != nullptr) *loss += obj.weight_decay * th.squaredNorm();
        g += 2.0 * obj.weight_decay * th;
        return g;
    };

    GdResult out;
    for (int k = 0; k < steps; ++k) {
        double loss = 0.0;
        const ParamVector g = grad_and_loss(theta, &loss);
        if (!std::isfinite(loss) || !g.allFinite()) {
            throw numerical_error("training diverged at step " + std::to_string(k) +
                                  " (objective = " + std::to_string(loss) + ")");
        }
        const double gnorm = g.norm();
        if (record_every > 0 && k % record_every == 0) {
            out.history.push_back({k, loss, gnorm});
        }
        if (stop_grad_norm > 0.0 && gnorm <= stop_grad_norm) {
            out.theta = std::move(theta);
            out.final_grad_norm = gnorm;
            out.steps_run = k;
            return out;
        }
        theta -= learning_rate * g;
    }
    double final_loss = 0.0;
    const ParamVector g = grad_and_loss(theta, &final_loss);
    if (!std::isfinite(final_loss) || !g.allFinite()) {
        throw numerical_error("training diverged at step " + std::to_string(steps) +
                              " (objective = " + std::to_string(final_loss) + ")");
    }
    out.theta = std::move(theta);
    out.final_grad_norm = g.norm();
    out.steps_run = steps;
    return out;
}

/// Train from the deterministic initialization for exactly config.steps
/// full-batch GD updates. `stop_grad_norm` > 0 adds an early gradient-norm
/// exit used by convex convergence oracles; the default never stops early.
inline TrainedModel train(const ModelSpec& spec, const Dataset& dataset,
                          const TrainConfig& config, double stop_grad_norm = 0.0) {
    spec.validate();
    config.validate();
    dataset.validate();
    require(dataset.feature_dim == spec.input_dim, "train: dataset feature_dim mismatch");

    const Mlp mlp(spec);
    const MlpObjective bound(mlp, dataset);
    const Objective obj{config.weight_decay, std::nullopt};
    GdResult res = gd_minimize(bound, init_params(spec, config.seed), obj,
                               config.learning_rate, config.steps, stop_grad_norm,
                               config.record_grad_norm_every);
    return TrainedModel{spec,
                        std::move(res.theta),
                        config,
                        dataset.fingerprint(),
                        res.final_grad_norm,
                        std::move(res.history)};
}

/// Optimize the up-weighted objective. Warm start resumes from theta_star;
/// scratch restarts from the original seed's initialization so the data
/// perturbation is isolated from initialization noise.
inline TrainedModel retrain(const TrainedModel& trained, const Dataset& dataset,
                            const UpweightSpec& upweight, int steps, RetrainMode mode,
                            double stop_grad_norm = 0.0) {
    require(dataset.fingerprint() == trained.dataset_fingerprint,
            "retrain: dataset does not match the trained checkpoint");
    require(steps >= 0, "retrain: steps must be non-negative");

    const Mlp mlp(trained.spec);
    const MlpObjective bound(mlp, dataset);
    Objective obj{trained.config.weight_decay, upweight.resolve_weights(dataset.size())};

    ParamVector theta0 = mode == RetrainMode::WarmStart
                             ? trained.theta_star
                             : init_params(trained.spec, trained.config.seed);
    GdResult res = gd_minimize(bound, std::move(theta0), obj, trained.config.learning_rate,
                               steps, stop_grad_norm, 0);

    TrainConfig cfg = trained.config;
    cfg.steps = steps;
    return TrainedModel{trained.spec,
                        std::move(res.theta),
                        cfg,
                        trained.dataset_fingerprint,
                        res.final_grad_norm,
                        std::move(res.history)};
}

// ---------------------------------------------------------------------------
// Numerical d theta*/d epsilon oracle (convex models only).
// ---------------------------------------------------------------------------

struct ConvergenceOptions {
    double grad_tol = 1e-10;
    int max_steps = 2'000'000;
};

namespace detail {

template <PerExampleObjective M>
ParamVector converge_upweighted(const M& m, const TrainedModel& trained, int z_index,
                                double eps, const ConvergenceOptions& opts) {
    UpweightSpec up;
    up.epsilon_overrides[z_index] = eps;
    Objective obj{trained.config.weight_decay, up.resolve_weights(m.num_examples())};
    GdResult res = gd_minimize(m, trained.theta_star, obj, trained.config.learning_rate,
                               opts.max_steps, opts.grad_tol, 0);
    if (res.final_grad_norm > opts.grad_tol) {
        throw numerical_error("epsilon_derivative_oracle: no convergence at eps = " +
                              std::to_string(eps) + " (grad norm " +
                              std::to_string(res.final_grad_norm) + ")");
    }
    return res.theta;
}

}  // namespace detail

/// Central-difference estimates of d theta*(eps)/d eps at eps = 0, one per
/// grid value, each from fully re-converged solutions at +-eps.
inline std::vector<ParamVector> epsilon_derivative_estimates(
    const TrainedModel& trained, const Dataset& dataset, int z_index,
    const std::vector<double>& eps_grid, const ConvergenceOptions& opts = {}) {
    require(trained.spec.depth() == 0,
            "epsilon_derivative_oracle: requires a depth-0 (convex) model");
    require(z_index >= 0 && z_index < dataset.size(),
            "epsilon_derivative_oracle: index out of range");
    require(!eps_grid.empty(), "epsilon_derivative_oracle: empty grid");

    const Mlp mlp(trained.spec);
    const MlpObjective bound(mlp, dataset);
    std::vector<ParamVector> out;
    for (double eps : eps_grid) {
        require(std::isfinite(eps) && eps != 0.0,
                "epsilon_derivative_oracle: grid values must be nonzero");
        const ParamVector plus = detail::converge_upweighted(bound, trained, z_index, eps, opts);
        const ParamVector minus =
            detail::converge_upweighted(bound, trained, z_index, -eps, opts);
        out.push_back((plus - minus) / (2.0 * eps));
    }
    return out;
}

/// The estimate at the smallest-magnitude grid value.
inline ParamVector epsilon_derivative_oracle(const TrainedModel& trained,
                                             const Dataset& dataset, int z_index,
                                             const std::vector<double>& eps_grid,
                                             const ConvergenceOptions& opts = {}) {
    auto grid = eps_grid;
    std::sort(grid.begin(), grid.end(),
              [](double a, double b) { return std::abs(a) > std::abs(b); });
    return epsilon_derivative_estimates(trained, dataset, z_index, grid, opts).back();
}

// ---------------------------------------------------------------------------
// Checkpoint file format (versioned JSON).
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json checkpoint_to_json(const TrainedModel& m) {
    nlohmann::json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["kind"] = "iftk-checkpoint";
    j["spec"] = {{"input_dim", m.spec.input_dim},
                 {"hidden_widths", m.spec.hidden_widths},
                 {"num_classes", m.spec.num_classes},
                 {"activation", to_string(m.spec.activation)}};
    j["config"] = {{"learning_rate", m.config.learning_rate},
                   {"steps", m.config.steps},
                   {"weight_decay", m.config.weight_decay},
                   {"seed", m.config.seed},
                   {"record_grad_norm_every", m.config.record_grad_norm_every}};
    j["dataset_fingerprint"] = m.dataset_fingerprint;
    j["init_scheme"] = kInitScheme;
    j["final_grad_norm"] = m.final_grad_norm;
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : m.history) hist.push_back({h.step, h.objective, h.grad_norm});
    j["history"] = std::move(hist);
    j["theta"] = std::vector<double>(m.theta_star.data(),
                                     m.theta_star.data() + m.theta_star.size());
    return j;
}

inline TrainedModel checkpoint_from_json(const nlohmann::json& j) {
    if (!j.contains("format_version") ||
        j.at("format_version").get<int>() != kCheckpointFormatVersion) {
        throw config_error("checkpoint: unsupported format_version");
    }
    TrainedModel m;
    const auto& s = j.at("spec");
    m.spec.input_dim = s.at("input_dim").get<int>();
    m.spec.hidden_widths = s.at("hidden_widths").get<std::vector<int>>();
    m.spec.num_classes = s.at("num_classes").get<int>();
    m.spec.activation = activation_from_string(s.at("activation").get<std::string>());
    const auto& c = j.at("config");
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.steps = c.at("steps").get<int>();
    m.config.weight_decay = c.at("weight_decay").get<double>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.record_grad_norm_every = c.at("record_grad_norm_every").get<int>();
    m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    m.final_grad_norm = j.at("final_grad_norm").get<double>();
    for (const auto& h : j.at("history")) {
        m.history.push_back({h.at(0).get<int>(), h.at(1).get<double>(), h.at(2).get<double>()});
    }
    const auto theta = j.at("theta").get<std::vector<double>>();
    m.theta_star = Eigen::Map<const ParamVector>(theta.data(),
                                                 static_cast<Eigen::Index>(theta.size()));
    require(m.theta_star.size() == m.spec.param_count(),
            "checkpoint: theta length does not match spec");
    return m;
}

/// Atomic write (temp file + rename) so concurrent cache readers never see a
/// partial checkpoint.
inline void save_checkpoint(const std::filesystem::path& path, const TrainedModel& m) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
        out << checkpoint_to_json(m).dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

inline TrainedModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("checkpoint " + path.string() + " is corrupt: " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace iftk
