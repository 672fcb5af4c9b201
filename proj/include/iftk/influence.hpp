#pragma once

#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "iftk/common.hpp"
#include "iftk/ihvp.hpp"
#include "iftk/training.hpp"

namespace iftk {

/// First-order pair influence of training point z on test point z_t,
///   I(z, z_t) = -grad l(z_t)' H^{-1} grad l(z),
/// the derivative of the test loss with respect to up-weighting z. The
/// predicted loss change for *removing* z (epsilon = -1/n) is therefore
/// -I(z, z_t)/n; with that sign, positive values mean the test loss goes up
/// when z is removed, which is what the convex leave-one-out oracle
/// validates.
struct InfluenceScore {
    int train_index = -1;
    int test_index = -1;
    double pair_influence = 0.0;
    double predicted_delta_loss = 0.0;
    std::string solver_provenance;
};

inline double pair_influence_value(const Vector& test_side_ihvp, const Vector& train_grad) {
    return -test_side_ihvp.dot(train_grad);
}

inline double predicted_delta_loss_from(double pair_influence, int n) {
    return -pair_influence / static_cast<double>(n);
}

struct InfluenceReport {
    int test_index = -1;
    double test_loss = 0.0;
    std::vector<InfluenceScore> scores;  // ordered by train index
    std::vector<int> ranking;            // descending pair influence, ties by index
    std::string checkpoint_hash;
    std::string ihvp_config_hash;
    std::string dataset_fingerprint;
    double damping_used = 0.0;

    int n() const { return static_cast<int>(scores.size()); }
};

/// Everything needed to score many training points against one trained
/// model: the engine, the bound objective, and a prepared iHVP solver. The
/// referenced dataset must outlive the context.
class InfluenceContext {
public:
    InfluenceContext(const TrainedModel& trained, const Dataset& train_data,
                     IhvpConfig config)
        : trained_(&trained),
          train_data_(&train_data),
          mlp_(trained.spec),
          bound_(mlp_, train_data),
          config_(std::move(config)),
          solver_(bound_, trained.theta_star,
                  Objective{trained.config.weight_decay, std::nullopt}, config_) {
        require(train_data.fingerprint() == trained.dataset_fingerprint,
                "InfluenceContext: dataset does not match the trained checkpoint");
    }

    InfluenceContext(const InfluenceContext&) = delete;
    InfluenceContext& operator=(const InfluenceContext&) = delete;

    const Mlp& mlp() const { return mlp_; }
    const TrainedModel& trained() const { return *trained_; }
    const IhvpSolver<MlpObjective>& solver() const { return solver_; }
    int n() const { return train_data_->size(); }

    /// I(z) = -H^{-1} grad l(z).
    ParamVector influence_param(const Example& z) const {
        return -solver_.solve(mlp_.loss_gradient(trained_->theta_star, z)).t;
    }

    InfluenceScore influence_pair(const Example& z, const Example& z_t, int train_index = -1,
                                  int test_index = -1) const {
        const Vector c = solver_.solve(mlp_.loss_gradient(trained_->theta_star, z_t)).t;
        InfluenceScore s;
        s.train_index = train_index;
        s.test_index = test_index;
        s.pair_influence =
            pair_influence_value(c, mlp_.loss_gradient(trained_->theta_star, z));
        s.predicted_delta_loss = predicted_delta_loss_from(s.pair_influence, n());
        s.solver_provenance = config_.hash();
        return s;
    }

    /// theta* + (1/n) H^{-1} grad l(z_i): the Taylor prediction of the
    /// parameters after removing training point i.
    ParamVector predict_removed_params(int z_index) const {
        require(z_index >= 0 && z_index < n(), "predict_removed_params: index out of range");
        const Vector g = mlp_.loss_gradient(
            trained_->theta_star, train_data_->examples[static_cast<std::size_t>(z_index)]);
        return trained_->theta_star + solver_.solve(g).t / static_cast<double>(n());
    }

    /// One test-side iHVP, then one dot product per training point.
    InfluenceReport rank_training_points(const Example& z_t, int test_index = -1) const {
        const Vector test_grad = mlp_.loss_gradient(trained_->theta_star, z_t);
        return rank_from_test_gradient(test_grad, test_index,
                                       mlp_.loss(trained_->theta_star, z_t));
    }

    InfluenceReport rank_from_test_gradient(const Vector& test_grad, int test_index,
                                            double test_loss) const {
        const Vector c = solver_.solve(test_grad).t;
        InfluenceReport report;
        report.test_index = test_index;
        report.test_loss = test_loss;
        report.checkpoint_hash = trained_->checkpoint_hash();
        report.ihvp_config_hash = config_.hash();
        report.dataset_fingerprint = trained_->dataset_fingerprint;
        report.damping_used = solver_.damping_used();
        report.scores.reserve(static_cast<std::size_t>(n()));
        for (int i = 0; i < n(); ++i) {
            InfluenceScore s;
            s.train_index = i;
            s.test_index = test_index;
            s.pair_influence = pair_influence_value(
                c, mlp_.loss_gradient(trained_->theta_star,
                                      train_data_->examples[static_cast<std::size_t>(i)]));
            s.predicted_delta_loss = predicted_delta_loss_from(s.pair_influence, n());
            s.solver_provenance = report.ihvp_config_hash;
            report.scores.push_back(std::move(s));
        }
        report.ranking.resize(static_cast<std::size_t>(n()));
        std::iota(report.ranking.begin(), report.ranking.end(), 0);
        std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](int a, int b) {
            const double ia = report.scores[static_cast<std::size_t>(a)].pair_influence;
            const double ib = report.scores[static_cast<std::size_t>(b)].pair_influence;
            if (ia != ib) return ia > ib;
            return a < b;
        });
        return report;
    }

    /// Additive first-order estimate of the test-loss change from removing a
    /// whole group: the sum of the members' predicted per-point changes.
    double group_influence(std::span<const int> group_indices, const Example& z_t) const {
        require(!group_indices.empty(), "group_influence: empty group");
        const Vector c = solver_.solve(mlp_.loss_gradient(trained_->theta_star, z_t)).t;
        double total = 0.0;
        for (int i : group_indices) {
            require(i >= 0 && i < n(), "group_influence: index out of range");
            const double pair = pair_influence_value(
                c, mlp_.loss_gradient(trained_->theta_star,
                                      train_data_->examples[static_cast<std::size_t>(i)]));
            total += predicted_delta_loss_from(pair, n());
        }
        return total;
    }

private:
    const TrainedModel* trained_;
    const Dataset* train_data_;
    Mlp mlp_;
    MlpObjective bound_;
    IhvpConfig config_;
    IhvpSolver<MlpObjective> solver_;
};

// Spec-facing one-shot wrappers (each builds a context; prefer the context
// when scoring many points).

inline ParamVector influence_param(const TrainedModel& trained, const Dataset& train_data,
                                   const Example& z, const IhvpConfig& cfg) {
    return InfluenceContext(trained, train_data, cfg).influence_param(z);
}

inline InfluenceScore influence_pair(const TrainedModel& trained, const Dataset& train_data,
                                     const Example& z, const Example& z_t,
                                     const IhvpConfig& cfg) {
    return InfluenceContext(trained, train_data, cfg).influence_pair(z, z_t);
}

inline ParamVector predict_removed_params(const TrainedModel& trained,
                                          const Dataset& train_data, int z_index,
                                          const IhvpConfig& cfg) {
    return InfluenceContext(trained, train_data, cfg).predict_removed_params(z_index);
}

inline InfluenceReport rank_training_points(const TrainedModel& trained,
                                            const Dataset& train_data, const Example& z_t,
                                            const IhvpConfig& cfg, int test_index = -1) {
    return InfluenceContext(trained, train_data, cfg).rank_training_points(z_t, test_index);
}

inline double group_influence(const TrainedModel& trained, const Dataset& train_data,
                              std::span<const int> group_indices, const Example& z_t,
                              const IhvpConfig& cfg) {
    return InfluenceContext(trained, train_data, cfg).group_influence(group_indices, z_t);
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline nlohmann::json report_to_json(const InfluenceReport& r) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "iftk-influence-report";
    j["test_index"] = r.test_index;
    j["test_loss"] = r.test_loss;
    j["checkpoint_hash"] = r.checkpoint_hash;
    j["ihvp_config_hash"] = r.ihvp_config_hash;
    j["dataset_fingerprint"] = r.dataset_fingerprint;
    j["damping_used"] = r.damping_used;
    j["ranking"] = r.ranking;
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& s : r.scores) {
        scores.push_back({{"train_index", s.train_index},
                          {"pair_influence", s.pair_influence},
                          {"predicted_delta_loss", s.predicted_delta_loss}});
    }
    j["scores"] = std::move(scores);
    return j;
}

/// CSV columns: index, score, predicted_delta_loss, rank (rank 0 = head of
/// the descending-influence ranking).
inline void write_report_csv(std::ostream& out, const InfluenceReport& r) {
    std::vector<int> rank_of(static_cast<std::size_t>(r.n()), 0);
    for (std::size_t pos = 0; pos < r.ranking.size(); ++pos) {
        rank_of[static_cast<std::size_t>(r.ranking[pos])] = static_cast<int>(pos);
    }
    out << "index,score,predicted_delta_loss,rank\n";
    for (const auto& s : r.scores) {
        out << s.train_index << ',' << format_double(s.pair_influence) << ','
            << format_double(s.predicted_delta_loss) << ','
            << rank_of[static_cast<std::size_t>(s.train_index)] << '\n';
    }
}

}  // namespace iftk
