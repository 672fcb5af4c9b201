#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "iftk/common.hpp"
#include "iftk/influence.hpp"
#include "iftk/parallel.hpp"
#include "iftk/stats.hpp"
#include "iftk/training.hpp"

namespace iftk {

/// Outcome of one leave-out retraining, measured at a single test point with
/// the raw per-example loss (the decay term is not per-example).
struct GroundTruthRecord {
    std::vector<int> removed;
    RetrainMode mode = RetrainMode::WarmStart;
    int steps = 0;
    double delta_loss_at_test = 0.0;  // loss(retrained, z_t) - loss(theta*, z_t)
    double delta_param_norm = 0.0;    // ||theta' - theta*||_2
    std::string retrained_checkpoint;
    bool ok = true;
    std::string failure;
};

/// Content-addressed store of retrained checkpoints, keyed by
/// (base checkpoint hash, removed indices, steps, mode). Writes are atomic
/// and serialized; a missing directory means memory-only caching.
class RetrainCache {
public:
    explicit RetrainCache(std::filesystem::path dir = {}) : dir_(std::move(dir)) {
        if (!dir_.empty()) std::filesystem::create_directories(dir_);
    }

    static std::string key(const std::string& checkpoint_hash, const std::vector<int>& removed,
                           int steps, RetrainMode mode, double stop_grad_norm) {
        Fnv1a h;
        h.add(checkpoint_hash);
        std::vector<int> sorted = removed;
        std::sort(sorted.begin(), sorted.end());
        h.add(static_cast<std::uint64_t>(sorted.size()));
        for (int i : sorted) h.add(i);
        h.add(steps);
        h.add(to_string(mode));
        h.add(stop_grad_norm);
        return h.hex();
    }

    TrainedModel get_or_compute(const std::string& key,
                                const std::function<TrainedModel()>& compute) {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = memory_.find(key);
            if (it != memory_.end()) return it->second;
        }
        if (!dir_.empty()) {
            const auto path = dir_ / (key + ".json");
            if (std::filesystem::exists(path)) {
                TrainedModel m = load_checkpoint(path);
                std::lock_guard<std::mutex> lock(mutex_);
                memory_.emplace(key, m);
                ++hits_;
                return m;
            }
        }
        TrainedModel m = compute();
        {
            std::lock_guard<std::mutex> lock(mutex_);
            memory_.emplace(key, m);
            ++misses_;
            if (!dir_.empty()) save_checkpoint(dir_ / (key + ".json"), m);
        }
        return m;
    }

    int hits() const { return hits_; }
    int misses() const { return misses_; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::mutex mutex_;
    std::map<std::string, TrainedModel> memory_;
    int hits_ = 0;
    int misses_ = 0;
};

struct GroundTruthOptions {
    int workers = 1;
    RetrainCache* cache = nullptr;
    double stop_grad_norm = 0.0;  // >0 enables convergence-based retraining
};

namespace detail {

inline GroundTruthRecord retrain_record(const TrainedModel& trained, const Dataset& dataset,
                                        const Mlp& mlp, std::vector<int> removed,
                                        const Example& z_t, int steps, RetrainMode mode,
                                        const GroundTruthOptions& opts) {
    GroundTruthRecord rec;
    rec.removed = std::move(removed);
    rec.mode = mode;
    rec.steps = steps;
    try {
        const auto compute = [&] {
            UpweightSpec up;
            for (int i : rec.removed) up.removed_indices.insert(i);
            return retrain(trained, dataset, up, steps, mode, opts.stop_grad_norm);
        };
        TrainedModel after =
            opts.cache != nullptr
                ? opts.cache->get_or_compute(
                      RetrainCache::key(trained.checkpoint_hash(), rec.removed, steps, mode,
                                        opts.stop_grad_norm),
                      compute)
                : compute();
        rec.delta_loss_at_test =
            mlp.loss(after.theta_star, z_t) - mlp.loss(trained.theta_star, z_t);
        rec.delta_param_norm = (after.theta_star - trained.theta_star).norm();
        rec.retrained_checkpoint = after.checkpoint_hash();
    } catch (const numerical_error& e) {
        rec.ok = false;
        rec.failure = e.what();
    }
    return rec;
}

}  // namespace detail

/// One retraining per candidate index; failures are recorded per candidate,
/// never dropped silently.
inline std::vector<GroundTruthRecord> loo_ground_truth(
    const TrainedModel& trained, const Dataset& dataset,
    const std::vector<int>& candidate_indices, const Example& z_t, int steps,
    RetrainMode mode, const GroundTruthOptions& opts = {}) {
    for (int i : candidate_indices) {
        require(i >= 0 && i < dataset.size(), "loo_ground_truth: candidate out of range");
    }
    const Mlp mlp(trained.spec);
    std::vector<GroundTruthRecord> records(candidate_indices.size());
    parallel_for(static_cast<int>(candidate_indices.size()), opts.workers, [&](int k) {
        records[static_cast<std::size_t>(k)] = detail::retrain_record(
            trained, dataset, mlp, {candidate_indices[static_cast<std::size_t>(k)]}, z_t,
            steps, mode, opts);
    });
    return records;
}

inline GroundTruthRecord group_ground_truth(const TrainedModel& trained,
                                            const Dataset& dataset,
                                            const std::vector<int>& group, const Example& z_t,
                                            int steps, RetrainMode mode,
                                            const GroundTruthOptions& opts = {}) {
    require(!group.empty(), "group_ground_truth: empty group");
    for (int i : group) {
        require(i >= 0 && i < dataset.size(), "group_ground_truth: index out of range");
    }
    const Mlp mlp(trained.spec);
    return detail::retrain_record(trained, dataset, mlp, group, z_t, steps, mode, opts);
}

/// Warm-start vs. from-scratch retraining comparison over a candidate set.
struct ScratchVsWarmRow {
    int candidate = -1;
    double param_norm_diff = 0.0;  // ||theta'_scratch - theta'_warm||
    double delta_loss_warm = 0.0;
    double delta_loss_scratch = 0.0;
    bool ok = true;
};

struct ScratchVsWarmReport {
    std::vector<ScratchVsWarmRow> rows;
    CorrelationResult correlation;  // between the two ground-truth delta vectors
    int failed = 0;
};

inline ScratchVsWarmReport scratch_vs_warm_report(const TrainedModel& trained,
                                                  const Dataset& dataset,
                                                  const std::vector<int>& candidates,
                                                  const Example& z_t, int steps,
                                                  const GroundTruthOptions& opts = {}) {
    const Mlp mlp(trained.spec);
    const double base_loss = mlp.loss(trained.theta_star, z_t);
    std::vector<ScratchVsWarmRow> rows(candidates.size());

    parallel_for(static_cast<int>(candidates.size()), opts.workers, [&](int k) {
        const int candidate = candidates[static_cast<std::size_t>(k)];
        require(candidate >= 0 && candidate < dataset.size(),
                "scratch_vs_warm_report: candidate out of range");
        ScratchVsWarmRow row;
        row.candidate = candidate;
        try {
            UpweightSpec up;
            up.removed_indices.insert(candidate);
            const auto run_mode = [&](RetrainMode mode) {
                const auto compute = [&] {
                    return retrain(trained, dataset, up, steps, mode, opts.stop_grad_norm);
                };
                return opts.cache != nullptr
                           ? opts.cache->get_or_compute(
                                 RetrainCache::key(trained.checkpoint_hash(), {candidate},
                                                   steps, mode, opts.stop_grad_norm),
                                 compute)
                           : compute();
            };
            const TrainedModel after_warm = run_mode(RetrainMode::WarmStart);
            const TrainedModel after_scratch = run_mode(RetrainMode::Scratch);
            row.param_norm_diff = (after_scratch.theta_star - after_warm.theta_star).norm();
            row.delta_loss_warm = mlp.loss(after_warm.theta_star, z_t) - base_loss;
            row.delta_loss_scratch = mlp.loss(after_scratch.theta_star, z_t) - base_loss;
        } catch (const numerical_error&) {
            row.ok = false;
        }
        rows[static_cast<std::size_t>(k)] = std::move(row);
    });

    ScratchVsWarmReport out;
    std::vector<double> dw, ds;
    for (auto& row : rows) {
        if (row.ok) {
            dw.push_back(row.delta_loss_warm);
            ds.push_back(row.delta_loss_scratch);
        } else {
            ++out.failed;
        }
        out.rows.push_back(std::move(row));
    }
    out.correlation = correlate(dw, ds, out.failed);
    return out;
}

/// CSV export of ground-truth records.
inline void write_ground_truth_csv(std::ostream& out,
                                   const std::vector<GroundTruthRecord>& records) {
    out << "removed,mode,steps,delta_loss_at_test,delta_param_norm,retrained_checkpoint,ok\n";
    for (const auto& r : records) {
        out << '"';
        for (std::size_t i = 0; i < r.removed.size(); ++i) {
            if (i > 0) out << ' ';
            out << r.removed[i];
        }
        out << "\"," << to_string(r.mode) << ',' << r.steps << ','
            << format_double(r.delta_loss_at_test) << ','
            << format_double(r.delta_param_norm) << ',' << r.retrained_checkpoint << ','
            << (r.ok ? 1 : 0) << '\n';
    }
}

}  // namespace iftk
