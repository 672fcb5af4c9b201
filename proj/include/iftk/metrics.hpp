#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "iftk/groundtruth.hpp"
#include "iftk/influence.hpp"
#include "iftk/stats.hpp"

namespace iftk {

// ---------------------------------------------------------------------------
// Selection rules. Percentiles follow the nearest-rank convention
// (1-based position ceil(q * m) in ascending order); ties break by ascending
// index so reports are deterministic.
// ---------------------------------------------------------------------------

enum class SelectionKind { MaxLoss, LossPercentile, TopK, TopFraction, PercentileBand };

struct SelectionRule {
    SelectionKind kind = SelectionKind::MaxLoss;
    double q = 0.5;        // LossPercentile
    int k = 1;             // TopK
    double fraction = 0.1; // TopFraction
    double center = 0.5;   // PercentileBand
    int width = 1;         // PercentileBand

    void validate() const {
        switch (kind) {
            case SelectionKind::MaxLoss: return;
            case SelectionKind::LossPercentile:
                require(q > 0.0 && q <= 1.0, "SelectionRule: q must be in (0,1]");
                return;
            case SelectionKind::TopK:
                require(k >= 1, "SelectionRule: k must be >= 1");
                return;
            case SelectionKind::TopFraction:
                require(fraction > 0.0 && fraction <= 1.0,
                        "SelectionRule: fraction must be in (0,1]");
                return;
            case SelectionKind::PercentileBand:
                require(center > 0.0 && center <= 1.0,
                        "SelectionRule: center must be in (0,1]");
                require(width >= 1, "SelectionRule: width must be >= 1");
                return;
        }
    }

    std::string describe() const {
        switch (kind) {
            case SelectionKind::MaxLoss: return "max_loss";
            case SelectionKind::LossPercentile:
                return "loss_percentile(" + format_double(q) + ")";
            case SelectionKind::TopK: return "top_k(" + std::to_string(k) + ")";
            case SelectionKind::TopFraction:
                return "top_fraction(" + format_double(fraction) + ")";
            case SelectionKind::PercentileBand:
                return "percentile_band(" + format_double(center) + "," +
                       std::to_string(width) + ")";
        }
        return "?";
    }
};

inline int nearest_rank(double q, int m) {
    const int r = static_cast<int>(std::ceil(q * static_cast<double>(m)));
    return std::max(1, std::min(r, m));
}

/// Pick a test point by per-example loss at theta*. max_loss takes the
/// argmax (lowest index on ties); loss_percentile(q) takes the nearest-rank
/// entry of the ascending loss order.
inline int select_test_point(const Mlp& mlp, const ParamVector& theta,
                             const Dataset& test_data, const SelectionRule& rule) {
    rule.validate();
    require(test_data.size() > 0, "select_test_point: empty test set");
    require(rule.kind == SelectionKind::MaxLoss || rule.kind == SelectionKind::LossPercentile,
            "select_test_point: rule must be max_loss or loss_percentile");

    std::vector<double> losses;
    losses.reserve(test_data.examples.size());
    for (const auto& ex : test_data.examples) losses.push_back(mlp.loss(theta, ex));

    if (rule.kind == SelectionKind::MaxLoss) {
        int best = 0;
        for (int i = 1; i < test_data.size(); ++i) {
            if (losses[static_cast<std::size_t>(i)] > losses[static_cast<std::size_t>(best)]) {
                best = i;
            }
        }
        return best;
    }

    std::vector<int> order(losses.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double la = losses[static_cast<std::size_t>(a)];
        const double lb = losses[static_cast<std::size_t>(b)];
        if (la != lb) return la < lb;
        return a < b;
    });
    return order[static_cast<std::size_t>(nearest_rank(rule.q, test_data.size()) - 1)];
}

/// Pick candidate training points from an influence ranking. top_k /
/// top_fraction take the head of the descending ranking (ceil(f*n) for
/// fractions); percentile_band(center, width) takes a contiguous window in
/// ascending-score order around the nearest-rank position center*n.
inline std::vector<int> select_candidates(const InfluenceReport& report,
                                          const SelectionRule& rule) {
    rule.validate();
    const int n = report.n();
    require(n >= 1, "select_candidates: empty report");

    switch (rule.kind) {
        case SelectionKind::TopK: {
            require(rule.k <= n, "select_candidates: k exceeds n");
            return {report.ranking.begin(), report.ranking.begin() + rule.k};
        }
        case SelectionKind::TopFraction: {
            const int count = static_cast<int>(
                std::ceil(rule.fraction * static_cast<double>(n)));
            require(count <= n, "select_candidates: fraction window exceeds n");
            return {report.ranking.begin(), report.ranking.begin() + count};
        }
        case SelectionKind::PercentileBand: {
            require(rule.width <= n, "select_candidates: window width exceeds n");
            const int center = nearest_rank(rule.center, n);  // ascending-order position
            const int start = center - (rule.width - 1) / 2;
            const int end = start + rule.width - 1;
            if (start < 1 || end > n) {
                throw std::invalid_argument(
                    "select_candidates: percentile band [" + std::to_string(start) + "," +
                    std::to_string(end) + "] exceeds the 1.." + std::to_string(n) + " range");
            }
            // ranking is descending; ascending position r is ranking[n - r].
            std::vector<int> out;
            for (int r = start; r <= end; ++r) {
                out.push_back(report.ranking[static_cast<std::size_t>(n - r)]);
            }
            return out;
        }
        default:
            throw std::invalid_argument(
                "select_candidates: rule must be top_k, top_fraction or percentile_band");
    }
}

// ---------------------------------------------------------------------------
// Taylor-gap diagnostics: influence-predicted parameter change vs the change
// realized by retraining.
// ---------------------------------------------------------------------------

struct TaylorGapRow {
    int candidate = -1;
    double predicted_norm = 0.0;  // ||theta_predicted - theta*||
    double retrained_norm = 0.0;  // ||theta_retrained - theta*|| from ground truth
};

struct TaylorGapReport {
    std::vector<TaylorGapRow> rows;
    double norm_spearman = 0.0;
    int excluded = 0;
};

inline TaylorGapReport taylor_gap_report(const InfluenceContext& ctx,
                                         const std::vector<int>& candidates,
                                         const std::vector<GroundTruthRecord>& gt_records) {
    require(candidates.size() == gt_records.size(),
            "taylor_gap_report: candidates/records length mismatch");
    TaylorGapReport out;
    std::vector<double> predicted, retrained;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        const auto& rec = gt_records[k];
        require(rec.removed.size() == 1 && rec.removed.front() == candidates[k],
                "taylor_gap_report: record does not match candidate");
        if (!rec.ok) {
            ++out.excluded;
            continue;
        }
        TaylorGapRow row;
        row.candidate = candidates[k];
        row.predicted_norm =
            (ctx.predict_removed_params(candidates[k]) - ctx.trained().theta_star).norm();
        row.retrained_norm = rec.delta_param_norm;
        predicted.push_back(row.predicted_norm);
        retrained.push_back(row.retrained_norm);
        out.rows.push_back(row);
    }
    out.norm_spearman = spearman(predicted, retrained);  // loud on constant/short input
    return out;
}

// ---------------------------------------------------------------------------
// Influence vs ground-truth correlation.
// ---------------------------------------------------------------------------

inline CorrelationResult correlate_influence(const InfluenceReport& report,
                                             const std::vector<int>& candidates,
                                             const std::vector<GroundTruthRecord>& gt_records) {
    require(candidates.size() == gt_records.size(),
            "correlate_influence: candidates/records length mismatch");
    std::vector<double> predicted, actual;
    int excluded = 0;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        if (!gt_records[k].ok) {
            ++excluded;
            continue;
        }
        predicted.push_back(
            report.scores[static_cast<std::size_t>(candidates[k])].predicted_delta_loss);
        actual.push_back(gt_records[k].delta_loss_at_test);
    }
    if (predicted.size() < 2) {
        throw std::invalid_argument("correlate_influence: fewer than 2 usable pairs");
    }
    return correlate(predicted, actual, excluded);
}

/// Multi-test-point aggregation: concatenate the (train, test) pair vectors
/// across test points before correlating.
struct InfluenceGroundTruthSet {
    const InfluenceReport* report;
    const std::vector<int>* candidates;
    const std::vector<GroundTruthRecord>* records;
};

inline CorrelationResult correlate_influence_multi(
    const std::vector<InfluenceGroundTruthSet>& sets) {
    std::vector<double> predicted, actual;
    int excluded = 0;
    for (const auto& s : sets) {
        require(s.candidates->size() == s.records->size(),
                "correlate_influence_multi: candidates/records length mismatch");
        for (std::size_t k = 0; k < s.candidates->size(); ++k) {
            if (!(*s.records)[k].ok) {
                ++excluded;
                continue;
            }
            predicted.push_back(
                s.report->scores[static_cast<std::size_t>((*s.candidates)[k])]
                    .predicted_delta_loss);
            actual.push_back((*s.records)[k].delta_loss_at_test);
        }
    }
    if (predicted.size() < 2) {
        throw std::invalid_argument("correlate_influence_multi: fewer than 2 usable pairs");
    }
    return correlate(predicted, actual, excluded);
}

/// Correlation-table CSV schema.
inline void write_correlation_csv_header(std::ostream& out) {
    out << "experiment_id,test_rule,candidate_rule,solver,pearson,spearman,n_pairs,excluded\n";
}

inline void write_correlation_csv_row(std::ostream& out, const std::string& experiment_id,
                                      const std::string& test_rule,
                                      const std::string& candidate_rule,
                                      const std::string& solver,
                                      const CorrelationResult& c) {
    out << experiment_id << ',' << test_rule << ',' << candidate_rule << ',' << solver << ','
        << format_double(c.pearson) << ',' << format_double(c.spearman) << ',' << c.n_pairs
        << ',' << c.excluded << '\n';
}

}  // namespace iftk
