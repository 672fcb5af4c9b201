#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "iftk/common.hpp"

namespace iftk {

/// One labeled training or test point z = (x, y).
struct Example {
    Vector features;
    int label = 0;
};

/// Ordered, index-addressable collection of examples. Indices are the
/// identity of training points for the lifetime of an experiment; the
/// order never changes after construction.
struct Dataset {
    std::vector<Example> examples;
    int num_classes = 0;
    std::string name;
    int feature_dim = 0;

    int size() const { return static_cast<int>(examples.size()); }

    void validate() const {
        require(!examples.empty(), "dataset '" + name + "' is empty");
        require(num_classes >= 2, "dataset '" + name + "' needs >= 2 classes");
        require(feature_dim > 0, "dataset '" + name + "' needs feature_dim > 0");
        for (const auto& ex : examples) {
            require(ex.features.size() == feature_dim,
                    "dataset '" + name + "': feature length mismatch");
            require(ex.label >= 0 && ex.label < num_classes,
                    "dataset '" + name + "': label out of range");
            require(all_finite(ex.features), "dataset '" + name + "': non-finite feature");
        }
    }

    /// Stable content hash over shapes, feature bits and labels.
    std::string fingerprint() const {
        Fnv1a h;
        h.add(num_classes);
        h.add(feature_dim);
        h.add(static_cast<std::uint64_t>(examples.size()));
        for (const auto& ex : examples) {
            h.add(ex.features);
            h.add(ex.label);
        }
        return h.hex();
    }

    std::vector<int> class_counts() const {
        std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
        for (const auto& ex : examples) counts[static_cast<std::size_t>(ex.label)]++;
        return counts;
    }
};

struct SplitResult {
    Dataset train;
    Dataset test;
    std::uint64_t seed = 0;
    double fraction = 0.0;
};

namespace detail {
inline std::vector<std::size_t> shuffled_indices(std::size_t n, SplitMix64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.next_below(i)]);
    }
    return idx;
}
}  // namespace detail

/// Deterministic train/test split. Stratified mode samples per class and
/// keeps per-class test counts within +-1 of proportionality.
inline SplitResult split(const Dataset& source, double test_fraction,
                         std::uint64_t seed, bool stratified) {
    source.validate();
    require(test_fraction > 0.0 && test_fraction < 1.0,
            "split: test_fraction must be in (0,1)");

    const std::size_t n = source.examples.size();
    std::vector<std::size_t> test_idx;

    SplitMix64 rng(seed);
    if (stratified) {
        for (int c = 0; c < source.num_classes; ++c) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < n; ++i) {
                if (source.examples[i].label == c) members.push_back(i);
            }
            require(members.size() >= 2,
                    "split: class " + std::to_string(c) + " has fewer than 2 members");
            const auto order = detail::shuffled_indices(members.size(), rng);
            const auto take = static_cast<std::size_t>(
                std::llround(test_fraction * static_cast<double>(members.size())));
            for (std::size_t k = 0; k < take; ++k) test_idx.push_back(members[order[k]]);
        }
    } else {
        const auto order = detail::shuffled_indices(n, rng);
        const auto take = static_cast<std::size_t>(
            std::llround(test_fraction * static_cast<double>(n)));
        test_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    }

    std::sort(test_idx.begin(), test_idx.end());
    std::vector<bool> in_test(n, false);
    for (auto i : test_idx) in_test[i] = true;

    SplitResult out;
    out.seed = seed;
    out.fraction = test_fraction;
    out.train.num_classes = out.test.num_classes = source.num_classes;
    out.train.feature_dim = out.test.feature_dim = source.feature_dim;
    out.train.name = source.name + "/train";
    out.test.name = source.name + "/test";
    for (std::size_t i = 0; i < n; ++i) {
        (in_test[i] ? out.test : out.train).examples.push_back(source.examples[i]);
    }
    out.train.validate();
    out.test.validate();
    return out;
}

/// Per-feature standardization statistics computed from a training split.
struct NormalizationStats {
    Vector mean;
    Vector std;  // entries with zero variance keep std = 0 and map to 0
};

inline Dataset apply_stats(const Dataset& ds, const NormalizationStats& stats) {
    require(stats.mean.size() == ds.feature_dim, "apply_stats: dimension mismatch");
    Dataset out = ds;
    for (auto& ex : out.examples) {
        for (int j = 0; j < ds.feature_dim; ++j) {
            ex.features[j] = stats.std[j] > 0.0
                                 ? (ex.features[j] - stats.mean[j]) / stats.std[j]
                                 : 0.0;
        }
    }
    return out;
}

struct NormalizeResult {
    Dataset train;
    Dataset test;
    NormalizationStats stats;
};

/// Standardize features using train mean/std; the test split is transformed
/// with the train statistics. Not idempotent: applying the same stats twice
/// shifts data unless it was already standardized.
inline NormalizeResult normalize(const Dataset& train, const Dataset& test) {
    train.validate();
    const int d = train.feature_dim;
    const auto n = static_cast<double>(train.examples.size());

    NormalizationStats stats;
    stats.mean = Vector::Zero(d);
    stats.std = Vector::Zero(d);
    for (const auto& ex : train.examples) stats.mean += ex.features;
    stats.mean /= n;
    for (const auto& ex : train.examples) {
        const Vector c = ex.features - stats.mean;
        stats.std += c.cwiseProduct(c);
    }
    stats.std = (stats.std / n).cwiseSqrt();

    return NormalizeResult{apply_stats(train, stats), apply_stats(test, stats), stats};
}

/// Isotropic Gaussian clusters at deterministic centers. Class k sits at
/// distance `separation` from the origin along direction e_{k mod d},
/// alternating sign every wrap so centers stay distinct.
inline Dataset gen_blobs(int num_per_class, int num_classes, int feature_dim,
                         double separation, std::uint64_t seed) {
    require(num_per_class > 0, "gen_blobs: num_per_class must be positive");
    require(num_classes >= 2, "gen_blobs: num_classes must be >= 2");
    require(feature_dim > 0, "gen_blobs: feature_dim must be positive");

    std::vector<Vector> centers;
    for (int c = 0; c < num_classes; ++c) {
        Vector center = Vector::Zero(feature_dim);
        const int axis = c % feature_dim;
        const int wrap = c / feature_dim;
        const double sign = (wrap % 2 == 0) ? 1.0 : -1.0;
        center[axis] = sign * separation * static_cast<double>(1 + wrap / 2);
        centers.push_back(center);
    }

    SplitMix64 rng(seed);
    Dataset ds;
    ds.num_classes = num_classes;
    ds.feature_dim = feature_dim;
    ds.name = "blobs";
    for (int c = 0; c < num_classes; ++c) {
        for (int i = 0; i < num_per_class; ++i) {
            Example ex;
            ex.label = c;
            ex.features = centers[static_cast<std::size_t>(c)];
            for (int j = 0; j < feature_dim; ++j) ex.features[j] += rng.next_gaussian();
            ds.examples.push_back(std::move(ex));
        }
    }
    ds.validate();
    return ds;
}

}  // namespace iftk
