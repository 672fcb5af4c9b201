#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace iftk {

/// Flat 64-bit parameter vector. Layout is owned by the model that
/// produced it (layer-major, weights row-major, then biases).
using ParamVector = Eigen::VectorXd;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Invalid experiment/solver configuration (CLI exit code 2).
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure: divergence, non-PD factorization, solver stall
/// (CLI exit code 3).
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness in the toolkit flows through this
// generator so results are reproducible across platforms and standard
// libraries (std::shuffle / std::*_distribution are implementation-defined).
// ---------------------------------------------------------------------------

/// SplitMix64: tiny, well-mixed, and stable by construction.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Uniform integer in [0, n); unbiased via rejection.
    std::size_t next_below(std::size_t n) {
        require(n > 0, "next_below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return static_cast<std::size_t>(x % n);
    }

    /// Standard normal via Box-Muller (no cached spare; one draw per call).
    double next_gaussian() {
        double u1 = next_double();
        while (u1 == 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Stable content hashing (FNV-1a 64) for fingerprints and cache keys.
// ---------------------------------------------------------------------------

class Fnv1a {
public:
    void add_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    void add(std::uint64_t v) { add_bytes(&v, sizeof v); }
    void add(std::int64_t v) { add_bytes(&v, sizeof v); }
    void add(int v) { add(static_cast<std::int64_t>(v)); }
    void add(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        add(bits);
    }
    void add(const std::string& s) {
        add(static_cast<std::uint64_t>(s.size()));
        add_bytes(s.data(), s.size());
    }
    void add(const Eigen::VectorXd& v) {
        add(static_cast<std::uint64_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) add(v[i]);
    }

    std::uint64_t value() const { return hash_; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        std::uint64_t h = hash_;
        for (int i = 15; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = digits[h & 0xf];
            h >>= 4;
        }
        return out;
    }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace iftk
