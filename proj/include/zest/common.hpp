#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace zest {

// All matrices are row-major doubles: one row per state / context.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using ConstVectorRef = Eigen::Ref<const Eigen::VectorXd>;

class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class dim_mismatch_error : public error {
public:
    using error::error;
};

class snapshot_format_error : public error {
public:
    using error::error;
};

class snapshot_truncated_error : public error {
public:
    using error::error;
};

class stale_tables_error : public error {
public:
    using error::error;
};

class non_finite_score_error : public error {
public:
    using error::error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream seeds: hash of a base seed and one or two stream ids.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return splitmix64(splitmix64(base) ^ splitmix64(stream + 0x1234abcdULL));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(base, a), b);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
    return derive_seed(derive_seed(base, a, b), c);
}

// Deterministic random stream with explicitly coded output distributions, so
// results are reproducible across standard libraries and platforms.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(splitmix64(seed ^ 0x5bf03635ULL)) {}

    std::uint64_t bits() {
        state_ = splitmix64(state_);
        return state_;
    }

    // uniform in the open interval (0, 1)
    double uniform() { return (static_cast<double>(bits() >> 12) + 0.5) * 0x1.0p-52; }

    // standard normal via Box-Muller, one spare cached
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // standard Gumbel (location 0, scale 1) via inverse CDF
    double gumbel() { return -std::log(-std::log(uniform())); }

    // uniform index in [0, n); modulo bias is negligible for n << 2^64
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(bits() % n); }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// FNV-1a over raw bytes; used to fingerprint weight matrices.
inline std::uint64_t fnv1a64(const void* data, std::size_t n_bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n_bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace zest
