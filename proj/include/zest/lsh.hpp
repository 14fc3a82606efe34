#pragma once

#include "zest/common.hpp"
#include "zest/model.hpp"

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace zest {

/// (K, L) scheme: L hash tables, each keyed by a K-bit signed-random-projection
/// meta-hash.
struct LshParams {
    int k_bits = 10;
    int n_tables = 16;
    std::uint64_t seed = 0;
};

void validate(const LshParams& params);

/// Frozen Gaussian projection, one column per hash bit: (dim) x (K * L).
/// Gaussian (rotation-invariant) entries make the 1 - angle/pi collision law
/// exact, which the estimator's importance weights rely on.
class ProjectionMatrix {
public:
    ProjectionMatrix(Eigen::Index dim, const LshParams& params);

    const Matrix& entries() const { return entries_; }
    Eigen::Index dim() const { return entries_.rows(); }
    std::uint64_t seed() const { return seed_; }

private:
    Matrix entries_;
    std::uint64_t seed_;
};

/// Ids retrieved by one query: the deduplicated union of the L probed buckets.
struct CandidateSet {
    std::vector<std::uint32_t> ids;  // sorted ascending, distinct
    int buckets_probed = 0;
};

/// Asymmetric MIPS transform, data side: [theta / M ; sqrt(1 - |theta|^2/M^2)].
/// Unit norm by construction; requires |theta| <= M.
Vector mips_transform_data(const ConstVectorRef& theta, double max_norm);

/// Asymmetric MIPS transform, query side: [x / |x| ; 0]. The inner product of
/// a transformed (data, query) pair is (theta . x) / (M |x|).
Vector mips_transform_query(const ConstVectorRef& x);

/// L keys of K bits each; bit j of table t comes from the sign of the
/// projection onto column t*K + j.
std::vector<std::uint32_t> fingerprint(const ConstVectorRef& v, const ProjectionMatrix& proj,
                                       const LshParams& params);

/// Per-bit collision probability of SimHash on the MIPS-transformed pair:
/// p = 1 - arccos((theta . x) / (M |x|)) / pi. Strictly increasing in theta . x.
double collision_probability(const ConstVectorRef& theta, const ConstVectorRef& x,
                             double max_norm);

/// Probability that a state with per-bit collision probability p lands in at
/// least one of the L probed buckets: 1 - (1 - p^K)^L.
double retrieval_probability(double p, int k_bits, int n_tables);

/// L hash tables over the MIPS-transformed weight rows of one model, plus the
/// projection and the scaling constant M. Immutable once built; queries are
/// pure reads and safe to run concurrently.
class HashTableSet {
public:
    HashTableSet(const LogLinearModel& model, const LshParams& params);

    CandidateSet query_candidates(const ConstVectorRef& x) const;

    const LshParams& params() const { return params_; }
    double max_norm() const { return max_norm_; }
    Eigen::Index state_count() const { return state_count_; }
    Eigen::Index dim() const { return dim_; }
    std::uint64_t model_checksum() const { return model_checksum_; }
    const ProjectionMatrix& projection() const { return projection_; }

    /// Total ids stored across tables (N per table).
    std::size_t stored_ids() const;
    /// Bucket key -> ids map of one table, for tests.
    const std::unordered_map<std::uint32_t, std::vector<std::uint32_t>>& table(int t) const {
        return tables_.at(static_cast<std::size_t>(t));
    }

private:
    std::vector<std::unordered_map<std::uint32_t, std::vector<std::uint32_t>>> tables_;
    ProjectionMatrix projection_;
    LshParams params_;
    double max_norm_ = 1.0;
    Eigen::Index state_count_ = 0;
    Eigen::Index dim_ = 0;
    std::uint64_t model_checksum_ = 0;
};

/// Transform, fingerprint and insert every state of `model`; M is the max row
/// norm (or 1 for an all-zero model, where any constant gives the same hash).
HashTableSet build_tables(const LogLinearModel& model, const LshParams& params);

}  // namespace zest
