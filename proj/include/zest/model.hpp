#pragma once

#include "zest/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace zest {

// Largest logit whose exponential is still a finite double.
inline constexpr double kMaxFiniteLogit = 709.0;

/// A log-linear model over N discrete states: one weight row per state, and
/// the unnormalized score of state y for a context x is exp(weights.row(y) . x).
class LogLinearModel {
public:
    explicit LogLinearModel(Matrix weights);

    Eigen::Index state_count() const { return weights_.rows(); }
    Eigen::Index dim() const { return weights_.cols(); }
    const Matrix& weights() const { return weights_; }

    double logit(Eigen::Index state, const ConstVectorRef& x) const;

    /// exp(theta_y . x). Saturates to +inf for extreme inputs; estimators
    /// reject non-finite scores.
    double unnormalized_score(Eigen::Index state, const ConstVectorRef& x) const;

    /// Sum over all states of exp(theta_y . x), via max-shifted log-sum-exp.
    double exact_partition(const ConstVectorRef& x) const;

    /// log of exact_partition; never overflows for finite logits.
    double log_partition(const ConstVectorRef& x) const;

    /// Cached FNV-1a over the weight bytes; invalidated by update_row.
    std::uint64_t weights_checksum() const;

    /// In-place row update (training): row(state) += coeff * x.
    void update_row(Eigen::Index state, double coeff, const ConstVectorRef& x);

private:
    Matrix weights_;
    mutable std::uint64_t checksum_ = 0;
    mutable bool checksum_valid_ = false;
};

/// A batch of context (feature) vectors, one per row. Rows must be finite and
/// nonzero: a zero context has no direction, so hash collision probabilities
/// against it are undefined.
class ContextBatch {
public:
    explicit ContextBatch(Matrix contexts);

    Eigen::Index size() const { return contexts_.rows(); }
    Eigen::Index dim() const { return contexts_.cols(); }
    const Matrix& matrix() const { return contexts_; }
    Eigen::Ref<const Vector> row(Eigen::Index i) const { return contexts_.row(i).transpose(); }

private:
    Matrix contexts_;
};

/// Contexts paired with integer labels in [0, state_count).
struct LabeledDataset {
    LabeledDataset(ContextBatch contexts, std::vector<std::int64_t> labels,
                   Eigen::Index state_count);

    ContextBatch contexts;
    std::vector<std::int64_t> labels;
    Eigen::Index state_count;
};

struct SnapshotMeta {
    std::string name;
    std::uint64_t seed = 0;
    std::string params;  // free-form description of how the snapshot was made
};

/// A frozen (model, contexts) pair plus provenance, the unit of benchmark input.
struct Snapshot {
    Snapshot(LogLinearModel model_in, ContextBatch contexts_in, SnapshotMeta meta_in);

    LogLinearModel model;
    ContextBatch contexts;
    SnapshotMeta meta;
};

/// i.i.d. zero-mean Gaussian weights and contexts with standard deviation
/// `scale`; bit-identical output for equal arguments.
Snapshot generate_synthetic(Eigen::Index n_states, Eigen::Index dim, Eigen::Index n_contexts,
                            double scale, std::uint64_t seed);

/// Fixed binary layout: magic "ZEST1", then N, D, M as u64 LE, weights
/// row-major as f64 LE, contexts likewise, then a small metadata trailer.
/// Round-trips are bit-exact on the matrices.
void save_snapshot(const Snapshot& s, const std::string& path);
Snapshot load_snapshot(const std::string& path);

}  // namespace zest
