#pragma once

#include "zest/common.hpp"
#include "zest/lsh.hpp"
#include "zest/model.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace zest {

enum class EstimatorKind {
    lsh,
    uniform_is,
    exact_gumbel,
    topk_gumbel,
    mips_gumbel,
    bernoulli_oracle,
    exact,
};

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(const std::string& name);

/// One retrieved state with its exact retrieval probability and logit.
struct SampleEntry {
    std::uint32_t state;
    double retrieval_prob;  // in (0, 1]
    double logit;           // theta_y . x
};

struct SampleSet {
    std::vector<SampleEntry> entries;
};

struct PartitionEstimate {
    double z_hat = 0.0;
    double log_z_hat = -std::numeric_limits<double>::infinity();
    std::size_t n_samples = 0;  // states touched
    double wall_time = 0.0;     // seconds
    EstimatorKind estimator = EstimatorKind::exact;
    // instrumentation
    std::size_t score_evals = 0;
    std::size_t bucket_probes = 0;
    std::size_t skipped_draws = 0;
};

struct LshEstimateResult {
    PartitionEstimate estimate;
    SampleSet samples;
};

/// Sum of f(y) / (1 - (1 - p^K)^L) over one query's candidate union. An empty
/// union legally yields z_hat = 0 with n_samples = 0. Throws stale_tables_error
/// if the model's weight checksum differs from the one the tables were built
/// from, unless allow_stale is set (training queries tables between rebuilds).
LshEstimateResult lsh_estimate(const HashTableSet& tables, const LogLinearModel& model,
                               const ConstVectorRef& x, bool allow_stale = false);

/// lsh_estimate with the sample capped at `budget` states: the candidate union
/// is uniformly subsampled before scoring and surviving probabilities are
/// scaled by budget/|S|. Identical output to subsample_fixed_size applied
/// after lsh_estimate with the same seed.
LshEstimateResult lsh_estimate_budgeted(const HashTableSet& tables, const LogLinearModel& model,
                                        const ConstVectorRef& x, int budget, std::uint64_t seed,
                                        bool allow_stale = false);

/// Uniform without-replacement subset of size m (identity if |S| <= m);
/// survivors keep unbiasedness via p_i <- p_i * m / |S|.
SampleSet subsample_fixed_size(const SampleSet& s, int m, std::uint64_t seed);

/// Recompute the estimate Sum f / p from an annotated (possibly subsampled)
/// sample set.
PartitionEstimate estimate_from_samples(const SampleSet& s);

/// Importance sampling from the uniform proposal: t draws with replacement,
/// z_hat = (N / t) * Sum f. enumerate_all visits every state exactly once
/// instead of drawing (test hook; forces the exhaustive t = N case).
PartitionEstimate uniform_is_estimate(const LogLinearModel& model, const ConstVectorRef& x, int t,
                                      std::uint64_t seed, bool enumerate_all = false);

struct GumbelConfig {
    int n_draws = 1;       // T
    std::uint64_t seed = 0;
    int rank = 1;          // 1 = exact max, 2 = second largest, ...
    bool pooled_noise = false;  // draw noise columns from a fixed pool
    int pool_size = 1000;
};

/// Per-(state, column) standard Gumbel noise of the shared pool, generated
/// counter-style so no N x pool table is materialized. The MIPS-Gumbel index
/// uses the identical values.
double column_gumbel_noise(std::uint64_t noise_seed, std::uint32_t state, std::uint32_t column);
std::uint64_t gumbel_pool_seed(const GumbelConfig& cfg);

/// The raw draws exp(-H_i), where H_i is the rank-th largest perturbed logit
/// of draw i. Mean of these estimates 1/Z.
std::vector<double> gumbel_inverse_samples(const LogLinearModel& model, const ConstVectorRef& x,
                                           const GumbelConfig& cfg);

/// Max-perturbation estimate: z_hat = 1 / mean(exp(-H_i)). Requires rank == 1.
PartitionEstimate exact_gumbel_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                        const GumbelConfig& cfg);

/// Same as exact_gumbel_estimate but H_i is the rank-th largest perturbed
/// logit; rank 1 is bit-identical to exact_gumbel_estimate.
PartitionEstimate topk_gumbel_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                       const GumbelConfig& cfg);

/// MIPS index over states augmented with k frozen Gumbel noise columns:
/// row y is (theta_y, G_{y,0}, ..., G_{y,k-1}).
struct MipsGumbelIndex {
    LogLinearModel augmented;
    HashTableSet tables;
    int n_gumbel_cols;
    std::uint64_t noise_seed;
};

MipsGumbelIndex build_mips_gumbel_index(const LogLinearModel& model, const GumbelConfig& cfg,
                                        const LshParams& index_params, int n_gumbel_cols);

/// Gumbel estimate where each draw's max runs over the candidates of one MIPS
/// index query instead of all states: draw i queries with (x, e_{i mod k}), so
/// the best inner product is max_y theta_y . x + G_{y, i mod k}. Empty
/// retrievals are skipped and counted; all draws empty is an error.
PartitionEstimate mips_gumbel_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                       const GumbelConfig& cfg, const MipsGumbelIndex& index);

/// Convenience overload that builds the index in place (its build time lands
/// in wall_time).
PartitionEstimate mips_gumbel_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                       const GumbelConfig& cfg, const LshParams& index_params,
                                       int n_gumbel_cols);

/// Theorem-1 oracle with independent per-state coins: include state i with
/// probability probs[i], z_hat = Sum f_i / p_i over included states. Theta(N);
/// for verification only, never benchmarked as a fast method.
PartitionEstimate bernoulli_oracle_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                            const std::vector<double>& probs, std::uint64_t seed);

/// Independent-selection variance: Sum f_i^2 / p_i - Sum f_i^2.
double analytic_variance_independent(const LogLinearModel& model, const ConstVectorRef& x,
                                     const std::vector<double>& probs);

/// Exact per-state retrieval probabilities 1 - (1 - p_i^K)^L for one context.
/// Theta(N); oracle-side helper.
std::vector<double> state_retrieval_probabilities(const LogLinearModel& model,
                                                  const ConstVectorRef& x,
                                                  const LshParams& params);

struct CovarianceDecomposition {
    double empirical_variance = 0.0;  // Var of z_hat over the builds
    double independent_part = 0.0;    // Sum f^2/p - Sum f^2 with analytic p
    double covariance_term = 0.0;     // Sum_{i!=j} f_i f_j/(p_i p_j) Cov(1_i, 1_j)
    std::size_t trials = 0;
};

/// Runs `trials` independent table builds (seeds derived from `seed`), tallies
/// per-state and pairwise inclusion counts, and returns the empirical variance
/// of the estimator together with both terms of its decomposition. Pairwise
/// tallies are dense, so N must stay enumerable (a few hundred at most).
CovarianceDecomposition covariance_decomposition(const LogLinearModel& model,
                                                 const ConstVectorRef& x, const LshParams& base,
                                                 std::size_t trials, std::uint64_t seed);

double empirical_covariance_term(const LogLinearModel& model, const ConstVectorRef& x,
                                 const LshParams& base, std::size_t trials, std::uint64_t seed);

/// Streaming mean/variance accumulator.
struct RunningStats {
    std::size_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void push(double v) {
        ++count;
        double d = v - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (v - mean);
    }
    double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
    double std_error_of_mean() const {
        return count > 1 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
    }
};

}  // namespace zest
