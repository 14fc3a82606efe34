#include "zest/estimators.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace zest {

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// seed stream tags (arbitrary distinct constants)
constexpr std::uint64_t kSubsampleStream = 0x5ab5ULL;
constexpr std::uint64_t kFreshNoiseStream = 0xf2e5ULL;
constexpr std::uint64_t kPoolNoiseStream = 0x6b31ULL;
constexpr std::uint64_t kColumnChoiceStream = 0xc01cULL;
constexpr std::uint64_t kBernoulliStream = 0xbe27ULL;
constexpr std::uint64_t kUniformStream = 0x04f1ULL;

void check_logit(double logit) {
    if (!std::isfinite(logit) || logit > kMaxFiniteLogit) {
        throw non_finite_score_error("score overflows a double; logit " + std::to_string(logit));
    }
}

// Selection sampling (Algorithm S): exactly m of n positions, each subset
// equally likely, returned ascending. Both subsampling entry points share this
// so they pick identical survivors for identical seeds.
std::vector<std::size_t> select_positions(std::size_t n, std::size_t m, RngStream& rng) {
    std::vector<std::size_t> out;
    if (m >= n) {
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = i;
        }
        return out;
    }
    out.reserve(m);
    std::size_t chosen = 0;
    for (std::size_t i = 0; i < n && chosen < m; ++i) {
        double need = static_cast<double>(m - chosen);
        double left = static_cast<double>(n - i);
        if (rng.uniform() * left < need) {
            out.push_back(i);
            ++chosen;
        }
    }
    return out;
}

std::vector<std::size_t> subsample_positions(std::size_t n, std::size_t m, std::uint64_t seed) {
    RngStream rng(derive_seed(seed, kSubsampleStream));
    return select_positions(n, m, rng);
}

SampleEntry annotate_one(const HashTableSet& tables, const LogLinearModel& model,
                         const ConstVectorRef& x, std::uint32_t id) {
    double logit = model.logit(static_cast<Eigen::Index>(id), x);
    check_logit(logit);
    double p = collision_probability(model.weights().row(static_cast<Eigen::Index>(id)).transpose(),
                                     x, tables.max_norm());
    double r = retrieval_probability(p, tables.params().k_bits, tables.params().n_tables);
    if (!(r > 0.0)) {
        throw error("retrieved state " + std::to_string(id) + " has retrieval probability 0");
    }
    return SampleEntry{id, r, logit};
}

void check_tables(const HashTableSet& tables, const LogLinearModel& model, bool allow_stale) {
    if (!allow_stale && tables.model_checksum() != model.weights_checksum()) {
        throw stale_tables_error("model weights changed since the tables were built");
    }
    if (tables.dim() != model.dim() || tables.state_count() != model.state_count()) {
        throw dim_mismatch_error("tables were built for a different model shape");
    }
}

PartitionEstimate estimate_from_neg_h(const std::vector<double>& neg_h, EstimatorKind kind) {
    // z = 1 / mean(exp(-H_i)), i.e. log z = log T - logsumexp(-H)
    double m = *std::max_element(neg_h.begin(), neg_h.end());
    double acc = 0.0;
    for (double v : neg_h) {
        acc += std::exp(v - m);
    }
    PartitionEstimate est;
    est.estimator = kind;
    est.log_z_hat = std::log(static_cast<double>(neg_h.size())) - (m + std::log(acc));
    est.z_hat = std::exp(est.log_z_hat);
    return est;
}

void validate_gumbel(const GumbelConfig& cfg, Eigen::Index n_states) {
    if (cfg.n_draws < 1) {
        throw error("n_draws must be at least 1");
    }
    if (cfg.rank < 1 || static_cast<Eigen::Index>(cfg.rank) > n_states) {
        throw error("rank must lie in [1, state_count]");
    }
    if (cfg.pooled_noise && cfg.pool_size < cfg.n_draws) {
        throw error("pool_size must be at least n_draws");
    }
}

// rank-th largest of values[], ties broken toward the lower state id
double rank_statistic(const std::vector<double>& values, int rank) {
    std::vector<std::uint32_t> order(values.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (values[a] != values[b]) {
            return values[a] > values[b];
        }
        return a < b;
    };
    auto nth = order.begin() + (rank - 1);
    std::nth_element(order.begin(), nth, order.end(), better);
    return values[*nth];
}

}  // namespace

std::string to_string(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::lsh: return "lsh";
        case EstimatorKind::uniform_is: return "uniform_is";
        case EstimatorKind::exact_gumbel: return "exact_gumbel";
        case EstimatorKind::topk_gumbel: return "topk_gumbel";
        case EstimatorKind::mips_gumbel: return "mips_gumbel";
        case EstimatorKind::bernoulli_oracle: return "bernoulli_oracle";
        case EstimatorKind::exact: return "exact";
    }
    throw error("unknown estimator kind");
}

EstimatorKind estimator_from_string(const std::string& name) {
    if (name == "lsh") return EstimatorKind::lsh;
    if (name == "uniform_is") return EstimatorKind::uniform_is;
    if (name == "exact_gumbel") return EstimatorKind::exact_gumbel;
    if (name == "topk_gumbel") return EstimatorKind::topk_gumbel;
    if (name == "mips_gumbel") return EstimatorKind::mips_gumbel;
    if (name == "bernoulli_oracle") return EstimatorKind::bernoulli_oracle;
    if (name == "exact") return EstimatorKind::exact;
    throw error("unknown estimator '" + name + "'");
}

PartitionEstimate estimate_from_samples(const SampleSet& s) {
    PartitionEstimate est;
    est.estimator = EstimatorKind::lsh;
    est.n_samples = s.entries.size();
    est.score_evals = s.entries.size();
    if (s.entries.empty()) {
        return est;  // z_hat 0, log_z_hat -inf
    }
    double m = -std::numeric_limits<double>::infinity();
    for (const SampleEntry& e : s.entries) {
        m = std::max(m, e.logit);
    }
    double acc = 0.0;
    for (const SampleEntry& e : s.entries) {
        if (!(e.retrieval_prob > 0.0 && e.retrieval_prob <= 1.0)) {
            throw error("sample probabilities must lie in (0, 1]");
        }
        acc += std::exp(e.logit - m) / e.retrieval_prob;
    }
    est.log_z_hat = m + std::log(acc);
    est.z_hat = std::exp(est.log_z_hat);
    return est;
}

LshEstimateResult lsh_estimate(const HashTableSet& tables, const LogLinearModel& model,
                               const ConstVectorRef& x, bool allow_stale) {
    double t0 = now_s();
    check_tables(tables, model, allow_stale);
    CandidateSet cand = tables.query_candidates(x);
    LshEstimateResult res;
    res.samples.entries.reserve(cand.ids.size());
    for (std::uint32_t id : cand.ids) {
        res.samples.entries.push_back(annotate_one(tables, model, x, id));
    }
    res.estimate = estimate_from_samples(res.samples);
    res.estimate.bucket_probes = static_cast<std::size_t>(cand.buckets_probed);
    res.estimate.wall_time = now_s() - t0;
    return res;
}

LshEstimateResult lsh_estimate_budgeted(const HashTableSet& tables, const LogLinearModel& model,
                                        const ConstVectorRef& x, int budget, std::uint64_t seed,
                                        bool allow_stale) {
    if (budget < 1) {
        throw error("budget must be at least 1");
    }
    double t0 = now_s();
    check_tables(tables, model, allow_stale);
    CandidateSet cand = tables.query_candidates(x);
    std::size_t n = cand.ids.size();
    std::size_t m = static_cast<std::size_t>(budget);
    LshEstimateResult res;
    if (n <= m) {
        res.samples.entries.reserve(n);
        for (std::uint32_t id : cand.ids) {
            res.samples.entries.push_back(annotate_one(tables, model, x, id));
        }
    } else {
        // subsample ids before scoring so only survivors are ever scored
        std::vector<std::size_t> keep = subsample_positions(n, m, seed);
        double ratio = static_cast<double>(m) / static_cast<double>(n);
        res.samples.entries.reserve(keep.size());
        for (std::size_t pos : keep) {
            SampleEntry e = annotate_one(tables, model, x, cand.ids[pos]);
            e.retrieval_prob *= ratio;
            res.samples.entries.push_back(e);
        }
    }
    res.estimate = estimate_from_samples(res.samples);
    res.estimate.bucket_probes = static_cast<std::size_t>(cand.buckets_probed);
    res.estimate.wall_time = now_s() - t0;
    return res;
}

SampleSet subsample_fixed_size(const SampleSet& s, int m, std::uint64_t seed) {
    if (m < 1) {
        throw error("subsample size must be at least 1");
    }
    std::size_t n = s.entries.size();
    if (n <= static_cast<std::size_t>(m)) {
        return s;
    }
    std::vector<std::size_t> keep = subsample_positions(n, static_cast<std::size_t>(m), seed);
    double ratio = static_cast<double>(m) / static_cast<double>(n);
    SampleSet out;
    out.entries.reserve(keep.size());
    for (std::size_t pos : keep) {
        SampleEntry e = s.entries[pos];
        e.retrieval_prob *= ratio;
        out.entries.push_back(e);
    }
    return out;
}

PartitionEstimate uniform_is_estimate(const LogLinearModel& model, const ConstVectorRef& x, int t,
                                      std::uint64_t seed, bool enumerate_all) {
    Eigen::Index n = model.state_count();
    if (!enumerate_all && t < 1) {
        throw error("draw count must be at least 1");
    }
    double t0 = now_s();
    std::size_t draws = enumerate_all ? static_cast<std::size_t>(n) : static_cast<std::size_t>(t);
    std::vector<double> logits;
    logits.reserve(draws);
    if (enumerate_all) {
        for (Eigen::Index y = 0; y < n; ++y) {
            double l = model.logit(y, x);
            check_logit(l);
            logits.push_back(l);
        }
    } else {
        RngStream rng(derive_seed(seed, kUniformStream));
        for (std::size_t i = 0; i < draws; ++i) {
            auto y = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
            double l = model.logit(y, x);
            check_logit(l);
            logits.push_back(l);
        }
    }
    double m = *std::max_element(logits.begin(), logits.end());
    double acc = 0.0;
    for (double l : logits) {
        acc += std::exp(l - m);
    }
    PartitionEstimate est;
    est.estimator = EstimatorKind::uniform_is;
    // (N / t) * sum f, assembled in log space
    est.log_z_hat = m + std::log(acc) + std::log(static_cast<double>(n)) -
                    std::log(static_cast<double>(draws));
    est.z_hat = std::exp(est.log_z_hat);
    est.n_samples = draws;
    est.score_evals = draws;
    est.wall_time = now_s() - t0;
    return est;
}

double column_gumbel_noise(std::uint64_t noise_seed, std::uint32_t state, std::uint32_t column) {
    std::uint64_t h = derive_seed(noise_seed, state, column);
    double u = (static_cast<double>(h >> 12) + 0.5) * 0x1.0p-52;
    return -std::log(-std::log(u));
}

std::uint64_t gumbel_pool_seed(const GumbelConfig& cfg) {
    return derive_seed(cfg.seed, kPoolNoiseStream);
}

namespace {

// -H_i for every draw, where H_i is the rank-th largest perturbed logit
std::vector<double> gumbel_neg_h(const LogLinearModel& model, const ConstVectorRef& x,
                                 const GumbelConfig& cfg) {
    Eigen::Index n = model.state_count();
    validate_gumbel(cfg, n);
    Vector logits = model.weights() * x;
    for (Eigen::Index y = 0; y < n; ++y) {
        check_logit(logits(y));
    }
    std::vector<std::size_t> columns;
    std::uint64_t pool_seed = 0;
    if (cfg.pooled_noise) {
        pool_seed = gumbel_pool_seed(cfg);
        RngStream col_rng(derive_seed(cfg.seed, kColumnChoiceStream));
        columns = select_positions(static_cast<std::size_t>(cfg.pool_size),
                                   static_cast<std::size_t>(cfg.n_draws), col_rng);
    }
    std::vector<double> neg_h;
    neg_h.reserve(static_cast<std::size_t>(cfg.n_draws));
    std::vector<double> perturbed(static_cast<std::size_t>(n));
    for (int i = 0; i < cfg.n_draws; ++i) {
        if (cfg.pooled_noise) {
            auto col = static_cast<std::uint32_t>(columns[static_cast<std::size_t>(i)]);
            for (Eigen::Index y = 0; y < n; ++y) {
                perturbed[static_cast<std::size_t>(y)] =
                    logits(y) + column_gumbel_noise(pool_seed, static_cast<std::uint32_t>(y), col);
            }
        } else {
            RngStream rng(derive_seed(cfg.seed, kFreshNoiseStream, static_cast<std::uint64_t>(i)));
            for (Eigen::Index y = 0; y < n; ++y) {
                perturbed[static_cast<std::size_t>(y)] = logits(y) + rng.gumbel();
            }
        }
        neg_h.push_back(-rank_statistic(perturbed, cfg.rank));
    }
    return neg_h;
}

PartitionEstimate full_gumbel_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                       const GumbelConfig& cfg, EstimatorKind kind) {
    double t0 = now_s();
    std::vector<double> neg_h = gumbel_neg_h(model, x, cfg);
    PartitionEstimate est = estimate_from_neg_h(neg_h, kind);
    std::size_t touched = static_cast<std::size_t>(model.state_count()) *
                          static_cast<std::size_t>(cfg.n_draws);
    est.n_samples = touched;
    est.score_evals = touched;
    est.wall_time = now_s() - t0;
    return est;
}

}  // namespace

std::vector<double> gumbel_inverse_samples(const LogLinearModel& model, const ConstVectorRef& x,
                                           const GumbelConfig& cfg) {
    std::vector<double> neg_h = gumbel_neg_h(model, x, cfg);
    for (double& v : neg_h) {
        v = std::exp(v);
    }
    return neg_h;
}

PartitionEstimate exact_gumbel_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                        const GumbelConfig& cfg) {
    if (cfg.rank != 1) {
        throw error("exact_gumbel_estimate requires rank 1");
    }
    return full_gumbel_estimate(model, x, cfg, EstimatorKind::exact_gumbel);
}

PartitionEstimate topk_gumbel_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                       const GumbelConfig& cfg) {
    return full_gumbel_estimate(model, x, cfg, EstimatorKind::topk_gumbel);
}

MipsGumbelIndex build_mips_gumbel_index(const LogLinearModel& model, const GumbelConfig& cfg,
                                        const LshParams& index_params, int n_gumbel_cols) {
    validate(index_params);
    validate_gumbel(cfg, model.state_count());
    if (n_gumbel_cols < 1) {
        throw error("need at least one Gumbel noise column");
    }
    std::uint64_t noise_seed = gumbel_pool_seed(cfg);
    Eigen::Index n = model.state_count();
    Eigen::Index d = model.dim();
    Matrix aug(n, d + n_gumbel_cols);
    aug.leftCols(d) = model.weights();
    for (Eigen::Index y = 0; y < n; ++y) {
        for (int j = 0; j < n_gumbel_cols; ++j) {
            aug(y, d + j) = column_gumbel_noise(noise_seed, static_cast<std::uint32_t>(y),
                                                static_cast<std::uint32_t>(j));
        }
    }
    LogLinearModel augmented(std::move(aug));
    HashTableSet tables = build_tables(augmented, index_params);
    return MipsGumbelIndex{std::move(augmented), std::move(tables), n_gumbel_cols, noise_seed};
}

PartitionEstimate mips_gumbel_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                       const GumbelConfig& cfg, const MipsGumbelIndex& index) {
    Eigen::Index n = model.state_count();
    Eigen::Index d = model.dim();
    validate_gumbel(cfg, n);
    if (cfg.rank != 1) {
        throw error("mips_gumbel_estimate takes the exact max over each candidate set (rank 1)");
    }
    if (x.size() != d) {
        throw dim_mismatch_error("context dimension does not match model");
    }
    if (index.augmented.state_count() != n || index.augmented.dim() != d + index.n_gumbel_cols) {
        throw dim_mismatch_error("index shape does not match model");
    }
    double t0 = now_s();
    int k = index.n_gumbel_cols;
    // logits are computed lazily: states never retrieved are never scored
    constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> logit_cache(static_cast<std::size_t>(n), kUnset);
    Vector q = Vector::Zero(d + k);
    q.head(d) = x;
    PartitionEstimate est;
    est.estimator = EstimatorKind::mips_gumbel;
    std::vector<double> neg_h;
    neg_h.reserve(static_cast<std::size_t>(cfg.n_draws));
    for (int i = 0; i < cfg.n_draws; ++i) {
        int j = i % k;
        q(d + j) = 1.0;
        CandidateSet cand = index.tables.query_candidates(q);
        q(d + j) = 0.0;
        est.bucket_probes += static_cast<std::size_t>(cand.buckets_probed);
        if (cand.ids.empty()) {
            ++est.skipped_draws;
            continue;
        }
        double best = -std::numeric_limits<double>::infinity();
        for (std::uint32_t id : cand.ids) {
            double& l = logit_cache[id];
            if (std::isnan(l)) {
                l = model.logit(static_cast<Eigen::Index>(id), x);
                check_logit(l);
                ++est.score_evals;
            }
            double v = l + column_gumbel_noise(index.noise_seed, id,
                                               static_cast<std::uint32_t>(j));
            if (v > best) {
                best = v;
            }
        }
        est.n_samples += cand.ids.size();
        neg_h.push_back(-best);
    }
    if (neg_h.empty()) {
        throw error("every MIPS draw retrieved an empty candidate set");
    }
    PartitionEstimate core = estimate_from_neg_h(neg_h, EstimatorKind::mips_gumbel);
    est.z_hat = core.z_hat;
    est.log_z_hat = core.log_z_hat;
    est.wall_time = now_s() - t0;
    return est;
}

PartitionEstimate mips_gumbel_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                       const GumbelConfig& cfg, const LshParams& index_params,
                                       int n_gumbel_cols) {
    double t0 = now_s();
    MipsGumbelIndex index = build_mips_gumbel_index(model, cfg, index_params, n_gumbel_cols);
    PartitionEstimate est = mips_gumbel_estimate(model, x, cfg, index);
    est.wall_time = now_s() - t0;
    return est;
}

PartitionEstimate bernoulli_oracle_estimate(const LogLinearModel& model, const ConstVectorRef& x,
                                            const std::vector<double>& probs, std::uint64_t seed) {
    Eigen::Index n = model.state_count();
    if (static_cast<Eigen::Index>(probs.size()) != n) {
        throw dim_mismatch_error("need one inclusion probability per state");
    }
    double t0 = now_s();
    RngStream rng(derive_seed(seed, kBernoulliStream));
    SampleSet s;
    for (Eigen::Index y = 0; y < n; ++y) {
        double p = probs[static_cast<std::size_t>(y)];
        if (!(p > 0.0 && p <= 1.0)) {
            throw error("inclusion probabilities must lie in (0, 1]");
        }
        if (rng.uniform() < p) {
            double l = model.logit(y, x);
            check_logit(l);
            s.entries.push_back(SampleEntry{static_cast<std::uint32_t>(y), p, l});
        }
    }
    PartitionEstimate est = estimate_from_samples(s);
    est.estimator = EstimatorKind::bernoulli_oracle;
    est.wall_time = now_s() - t0;
    return est;
}

double analytic_variance_independent(const LogLinearModel& model, const ConstVectorRef& x,
                                     const std::vector<double>& probs) {
    Eigen::Index n = model.state_count();
    if (static_cast<Eigen::Index>(probs.size()) != n) {
        throw dim_mismatch_error("need one inclusion probability per state");
    }
    Vector logits = model.weights() * x;
    double m = logits.maxCoeff();
    double weighted = 0.0;
    double plain = 0.0;
    for (Eigen::Index y = 0; y < n; ++y) {
        double p = probs[static_cast<std::size_t>(y)];
        if (!(p > 0.0 && p <= 1.0)) {
            throw error("inclusion probabilities must lie in (0, 1]");
        }
        double f_sq = std::exp(2.0 * (logits(y) - m));
        weighted += f_sq / p;
        plain += f_sq;
    }
    // sum f^2/p - sum f^2, un-shifted
    return std::exp(2.0 * m) * (weighted - plain);
}

std::vector<double> state_retrieval_probabilities(const LogLinearModel& model,
                                                  const ConstVectorRef& x,
                                                  const LshParams& params) {
    validate(params);
    double max_norm = model.weights().rowwise().norm().maxCoeff();
    if (max_norm == 0.0) {
        max_norm = 1.0;
    }
    std::vector<double> out(static_cast<std::size_t>(model.state_count()));
    for (Eigen::Index y = 0; y < model.state_count(); ++y) {
        double p = collision_probability(model.weights().row(y).transpose(), x, max_norm);
        out[static_cast<std::size_t>(y)] = retrieval_probability(p, params.k_bits, params.n_tables);
    }
    return out;
}

CovarianceDecomposition covariance_decomposition(const LogLinearModel& model,
                                                 const ConstVectorRef& x, const LshParams& base,
                                                 std::size_t trials, std::uint64_t seed) {
    validate(base);
    Eigen::Index n = model.state_count();
    if (n > 2048) {
        throw error("pairwise tallies are dense; keep the state count enumerable");
    }
    if (trials < 2) {
        throw error("need at least two table builds");
    }
    auto nn = static_cast<std::size_t>(n);
    std::vector<double> r = state_retrieval_probabilities(model, x, base);
    std::vector<double> f(nn);
    for (Eigen::Index y = 0; y < n; ++y) {
        f[static_cast<std::size_t>(y)] = model.unnormalized_score(y, x);
    }

    std::vector<double> count(nn, 0.0);
    std::vector<double> pair_count(nn * nn, 0.0);
    RunningStats stats;
    for (std::size_t t = 0; t < trials; ++t) {
        LshParams params = base;
        params.seed = derive_seed(seed, t);
        HashTableSet tables = build_tables(model, params);
        LshEstimateResult res = lsh_estimate(tables, model, x);
        stats.push(res.estimate.z_hat);
        const auto& entries = res.samples.entries;
        for (std::size_t a = 0; a < entries.size(); ++a) {
            std::uint32_t i = entries[a].state;
            count[i] += 1.0;
            for (std::size_t b = a + 1; b < entries.size(); ++b) {
                pair_count[i * nn + entries[b].state] += 1.0;
            }
        }
    }

    auto R = static_cast<double>(trials);
    double cov = 0.0;
    for (std::size_t i = 0; i < nn; ++i) {
        double wi = f[i] / r[i];
        for (std::size_t j = i + 1; j < nn; ++j) {
            double c = pair_count[i * nn + j] / R - (count[i] / R) * (count[j] / R);
            cov += 2.0 * wi * (f[j] / r[j]) * c;
        }
    }

    CovarianceDecomposition out;
    out.empirical_variance = stats.variance();
    out.independent_part = analytic_variance_independent(model, x, r);
    out.covariance_term = cov;
    out.trials = trials;
    return out;
}

double empirical_covariance_term(const LogLinearModel& model, const ConstVectorRef& x,
                                 const LshParams& base, std::size_t trials, std::uint64_t seed) {
    return covariance_decomposition(model, x, base, trials, seed).covariance_term;
}

}  // namespace zest
