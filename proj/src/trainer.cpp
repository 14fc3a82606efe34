#include "zest/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

namespace zest {

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

constexpr std::uint64_t kShuffleStream = 0x5417ULL;
constexpr std::uint64_t kStepStream = 0x57e9ULL;
constexpr std::uint64_t kDriftStream = 0xd21fULL;

void fisher_yates(std::vector<std::size_t>& idx, RngStream& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = rng.index(i);
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace

double sgd_step(LogLinearModel& model, const ConstVectorRef& x, std::int64_t label,
                const SampleSet& negatives, double z_step, double learning_rate) {
    if (!(z_step > 0.0) || !std::isfinite(z_step)) {
        throw non_finite_score_error("z_step must be positive and finite");
    }
    if (!(learning_rate > 0.0)) {
        throw error("learning rate must be positive");
    }
    double log_z = std::log(z_step);
    double logit_y = model.logit(static_cast<Eigen::Index>(label), x);
    // all updates use scores taken before any row changes: the label logit is
    // read here and negative logits arrive inside `negatives`
    model.update_row(static_cast<Eigen::Index>(label),
                     learning_rate * (1.0 - std::exp(logit_y - log_z)), x);
    for (const SampleEntry& e : negatives.entries) {
        if (static_cast<std::int64_t>(e.state) == label) {
            continue;
        }
        double coeff = -learning_rate * std::exp(e.logit - log_z) / e.retrieval_prob;
        model.update_row(static_cast<Eigen::Index>(e.state), coeff, x);
    }
    return log_z - logit_y;
}

double perplexity(const LogLinearModel& model, const LabeledDataset& data) {
    if (data.state_count != model.state_count()) {
        throw dim_mismatch_error("dataset state count does not match model");
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.contexts.size(); ++i) {
        ConstVectorRef x = data.contexts.row(i);
        double nll = model.log_partition(x) -
                     model.logit(static_cast<Eigen::Index>(data.labels[static_cast<std::size_t>(i)]), x);
        total += nll;
    }
    return std::exp(total / static_cast<double>(data.contexts.size()));
}

namespace {

// z anchored at the label: f(y) + sum over negatives != y of f(k)/p(k)
double anchored_z(double logit_y, std::int64_t label, const SampleSet& negatives) {
    double z = std::exp(logit_y);
    for (const SampleEntry& e : negatives.entries) {
        if (static_cast<std::int64_t>(e.state) == label) {
            continue;
        }
        z += std::exp(e.logit) / e.retrieval_prob;
    }
    return z;
}

SampleSet all_states_sample(const LogLinearModel& model, const ConstVectorRef& x,
                            std::int64_t label) {
    Vector logits = model.weights() * x;
    SampleSet s;
    s.entries.reserve(static_cast<std::size_t>(model.state_count()) - 1);
    for (Eigen::Index y = 0; y < model.state_count(); ++y) {
        if (y == static_cast<Eigen::Index>(label)) {
            continue;
        }
        s.entries.push_back(SampleEntry{static_cast<std::uint32_t>(y), 1.0, logits(y)});
    }
    return s;
}

}  // namespace

TrainReport train(LogLinearModel& model, const LabeledDataset& train_data,
                  const LabeledDataset& test_data, const TrainConfig& cfg) {
    if (train_data.state_count != model.state_count() ||
        test_data.state_count != model.state_count()) {
        throw dim_mismatch_error("dataset state count does not match model");
    }
    if (train_data.contexts.dim() != model.dim() || test_data.contexts.dim() != model.dim()) {
        throw dim_mismatch_error("dataset dimension does not match model");
    }
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.table_rebuild_period < 1) {
        throw error("epochs, batch_size and table_rebuild_period must be positive");
    }
    if (!(cfg.learning_rate > 0.0)) {
        throw error("learning rate must be positive");
    }
    if (cfg.estimator == EstimatorKind::bernoulli_oracle) {
        throw error("bernoulli_oracle needs externally supplied probabilities; "
                    "it is not a training estimator");
    }

    bool uses_tables = cfg.estimator == EstimatorKind::lsh;
    bool uses_mips = cfg.estimator == EstimatorKind::mips_gumbel;
    std::unique_ptr<HashTableSet> tables;
    std::unique_ptr<MipsGumbelIndex> mips_index;

    TrainReport report;
    auto n_train = static_cast<std::size_t>(train_data.contexts.size());
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    double touched_total = 0.0;
    std::size_t global_step = 0;
    auto n_states = static_cast<double>(model.state_count());

    for (int epoch = 0; epoch < cfg.epochs && !report.diverged; ++epoch) {
        double t_epoch = now_s();
        RngStream shuffle_rng(derive_seed(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
        fisher_yates(order, shuffle_rng);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        double batch_loss_sum = 0.0;
        std::size_t batch_count = 0;

        for (std::size_t pos = 0; pos < n_train && !report.diverged; ++pos) {
            std::size_t ex = order[pos];
            ConstVectorRef x = train_data.contexts.row(static_cast<Eigen::Index>(ex));
            std::int64_t label = train_data.labels[ex];
            std::uint64_t step_seed = derive_seed(cfg.seed, kStepStream, global_step);

            if (uses_tables && (global_step % static_cast<std::size_t>(cfg.table_rebuild_period) == 0 ||
                                !tables)) {
                auto fresh = std::make_unique<HashTableSet>(model, cfg.lsh);
                if (tables) {
                    // drift between the stale estimate and a fresh one, same context
                    ConstVectorRef probe = train_data.contexts.row(0);
                    double stale = lsh_estimate(*tables, model, probe, true).estimate.log_z_hat;
                    double fresh_lz = lsh_estimate(*fresh, model, probe, true).estimate.log_z_hat;
                    if (std::isfinite(stale) && std::isfinite(fresh_lz)) {
                        report.rebuild_drift.push_back(std::abs(stale - fresh_lz));
                    }
                }
                tables = std::move(fresh);
            }
            if (uses_mips && (global_step % static_cast<std::size_t>(cfg.table_rebuild_period) == 0 ||
                              !mips_index)) {
                GumbelConfig noise_cfg = cfg.gumbel;
                noise_cfg.seed = derive_seed(cfg.seed, kDriftStream, global_step);
                mips_index = std::make_unique<MipsGumbelIndex>(build_mips_gumbel_index(
                    model, noise_cfg, cfg.mips_index, cfg.mips_gumbel_cols));
            }

            double nll = 0.0;
            bool applied = true;
            try {
                double logit_y = model.logit(static_cast<Eigen::Index>(label), x);
                SampleSet negatives;
                double z_step = 0.0;
                switch (cfg.estimator) {
                    case EstimatorKind::exact: {
                        negatives = all_states_sample(model, x, label);
                        z_step = anchored_z(logit_y, label, negatives);
                        break;
                    }
                    case EstimatorKind::lsh: {
                        LshEstimateResult res =
                            cfg.sample_budget > 0
                                ? lsh_estimate_budgeted(*tables, model, x, cfg.sample_budget,
                                                        step_seed, true)
                                : lsh_estimate(*tables, model, x, true);
                        negatives = std::move(res.samples);
                        z_step = anchored_z(logit_y, label, negatives);
                        break;
                    }
                    case EstimatorKind::uniform_is: {
                        int t = std::max(cfg.sample_budget, 1);
                        RngStream rng(derive_seed(step_seed, 0xdfa3ULL));
                        double p = static_cast<double>(t) / n_states;
                        negatives.entries.reserve(static_cast<std::size_t>(t));
                        for (int i = 0; i < t; ++i) {
                            auto y = static_cast<Eigen::Index>(
                                rng.index(static_cast<std::size_t>(model.state_count())));
                            negatives.entries.push_back(SampleEntry{
                                static_cast<std::uint32_t>(y), p, model.logit(y, x)});
                        }
                        z_step = anchored_z(logit_y, label, negatives);
                        break;
                    }
                    case EstimatorKind::exact_gumbel:
                    case EstimatorKind::topk_gumbel: {
                        GumbelConfig g = cfg.gumbel;
                        g.seed = step_seed;
                        PartitionEstimate est = cfg.estimator == EstimatorKind::exact_gumbel
                                                    ? exact_gumbel_estimate(model, x, g)
                                                    : topk_gumbel_estimate(model, x, g);
                        negatives = all_states_sample(model, x, label);
                        z_step = est.z_hat;
                        break;
                    }
                    case EstimatorKind::mips_gumbel: {
                        GumbelConfig g = cfg.gumbel;
                        g.seed = mips_index->noise_seed;  // noise fixed at index build
                        PartitionEstimate est = mips_gumbel_estimate(model, x, g, *mips_index);
                        negatives = all_states_sample(model, x, label);
                        z_step = est.z_hat;
                        break;
                    }
                    case EstimatorKind::bernoulli_oracle:
                        break;  // rejected above
                }
                touched_total += (static_cast<double>(negatives.entries.size()) + 1.0) / n_states;
                if (negatives.entries.empty() && cfg.estimator == EstimatorKind::lsh) {
                    ++report.skipped_examples;
                    applied = false;
                    nll = 0.0;
                } else {
                    nll = sgd_step(model, x, label, negatives, z_step, cfg.learning_rate);
                }
            } catch (const non_finite_score_error&) {
                report.diverged = true;
                break;
            }
            (void)applied;

            loss_sum += nll;
            ++loss_count;
            batch_loss_sum += nll;
            ++batch_count;
            ++global_step;

            bool batch_end = batch_count == static_cast<std::size_t>(cfg.batch_size) ||
                             pos + 1 == n_train;
            if (batch_end) {
                double batch_mean = batch_loss_sum / static_cast<double>(batch_count);
                if (!std::isfinite(batch_mean) || batch_mean > cfg.divergence_loss) {
                    report.diverged = true;
                }
                batch_loss_sum = 0.0;
                batch_count = 0;
            }
        }

        report.epoch_loss.push_back(loss_count > 0 ? loss_sum / static_cast<double>(loss_count)
                                                   : 0.0);
        report.epoch_wall_time.push_back(now_s() - t_epoch);
    }

    report.steps = global_step;
    report.mean_states_touched_frac =
        global_step > 0 ? touched_total / static_cast<double>(global_step) : 0.0;
    if (!report.diverged) {
        report.final_perplexity = perplexity(model, test_data);
        if (!std::isfinite(report.final_perplexity)) {
            report.diverged = true;
        }
    }
    return report;
}

}  // namespace zest
