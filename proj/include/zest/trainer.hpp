#pragma once

#include "zest/estimators.hpp"
#include "zest/lsh.hpp"
#include "zest/model.hpp"

#include <cstdint>
#include <vector>

namespace zest {

struct TrainConfig {
    double learning_rate = 0.1;
    int epochs = 1;
    int batch_size = 32;
    EstimatorKind estimator = EstimatorKind::lsh;
    LshParams lsh;            // sampler tables (lsh estimator)
    int sample_budget = 0;    // 0 = no cap (lsh); draw count t (uniform_is)
    int table_rebuild_period = 50;  // steps between rebuilds
    std::uint64_t seed = 0;
    GumbelConfig gumbel;      // gumbel-family estimators
    LshParams mips_index{5, 16, 0};
    int mips_gumbel_cols = 16;
    double divergence_loss = 1e4;  // abort threshold on batch loss
};

struct TrainReport {
    std::vector<double> epoch_loss;       // mean per-example estimated NLL
    std::vector<double> epoch_wall_time;  // seconds
    double final_perplexity = 0.0;        // exp(mean exact NLL) on the test set
    double mean_states_touched_frac = 0.0;
    std::vector<double> rebuild_drift;    // |ln Z_stale - ln Z_fresh| at each rebuild
    bool diverged = false;
    std::size_t skipped_examples = 0;     // empty-sample steps (no update applied)
    std::size_t steps = 0;
};

/// One SGD step on example (x, y). z_hat anchored at the label:
/// z_step = f(y) + Sum over sampled k != y of f(k)/p(k), which is unbiased for
/// Z and keeps every coefficient in [0, 1]. The positive row gets
/// lr * (1 - f(y)/z_step) * x; each sampled negative k gets
/// -lr * f(k)/(p(k) z_step) * x. With the exact estimator the step reduces to
/// the full softmax gradient. Returns the estimated NLL ln z_step - logit(y).
double sgd_step(LogLinearModel& model, const ConstVectorRef& x, std::int64_t label,
                const SampleSet& negatives, double z_step, double learning_rate);

/// exp of the mean exact NLL over the dataset. All-zero weights give exactly
/// state_count.
double perplexity(const LogLinearModel& model, const LabeledDataset& data);

TrainReport train(LogLinearModel& model, const LabeledDataset& train_data,
                  const LabeledDataset& test_data, const TrainConfig& cfg);

}  // namespace zest
