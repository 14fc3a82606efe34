#pragma once

#include "zest/estimators.hpp"
#include "zest/lsh.hpp"
#include "zest/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace zest {

struct BenchConfig {
    std::vector<EstimatorKind> methods{EstimatorKind::uniform_is, EstimatorKind::lsh};
    std::vector<int> budgets{50, 150, 400, 1000};  // strictly ascending
    int trials = 5;
    std::uint64_t seed = 0;
    LshParams lsh{10, 16, 0};         // sampler
    LshParams mips_index{5, 16, 0};   // mips_gumbel index
    int mips_gumbel_cols = 16;
    int max_contexts = 0;  // 0 = all contexts in the snapshot
    int warmup = 1;        // discarded timing runs
    std::vector<int> ranks{1, 2};  // top-k experiment
};

struct BenchRow {
    std::string estimator;
    int budget = 0;
    double mae_log = 0.0;   // mean |ln z_hat - ln Z|
    double mae_rel = 0.0;   // mean |z_hat/Z - 1|
    double wall_time_s = 0.0;
    std::size_t trials = 0;  // cells aggregated (contexts x trials - skipped)
    std::vector<double> per_context_mae_log;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    nlohmann::json metadata;
};

enum class ReportFormat { csv, json };

/// Estimation error per (method, budget) cell against exact ln Z, averaged
/// over every context and trial. Table builds are shared across budgets within
/// a trial so larger budgets reuse the same candidate draws.
BenchReport run_accuracy_bench(const Snapshot& snap, const BenchConfig& cfg);

/// Median wall time per (method, budget) over >= cfg.trials runs after
/// cfg.warmup discarded runs. One run estimates every context once. Index and
/// table build times are excluded from rows and reported in metadata.
BenchReport run_timing_bench(const Snapshot& snap, const BenchConfig& cfg);

struct TopkRow {
    int rank = 0;
    double mean_abs_log_err = 0.0;
};

/// Mean |ln z_hat - ln Z| by substituted rank, with the noise draws shared
/// across ranks so rows differ only by the rank statistic.
std::vector<TopkRow> run_topk_experiment(const Snapshot& snap, const BenchConfig& cfg);

/// CSV header is exactly "estimator,budget,mae_log,mae_rel,wall_time_s,trials".
/// JSON carries the same rows plus per-context errors and metadata.
void emit_report(const BenchReport& report, ReportFormat format, const std::string& path);

std::string format_report_csv(const BenchReport& report);
nlohmann::json report_to_json(const BenchReport& report);

}  // namespace zest
