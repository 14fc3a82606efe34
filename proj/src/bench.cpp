#include "zest/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>

namespace zest {

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

void validate_bench(const BenchConfig& cfg) {
    if (cfg.methods.empty()) {
        throw error("bench needs at least one method");
    }
    if (cfg.budgets.empty()) {
        throw error("bench needs at least one budget");
    }
    for (std::size_t i = 0; i < cfg.budgets.size(); ++i) {
        if (cfg.budgets[i] < 1) {
            throw error("budgets must be positive");
        }
        if (i > 0 && cfg.budgets[i] <= cfg.budgets[i - 1]) {
            throw error("budgets must be strictly ascending");
        }
    }
    if (cfg.trials < 1) {
        throw error("trials must be at least 1");
    }
    validate(cfg.lsh);
    validate(cfg.mips_index);
    if (cfg.mips_gumbel_cols < 1) {
        throw error("need at least one Gumbel noise column");
    }
}

Eigen::Index context_count(const Snapshot& snap, const BenchConfig& cfg) {
    Eigen::Index c = snap.contexts.size();
    if (cfg.max_contexts > 0 && static_cast<Eigen::Index>(cfg.max_contexts) < c) {
        c = cfg.max_contexts;
    }
    return c;
}

// per-(method, budget) error accumulator
struct CellTally {
    std::vector<std::vector<double>> per_ctx_err;  // |ln z_hat - ln Z| by context
    double rel_sum = 0.0;
    double wall_sum = 0.0;
    std::size_t cells = 0;
    std::size_t skipped = 0;

    explicit CellTally(std::size_t n_ctx) : per_ctx_err(n_ctx) {}

    void add(std::size_t ctx, double log_z_hat, double exact_log_z, double wall) {
        if (!std::isfinite(log_z_hat)) {  // empty sample: z_hat == 0
            ++skipped;
            return;
        }
        per_ctx_err[ctx].push_back(std::abs(log_z_hat - exact_log_z));
        rel_sum += std::abs(std::expm1(log_z_hat - exact_log_z));
        wall_sum += wall;
        ++cells;
    }
};

BenchRow finish_row(const std::string& name, int budget, const CellTally& tally) {
    BenchRow row;
    row.estimator = name;
    row.budget = budget;
    row.trials = tally.cells;
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& errs : tally.per_ctx_err) {
        double ctx_sum = 0.0;
        for (double e : errs) {
            ctx_sum += e;
            total += e;
        }
        n += errs.size();
        row.per_context_mae_log.push_back(
            errs.empty() ? std::numeric_limits<double>::quiet_NaN()
                         : ctx_sum / static_cast<double>(errs.size()));
    }
    row.mae_log = n > 0 ? total / static_cast<double>(n) : 0.0;
    row.mae_rel = tally.cells > 0 ? tally.rel_sum / static_cast<double>(tally.cells) : 0.0;
    row.wall_time_s = tally.cells > 0 ? tally.wall_sum / static_cast<double>(tally.cells) : 0.0;
    return row;
}

nlohmann::json base_metadata(const Snapshot& snap, const BenchConfig& cfg, Eigen::Index n_ctx) {
    nlohmann::json meta;
    meta["snapshot"] = {{"name", snap.meta.name},
                        {"seed", snap.meta.seed},
                        {"params", snap.meta.params},
                        {"n_states", snap.model.state_count()},
                        {"dim", snap.model.dim()},
                        {"n_contexts", snap.contexts.size()}};
    meta["contexts_used"] = n_ctx;
    meta["trials"] = cfg.trials;
    meta["seed"] = cfg.seed;
    meta["budgets"] = cfg.budgets;
    std::vector<std::string> names;
    names.reserve(cfg.methods.size());
    for (EstimatorKind k : cfg.methods) {
        names.push_back(to_string(k));
    }
    meta["methods"] = names;
    meta["sampler"] = {{"k_bits", cfg.lsh.k_bits}, {"n_tables", cfg.lsh.n_tables}};
    meta["mips_index"] = {{"k_bits", cfg.mips_index.k_bits},
                          {"n_tables", cfg.mips_index.n_tables},
                          {"gumbel_cols", cfg.mips_gumbel_cols}};
    meta["compiler"] = __VERSION__;
#ifdef NDEBUG
    meta["assertions_disabled"] = true;
#else
    meta["assertions_disabled"] = false;
#endif
    meta["eigen_threads"] = Eigen::nbThreads();
    return meta;
}

constexpr std::uint64_t kAccStream = 0xaccbULL;
constexpr std::uint64_t kTimeStream = 0x717eULL;
constexpr std::uint64_t kTopkStream = 0x707cULL;

}  // namespace

BenchReport run_accuracy_bench(const Snapshot& snap, const BenchConfig& cfg) {
    validate_bench(cfg);
    const LogLinearModel& model = snap.model;
    Eigen::Index n_ctx = context_count(snap, cfg);
    std::vector<double> exact_lz(static_cast<std::size_t>(n_ctx));
    for (Eigen::Index c = 0; c < n_ctx; ++c) {
        exact_lz[static_cast<std::size_t>(c)] = model.log_partition(snap.contexts.row(c));
    }

    BenchReport report;
    report.metadata = base_metadata(snap, cfg, n_ctx);
    double lsh_build_s = 0.0;
    std::size_t lsh_builds = 0;
    double mips_build_s = 0.0;
    std::size_t mips_builds = 0;

    for (EstimatorKind kind : cfg.methods) {
        std::uint64_t base = derive_seed(cfg.seed, kAccStream, static_cast<std::uint64_t>(kind));
        std::vector<CellTally> tallies(cfg.budgets.size(),
                                       CellTally(static_cast<std::size_t>(n_ctx)));

        switch (kind) {
            case EstimatorKind::lsh: {
                for (int t = 0; t < cfg.trials; ++t) {
                    LshParams params = cfg.lsh;
                    params.seed = derive_seed(base, 1, static_cast<std::uint64_t>(t));
                    double tb = now_s();
                    HashTableSet tables = build_tables(model, params);
                    lsh_build_s += now_s() - tb;
                    ++lsh_builds;
                    for (Eigen::Index c = 0; c < n_ctx; ++c) {
                        LshEstimateResult full = lsh_estimate(tables, model, snap.contexts.row(c));
                        // one sampling seed per (trial, context): every budget
                        // shares the draw, so cells differ only by the cap
                        std::uint64_t sub_seed = derive_seed(base, 2, static_cast<std::uint64_t>(t),
                                                             static_cast<std::uint64_t>(c));
                        for (std::size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
                            double t0 = now_s();
                            SampleSet sub =
                                subsample_fixed_size(full.samples, cfg.budgets[bi], sub_seed);
                            PartitionEstimate est = estimate_from_samples(sub);
                            double wall = (now_s() - t0) + full.estimate.wall_time;
                            tallies[bi].add(static_cast<std::size_t>(c), est.log_z_hat,
                                            exact_lz[static_cast<std::size_t>(c)], wall);
                        }
                    }
                }
                break;
            }
            case EstimatorKind::uniform_is: {
                for (int t = 0; t < cfg.trials; ++t) {
                    for (Eigen::Index c = 0; c < n_ctx; ++c) {
                        std::uint64_t seed = derive_seed(base, 3, static_cast<std::uint64_t>(t),
                                                         static_cast<std::uint64_t>(c));
                        for (std::size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
                            PartitionEstimate est = uniform_is_estimate(
                                model, snap.contexts.row(c), cfg.budgets[bi], seed);
                            tallies[bi].add(static_cast<std::size_t>(c), est.log_z_hat,
                                            exact_lz[static_cast<std::size_t>(c)], est.wall_time);
                        }
                    }
                }
                break;
            }
            case EstimatorKind::exact_gumbel:
            case EstimatorKind::topk_gumbel: {
                int rank = kind == EstimatorKind::topk_gumbel
                               ? static_cast<int>(std::min<Eigen::Index>(2, model.state_count()))
                               : 1;
                for (int t = 0; t < cfg.trials; ++t) {
                    for (Eigen::Index c = 0; c < n_ctx; ++c) {
                        std::uint64_t seed = derive_seed(base, 4, static_cast<std::uint64_t>(t),
                                                         static_cast<std::uint64_t>(c));
                        for (std::size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
                            GumbelConfig g;
                            g.n_draws = cfg.budgets[bi];
                            g.seed = seed;
                            g.rank = rank;
                            PartitionEstimate est =
                                kind == EstimatorKind::exact_gumbel
                                    ? exact_gumbel_estimate(model, snap.contexts.row(c), g)
                                    : topk_gumbel_estimate(model, snap.contexts.row(c), g);
                            tallies[bi].add(static_cast<std::size_t>(c), est.log_z_hat,
                                            exact_lz[static_cast<std::size_t>(c)], est.wall_time);
                        }
                    }
                }
                break;
            }
            case EstimatorKind::mips_gumbel: {
                for (int t = 0; t < cfg.trials; ++t) {
                    GumbelConfig g;
                    g.n_draws = cfg.budgets.back();
                    g.seed = derive_seed(base, 5, static_cast<std::uint64_t>(t));
                    LshParams iparams = cfg.mips_index;
                    iparams.seed = derive_seed(base, 6, static_cast<std::uint64_t>(t));
                    double tb = now_s();
                    MipsGumbelIndex index =
                        build_mips_gumbel_index(model, g, iparams, cfg.mips_gumbel_cols);
                    mips_build_s += now_s() - tb;
                    ++mips_builds;
                    for (Eigen::Index c = 0; c < n_ctx; ++c) {
                        for (std::size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
                            GumbelConfig gq = g;
                            gq.n_draws = cfg.budgets[bi];
                            try {
                                PartitionEstimate est =
                                    mips_gumbel_estimate(model, snap.contexts.row(c), gq, index);
                                tallies[bi].add(static_cast<std::size_t>(c), est.log_z_hat,
                                                exact_lz[static_cast<std::size_t>(c)],
                                                est.wall_time);
                            } catch (const error&) {
                                ++tallies[bi].skipped;
                            }
                        }
                    }
                }
                break;
            }
            case EstimatorKind::bernoulli_oracle: {
                std::vector<std::vector<double>> probs(static_cast<std::size_t>(n_ctx));
                for (Eigen::Index c = 0; c < n_ctx; ++c) {
                    probs[static_cast<std::size_t>(c)] =
                        state_retrieval_probabilities(model, snap.contexts.row(c), cfg.lsh);
                }
                for (int t = 0; t < cfg.trials; ++t) {
                    for (Eigen::Index c = 0; c < n_ctx; ++c) {
                        for (std::size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
                            std::uint64_t seed =
                                derive_seed(base, 7, static_cast<std::uint64_t>(t),
                                            static_cast<std::uint64_t>(c) * 1000 + bi);
                            PartitionEstimate est = bernoulli_oracle_estimate(
                                model, snap.contexts.row(c), probs[static_cast<std::size_t>(c)],
                                seed);
                            tallies[bi].add(static_cast<std::size_t>(c), est.log_z_hat,
                                            exact_lz[static_cast<std::size_t>(c)], est.wall_time);
                        }
                    }
                }
                break;
            }
            case EstimatorKind::exact: {
                for (Eigen::Index c = 0; c < n_ctx; ++c) {
                    double t0 = now_s();
                    double lz = model.log_partition(snap.contexts.row(c));
                    double wall = now_s() - t0;
                    for (std::size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
                        tallies[bi].add(static_cast<std::size_t>(c), lz,
                                        exact_lz[static_cast<std::size_t>(c)], wall);
                    }
                }
                break;
            }
        }

        for (std::size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
            report.rows.push_back(finish_row(to_string(kind), cfg.budgets[bi], tallies[bi]));
        }
    }

    if (lsh_builds > 0) {
        report.metadata["lsh_build_s_mean"] = lsh_build_s / static_cast<double>(lsh_builds);
    }
    if (mips_builds > 0) {
        report.metadata["mips_index_build_s_mean"] = mips_build_s / static_cast<double>(mips_builds);
    }
    return report;
}

BenchReport run_timing_bench(const Snapshot& snap, const BenchConfig& cfg) {
    validate_bench(cfg);
    const LogLinearModel& model = snap.model;
    Eigen::Index n_ctx = context_count(snap, cfg);
    std::vector<double> exact_lz(static_cast<std::size_t>(n_ctx));
    for (Eigen::Index c = 0; c < n_ctx; ++c) {
        exact_lz[static_cast<std::size_t>(c)] = model.log_partition(snap.contexts.row(c));
    }

    BenchReport report;
    report.metadata = base_metadata(snap, cfg, n_ctx);

    // structures are built once, outside the timed region
    std::unique_ptr<HashTableSet> tables;
    std::unique_ptr<MipsGumbelIndex> mips_index;
    GumbelConfig mips_noise;
    for (EstimatorKind kind : cfg.methods) {
        if (kind == EstimatorKind::lsh && !tables) {
            LshParams params = cfg.lsh;
            params.seed = derive_seed(cfg.seed, kTimeStream, 1);
            double t0 = now_s();
            tables = std::make_unique<HashTableSet>(model, params);
            report.metadata["lsh_build_s"] = now_s() - t0;
        }
        if (kind == EstimatorKind::mips_gumbel && !mips_index) {
            mips_noise.n_draws = cfg.budgets.back();
            mips_noise.seed = derive_seed(cfg.seed, kTimeStream, 2);
            LshParams iparams = cfg.mips_index;
            iparams.seed = derive_seed(cfg.seed, kTimeStream, 3);
            double t0 = now_s();
            mips_index = std::make_unique<MipsGumbelIndex>(
                build_mips_gumbel_index(model, mips_noise, iparams, cfg.mips_gumbel_cols));
            report.metadata["mips_index_build_s"] = now_s() - t0;
        }
    }

    for (EstimatorKind kind : cfg.methods) {
        for (std::size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
            int budget = cfg.budgets[bi];
            std::vector<double> run_walls;
            double err_sum = 0.0;
            double rel_sum = 0.0;
            std::size_t err_n = 0;
            int total_runs = cfg.warmup + cfg.trials;
            for (int run = 0; run < total_runs; ++run) {
                bool record_err = run == total_runs - 1;
                double t0 = now_s();
                for (Eigen::Index c = 0; c < n_ctx; ++c) {
                    std::uint64_t seed =
                        derive_seed(cfg.seed, kTimeStream, static_cast<std::uint64_t>(run) + 10,
                                    static_cast<std::uint64_t>(c));
                    double lz = 0.0;
                    switch (kind) {
                        case EstimatorKind::lsh:
                            lz = lsh_estimate_budgeted(*tables, model, snap.contexts.row(c),
                                                       budget, seed)
                                     .estimate.log_z_hat;
                            break;
                        case EstimatorKind::uniform_is:
                            lz = uniform_is_estimate(model, snap.contexts.row(c), budget, seed)
                                     .log_z_hat;
                            break;
                        case EstimatorKind::exact_gumbel:
                        case EstimatorKind::topk_gumbel: {
                            GumbelConfig g;
                            g.n_draws = budget;
                            g.seed = seed;
                            g.rank = kind == EstimatorKind::topk_gumbel
                                         ? static_cast<int>(
                                               std::min<Eigen::Index>(2, model.state_count()))
                                         : 1;
                            lz = (kind == EstimatorKind::exact_gumbel
                                      ? exact_gumbel_estimate(model, snap.contexts.row(c), g)
                                      : topk_gumbel_estimate(model, snap.contexts.row(c), g))
                                     .log_z_hat;
                            break;
                        }
                        case EstimatorKind::mips_gumbel: {
                            GumbelConfig g = mips_noise;
                            g.n_draws = budget;
                            try {
                                lz = mips_gumbel_estimate(model, snap.contexts.row(c), g,
                                                          *mips_index)
                                         .log_z_hat;
                            } catch (const error&) {
                                lz = std::numeric_limits<double>::quiet_NaN();
                            }
                            break;
                        }
                        case EstimatorKind::bernoulli_oracle: {
                            std::vector<double> probs = state_retrieval_probabilities(
                                model, snap.contexts.row(c), cfg.lsh);
                            lz = bernoulli_oracle_estimate(model, snap.contexts.row(c), probs,
                                                           seed)
                                     .log_z_hat;
                            break;
                        }
                        case EstimatorKind::exact:
                            lz = model.log_partition(snap.contexts.row(c));
                            break;
                    }
                    if (record_err && std::isfinite(lz)) {
                        err_sum += std::abs(lz - exact_lz[static_cast<std::size_t>(c)]);
                        rel_sum += std::abs(std::expm1(lz - exact_lz[static_cast<std::size_t>(c)]));
                        ++err_n;
                    }
                }
                run_walls.push_back(now_s() - t0);
            }
            run_walls.erase(run_walls.begin(), run_walls.begin() + cfg.warmup);
            std::sort(run_walls.begin(), run_walls.end());
            double median;
            std::size_t n = run_walls.size();
            if (n % 2 == 1) {
                median = run_walls[n / 2];
            } else {
                median = 0.5 * (run_walls[n / 2 - 1] + run_walls[n / 2]);
            }
            BenchRow row;
            row.estimator = to_string(kind);
            row.budget = budget;
            row.mae_log = err_n > 0 ? err_sum / static_cast<double>(err_n) : 0.0;
            row.mae_rel = err_n > 0 ? rel_sum / static_cast<double>(err_n) : 0.0;
            row.wall_time_s = median;
            row.trials = static_cast<std::size_t>(cfg.trials);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

std::vector<TopkRow> run_topk_experiment(const Snapshot& snap, const BenchConfig& cfg) {
    validate_bench(cfg);
    if (cfg.ranks.empty()) {
        throw error("need at least one rank");
    }
    const LogLinearModel& model = snap.model;
    Eigen::Index n_ctx = context_count(snap, cfg);
    int n_draws = cfg.budgets.back();
    std::vector<TopkRow> rows;
    for (int rank : cfg.ranks) {
        if (rank < 1 || static_cast<Eigen::Index>(rank) > model.state_count()) {
            throw error("rank must lie in [1, state_count]");
        }
        double err_sum = 0.0;
        std::size_t n = 0;
        for (int t = 0; t < cfg.trials; ++t) {
            for (Eigen::Index c = 0; c < n_ctx; ++c) {
                GumbelConfig g;
                g.n_draws = n_draws;
                // seed shared across ranks: identical noise, only the order
                // statistic changes
                g.seed = derive_seed(cfg.seed, kTopkStream, static_cast<std::uint64_t>(t),
                                     static_cast<std::uint64_t>(c));
                g.rank = rank;
                PartitionEstimate est = topk_gumbel_estimate(model, snap.contexts.row(c), g);
                err_sum += std::abs(est.log_z_hat - model.log_partition(snap.contexts.row(c)));
                ++n;
            }
        }
        rows.push_back(TopkRow{rank, err_sum / static_cast<double>(n)});
    }
    return rows;
}

std::string format_report_csv(const BenchReport& report) {
    std::ostringstream out;
    out << "estimator,budget,mae_log,mae_rel,wall_time_s,trials\n";
    out << std::setprecision(17);
    for (const BenchRow& row : report.rows) {
        out << row.estimator << ',' << row.budget << ',' << row.mae_log << ',' << row.mae_rel
            << ',' << row.wall_time_s << ',' << row.trials << '\n';
    }
    return out.str();
}

nlohmann::json report_to_json(const BenchReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const BenchRow& row : report.rows) {
        nlohmann::json r = {{"estimator", row.estimator},
                            {"budget", row.budget},
                            {"mae_log", row.mae_log},
                            {"mae_rel", row.mae_rel},
                            {"wall_time_s", row.wall_time_s},
                            {"trials", row.trials}};
        if (!row.per_context_mae_log.empty()) {
            r["per_context_mae_log"] = row.per_context_mae_log;
        }
        rows.push_back(std::move(r));
    }
    return nlohmann::json{{"rows", std::move(rows)}, {"metadata", report.metadata}};
}

void emit_report(const BenchReport& report, ReportFormat format, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw error("cannot open " + path + " for writing");
    }
    if (format == ReportFormat::csv) {
        out << format_report_csv(report);
    } else {
        out << report_to_json(report).dump(2) << '\n';
    }
    if (!out) {
        throw error("failed while writing " + path);
    }
}

}  // namespace zest
