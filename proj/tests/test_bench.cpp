#include "zest/bench.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using namespace zest;

namespace {

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const BenchRow& find_row(const BenchReport& report, const std::string& estimator, int budget) {
    for (const BenchRow& row : report.rows) {
        if (row.estimator == estimator && row.budget == budget) {
            return row;
        }
    }
    REQUIRE_MESSAGE(false, "missing row ", estimator, "/", budget);
    return report.rows.front();  // unreachable
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("accuracy bench") {
    Snapshot snap = generate_synthetic(1000, 8, 10, 1.0, 700700);

    SUBCASE("the exact method lands on zero error") {
        BenchConfig cfg;
        cfg.methods = {EstimatorKind::exact};
        cfg.budgets = {10};
        cfg.trials = 2;
        BenchReport report = run_accuracy_bench(snap, cfg);
        REQUIRE(report.rows.size() == 1);
        CHECK(report.rows[0].mae_log == 0.0);
        CHECK(report.rows[0].mae_rel == 0.0);
        CHECK(report.rows[0].trials == 10);  // deterministic, tallied once per context
        CHECK(report.rows[0].per_context_mae_log.size() == 10);
    }

    SUBCASE("errors shrink with budget and lsh beats uniform at the low end") {
        BenchConfig cfg;
        cfg.methods = {EstimatorKind::uniform_is, EstimatorKind::lsh};
        cfg.budgets = {20, 80, 320};
        cfg.trials = 3;
        cfg.seed = 41;
        cfg.lsh = LshParams{5, 10, 0};
        BenchReport report = run_accuracy_bench(snap, cfg);
        REQUIRE(report.rows.size() == 6);
        for (const char* method : {"uniform_is", "lsh"}) {
            double prev = std::numeric_limits<double>::infinity();
            for (int budget : cfg.budgets) {
                const BenchRow& row = find_row(report, method, budget);
                CHECK(row.mae_log <= prev);
                CHECK(row.mae_log > 0.0);
                prev = row.mae_log;
            }
        }
        const auto& lsh_ctx = find_row(report, "lsh", 20).per_context_mae_log;
        const auto& uni_ctx = find_row(report, "uniform_is", 20).per_context_mae_log;
        REQUIRE(lsh_ctx.size() == uni_ctx.size());
        int wins = 0;
        for (std::size_t c = 0; c < lsh_ctx.size(); ++c) {
            if (lsh_ctx[c] <= uni_ctx[c]) {
                ++wins;
            }
        }
        CHECK(wins >= static_cast<int>(0.6 * static_cast<double>(lsh_ctx.size())));
        CHECK(report.metadata.contains("lsh_build_s_mean"));
    }

    SUBCASE("rows are deterministic apart from wall clocks") {
        BenchConfig cfg;
        cfg.methods = {EstimatorKind::uniform_is, EstimatorKind::lsh, EstimatorKind::exact_gumbel};
        cfg.budgets = {10, 30};
        cfg.trials = 2;
        cfg.seed = 42;
        cfg.lsh = LshParams{4, 6, 0};
        cfg.max_contexts = 4;
        BenchReport a = run_accuracy_bench(snap, cfg);
        BenchReport b = run_accuracy_bench(snap, cfg);
        REQUIRE(a.rows.size() == b.rows.size());
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            CHECK(a.rows[i].estimator == b.rows[i].estimator);
            CHECK(a.rows[i].budget == b.rows[i].budget);
            CHECK(a.rows[i].mae_log == b.rows[i].mae_log);
            CHECK(a.rows[i].mae_rel == b.rows[i].mae_rel);
            CHECK(a.rows[i].trials == b.rows[i].trials);
            CHECK(a.rows[i].per_context_mae_log == b.rows[i].per_context_mae_log);
        }
        CHECK(a.metadata["contexts_used"] == 4);
    }

    SUBCASE("every non-skipping method aggregates contexts x trials cells") {
        BenchConfig cfg;
        cfg.methods = {EstimatorKind::uniform_is, EstimatorKind::lsh, EstimatorKind::exact};
        cfg.budgets = {15};
        cfg.trials = 3;
        cfg.max_contexts = 5;
        BenchReport report = run_accuracy_bench(snap, cfg);
        for (const BenchRow& row : report.rows) {
            if (row.estimator == "exact") {
                CHECK(row.trials == 5);  // no randomness, one cell per context
            } else {
                CHECK(row.trials == 5u * 3u);
            }
        }
    }

    SUBCASE("configuration is validated") {
        BenchConfig cfg;
        cfg.methods = {};
        CHECK_THROWS_AS(run_accuracy_bench(snap, cfg), error);
        cfg = BenchConfig{};
        cfg.budgets = {};
        CHECK_THROWS_AS(run_accuracy_bench(snap, cfg), error);
        cfg = BenchConfig{};
        cfg.budgets = {50, 50};
        CHECK_THROWS_AS(run_accuracy_bench(snap, cfg), error);
        cfg = BenchConfig{};
        cfg.budgets = {100, 50};
        CHECK_THROWS_AS(run_accuracy_bench(snap, cfg), error);
        cfg = BenchConfig{};
        cfg.trials = 0;
        CHECK_THROWS_AS(run_accuracy_bench(snap, cfg), error);
        cfg = BenchConfig{};
        cfg.budgets = {0, 10};
        CHECK_THROWS_AS(run_accuracy_bench(snap, cfg), error);
    }
}

TEST_CASE("timing bench") {
    Snapshot snap = generate_synthetic(4000, 6, 4, 1.0, 711711);

    SUBCASE("rows carry positive medians and builds are amortized into metadata") {
        BenchConfig cfg;
        cfg.methods = {EstimatorKind::uniform_is, EstimatorKind::lsh};
        cfg.budgets = {50, 100};
        cfg.trials = 3;
        cfg.warmup = 1;
        cfg.lsh = LshParams{6, 8, 0};
        BenchReport report = run_timing_bench(snap, cfg);
        REQUIRE(report.rows.size() == 4);
        for (const BenchRow& row : report.rows) {
            CHECK(row.wall_time_s > 0.0);
            CHECK(row.trials == 3);
            CHECK(std::isfinite(row.mae_log));
        }
        CHECK(report.metadata.contains("lsh_build_s"));
        CHECK(report.metadata["lsh_build_s"].get<double>() > 0.0);
    }

    SUBCASE("doubling the trial count roughly doubles the runtime") {
        BenchConfig cfg;
        cfg.methods = {EstimatorKind::exact_gumbel};
        cfg.budgets = {100};
        cfg.warmup = 0;
        cfg.trials = 2;
        auto t0 = std::chrono::steady_clock::now();
        run_timing_bench(snap, cfg);
        double short_run = elapsed_s(t0);
        cfg.trials = 4;
        t0 = std::chrono::steady_clock::now();
        run_timing_bench(snap, cfg);
        double long_run = elapsed_s(t0);
        double ratio = long_run / short_run;
        CHECK(ratio > 1.4);
        CHECK(ratio < 2.6);
    }
}

TEST_CASE("top-k experiment") {
    SUBCASE("substituting rank 2 inflates the error") {
        Snapshot snap = generate_synthetic(1000, 8, 6, 1.0, 722722);
        BenchConfig cfg;
        cfg.budgets = {200};  // draw count
        cfg.trials = 3;
        cfg.ranks = {1, 2};
        cfg.seed = 43;
        std::vector<TopkRow> rows = run_topk_experiment(snap, cfg);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].rank == 1);
        CHECK(rows[1].rank == 2);
        CHECK(rows[0].mean_abs_log_err < rows[1].mean_abs_log_err);
    }
    SUBCASE("one row per requested rank, duplicates included") {
        Snapshot snap = generate_synthetic(1, 4, 2, 1.0, 733733);
        BenchConfig cfg;
        cfg.budgets = {50};
        cfg.trials = 2;
        cfg.ranks = {1, 1};
        std::vector<TopkRow> rows = run_topk_experiment(snap, cfg);
        REQUIRE(rows.size() == 2);
        // a single-state model admits only rank 1; the paired noise makes the
        // duplicated rows identical
        CHECK(rows[0].mean_abs_log_err == rows[1].mean_abs_log_err);
    }
    SUBCASE("ranks beyond the state count are rejected") {
        Snapshot snap = generate_synthetic(1, 4, 2, 1.0, 733733);
        BenchConfig cfg;
        cfg.ranks = {1, 2};
        CHECK_THROWS_AS(run_topk_experiment(snap, cfg), error);
        cfg.ranks = {};
        CHECK_THROWS_AS(run_topk_experiment(snap, cfg), error);
    }
}

TEST_CASE("report serialization") {
    BenchReport report;
    SUBCASE("an empty report is just the header") {
        CHECK(format_report_csv(report) == "estimator,budget,mae_log,mae_rel,wall_time_s,trials\n");
    }
    BenchRow row;
    row.estimator = "lsh";
    row.budget = 50;
    row.mae_log = 0.125;
    row.mae_rel = 0.0625;
    row.wall_time_s = 0.5;
    row.trials = 20;
    row.per_context_mae_log = {0.1, 0.15};
    report.rows.push_back(row);
    report.metadata["note"] = "unit";

    SUBCASE("csv has one line per row after the header") {
        std::string csv = format_report_csv(report);
        CHECK(csv.find("estimator,budget,mae_log,mae_rel,wall_time_s,trials\n") == 0);
        CHECK(csv.find("lsh,50,0.125,0.0625,0.5,20\n") != std::string::npos);
    }
    SUBCASE("json round-trips rows and metadata") {
        nlohmann::json j = report_to_json(report);
        CHECK(j["metadata"]["note"] == "unit");
        REQUIRE(j["rows"].size() == 1);
        CHECK(j["rows"][0]["estimator"] == "lsh");
        CHECK(j["rows"][0]["budget"] == 50);
        CHECK(j["rows"][0]["mae_log"] == 0.125);
        CHECK(j["rows"][0]["per_context_mae_log"].size() == 2);
    }
    SUBCASE("emit_report writes both formats to disk") {
        TempFile csv_file("zest_test_report.csv");
        emit_report(report, ReportFormat::csv, csv_file.path);
        std::ifstream in(csv_file.path);
        std::string contents((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
        CHECK(contents == format_report_csv(report));

        TempFile json_file("zest_test_report.json");
        emit_report(report, ReportFormat::json, json_file.path);
        std::ifstream jin(json_file.path);
        nlohmann::json parsed = nlohmann::json::parse(jin);
        CHECK(parsed["rows"][0]["estimator"] == "lsh");
    }
    SUBCASE("unwritable paths raise") {
        CHECK_THROWS_AS(emit_report(report, ReportFormat::csv, "/nonexistent-dir/x.csv"), error);
    }
}
