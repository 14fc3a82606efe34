#include "zest/bench.hpp"
#include "zest/estimators.hpp"
#include "zest/lsh.hpp"
#include "zest/model.hpp"
#include "zest/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace {

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
    std::vector<int> out;
    for (const std::string& tok : split_commas(s)) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw zest::error(std::string("cannot parse ") + what + " entry '" + tok + "'");
        }
    }
    if (out.empty()) {
        throw zest::error(std::string("empty ") + what + " list");
    }
    return out;
}

std::vector<zest::EstimatorKind> parse_methods(const std::string& s) {
    std::vector<zest::EstimatorKind> out;
    for (const std::string& tok : split_commas(s)) {
        out.push_back(zest::estimator_from_string(tok));
    }
    if (out.empty()) {
        throw zest::error("empty method list");
    }
    return out;
}

// draw one label per context from the teacher's conditional distribution
zest::LabeledDataset teacher_labels(const zest::LogLinearModel& teacher,
                                    const zest::Matrix& contexts, std::uint64_t seed) {
    zest::RngStream rng(zest::derive_seed(seed, 0x1abeULL));
    std::vector<std::int64_t> labels;
    labels.reserve(static_cast<std::size_t>(contexts.rows()));
    for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
        zest::Vector logits = teacher.weights() * contexts.row(i).transpose();
        double m = logits.maxCoeff();
        zest::Vector probs = (logits.array() - m).exp();
        probs /= probs.sum();
        double u = rng.uniform();
        double acc = 0.0;
        Eigen::Index pick = teacher.state_count() - 1;
        for (Eigen::Index y = 0; y < teacher.state_count(); ++y) {
            acc += probs(y);
            if (u <= acc) {
                pick = y;
                break;
            }
        }
        labels.push_back(pick);
    }
    return zest::LabeledDataset(zest::ContextBatch(contexts), std::move(labels),
                                teacher.state_count());
}

struct CorpusData {
    zest::LabeledDataset train;
    zest::LabeledDataset test;
    std::size_t vocab_size;
};

// whitespace tokens; vocab from the train split (first appearance order) with
// <s> and <unk>; context = one-hot of the previous token
CorpusData load_corpus(const std::string& path, double train_frac) {
    std::ifstream in(path);
    if (!in) {
        throw zest::error("cannot open corpus " + path);
    }
    std::vector<std::string> tokens;
    std::string tok;
    while (in >> tok) {
        tokens.push_back(tok);
    }
    if (tokens.size() < 10) {
        throw zest::error("corpus too small: need at least 10 tokens");
    }
    std::size_t n_train = static_cast<std::size_t>(static_cast<double>(tokens.size()) * train_frac);
    n_train = std::max<std::size_t>(n_train, 5);
    n_train = std::min(n_train, tokens.size() - 2);

    std::unordered_map<std::string, std::int64_t> vocab;
    vocab["<s>"] = 0;
    vocab["<unk>"] = 1;
    for (std::size_t i = 0; i < n_train; ++i) {
        vocab.emplace(tokens[i], static_cast<std::int64_t>(vocab.size()));
    }
    auto v = static_cast<Eigen::Index>(vocab.size());
    auto id_of = [&](const std::string& w) {
        auto it = vocab.find(w);
        return it != vocab.end() ? it->second : vocab.at("<unk>");
    };

    auto build = [&](std::size_t lo, std::size_t hi) {
        zest::Matrix ctx = zest::Matrix::Zero(static_cast<Eigen::Index>(hi - lo), v);
        std::vector<std::int64_t> labels;
        labels.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            std::int64_t prev = i == 0 ? 0 : id_of(tokens[i - 1]);
            ctx(static_cast<Eigen::Index>(i - lo), prev) = 1.0;
            labels.push_back(id_of(tokens[i]));
        }
        return zest::LabeledDataset(zest::ContextBatch(std::move(ctx)), std::move(labels), v);
    };
    return CorpusData{build(0, n_train), build(n_train, tokens.size()),
                      static_cast<std::size_t>(v)};
}

nlohmann::json report_json(const zest::TrainReport& rep) {
    return nlohmann::json{{"epoch_loss", rep.epoch_loss},
                          {"epoch_wall_time", rep.epoch_wall_time},
                          {"final_perplexity", rep.final_perplexity},
                          {"mean_states_touched_frac", rep.mean_states_touched_frac},
                          {"rebuild_drift", rep.rebuild_drift},
                          {"diverged", rep.diverged},
                          {"skipped_examples", rep.skipped_examples},
                          {"steps", rep.steps}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"log-linear partition function estimation toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic snapshot");
    std::int64_t sy_states = 1000, sy_dim = 16, sy_contexts = 10;
    double sy_scale = 1.0;
    std::uint64_t sy_seed = 0;
    std::string sy_out = "snapshot.zest";
    synth->add_option("--states", sy_states, "number of states");
    synth->add_option("--dim", sy_dim, "feature dimension");
    synth->add_option("--contexts", sy_contexts, "number of contexts");
    synth->add_option("--scale", sy_scale, "weight and context std dev");
    synth->add_option("--seed", sy_seed, "rng seed");
    synth->add_option("--out", sy_out, "output path")->required();

    // estimate
    auto* est = app.add_subcommand("estimate", "estimate the partition function");
    std::string es_snap, es_method = "lsh";
    int es_k = 10, es_l = 16, es_samples = 0, es_rank = 1, es_cols = 16;
    std::uint64_t es_seed = 0;
    std::int64_t es_ctx = -1;
    est->add_option("--snapshot", es_snap, "snapshot path")->required();
    est->add_option("--method", es_method,
                    "lsh | uniform_is | exact_gumbel | topk_gumbel | mips_gumbel | exact");
    est->add_option("--k-bits", es_k, "hash bits per table");
    est->add_option("--tables", es_l, "number of hash tables");
    est->add_option("--samples", es_samples, "sample budget / draw count (0 = uncapped lsh)");
    est->add_option("--rank", es_rank, "order statistic for topk_gumbel");
    est->add_option("--gumbel-cols", es_cols, "noise columns in the mips_gumbel index");
    est->add_option("--seed", es_seed, "rng seed");
    est->add_option("--context-index", es_ctx, "context to estimate (-1 = all)");

    // train
    auto* train = app.add_subcommand("train", "fit a model with sampled-softmax SGD");
    std::string tr_snap, tr_corpus, tr_method = "lsh", tr_report;
    int tr_k = 10, tr_l = 16, tr_budget = 200, tr_epochs = 1, tr_batch = 32, tr_rebuild = 50;
    int tr_draws = 20;
    double tr_lr = 0.1, tr_frac = 0.9;
    std::uint64_t tr_seed = 0;
    train->add_option("--snapshot", tr_snap, "teacher snapshot (labels drawn from it)");
    train->add_option("--corpus", tr_corpus, "text corpus (previous-word one-hot contexts)");
    train->add_option("--method", tr_method, "estimator used for z in the gradient");
    train->add_option("--k-bits", tr_k, "hash bits per table");
    train->add_option("--tables", tr_l, "number of hash tables");
    train->add_option("--budget", tr_budget, "negative sample budget per step");
    train->add_option("--gumbel-draws", tr_draws, "draws for gumbel-family estimators");
    train->add_option("--lr", tr_lr, "learning rate");
    train->add_option("--epochs", tr_epochs, "training epochs");
    train->add_option("--batch", tr_batch, "batch size (divergence check granularity)");
    train->add_option("--rebuild-period", tr_rebuild, "steps between table rebuilds");
    train->add_option("--train-frac", tr_frac, "train split fraction");
    train->add_option("--seed", tr_seed, "rng seed");
    train->add_option("--report", tr_report, "write the training report JSON here");

    // shared bench options
    auto add_bench_opts = [](CLI::App* cmd, std::string& snap, std::string& methods,
                             std::string& budgets, int& trials, std::uint64_t& seed, int& k, int& l,
                             int& mk, int& ml, int& cols, int& max_ctx, std::string& out,
                             std::string& format) {
        cmd->add_option("--snapshot", snap, "snapshot path")->required();
        cmd->add_option("--methods", methods, "comma-separated estimator list");
        cmd->add_option("--budgets", budgets, "comma-separated ascending budgets");
        cmd->add_option("--trials", trials, "trials per cell");
        cmd->add_option("--seed", seed, "rng seed");
        cmd->add_option("--k-bits", k, "sampler hash bits");
        cmd->add_option("--tables", l, "sampler tables");
        cmd->add_option("--mips-k-bits", mk, "mips index hash bits");
        cmd->add_option("--mips-tables", ml, "mips index tables");
        cmd->add_option("--gumbel-cols", cols, "mips index noise columns");
        cmd->add_option("--max-contexts", max_ctx, "cap on contexts used (0 = all)");
        cmd->add_option("--out", out, "report path (default stdout)");
        cmd->add_option("--format", format, "csv | json");
    };

    auto* bacc = app.add_subcommand("bench-accuracy", "error vs budget for each estimator");
    std::string ba_snap, ba_methods = "uniform_is,lsh", ba_budgets = "50,150,400,1000";
    std::string ba_out, ba_format = "csv";
    int ba_trials = 5, ba_k = 10, ba_l = 16, ba_mk = 5, ba_ml = 16, ba_cols = 16, ba_maxctx = 0;
    std::uint64_t ba_seed = 0;
    add_bench_opts(bacc, ba_snap, ba_methods, ba_budgets, ba_trials, ba_seed, ba_k, ba_l, ba_mk,
                   ba_ml, ba_cols, ba_maxctx, ba_out, ba_format);

    auto* btime = app.add_subcommand("bench-timing", "median wall time vs budget");
    std::string bt_snap, bt_methods = "uniform_is,lsh", bt_budgets = "50,150,400,1000";
    std::string bt_out, bt_format = "csv";
    int bt_trials = 5, bt_k = 10, bt_l = 16, bt_mk = 5, bt_ml = 16, bt_cols = 16, bt_maxctx = 0;
    int bt_warmup = 1;
    std::uint64_t bt_seed = 0;
    add_bench_opts(btime, bt_snap, bt_methods, bt_budgets, bt_trials, bt_seed, bt_k, bt_l, bt_mk,
                   bt_ml, bt_cols, bt_maxctx, bt_out, bt_format);
    btime->add_option("--warmup", bt_warmup, "discarded warmup runs");

    auto* topk = app.add_subcommand("topk-gap", "estimation error by substituted rank");
    std::string tk_snap, tk_ranks = "1,2", tk_out;
    int tk_draws = 200, tk_trials = 5, tk_maxctx = 0;
    std::uint64_t tk_seed = 0;
    topk->add_option("--snapshot", tk_snap, "snapshot path")->required();
    topk->add_option("--ranks", tk_ranks, "comma-separated ranks");
    topk->add_option("--draws", tk_draws, "gumbel draws per estimate");
    topk->add_option("--trials", tk_trials, "trials per cell");
    topk->add_option("--max-contexts", tk_maxctx, "cap on contexts used (0 = all)");
    topk->add_option("--seed", tk_seed, "rng seed");
    topk->add_option("--out", tk_out, "report path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            zest::Snapshot snap =
                zest::generate_synthetic(sy_states, sy_dim, sy_contexts, sy_scale, sy_seed);
            zest::save_snapshot(snap, sy_out);
            std::cout << "wrote " << sy_out << ": " << sy_states << " states, dim " << sy_dim
                      << ", " << sy_contexts << " contexts\n";
        } else if (*est) {
            zest::Snapshot snap = zest::load_snapshot(es_snap);
            zest::EstimatorKind kind = zest::estimator_from_string(es_method);
            zest::LshParams params{es_k, es_l, es_seed};
            std::unique_ptr<zest::HashTableSet> tables;
            if (kind == zest::EstimatorKind::lsh) {
                tables = std::make_unique<zest::HashTableSet>(snap.model, params);
            }
            std::unique_ptr<zest::MipsGumbelIndex> index;
            zest::GumbelConfig g;
            g.n_draws = es_samples > 0 ? es_samples : 20;
            g.seed = es_seed;
            g.rank = es_rank;
            if (kind == zest::EstimatorKind::mips_gumbel) {
                index = std::make_unique<zest::MipsGumbelIndex>(zest::build_mips_gumbel_index(
                    snap.model, g, zest::LshParams{es_k, es_l, zest::derive_seed(es_seed, 1)},
                    es_cols));
            }
            Eigen::Index lo = es_ctx < 0 ? 0 : static_cast<Eigen::Index>(es_ctx);
            Eigen::Index hi = es_ctx < 0 ? snap.contexts.size() : lo + 1;
            if (lo >= snap.contexts.size()) {
                throw zest::error("context index out of range");
            }
            std::cout << "context,z_hat,z_exact,abs_log_err,n_samples,wall_time_s\n"
                      << std::setprecision(10);
            for (Eigen::Index c = lo; c < hi; ++c) {
                auto x = snap.contexts.row(c);
                zest::PartitionEstimate pe;
                switch (kind) {
                    case zest::EstimatorKind::lsh:
                        pe = es_samples > 0
                                 ? zest::lsh_estimate_budgeted(*tables, snap.model, x, es_samples,
                                                               zest::derive_seed(es_seed, 2,
                                                                                 static_cast<std::uint64_t>(c)))
                                       .estimate
                                 : zest::lsh_estimate(*tables, snap.model, x).estimate;
                        break;
                    case zest::EstimatorKind::uniform_is:
                        pe = zest::uniform_is_estimate(snap.model, x, es_samples > 0 ? es_samples : 100,
                                                       zest::derive_seed(es_seed, 3,
                                                                         static_cast<std::uint64_t>(c)));
                        break;
                    case zest::EstimatorKind::exact_gumbel:
                        pe = zest::exact_gumbel_estimate(snap.model, x, g);
                        break;
                    case zest::EstimatorKind::topk_gumbel:
                        pe = zest::topk_gumbel_estimate(snap.model, x, g);
                        break;
                    case zest::EstimatorKind::mips_gumbel:
                        pe = zest::mips_gumbel_estimate(snap.model, x, g, *index);
                        break;
                    case zest::EstimatorKind::exact: {
                        pe.estimator = zest::EstimatorKind::exact;
                        pe.log_z_hat = snap.model.log_partition(x);
                        pe.z_hat = std::exp(pe.log_z_hat);
                        pe.n_samples = static_cast<std::size_t>(snap.model.state_count());
                        break;
                    }
                    case zest::EstimatorKind::bernoulli_oracle:
                        throw zest::error("bernoulli_oracle needs explicit probabilities; "
                                          "use the library API");
                }
                double exact_lz = snap.model.log_partition(x);
                std::cout << c << ',' << pe.z_hat << ',' << std::exp(exact_lz) << ','
                          << std::abs(pe.log_z_hat - exact_lz) << ',' << pe.n_samples << ','
                          << pe.wall_time << '\n';
            }
        } else if (*train) {
            if (tr_snap.empty() == tr_corpus.empty()) {
                throw zest::error("pass exactly one of --snapshot or --corpus");
            }
            zest::TrainConfig cfg;
            cfg.learning_rate = tr_lr;
            cfg.epochs = tr_epochs;
            cfg.batch_size = tr_batch;
            cfg.estimator = zest::estimator_from_string(tr_method);
            cfg.lsh = zest::LshParams{tr_k, tr_l, zest::derive_seed(tr_seed, 0x7ab1ULL)};
            cfg.sample_budget = tr_budget;
            cfg.table_rebuild_period = tr_rebuild;
            cfg.seed = tr_seed;
            cfg.gumbel.n_draws = tr_draws;

            std::unique_ptr<zest::LabeledDataset> train_set;
            std::unique_ptr<zest::LabeledDataset> test_set;
            Eigen::Index n_states = 0;
            Eigen::Index dim = 0;
            if (!tr_snap.empty()) {
                zest::Snapshot snap = zest::load_snapshot(tr_snap);
                Eigen::Index n = snap.contexts.size();
                Eigen::Index cut = std::max<Eigen::Index>(
                    1, static_cast<Eigen::Index>(static_cast<double>(n) * tr_frac));
                cut = std::min(cut, n - 1);
                zest::LabeledDataset all =
                    teacher_labels(snap.model, snap.contexts.matrix(), tr_seed);
                zest::Matrix train_ctx = snap.contexts.matrix().topRows(cut);
                zest::Matrix test_ctx = snap.contexts.matrix().bottomRows(n - cut);
                std::vector<std::int64_t> train_y(all.labels.begin(), all.labels.begin() + cut);
                std::vector<std::int64_t> test_y(all.labels.begin() + cut, all.labels.end());
                n_states = snap.model.state_count();
                dim = snap.model.dim();
                train_set = std::make_unique<zest::LabeledDataset>(
                    zest::ContextBatch(std::move(train_ctx)), std::move(train_y), n_states);
                test_set = std::make_unique<zest::LabeledDataset>(
                    zest::ContextBatch(std::move(test_ctx)), std::move(test_y), n_states);
            } else {
                CorpusData corpus = load_corpus(tr_corpus, tr_frac);
                n_states = corpus.train.state_count;
                dim = corpus.train.contexts.dim();
                train_set = std::make_unique<zest::LabeledDataset>(std::move(corpus.train));
                test_set = std::make_unique<zest::LabeledDataset>(std::move(corpus.test));
            }

            zest::LogLinearModel model(zest::Matrix::Zero(n_states, dim));
            zest::TrainReport rep = zest::train(model, *train_set, *test_set, cfg);
            nlohmann::json j = report_json(rep);
            if (!tr_report.empty()) {
                std::ofstream out(tr_report, std::ios::trunc);
                out << j.dump(2) << '\n';
            }
            std::cout << j.dump(2) << '\n';
            if (rep.diverged) {
                std::cerr << "training diverged (estimator " << tr_method
                          << "); weights discarded\n";
                return 2;
            }
        } else if (*bacc || *btime) {
            bool timing = static_cast<bool>(*btime);
            zest::BenchConfig cfg;
            cfg.methods = parse_methods(timing ? bt_methods : ba_methods);
            cfg.budgets = parse_int_list(timing ? bt_budgets : ba_budgets, "budget");
            cfg.trials = timing ? bt_trials : ba_trials;
            cfg.seed = timing ? bt_seed : ba_seed;
            cfg.lsh = timing ? zest::LshParams{bt_k, bt_l, 0} : zest::LshParams{ba_k, ba_l, 0};
            cfg.mips_index = timing ? zest::LshParams{bt_mk, bt_ml, 0}
                                    : zest::LshParams{ba_mk, ba_ml, 0};
            cfg.mips_gumbel_cols = timing ? bt_cols : ba_cols;
            cfg.max_contexts = timing ? bt_maxctx : ba_maxctx;
            cfg.warmup = bt_warmup;
            zest::Snapshot snap = zest::load_snapshot(timing ? bt_snap : ba_snap);
            zest::BenchReport report =
                timing ? zest::run_timing_bench(snap, cfg) : zest::run_accuracy_bench(snap, cfg);
            const std::string& out = timing ? bt_out : ba_out;
            const std::string& format = timing ? bt_format : ba_format;
            zest::ReportFormat fmt;
            if (format == "csv") {
                fmt = zest::ReportFormat::csv;
            } else if (format == "json") {
                fmt = zest::ReportFormat::json;
            } else {
                throw zest::error("unknown format '" + format + "' (expected csv or json)");
            }
            if (out.empty()) {
                if (fmt == zest::ReportFormat::csv) {
                    std::cout << zest::format_report_csv(report);
                } else {
                    std::cout << zest::report_to_json(report).dump(2) << '\n';
                }
            } else {
                zest::emit_report(report, fmt, out);
                std::cout << "wrote " << out << '\n';
            }
        } else if (*topk) {
            zest::Snapshot snap = zest::load_snapshot(tk_snap);
            zest::BenchConfig cfg;
            cfg.budgets = {tk_draws};
            cfg.trials = tk_trials;
            cfg.seed = tk_seed;
            cfg.max_contexts = tk_maxctx;
            cfg.ranks = parse_int_list(tk_ranks, "rank");
            std::vector<zest::TopkRow> rows = zest::run_topk_experiment(snap, cfg);
            std::ostringstream out;
            out << "rank,mean_abs_log_err\n" << std::setprecision(17);
            for (const zest::TopkRow& r : rows) {
                out << r.rank << ',' << r.mean_abs_log_err << '\n';
            }
            if (tk_out.empty()) {
                std::cout << out.str();
            } else {
                std::ofstream f(tk_out, std::ios::trunc);
                f << out.str();
                std::cout << "wrote " << tk_out << '\n';
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
