#include "zest/bench.hpp"
#include "zest/estimators.hpp"
#include "zest/lsh.hpp"
#include "zest/model.hpp"
#include "zest/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace zest;

PYBIND11_MODULE(zestpy, m) {
    m.doc() = "Partition-function estimation for log-linear models";

    auto base = py::register_exception<error>(m, "ZestError");
    py::register_exception<dim_mismatch_error>(m, "DimMismatchError", base);
    py::register_exception<snapshot_format_error>(m, "SnapshotFormatError", base);
    py::register_exception<snapshot_truncated_error>(m, "SnapshotTruncatedError", base);
    py::register_exception<stale_tables_error>(m, "StaleTablesError", base);
    py::register_exception<non_finite_score_error>(m, "NonFiniteScoreError", base);

    py::enum_<EstimatorKind>(m, "EstimatorKind")
        .value("lsh", EstimatorKind::lsh)
        .value("uniform_is", EstimatorKind::uniform_is)
        .value("exact_gumbel", EstimatorKind::exact_gumbel)
        .value("topk_gumbel", EstimatorKind::topk_gumbel)
        .value("mips_gumbel", EstimatorKind::mips_gumbel)
        .value("bernoulli_oracle", EstimatorKind::bernoulli_oracle)
        .value("exact", EstimatorKind::exact);

    py::class_<LogLinearModel>(m, "LogLinearModel")
        .def(py::init<Matrix>(), py::arg("weights"))
        .def_property_readonly("weights", &LogLinearModel::weights)
        .def_property_readonly("state_count", &LogLinearModel::state_count)
        .def_property_readonly("dim", &LogLinearModel::dim)
        .def("logit", &LogLinearModel::logit, py::arg("state"), py::arg("x"))
        .def("unnormalized_score", &LogLinearModel::unnormalized_score, py::arg("state"),
             py::arg("x"))
        .def("exact_partition", &LogLinearModel::exact_partition, py::arg("x"))
        .def("log_partition", &LogLinearModel::log_partition, py::arg("x"))
        .def("weights_checksum", &LogLinearModel::weights_checksum)
        .def("update_row", &LogLinearModel::update_row, py::arg("state"), py::arg("coeff"),
             py::arg("x"))
        .def("__repr__", [](const LogLinearModel& model) {
            std::ostringstream out;
            out << "LogLinearModel(states=" << model.state_count() << ", dim=" << model.dim()
                << ")";
            return out.str();
        });

    py::class_<ContextBatch>(m, "ContextBatch")
        .def(py::init<Matrix>(), py::arg("contexts"))
        .def_property_readonly("matrix", &ContextBatch::matrix)
        .def_property_readonly("size", &ContextBatch::size)
        .def("row", [](const ContextBatch& batch, Eigen::Index i) { return Vector(batch.row(i)); },
             py::arg("i"));

    py::class_<LabeledDataset>(m, "LabeledDataset")
        .def(py::init([](Matrix contexts, std::vector<std::int64_t> labels,
                         Eigen::Index state_count) {
                 return LabeledDataset(ContextBatch(std::move(contexts)), std::move(labels),
                                       state_count);
             }),
             py::arg("contexts"), py::arg("labels"), py::arg("state_count"))
        .def_readonly("labels", &LabeledDataset::labels)
        .def_readonly("state_count", &LabeledDataset::state_count)
        .def_property_readonly("contexts",
                               [](const LabeledDataset& d) { return d.contexts.matrix(); });

    py::class_<SnapshotMeta>(m, "SnapshotMeta")
        .def_readonly("name", &SnapshotMeta::name)
        .def_readonly("seed", &SnapshotMeta::seed)
        .def_readonly("params", &SnapshotMeta::params);

    py::class_<Snapshot>(m, "Snapshot")
        .def_property_readonly("model",
                               [](Snapshot& snap) -> LogLinearModel& { return snap.model; },
                               py::return_value_policy::reference_internal)
        .def_property_readonly("contexts",
                               [](const Snapshot& snap) { return snap.contexts.matrix(); })
        .def_readonly("meta", &Snapshot::meta);

    m.def("generate_synthetic", &generate_synthetic, py::arg("n_states"), py::arg("dim"),
          py::arg("n_contexts"), py::arg("scale"), py::arg("seed"));
    m.def("save_snapshot", &save_snapshot, py::arg("snapshot"), py::arg("path"));
    m.def("load_snapshot", &load_snapshot, py::arg("path"));

    py::class_<LshParams>(m, "LshParams")
        .def(py::init([](int k_bits, int n_tables, std::uint64_t seed) {
                 return LshParams{k_bits, n_tables, seed};
             }),
             py::arg("k_bits") = 10, py::arg("n_tables") = 16, py::arg("seed") = 0)
        .def_readwrite("k_bits", &LshParams::k_bits)
        .def_readwrite("n_tables", &LshParams::n_tables)
        .def_readwrite("seed", &LshParams::seed);

    py::class_<CandidateSet>(m, "CandidateSet")
        .def_readonly("ids", &CandidateSet::ids)
        .def_readonly("buckets_probed", &CandidateSet::buckets_probed);

    py::class_<HashTableSet>(m, "HashTableSet")
        .def("query_candidates", &HashTableSet::query_candidates, py::arg("x"))
        .def_property_readonly("state_count", &HashTableSet::state_count)
        .def_property_readonly("dim", &HashTableSet::dim)
        .def_property_readonly("max_norm", &HashTableSet::max_norm)
        .def("stored_ids", &HashTableSet::stored_ids)
        .def("model_checksum", &HashTableSet::model_checksum);

    m.def("build_tables", &build_tables, py::arg("model"), py::arg("params"));
    m.def("collision_probability", &collision_probability, py::arg("theta"), py::arg("x"),
          py::arg("max_norm"));
    m.def("retrieval_probability", &retrieval_probability, py::arg("p"), py::arg("k_bits"),
          py::arg("n_tables"));
    m.def("state_retrieval_probabilities", &state_retrieval_probabilities, py::arg("model"),
          py::arg("x"), py::arg("params"));

    py::class_<SampleEntry>(m, "SampleEntry")
        .def_readonly("state", &SampleEntry::state)
        .def_readonly("retrieval_prob", &SampleEntry::retrieval_prob)
        .def_readonly("logit", &SampleEntry::logit);

    py::class_<SampleSet>(m, "SampleSet")
        .def(py::init<>())
        .def_readonly("entries", &SampleSet::entries);

    py::class_<PartitionEstimate>(m, "PartitionEstimate")
        .def_readonly("z_hat", &PartitionEstimate::z_hat)
        .def_readonly("log_z_hat", &PartitionEstimate::log_z_hat)
        .def_readonly("n_samples", &PartitionEstimate::n_samples)
        .def_readonly("wall_time", &PartitionEstimate::wall_time)
        .def_readonly("estimator", &PartitionEstimate::estimator)
        .def_readonly("score_evals", &PartitionEstimate::score_evals)
        .def_readonly("bucket_probes", &PartitionEstimate::bucket_probes)
        .def_readonly("skipped_draws", &PartitionEstimate::skipped_draws)
        .def("__repr__", [](const PartitionEstimate& est) {
            std::ostringstream out;
            out << "PartitionEstimate(z_hat=" << est.z_hat << ", log_z_hat=" << est.log_z_hat
                << ", n_samples=" << est.n_samples << ")";
            return out.str();
        });

    py::class_<LshEstimateResult>(m, "LshEstimateResult")
        .def_readonly("estimate", &LshEstimateResult::estimate)
        .def_readonly("samples", &LshEstimateResult::samples);

    m.def("lsh_estimate", &lsh_estimate, py::arg("tables"), py::arg("model"), py::arg("x"),
          py::arg("allow_stale") = false);
    m.def("lsh_estimate_budgeted", &lsh_estimate_budgeted, py::arg("tables"), py::arg("model"),
          py::arg("x"), py::arg("budget"), py::arg("seed"), py::arg("allow_stale") = false);
    m.def("subsample_fixed_size", &subsample_fixed_size, py::arg("samples"), py::arg("budget"),
          py::arg("seed"));
    m.def("estimate_from_samples", &estimate_from_samples, py::arg("samples"));
    m.def("uniform_is_estimate", &uniform_is_estimate, py::arg("model"), py::arg("x"),
          py::arg("n_draws"), py::arg("seed"), py::arg("enumerate_all") = false);

    py::class_<GumbelConfig>(m, "GumbelConfig")
        .def(py::init([](int n_draws, std::uint64_t seed, int rank, bool pooled_noise,
                         int pool_size) {
                 return GumbelConfig{n_draws, seed, rank, pooled_noise, pool_size};
             }),
             py::arg("n_draws") = 1, py::arg("seed") = 0, py::arg("rank") = 1,
             py::arg("pooled_noise") = false, py::arg("pool_size") = 1000)
        .def_readwrite("n_draws", &GumbelConfig::n_draws)
        .def_readwrite("seed", &GumbelConfig::seed)
        .def_readwrite("rank", &GumbelConfig::rank)
        .def_readwrite("pooled_noise", &GumbelConfig::pooled_noise)
        .def_readwrite("pool_size", &GumbelConfig::pool_size);

    m.def("gumbel_inverse_samples", &gumbel_inverse_samples, py::arg("model"), py::arg("x"),
          py::arg("config"));
    m.def("exact_gumbel_estimate", &exact_gumbel_estimate, py::arg("model"), py::arg("x"),
          py::arg("config"));
    m.def("topk_gumbel_estimate", &topk_gumbel_estimate, py::arg("model"), py::arg("x"),
          py::arg("config"));

    py::class_<MipsGumbelIndex>(m, "MipsGumbelIndex")
        .def_readonly("n_gumbel_cols", &MipsGumbelIndex::n_gumbel_cols)
        .def_readonly("noise_seed", &MipsGumbelIndex::noise_seed);

    m.def("build_mips_gumbel_index", &build_mips_gumbel_index, py::arg("model"), py::arg("config"),
          py::arg("index_params"), py::arg("n_gumbel_cols"));
    m.def("mips_gumbel_estimate",
          py::overload_cast<const LogLinearModel&, const ConstVectorRef&, const GumbelConfig&,
                            const MipsGumbelIndex&>(&mips_gumbel_estimate),
          py::arg("model"), py::arg("x"), py::arg("config"), py::arg("index"));

    m.def("bernoulli_oracle_estimate", &bernoulli_oracle_estimate, py::arg("model"), py::arg("x"),
          py::arg("probs"), py::arg("seed"));
    m.def("analytic_variance_independent", &analytic_variance_independent, py::arg("model"),
          py::arg("x"), py::arg("probs"));

    py::class_<CovarianceDecomposition>(m, "CovarianceDecomposition")
        .def_readonly("empirical_variance", &CovarianceDecomposition::empirical_variance)
        .def_readonly("independent_part", &CovarianceDecomposition::independent_part)
        .def_readonly("covariance_term", &CovarianceDecomposition::covariance_term)
        .def_readonly("trials", &CovarianceDecomposition::trials);

    m.def("covariance_decomposition", &covariance_decomposition, py::arg("model"), py::arg("x"),
          py::arg("params"), py::arg("trials"), py::arg("seed"));

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("estimator", &TrainConfig::estimator)
        .def_readwrite("lsh", &TrainConfig::lsh)
        .def_readwrite("sample_budget", &TrainConfig::sample_budget)
        .def_readwrite("table_rebuild_period", &TrainConfig::table_rebuild_period)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("gumbel", &TrainConfig::gumbel)
        .def_readwrite("mips_index", &TrainConfig::mips_index)
        .def_readwrite("mips_gumbel_cols", &TrainConfig::mips_gumbel_cols)
        .def_readwrite("divergence_loss", &TrainConfig::divergence_loss);

    py::class_<TrainReport>(m, "TrainReport")
        .def_readonly("epoch_loss", &TrainReport::epoch_loss)
        .def_readonly("epoch_wall_time", &TrainReport::epoch_wall_time)
        .def_readonly("final_perplexity", &TrainReport::final_perplexity)
        .def_readonly("mean_states_touched_frac", &TrainReport::mean_states_touched_frac)
        .def_readonly("rebuild_drift", &TrainReport::rebuild_drift)
        .def_readonly("diverged", &TrainReport::diverged)
        .def_readonly("skipped_examples", &TrainReport::skipped_examples)
        .def_readonly("steps", &TrainReport::steps);

    m.def("sgd_step", &sgd_step, py::arg("model"), py::arg("x"), py::arg("label"),
          py::arg("negatives"), py::arg("z_step"), py::arg("learning_rate"));
    m.def("perplexity", &perplexity, py::arg("model"), py::arg("data"));
    m.def("train", &train, py::arg("model"), py::arg("train_data"), py::arg("test_data"),
          py::arg("config"));
}
