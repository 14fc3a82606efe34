#include "zest/model.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace zest {

LogLinearModel::LogLinearModel(Matrix weights) : weights_(std::move(weights)) {
    if (weights_.rows() < 1 || weights_.cols() < 1) {
        throw dim_mismatch_error("model needs at least one state and one feature");
    }
    if (!weights_.allFinite()) {
        throw non_finite_score_error("model weights must be finite");
    }
}

double LogLinearModel::logit(Eigen::Index state, const ConstVectorRef& x) const {
    if (state < 0 || state >= weights_.rows()) {
        throw dim_mismatch_error("state index out of range");
    }
    if (x.size() != weights_.cols()) {
        throw dim_mismatch_error("context dimension does not match model");
    }
    return weights_.row(state).dot(x);
}

double LogLinearModel::unnormalized_score(Eigen::Index state, const ConstVectorRef& x) const {
    return std::exp(logit(state, x));
}

double LogLinearModel::exact_partition(const ConstVectorRef& x) const {
    return std::exp(log_partition(x));
}

double LogLinearModel::log_partition(const ConstVectorRef& x) const {
    if (x.size() != weights_.cols()) {
        throw dim_mismatch_error("context dimension does not match model");
    }
    Vector logits = weights_ * x;
    double m = logits.maxCoeff();
    double acc = (logits.array() - m).exp().sum();
    return m + std::log(acc);
}

std::uint64_t LogLinearModel::weights_checksum() const {
    if (!checksum_valid_) {
        checksum_ = fnv1a64(weights_.data(),
                            static_cast<std::size_t>(weights_.size()) * sizeof(double));
        checksum_valid_ = true;
    }
    return checksum_;
}

void LogLinearModel::update_row(Eigen::Index state, double coeff, const ConstVectorRef& x) {
    if (state < 0 || state >= weights_.rows()) {
        throw dim_mismatch_error("state index out of range");
    }
    if (x.size() != weights_.cols()) {
        throw dim_mismatch_error("context dimension does not match model");
    }
    if (!std::isfinite(coeff)) {
        throw non_finite_score_error("non-finite update coefficient");
    }
    weights_.row(state) += coeff * x.transpose();
    checksum_valid_ = false;
}

ContextBatch::ContextBatch(Matrix contexts) : contexts_(std::move(contexts)) {
    if (contexts_.cols() < 1) {
        throw dim_mismatch_error("contexts need at least one feature");
    }
    if (!contexts_.allFinite()) {
        throw non_finite_score_error("context entries must be finite");
    }
    for (Eigen::Index i = 0; i < contexts_.rows(); ++i) {
        if (contexts_.row(i).norm() == 0.0) {
            throw error("context row " + std::to_string(i) +
                        " is all zeros; contexts must have a direction");
        }
    }
}

LabeledDataset::LabeledDataset(ContextBatch contexts_in, std::vector<std::int64_t> labels_in,
                               Eigen::Index state_count_in)
    : contexts(std::move(contexts_in)), labels(std::move(labels_in)),
      state_count(state_count_in) {
    if (state_count < 1) {
        throw dim_mismatch_error("dataset needs a positive state count");
    }
    if (static_cast<Eigen::Index>(labels.size()) != contexts.size()) {
        throw dim_mismatch_error("label count does not match context count");
    }
    for (std::int64_t y : labels) {
        if (y < 0 || y >= state_count) {
            throw dim_mismatch_error("label out of range");
        }
    }
}

Snapshot::Snapshot(LogLinearModel model_in, ContextBatch contexts_in, SnapshotMeta meta_in)
    : model(std::move(model_in)), contexts(std::move(contexts_in)), meta(std::move(meta_in)) {
    if (model.dim() != contexts.dim()) {
        throw dim_mismatch_error("model and context dimensions differ");
    }
}

Snapshot generate_synthetic(Eigen::Index n_states, Eigen::Index dim, Eigen::Index n_contexts,
                            double scale, std::uint64_t seed) {
    if (n_states < 1 || dim < 1 || n_contexts < 1) {
        throw dim_mismatch_error("synthetic snapshot needs positive sizes");
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw error("scale must be positive and finite");
    }

    Matrix weights(n_states, dim);
    RngStream wrng(derive_seed(seed, 1));
    for (Eigen::Index i = 0; i < n_states; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) {
            weights(i, j) = scale * wrng.gaussian();
        }
    }

    Matrix contexts(n_contexts, dim);
    RngStream crng(derive_seed(seed, 2));
    for (Eigen::Index i = 0; i < n_contexts; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) {
            contexts(i, j) = scale * crng.gaussian();
        }
    }

    std::ostringstream params;
    params << "synthetic n_states=" << n_states << " dim=" << dim << " n_contexts=" << n_contexts
           << " scale=" << scale;
    SnapshotMeta meta{"synthetic", seed, params.str()};
    return Snapshot(LogLinearModel(std::move(weights)), ContextBatch(std::move(contexts)),
                    std::move(meta));
}

namespace {

constexpr char kMagic[5] = {'Z', 'E', 'S', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) {
        throw snapshot_truncated_error("snapshot ends inside a header or trailer field");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return v;
}

void write_matrix(std::ostream& out, const Matrix& m) {
    // doubles are written little-endian; on a little-endian host this is the
    // native byte image
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size()) * 8);
}

Matrix read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size()) * 8);
    if (!in) {
        throw snapshot_truncated_error("snapshot ends inside a matrix payload");
    }
    return m;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    std::uint64_t n = read_u64(in);
    if (n > (1u << 20)) {
        throw snapshot_format_error("snapshot string field is implausibly large");
    }
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) {
        throw snapshot_truncated_error("snapshot ends inside a string field");
    }
    return s;
}

}  // namespace

void save_snapshot(const Snapshot& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw error("cannot open " + path + " for writing");
    }
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, static_cast<std::uint64_t>(s.model.state_count()));
    write_u64(out, static_cast<std::uint64_t>(s.model.dim()));
    write_u64(out, static_cast<std::uint64_t>(s.contexts.size()));
    write_matrix(out, s.model.weights());
    write_matrix(out, s.contexts.matrix());
    write_string(out, s.meta.name);
    write_u64(out, s.meta.seed);
    write_string(out, s.meta.params);
    out.flush();
    if (!out) {
        throw error("failed while writing " + path);
    }
}

Snapshot load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw error("cannot open " + path);
    }
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw snapshot_format_error("not a ZEST1 snapshot: bad magic");
    }
    std::uint64_t n = read_u64(in);
    std::uint64_t d = read_u64(in);
    std::uint64_t m = read_u64(in);
    constexpr std::uint64_t kDimCap = 1ull << 32;
    if (n == 0 || d == 0 || m == 0 || n >= kDimCap || d >= kDimCap || m >= kDimCap) {
        throw dim_mismatch_error("snapshot header has unusable dimensions");
    }
    Matrix weights = read_matrix(in, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    Matrix contexts = read_matrix(in, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    SnapshotMeta meta;
    meta.name = read_string(in);
    meta.seed = read_u64(in);
    meta.params = read_string(in);
    return Snapshot(LogLinearModel(std::move(weights)), ContextBatch(std::move(contexts)),
                    std::move(meta));
}

}  // namespace zest
