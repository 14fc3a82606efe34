#include "zest/lsh.hpp"

#include <algorithm>
#include <cmath>

namespace zest {

void validate(const LshParams& params) {
    if (params.k_bits < 1 || params.k_bits > 32) {
        throw error("k_bits must be in [1, 32]");
    }
    if (params.n_tables < 1) {
        throw error("n_tables must be at least 1");
    }
}

ProjectionMatrix::ProjectionMatrix(Eigen::Index dim, const LshParams& params)
    : seed_(params.seed) {
    validate(params);
    if (dim < 1) {
        throw dim_mismatch_error("projection needs a positive dimension");
    }
    Eigen::Index cols = static_cast<Eigen::Index>(params.k_bits) * params.n_tables;
    entries_.resize(dim, cols);
    RngStream rng(derive_seed(params.seed, 0xA11CEULL));
    for (Eigen::Index i = 0; i < dim; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            entries_(i, j) = rng.gaussian();
        }
    }
}

Vector mips_transform_data(const ConstVectorRef& theta, double max_norm) {
    if (!(max_norm > 0.0)) {
        throw error("max_norm must be positive");
    }
    double ratio_sq = theta.squaredNorm() / (max_norm * max_norm);
    if (ratio_sq > 1.0 + 1e-9) {
        throw error("row norm exceeds max_norm");
    }
    Vector out(theta.size() + 1);
    out.head(theta.size()) = theta / max_norm;
    out(theta.size()) = std::sqrt(std::max(0.0, 1.0 - ratio_sq));
    return out;
}

Vector mips_transform_query(const ConstVectorRef& x) {
    double n = x.norm();
    if (n == 0.0) {
        throw error("cannot transform a zero query vector");
    }
    Vector out(x.size() + 1);
    out.head(x.size()) = x / n;
    out(x.size()) = 0.0;
    return out;
}

std::vector<std::uint32_t> fingerprint(const ConstVectorRef& v, const ProjectionMatrix& proj,
                                       const LshParams& params) {
    validate(params);
    if (v.size() != proj.dim()) {
        throw dim_mismatch_error("vector dimension does not match projection");
    }
    Vector s = proj.entries().transpose() * v;
    if (s.size() != static_cast<Eigen::Index>(params.k_bits) * params.n_tables) {
        throw dim_mismatch_error("projection width does not match params");
    }
    std::vector<std::uint32_t> keys(static_cast<std::size_t>(params.n_tables));
    for (int t = 0; t < params.n_tables; ++t) {
        std::uint32_t key = 0;
        for (int j = 0; j < params.k_bits; ++j) {
            if (s(static_cast<Eigen::Index>(t) * params.k_bits + j) >= 0.0) {
                key |= 1u << j;
            }
        }
        keys[static_cast<std::size_t>(t)] = key;
    }
    return keys;
}

double collision_probability(const ConstVectorRef& theta, const ConstVectorRef& x,
                             double max_norm) {
    if (!(max_norm > 0.0)) {
        throw error("max_norm must be positive");
    }
    if (theta.size() != x.size()) {
        throw dim_mismatch_error("theta and x dimensions differ");
    }
    double xn = x.norm();
    if (xn == 0.0) {
        throw error("collision probability undefined for a zero context");
    }
    double c = theta.dot(x) / (max_norm * xn);
    c = std::clamp(c, -1.0, 1.0);
    return 1.0 - std::acos(c) / M_PI;
}

double retrieval_probability(double p, int k_bits, int n_tables) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw error("collision probability must lie in [0, 1]");
    }
    if (k_bits < 1 || n_tables < 1) {
        throw error("k_bits and n_tables must be positive");
    }
    double pk = std::pow(p, k_bits);
    if (pk >= 1.0) {
        return 1.0;
    }
    // 1 - (1 - p^K)^L, evaluated to keep precision when p^K is tiny
    double r = -std::expm1(static_cast<double>(n_tables) * std::log1p(-pk));
    return std::clamp(r, 0.0, 1.0);
}

HashTableSet::HashTableSet(const LogLinearModel& model, const LshParams& params)
    : projection_(model.dim() + 1, params), params_(params), state_count_(model.state_count()),
      dim_(model.dim()), model_checksum_(model.weights_checksum()) {
    max_norm_ = model.weights().rowwise().norm().maxCoeff();
    if (max_norm_ == 0.0) {
        max_norm_ = 1.0;  // all-zero model: any constant gives the same hashes
    }
    tables_.resize(static_cast<std::size_t>(params_.n_tables));
    for (Eigen::Index y = 0; y < state_count_; ++y) {
        Vector v = mips_transform_data(model.weights().row(y).transpose(), max_norm_);
        std::vector<std::uint32_t> keys = fingerprint(v, projection_, params_);
        for (int t = 0; t < params_.n_tables; ++t) {
            tables_[static_cast<std::size_t>(t)][keys[static_cast<std::size_t>(t)]].push_back(
                static_cast<std::uint32_t>(y));
        }
    }
}

CandidateSet HashTableSet::query_candidates(const ConstVectorRef& x) const {
    if (x.size() != dim_) {
        throw dim_mismatch_error("query dimension does not match tables");
    }
    Vector q = mips_transform_query(x);
    std::vector<std::uint32_t> keys = fingerprint(q, projection_, params_);
    CandidateSet out;
    std::vector<char> seen(static_cast<std::size_t>(state_count_), 0);
    for (int t = 0; t < params_.n_tables; ++t) {
        ++out.buckets_probed;
        const auto& tab = tables_[static_cast<std::size_t>(t)];
        auto it = tab.find(keys[static_cast<std::size_t>(t)]);
        if (it == tab.end()) {
            continue;
        }
        for (std::uint32_t id : it->second) {
            if (!seen[id]) {
                seen[id] = 1;
                out.ids.push_back(id);
            }
        }
    }
    std::sort(out.ids.begin(), out.ids.end());
    return out;
}

std::size_t HashTableSet::stored_ids() const {
    std::size_t n = 0;
    for (const auto& tab : tables_) {
        for (const auto& [key, ids] : tab) {
            n += ids.size();
        }
    }
    return n;
}

HashTableSet build_tables(const LogLinearModel& model, const LshParams& params) {
    return HashTableSet(model, params);
}

}  // namespace zest
