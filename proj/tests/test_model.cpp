#include "zest/model.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using namespace zest;

namespace {

// scalar-loop oracle, no Eigen: sum_j theta_j x_j, then exp
double score_oracle(const Matrix& w, Eigen::Index row, const Vector& x) {
    double dot = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        dot += w(row, j) * x(j);
    }
    return std::exp(dot);
}

// naive unshifted partition oracle
double partition_oracle(const Matrix& w, const Vector& x) {
    double z = 0.0;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        z += score_oracle(w, i, x);
    }
    return z;
}

std::string temp_path(const char* name) {
    return std::string("/tmp/zest_test_") + name;
}

bool same_matrix(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("unnormalized score matches hand-computed values") {
    Matrix w(2, 1);
    w << 0.0, std::log(3.0);
    LogLinearModel m(w);
    Vector x(1);
    x << 1.0;
    CHECK(m.unnormalized_score(0, x) == 1.0);
    CHECK(m.unnormalized_score(1, x) == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("unnormalized score matches a scalar-loop oracle") {
    RngStream rng(91);
    Matrix w(20, 7);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            w(i, j) = rng.gaussian();
        }
    }
    Vector x(7);
    for (Eigen::Index j = 0; j < 7; ++j) {
        x(j) = rng.gaussian();
    }
    LogLinearModel m(w);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        CHECK(m.unnormalized_score(i, x) ==
              doctest::Approx(score_oracle(w, i, x)).epsilon(1e-12));
    }
}

TEST_CASE("exact partition of closed-form models") {
    SUBCASE("one state with zero logit") {
        Matrix w = Matrix::Zero(1, 3);
        LogLinearModel m(w);
        Vector x(3);
        x << 1.0, -2.0, 0.5;
        CHECK(m.exact_partition(x) == 1.0);
    }
    SUBCASE("three states with scores 1, 2, 3") {
        Matrix w(3, 1);
        w << 0.0, std::log(2.0), std::log(3.0);
        LogLinearModel m(w);
        Vector x(1);
        x << 1.0;
        CHECK(m.exact_partition(x) == doctest::Approx(6.0).epsilon(1e-12));
    }
}

TEST_CASE("exact partition matches the naive summation oracle") {
    Snapshot snap = generate_synthetic(100, 8, 3, 1.0, 17);
    for (Eigen::Index c = 0; c < snap.contexts.size(); ++c) {
        Vector x = snap.contexts.row(c);
        CHECK(snap.model.exact_partition(x) ==
              doctest::Approx(partition_oracle(snap.model.weights(), x)).epsilon(1e-10));
    }
}

TEST_CASE("log partition stays finite where the plain sum overflows") {
    Matrix w(2, 1);
    w << 800.0, 799.0;
    LogLinearModel m(w);
    Vector x(1);
    x << 1.0;
    double lz = m.log_partition(x);
    CHECK(std::isfinite(lz));
    CHECK(lz == doctest::Approx(800.0 + std::log1p(std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("model construction rejects bad weights") {
    CHECK_THROWS_AS(LogLinearModel(Matrix(0, 4)), dim_mismatch_error);
    Matrix w = Matrix::Zero(2, 2);
    w(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(LogLinearModel{w}, non_finite_score_error);
}

TEST_CASE("logit validates state index and context dimension") {
    LogLinearModel m(Matrix::Zero(3, 4));
    Vector x = Vector::Ones(4);
    CHECK_THROWS_AS(m.logit(3, x), dim_mismatch_error);
    CHECK_THROWS_AS(m.logit(-1, x), dim_mismatch_error);
    Vector bad = Vector::Ones(5);
    CHECK_THROWS_AS(m.logit(0, bad), dim_mismatch_error);
}

TEST_CASE("weights checksum is cached and invalidated by updates") {
    Matrix w = Matrix::Ones(4, 3);
    LogLinearModel a(w);
    LogLinearModel b(w);
    CHECK(a.weights_checksum() == b.weights_checksum());
    Vector x = Vector::Ones(3);
    std::uint64_t before = a.weights_checksum();
    a.update_row(2, 0.25, x);
    CHECK(a.weights_checksum() != before);
    CHECK(b.weights_checksum() == before);
}

TEST_CASE("context batch validation") {
    SUBCASE("all-zero row rejected") {
        Matrix c = Matrix::Ones(3, 2);
        c.row(1).setZero();
        CHECK_THROWS_AS(ContextBatch{c}, error);
    }
    SUBCASE("non-finite entry rejected") {
        Matrix c = Matrix::Ones(2, 2);
        c(0, 1) = std::nan("");
        CHECK_THROWS_AS(ContextBatch{c}, non_finite_score_error);
    }
    SUBCASE("row accessor returns the stored values") {
        Matrix c(2, 3);
        c << 1, 2, 3, 4, 5, 6;
        ContextBatch batch(c);
        Vector r = batch.row(1);
        CHECK(r(0) == 4.0);
        CHECK(r(2) == 6.0);
    }
}

TEST_CASE("labeled dataset validation") {
    Matrix c = Matrix::Ones(2, 2);
    CHECK_THROWS_AS(LabeledDataset(ContextBatch(c), {0, 5}, 3), dim_mismatch_error);
    CHECK_THROWS_AS(LabeledDataset(ContextBatch(c), {0, -1}, 3), dim_mismatch_error);
    CHECK_THROWS_AS(LabeledDataset(ContextBatch(c), {0}, 3), dim_mismatch_error);
    CHECK_NOTHROW(LabeledDataset(ContextBatch(c), {0, 2}, 3));
}

TEST_CASE("synthetic generation") {
    SUBCASE("zero scale is rejected") {
        CHECK_THROWS_AS(generate_synthetic(1, 1, 1, 0.0, 7), error);
    }
    SUBCASE("same arguments give bit-identical snapshots") {
        Snapshot a = generate_synthetic(100, 8, 10, 1.0, 42);
        Snapshot b = generate_synthetic(100, 8, 10, 1.0, 42);
        CHECK(same_matrix(a.model.weights(), b.model.weights()));
        CHECK(same_matrix(a.contexts.matrix(), b.contexts.matrix()));
        Snapshot c = generate_synthetic(100, 8, 10, 1.0, 43);
        CHECK_FALSE(same_matrix(a.model.weights(), c.model.weights()));
    }
    SUBCASE("entry mean is near zero") {
        Snapshot s = generate_synthetic(1000, 16, 1, 1.0, 3);
        double mean = s.model.weights().mean();
        double bound = 4.0 / std::sqrt(1000.0 * 16.0);
        CHECK(std::abs(mean) < bound);
    }
    SUBCASE("snapshot records its provenance") {
        Snapshot s = generate_synthetic(10, 2, 3, 0.5, 9);
        CHECK(s.meta.seed == 9);
        CHECK(s.meta.name == "synthetic");
    }
}

TEST_CASE("snapshot round-trip is bit-exact") {
    Snapshot s = generate_synthetic(40, 5, 7, 1.3, 88);
    std::string path = temp_path("roundtrip.zest");
    save_snapshot(s, path);
    Snapshot r = load_snapshot(path);
    CHECK(same_matrix(r.model.weights(), s.model.weights()));
    CHECK(same_matrix(r.contexts.matrix(), s.contexts.matrix()));
    CHECK(r.meta.name == s.meta.name);
    CHECK(r.meta.seed == s.meta.seed);
    CHECK(r.meta.params == s.meta.params);
    std::remove(path.c_str());
}

TEST_CASE("snapshot load failures are distinct") {
    std::string path = temp_path("bad.zest");

    SUBCASE("bad magic") {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOTZESTFILE and then some padding bytes to get past the header";
        out.close();
        CHECK_THROWS_AS(load_snapshot(path), snapshot_format_error);
    }
    SUBCASE("zero state count in the header") {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "ZEST1";
        std::uint64_t header[3] = {0, 4, 1};
        out.write(reinterpret_cast<const char*>(header), sizeof(header));
        out.close();
        CHECK_THROWS_AS(load_snapshot(path), dim_mismatch_error);
    }
    SUBCASE("truncated payload") {
        Snapshot s = generate_synthetic(40, 5, 7, 1.3, 88);
        save_snapshot(s, path);
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_snapshot(path), snapshot_truncated_error);
    }
    std::remove(path.c_str());
}

TEST_CASE("update_row applies the scaled context") {
    Matrix w = Matrix::Zero(2, 3);
    LogLinearModel m(w);
    Vector x(3);
    x << 1.0, 2.0, -1.0;
    m.update_row(1, 0.5, x);
    CHECK(m.weights()(1, 0) == 0.5);
    CHECK(m.weights()(1, 1) == 1.0);
    CHECK(m.weights()(1, 2) == -0.5);
    CHECK(m.weights()(0, 1) == 0.0);
    CHECK_THROWS_AS(m.update_row(0, std::nan(""), x), non_finite_score_error);
}
