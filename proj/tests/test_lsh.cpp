#include "zest/lsh.hpp"

#include <doctest.h>

#include <bit>
#include <cmath>
#include <vector>

using namespace zest;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    RngStream rng(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = rng.gaussian();
        }
    }
    return m;
}

Vector random_vector(Eigen::Index n, std::uint64_t seed) {
    RngStream rng(seed);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = rng.gaussian();
    }
    return v;
}

bool contains(const std::vector<std::uint32_t>& ids, std::uint32_t id) {
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

}  // namespace

TEST_CASE("lsh parameter validation") {
    CHECK_THROWS_AS(validate(LshParams{0, 4, 0}), error);
    CHECK_THROWS_AS(validate(LshParams{33, 4, 0}), error);
    CHECK_THROWS_AS(validate(LshParams{4, 0, 0}), error);
    CHECK_NOTHROW(validate(LshParams{1, 1, 0}));
    CHECK_NOTHROW(validate(LshParams{32, 64, 0}));
}

TEST_CASE("projection matrix is deterministic in its seed") {
    LshParams params{3, 5, 77};
    ProjectionMatrix a(4, params);
    ProjectionMatrix b(4, params);
    CHECK((a.entries().array() == b.entries().array()).all());
    params.seed = 78;
    ProjectionMatrix c(4, params);
    CHECK_FALSE((a.entries().array() == c.entries().array()).all());
    CHECK(a.entries().rows() == 4);
    CHECK(a.entries().cols() == 15);
}

TEST_CASE("data transform") {
    SUBCASE("row at max norm gets a zero padding component") {
        Vector theta(2);
        theta << 3.0, 4.0;
        Vector v = mips_transform_data(theta, 5.0);
        CHECK(v.size() == 3);
        CHECK(v(0) == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(v(1) == doctest::Approx(0.8).epsilon(1e-15));
        CHECK(v(2) == 0.0);
    }
    SUBCASE("zero row maps to the pole") {
        Vector v = mips_transform_data(Vector::Zero(3), 2.0);
        CHECK(v.head(3).norm() == 0.0);
        CHECK(v(3) == 1.0);
    }
    SUBCASE("output is always unit norm") {
        for (std::uint64_t s = 0; s < 20; ++s) {
            Vector theta = random_vector(6, 100 + s);
            Vector v = mips_transform_data(theta, theta.norm() * 1.5);
            CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("row longer than max_norm is rejected") {
        Vector theta(2);
        theta << 3.0, 4.0;
        CHECK_THROWS_AS(mips_transform_data(theta, 4.0), error);
    }
}

TEST_CASE("query transform") {
    SUBCASE("unit query passes through with zero padding") {
        Vector x(2);
        x << 1.0, 0.0;
        Vector q = mips_transform_query(x);
        CHECK(q(0) == 1.0);
        CHECK(q(1) == 0.0);
        CHECK(q(2) == 0.0);
    }
    SUBCASE("transformed inner product reduces to normalized similarity") {
        for (std::uint64_t s = 0; s < 20; ++s) {
            Vector theta = random_vector(5, 200 + s);
            Vector x = random_vector(5, 300 + s);
            double max_norm = theta.norm() * 1.7;
            double got = mips_transform_data(theta, max_norm).dot(mips_transform_query(x));
            double want = theta.dot(x) / (max_norm * x.norm());
            CHECK(got == doctest::Approx(want).epsilon(1e-12));
        }
    }
    SUBCASE("zero query is rejected") {
        CHECK_THROWS_AS(mips_transform_query(Vector::Zero(4)), error);
    }
}

TEST_CASE("fingerprints are deterministic and scale-invariant") {
    LshParams params{8, 4, 5};
    ProjectionMatrix proj(6, params);
    Vector v = random_vector(6, 9);
    auto a = fingerprint(v, proj, params);
    auto b = fingerprint(v, proj, params);
    CHECK(a == b);
    CHECK(a.size() == 4);
    Vector scaled = 3.7 * v;
    CHECK(fingerprint(scaled, proj, params) == a);
    Vector tiny = 1e-9 * v;
    CHECK(fingerprint(tiny, proj, params) == a);
}

TEST_CASE("bit agreement rate estimates the angle") {
    // 100k independent sign-projection bits in one projection matrix
    LshParams params{25, 4000, 424242};
    Vector v = random_vector(6, 51);
    Vector w = random_vector(6, 52);
    ProjectionMatrix proj(6, params);
    auto kv = fingerprint(v, proj, params);
    auto kw = fingerprint(w, proj, params);
    std::int64_t matches = 0;
    for (std::size_t t = 0; t < kv.size(); ++t) {
        matches += params.k_bits - std::popcount(kv[t] ^ kw[t]);
    }
    double total = static_cast<double>(params.k_bits) * params.n_tables;
    double angle = std::acos(v.dot(w) / (v.norm() * w.norm()));
    CHECK(std::abs(static_cast<double>(matches) / total - (1.0 - angle / M_PI)) < 0.01);
}

TEST_CASE("collision probability closed forms") {
    Vector x = random_vector(5, 60);
    SUBCASE("aligned at max norm") {
        Vector theta = 2.0 * x;
        CHECK(collision_probability(theta, x, theta.norm()) == doctest::Approx(1.0));
    }
    SUBCASE("orthogonal direction") {
        Vector theta(2), xx(2);
        theta << 1.0, 0.0;
        xx << 0.0, 2.0;
        CHECK(collision_probability(theta, xx, 3.0) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("opposite at max norm") {
        Vector theta = -0.5 * x;
        CHECK(collision_probability(theta, x, theta.norm()) == doctest::Approx(0.0));
    }
    SUBCASE("monotone in the inner product") {
        double prev = -1.0;
        for (double c = -1.0; c <= 1.0; c += 0.125) {
            Vector theta(2), xx(2);
            double angle = std::acos(c);
            theta << std::cos(angle), std::sin(angle);
            xx << 1.0, 0.0;
            double p = collision_probability(theta, xx, 1.0);
            CHECK(p > prev);
            prev = p;
        }
    }
}

TEST_CASE("retrieval probability closed forms") {
    CHECK(retrieval_probability(1.0, 3, 7) == 1.0);
    CHECK(retrieval_probability(0.0, 3, 7) == 0.0);
    CHECK(retrieval_probability(0.5, 2, 3) == doctest::Approx(0.578125).epsilon(1e-12));
    CHECK_THROWS_AS(retrieval_probability(-0.1, 2, 3), error);
    CHECK_THROWS_AS(retrieval_probability(1.1, 2, 3), error);

    SUBCASE("strictly increasing in p") {
        double prev = 0.0;
        for (double p = 0.05; p < 1.0; p += 0.05) {
            double r = retrieval_probability(p, 4, 8);
            CHECK(r > prev);
            prev = r;
        }
    }
    SUBCASE("tiny p stays accurate") {
        // 1 - (1 - p^K)^L ~= L p^K when p^K is far below rounding
        double r = retrieval_probability(1e-4, 4, 16);
        CHECK(r == doctest::Approx(16.0 * 1e-16).epsilon(1e-6));
    }
}

TEST_CASE("table build structure") {
    SUBCASE("single state occupies one bucket per table") {
        LogLinearModel m(random_matrix(1, 4, 70));
        HashTableSet tables = build_tables(m, LshParams{5, 6, 3});
        for (int t = 0; t < 6; ++t) {
            REQUIRE(tables.table(t).size() == 1);
            const auto& ids = tables.table(t).begin()->second;
            REQUIRE(ids.size() == 1);
            CHECK(ids[0] == 0);
        }
    }
    SUBCASE("every state is stored once per table") {
        LogLinearModel m(random_matrix(37, 4, 71));
        HashTableSet tables = build_tables(m, LshParams{3, 5, 4});
        CHECK(tables.stored_ids() == 37u * 5u);
    }
    SUBCASE("identical rows share buckets") {
        Matrix w = random_matrix(2, 4, 72);
        w.row(1) = w.row(0);
        LogLinearModel m(w);
        HashTableSet tables = build_tables(m, LshParams{1, 1, 5});
        REQUIRE(tables.table(0).size() == 1);
        CHECK(tables.table(0).begin()->second.size() == 2);
    }
    SUBCASE("tables remember the model checksum") {
        LogLinearModel m(random_matrix(5, 3, 73));
        HashTableSet tables = build_tables(m, LshParams{2, 2, 6});
        CHECK(tables.model_checksum() == m.weights_checksum());
        CHECK(tables.state_count() == 5);
        CHECK(tables.dim() == 3);
    }
}

TEST_CASE("query candidates") {
    SUBCASE("ids are sorted, distinct, and L buckets are probed") {
        LogLinearModel m(random_matrix(64, 6, 80));
        HashTableSet tables = build_tables(m, LshParams{2, 7, 8});
        Vector x = random_vector(6, 81);
        CandidateSet cand = tables.query_candidates(x);
        CHECK(cand.buckets_probed == 7);
        for (std::size_t i = 1; i < cand.ids.size(); ++i) {
            CHECK(cand.ids[i - 1] < cand.ids[i]);
        }
    }
    SUBCASE("a max-norm row aligned with the query is always retrieved") {
        Vector x = random_vector(4, 82);
        Matrix w = random_matrix(6, 4, 83) * 0.3;
        w.row(0) = 2.0 * x.transpose();  // the unique max-norm row, zero angle
        LogLinearModel m(w);
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            HashTableSet tables = build_tables(m, LshParams{6, 2, seed});
            CHECK(contains(tables.query_candidates(x).ids, 0));
        }
    }
    SUBCASE("duplicated rows are retrieved together or not at all") {
        Matrix w = random_matrix(8, 4, 84);
        w.row(3) = w.row(5);
        LogLinearModel m(w);
        Vector x = random_vector(4, 85);
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            HashTableSet tables = build_tables(m, LshParams{4, 3, seed});
            CandidateSet cand = tables.query_candidates(x);
            CHECK(contains(cand.ids, 3) == contains(cand.ids, 5));
        }
    }
    SUBCASE("query dimension is validated") {
        LogLinearModel m(random_matrix(4, 3, 86));
        HashTableSet tables = build_tables(m, LshParams{2, 2, 9});
        CHECK_THROWS_AS(tables.query_candidates(Vector::Ones(5)), dim_mismatch_error);
        CHECK_THROWS_AS(tables.query_candidates(Vector::Zero(3)), error);
    }
}

TEST_CASE("single-state inclusion rate follows the table count law") {
    // N = 1, K = 1: inclusion probability should approach 1 - (1 - p)^L
    LogLinearModel m(random_matrix(1, 5, 90));
    Vector x = random_vector(5, 91);
    double p = collision_probability(m.weights().row(0).transpose(), x,
                                     m.weights().row(0).norm());
    double want = retrieval_probability(p, 1, 8);
    int hits = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        HashTableSet tables = build_tables(m, LshParams{1, 8, 1000 + static_cast<std::uint64_t>(t)});
        if (!tables.query_candidates(x).ids.empty()) {
            ++hits;
        }
    }
    double rate = static_cast<double>(hits) / trials;
    CHECK(std::abs(rate - want) < 0.02);
}

TEST_CASE("per-state inclusion rates match the analytic retrieval probability") {
    const Eigen::Index n = 32;
    LogLinearModel m(random_matrix(n, 6, 95));
    Vector x = random_vector(6, 96);
    double max_norm = m.weights().rowwise().norm().maxCoeff();
    LshParams params{2, 4, 0};

    std::vector<double> want(static_cast<std::size_t>(n));
    for (Eigen::Index y = 0; y < n; ++y) {
        double p = collision_probability(m.weights().row(y).transpose(), x, max_norm);
        want[static_cast<std::size_t>(y)] = retrieval_probability(p, params.k_bits, params.n_tables);
    }

    const int trials = 10000;
    std::vector<int> hits(static_cast<std::size_t>(n), 0);
    for (int t = 0; t < trials; ++t) {
        params.seed = derive_seed(5150, static_cast<std::uint64_t>(t));
        HashTableSet tables = build_tables(m, params);
        for (std::uint32_t id : tables.query_candidates(x).ids) {
            ++hits[id];
        }
    }
    for (Eigen::Index y = 0; y < n; ++y) {
        double r = want[static_cast<std::size_t>(y)];
        double rate = static_cast<double>(hits[static_cast<std::size_t>(y)]) / trials;
        double se = std::sqrt(std::max(r * (1.0 - r), 1e-12) / trials);
        CHECK(std::abs(rate - r) <= 3.0 * se);
    }
}
