#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "causaltf/markov.hpp"
#include "doctest.h"

using namespace causaltf;

namespace {

TransitionKernel kernel_2x2(double stay) {
    Matrix r(2, 2);
    r(0, 0) = stay;
    r(0, 1) = 1 - stay;
    r(1, 0) = 1 - stay;
    r(1, 1) = stay;
    return TransitionKernel::from_rows(std::move(r));
}

TransitionKernel uniform_kernel(int S) {
    Matrix r(S, S, 1.0 / S);
    return TransitionKernel::from_rows(std::move(r));
}

}  // namespace

TEST_CASE("dirichlet sampling produces valid kernels and is deterministic") {
    Rng a(42), b(42);
    auto k1 = sample_kernel({10, 0.1}, a);
    auto k2 = sample_kernel({10, 0.1}, b);
    CHECK(k1.rows.data == k2.rows.data);
    for (int s = 0; s < 10; ++s) {
        double sum = 0.0;
        for (int t = 0; t < 10; ++t) {
            CHECK(k1.rows(s, t) >= 0.0);
            sum += k1.rows(s, t);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("dirichlet concentration: alpha = 1e4 rows hug the uniform") {
    // sample-mean 1/2, std ~ 1/sqrt(8 alpha) ~ 0.0035; 0.2 is a >50 sigma band
    Rng rng(7);
    for (int n = 0; n < 100; ++n) {
        auto k = sample_kernel({2, 1e4}, rng);
        for (double v : k.rows.data) CHECK(std::abs(v - 0.5) < 0.2);
    }
}

TEST_CASE("stationary measure fixed point and symmetric cases") {
    auto uni = uniform_kernel(4);
    for (double v : uni.stationary) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    // doubly stochastic -> uniform
    Matrix r(3, 3);
    r(0, 0) = 0.5; r(0, 1) = 0.3; r(0, 2) = 0.2;
    r(1, 0) = 0.2; r(1, 1) = 0.5; r(1, 2) = 0.3;
    r(2, 0) = 0.3; r(2, 1) = 0.2; r(2, 2) = 0.5;
    auto ds = TransitionKernel::from_rows(std::move(r));
    for (double v : ds.stationary) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-10));

    // hand 2x2 eigenproblem: mu = (b, a)/(a+b) for off-diagonals a = b = 0.2
    auto k = kernel_2x2(0.8);
    CHECK(k.stationary[0] == doctest::Approx(0.5).epsilon(1e-10));

    Rng rng(3);
    for (int n = 0; n < 200; ++n) {
        auto kk = sample_kernel({5, 1.0}, rng);
        for (int t = 0; t < 5; ++t) {
            double v = 0.0;
            for (int s = 0; s < 5; ++s) v += kk.stationary[s] * kk.rows(s, t);
            CHECK(v == doctest::Approx(kk.stationary[t]).epsilon(1e-10));
        }
    }
}

TEST_CASE("b_matrix values and identities") {
    CHECK(max_abs(b_matrix(uniform_kernel(3))) == 0.0);

    auto k = kernel_2x2(0.8);
    // direct evaluation: sum mu(s) pi(s'|s)^2 / mu(s') - 1 = 0.36
    CHECK(frobenius_norm_sq(b_matrix(k)) == doctest::Approx(0.36).epsilon(1e-12));

    Rng rng(11);
    for (int n = 0; n < 100; ++n) {
        auto kk = sample_kernel({4, 0.7}, rng);
        double direct = 0.0;
        for (int s = 0; s < 4; ++s)
            for (int t = 0; t < 4; ++t)
                direct += kk.stationary[s] * kk.rows(s, t) * kk.rows(s, t) / kk.stationary[t];
        CHECK(frobenius_norm_sq(b_matrix(kk)) == doctest::Approx(direct - 1.0).epsilon(1e-10));
    }
}

TEST_CASE("spectral gap") {
    CHECK(spectral_gap(uniform_kernel(5)) == doctest::Approx(1.0));
    // 2x2 singular value by hand: B = 0.3 [[1,-1],[-1,1]], ||B||_2 = 0.6
    CHECK(spectral_gap(kernel_2x2(0.8)) == doctest::Approx(0.4).epsilon(1e-9));

    Rng rng(5);
    for (int n = 0; n < 100; ++n) {
        auto k = sample_kernel({3, 1.0}, rng);
        double gamma = 3.0 * k.min_entry();
        CHECK(1.0 - spectral_gap(k) <= 1.0 - gamma / 3.0 + 1e-9);  // lambda <= 1 - gamma/S
    }
}

TEST_CASE("contraction coefficient") {
    Matrix same(3, 3);
    for (int s = 0; s < 3; ++s) {
        same(s, 0) = 0.2;
        same(s, 1) = 0.3;
        same(s, 2) = 0.5;
    }
    CHECK(contraction_coefficient(TransitionKernel::from_rows(std::move(same))) == doctest::Approx(0.0));

    CHECK(contraction_coefficient(kernel_2x2(0.8)) == doctest::Approx(0.6).epsilon(1e-12));

    // permutation-like rows with entries {1-d, d}
    double d = 0.1;
    CHECK(contraction_coefficient(kernel_2x2(1 - d)) == doctest::Approx(1 - 2 * d).epsilon(1e-12));
}

TEST_CASE("chi2 divergence and mutual information") {
    Vec p{0.2, 0.3, 0.5};
    CHECK(chi2_divergence(p, p) == doctest::Approx(0.0));

    Vec q{0.5, 0.5, 0.0};
    CHECK(std::isinf(chi2_divergence(p, q)));

    // independent joint has zero MI
    Matrix joint(2, 2);
    joint(0, 0) = 0.18; joint(0, 1) = 0.42;
    joint(1, 0) = 0.12; joint(1, 1) = 0.28;
    CHECK(chi2_mutual_info(joint) == doctest::Approx(0.0).epsilon(1e-14));

    // joint mu(s) pi(s'|s) for the 0.8-kernel: I = ||B||_F^2 = 0.36
    auto k = kernel_2x2(0.8);
    Matrix j2(2, 2);
    for (int s = 0; s < 2; ++s)
        for (int t = 0; t < 2; ++t) j2(s, t) = k.stationary[s] * k.rows(s, t);
    CHECK(chi2_mutual_info(j2) == doctest::Approx(0.36).epsilon(1e-12));
}

TEST_CASE("assumption certificate") {
    Rng rng(13);
    std::vector<TransitionKernel> small, large;
    for (int n = 0; n < 50; ++n) small.push_back(sample_kernel({3, 1.0}, rng));
    for (int n = 0; n < 2000; ++n) large.push_back(sample_kernel({3, 1.0}, rng));
    auto cs = check_assumptions(small, 0.05);
    auto cl = check_assumptions(large, 0.05);
    CHECK(cl.mean_deviation < cs.mean_deviation);  // deviation shrinks with sample count
    CHECK(cl.mean_deviation < 0.02);

    // zero entry fails condition 1 for every gamma > 0
    Matrix ident(2, 2);
    ident(0, 0) = 1.0;
    ident(1, 0) = 0.5;
    ident(1, 1) = 0.5;
    std::vector<TransitionKernel> bad{TransitionKernel::from_rows(std::move(ident))};
    CHECK_FALSE(check_assumptions(bad, 1e-9).cond_transition_lower);

    // uniform kernel is a degenerate chain: condition 2 fails
    std::vector<TransitionKernel> uni{TransitionKernel::from_rows(Matrix(3, 3, 1.0 / 3))};
    CHECK_FALSE(check_assumptions(uni, 0.05).cond_nondegenerate);
}

TEST_CASE("kernel json round trip is exact") {
    Rng rng(99);
    auto k = sample_kernel({4, 0.5}, rng);
    auto k2 = TransitionKernel::from_json(k.to_json());
    CHECK(k.rows.data == k2.rows.data);
}

TEST_CASE("invalid kernels are rejected") {
    Matrix bad(2, 2);
    bad(0, 0) = 0.7;
    bad(0, 1) = 0.7;
    bad(1, 0) = 0.5;
    bad(1, 1) = 0.5;
    CHECK_THROWS(TransitionKernel::from_rows(std::move(bad)));
}
