#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "causaltf/reduced_model.hpp"
#include "causaltf/theory.hpp"
#include "doctest.h"

using namespace causaltf;

namespace {

ReducedParams random_theta(int S, int T, Rng& rng, double scale = 1.0) {
    ReducedParams p = ReducedParams::zeros(S, T);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j <= i; ++j) p.A1(i, j) = scale * rng.normal();
    for (auto& v : p.A2.data) v = scale * rng.normal();
    return p;
}

ReducedParams construction_theta(const CausalGraph& g, int S, double beta1, double beta2) {
    ReducedParams p = ReducedParams::zeros(S, g.length());
    for (int i = 1; i <= g.length(); ++i)
        if (!g.is_root(i)) p.A1(i - 1, g.parent(i) - 1) = beta1;
    for (int s = 0; s < S; ++s) p.A2(s, s) = beta2;
    return p;
}

double rel_err(const Matrix& a, const Matrix& b) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        num += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
        den += b.data[i] * b.data[i];
    }
    return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST_CASE("theta = 0 predicts the empirical token frequency") {
    Rng rng(1);
    ReducedParams p = ReducedParams::zeros(3, 7);
    std::vector<int> tokens{0, 1, 2, 1, 1, 0, 2};
    auto out = reduced_forward(p, tokens);
    auto mu = empirical_freq(tokens, 3);
    for (int s = 0; s < 3; ++s) CHECK(out.f[s] == doctest::Approx(mu[s]).epsilon(1e-14));
}

TEST_CASE("large-beta construction estimates the in-context transition") {
    Rng rng(2);
    auto g = CausalGraph::chain(40);
    auto pi = sample_kernel({3, 2.0}, rng);
    ReducedParams p = construction_theta(g, 3, 50.0, 50.0);
    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto smp = generate(g, pi, rng);
        if (smp.tokens[0] == smp.tokens.back()) continue;  // spurious root match
        auto hat = empirical_transition(smp.tokens, g, 3);
        if (!hat.defined[smp.tokens.back()]) continue;
        auto out = reduced_forward(p, smp.tokens);
        for (int s = 0; s < 3; ++s)
            CHECK(std::abs(out.f[s] - hat.table(smp.tokens.back(), s)) < 0.01);
        ++checked;
    }
    CHECK(checked > 20);
}

TEST_CASE("outputs are convex combinations for random theta") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        ReducedParams p = random_theta(4, 6, rng);
        std::vector<int> tokens(6);
        for (auto& t : tokens) t = rng.next_below(4);
        auto out = reduced_forward(p, tokens);
        double sum = 0.0;
        for (double v : out.f) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

        auto cond = reduced_forward_conditioned(p, tokens, 2);
        sum = 0.0;
        for (double v : cond.f) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("population gradients match finite differences of the exact loss") {
    Rng rng(4);
    auto g = CausalGraph::chain(4);
    KernelPrior prior(symmetric_two_kernel_prior(0.8));
    EstimatorConfig est;
    est.exact_sequences = true;
    const double eps = 0.25;

    for (int trial = 0; trial < 10; ++trial) {
        ReducedParams p = random_theta(2, 4, rng, 0.8);
        Rng dummy(0);
        EvalResult ev = population_eval(p, g, prior, est, eps, dummy, true);

        const double h = 1e-5;
        Matrix fd1(4, 4), fd2(2, 2);
        auto loss_at = [&](ReducedParams& q) {
            Rng d2(0);
            return population_eval(q, g, prior, est, eps, d2, false).loss;
        };
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j <= i; ++j) {
                double keep = p.A1(i, j);
                p.A1(i, j) = keep + h;
                double up = loss_at(p);
                p.A1(i, j) = keep - h;
                double dn = loss_at(p);
                p.A1(i, j) = keep;
                fd1(i, j) = (up - dn) / (2 * h);
            }
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                double keep = p.A2(a, b);
                p.A2(a, b) = keep + h;
                double up = loss_at(p);
                p.A2(a, b) = keep - h;
                double dn = loss_at(p);
                p.A2(a, b) = keep;
                fd2(a, b) = (up - dn) / (2 * h);
            }
        CHECK(rel_err(ev.G1, fd1) <= 1e-6);
        CHECK(rel_err(ev.G2, fd2) <= 1e-6);
    }
}

TEST_CASE("exact enumeration agrees with the Monte Carlo estimator") {
    Rng rng(5);
    auto g = CausalGraph::chain(4);
    KernelPrior prior(symmetric_two_kernel_prior(0.75));
    ReducedParams p = random_theta(2, 4, rng, 0.5);

    EstimatorConfig exact;
    exact.exact_sequences = true;
    Rng d(0);
    double l_exact = population_eval(p, g, prior, exact, 0.25, d, false).loss;

    EstimatorConfig mc;
    mc.exact_sequences = false;
    mc.n_sequences = 200000;
    Rng mcr(77);
    double l_mc = population_eval(p, g, prior, mc, 0.25, mcr, false).loss;
    // per-sequence loss values stay within ~[0, 2 log(1/eps)]; 3 SE band
    CHECK(std::abs(l_exact - l_mc) < 3.0 * 1.0 / std::sqrt(2.0 * 200000));
}

TEST_CASE("uniform kernel prior has optimal loss log S") {
    FinitePrior f;
    f.kernels.push_back(TransitionKernel::from_rows(Matrix(3, 3, 1.0 / 3)));
    f.weights = {1.0};
    Rng rng(6);
    auto ol = optimal_loss(KernelPrior(f), 1e-6, 1, rng);
    CHECK(ol.l_star == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(ol.l_star_eps <= ol.l_star);
}

TEST_CASE("loss gap against the eps floor is nonnegative") {
    Rng rng(7);
    auto g = CausalGraph::chain(4);
    KernelPrior prior(symmetric_two_kernel_prior(0.8));
    EstimatorConfig est;
    est.exact_sequences = true;
    Rng d(0);
    auto ol = optimal_loss(prior, 0.25, 1, d);
    for (int trial = 0; trial < 20; ++trial) {
        ReducedParams p = random_theta(2, 4, rng, 1.5);
        CHECK(population_eval(p, g, prior, est, 0.25, d, false).loss >= ol.l_star_eps - 1e-12);
    }
}

TEST_CASE("construction loss gap shrinks with T under a point-mass prior") {
    FinitePrior f;
    Matrix r(2, 2);
    r(0, 0) = 0.7; r(0, 1) = 0.3; r(1, 0) = 0.3; r(1, 1) = 0.7;
    f.kernels.push_back(TransitionKernel::from_rows(std::move(r)));
    f.weights = {1.0};
    KernelPrior prior{f};
    Rng d(0);
    auto ol = optimal_loss(prior, 1e-9, 1, d);

    std::vector<double> gaps;
    for (int T : {10, 20, 40}) {
        auto g = CausalGraph::chain(T);
        ReducedParams p = construction_theta(g, 2, 50.0, 50.0);
        EstimatorConfig est;
        est.exact_sequences = false;
        est.n_sequences = 20000;
        Rng mcr(99);
        gaps.push_back(population_eval(p, g, prior, est, 1e-9, mcr, false).loss - ol.l_star);
    }
    CHECK(gaps[0] > gaps[1]);
    CHECK(gaps[1] > gaps[2]);
    CHECK(gaps[2] < 0.05);
}

TEST_CASE("permutation-symmetrized exact gradient has the symmetric structure") {
    Rng rng(8);
    const int S = 3, T = 4;
    auto g = CausalGraph::chain(T);
    auto base = sample_kernel({S, 1.0}, rng);

    ReducedParams p = ReducedParams::zeros(S, T);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j <= i; ++j) p.A1(i, j) = rng.normal();
    for (int a = 0; a < S; ++a)
        for (int b = 0; b < S; ++b) p.A2(a, b) = (a == b ? 0.4 : 0.0) + 0.1;  // aI + b 11^T

    EstimatorConfig est;
    est.exact_sequences = true;
    FinitePrior closure = permutation_closure({base}, {1.0});
    Matrix avg(S, S);
    for (const auto& k : closure.kernels) {
        FinitePrior point;
        point.kernels.push_back(k);
        point.weights = {1.0};
        Rng d(0);
        avg = avg + population_eval(p, g, KernelPrior(point), est, 0.2, d, true).G2;
    }
    for (double& v : avg.data) v /= closure.kernels.size();

    for (int a = 1; a < S; ++a) CHECK(avg(a, a) == doctest::Approx(avg(0, 0)).epsilon(1e-12));
    for (int a = 0; a < S; ++a)
        for (int b = 0; b < S; ++b)
            if (a != b) CHECK(avg(a, b) == doctest::Approx(avg(0, 1)).epsilon(1e-12));
}

TEST_CASE("correct-edge advantage grows monotonically during stage 1") {
    auto g = CausalGraph::chain(4);
    KernelPrior prior(symmetric_two_kernel_prior(0.8));
    EstimatorConfig est;
    est.exact_sequences = true;
    const double eps = 0.5;
    const double beta0 = 0.02;

    ReducedParams p = ReducedParams::stage_init(2, 4, beta0);
    Rng d(0);
    std::vector<double> adv_prev(5, -1e9);
    for (int t = 0; t < 30; ++t) {
        EvalResult ev = population_eval(p, g, prior, est, eps, d, true);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j <= i; ++j) p.A1(i, j) -= 2000.0 * ev.G1(i, j);
        for (int i = 2; i <= 3; ++i) {  // non-root positions of chain(4): 2, 3
            double best_other = -1e300;
            for (int j = 1; j <= i; ++j)
                if (j != g.parent(i)) best_other = std::max(best_other, p.A1(i - 1, j - 1));
            double adv = p.A1(i - 1, g.parent(i) - 1) - best_other;
            CHECK(adv >= adv_prev[i] - 1e-12);
            adv_prev[i] = adv;
        }
    }
    CHECK(adv_prev[2] > 0.0);
    CHECK(adv_prev[3] > 0.0);
}

TEST_CASE("finite-sample loss and gradients") {
    Rng rng(9);
    auto g = CausalGraph::chain(6);
    auto pi = sample_kernel({2, 1.0}, rng);
    std::vector<SequenceSample> data;
    for (int n = 0; n < 5; ++n) data.push_back(generate(g, pi, rng));

    ReducedParams p = random_theta(2, 6, rng, 0.7);
    const double eps = 0.2;

    // dataset average equals the average of single-sequence closed forms
    EvalResult full = finite_sample_eval(p, data, eps, true);
    Matrix g1(6, 6), g2(2, 2);
    double loss = 0.0;
    for (const auto& smp : data) {
        std::vector<SequenceSample> one{smp};
        EvalResult e1 = finite_sample_eval(p, one, eps, true);
        loss += e1.loss / data.size();
        g1 = g1 + (1.0 / data.size()) * e1.G1;
        g2 = g2 + (1.0 / data.size()) * e1.G2;
    }
    CHECK(full.loss == doctest::Approx(loss).epsilon(1e-12));
    CHECK(max_abs_diff(full.G1, g1) <= 1e-14);
    CHECK(max_abs_diff(full.G2, g2) <= 1e-14);

    // finite differences of the finite-sample loss
    const double h = 1e-5;
    Matrix fd1(6, 6), fd2(2, 2);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j <= i; ++j) {
            double keep = p.A1(i, j);
            p.A1(i, j) = keep + h;
            double up = finite_sample_loss(p, data, eps);
            p.A1(i, j) = keep - h;
            double dn = finite_sample_loss(p, data, eps);
            p.A1(i, j) = keep;
            fd1(i, j) = (up - dn) / (2 * h);
        }
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            double keep = p.A2(a, b);
            p.A2(a, b) = keep + h;
            double up = finite_sample_loss(p, data, eps);
            p.A2(a, b) = keep - h;
            double dn = finite_sample_loss(p, data, eps);
            p.A2(a, b) = keep;
            fd2(a, b) = (up - dn) / (2 * h);
        }
    CHECK(rel_err(full.G1, fd1) <= 1e-8);
    CHECK(rel_err(full.G2, fd2) <= 1e-8);

    CHECK_THROWS(finite_sample_eval(p, {}, eps, false));
}

TEST_CASE("finite-sample loss concentrates like 1/sqrt(N)") {
    Rng rng(10);
    const int S = 2, T = 6;
    auto g = CausalGraph::chain(T);
    FinitePrior f;
    Matrix r(2, 2);
    r(0, 0) = 0.8; r(0, 1) = 0.2; r(1, 0) = 0.2; r(1, 1) = 0.8;
    f.kernels.push_back(TransitionKernel::from_rows(std::move(r)));
    f.weights = {1.0};
    KernelPrior prior{f};
    const double eps = 0.3;

    ReducedParams p = random_theta(S, T, rng, 0.5);
    EstimatorConfig est;
    est.exact_sequences = true;
    Rng d(0);
    double l_pop = population_eval(p, g, prior, est, eps, d, false).loss;

    std::vector<double> mean_abs;
    for (int N : {100, 1000, 10000}) {
        double acc = 0.0;
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<SequenceSample> data;
            data.reserve(N);
            for (int n = 0; n < N; ++n) data.push_back(generate(g, f.kernels[0], rng));
            acc += std::abs(finite_sample_loss(p, data, eps) - l_pop);
        }
        mean_abs.push_back(acc / 20);
    }
    double slope = std::log(mean_abs[2] / mean_abs[0]) / std::log(100.0);
    CHECK(slope < -0.3);
    CHECK(slope > -0.75);
}

TEST_CASE("stage-wise training on a small chain") {
    auto g = CausalGraph::chain(6);
    KernelPrior prior(symmetric_two_kernel_prior(0.8));
    TrainConfig cfg = TrainConfig::defaults(g, 2);
    cfg.est.exact_sequences = true;
    cfg.tau1 = 400;
    cfg.tau2 = 400;

    Rng rng(11);
    auto [theta, traj] = train_algorithm1(g, prior, cfg, rng);

    double min_edge = 1.0;
    Matrix sa = masked_row_softmax(theta.A1);
    for (int i = 1; i <= 6; ++i)
        if (!g.is_root(i)) min_edge = std::min(min_edge, sa(i - 1, g.parent(i) - 1));
    CHECK(min_edge >= 0.8);

    // beta never decreases during stage 2 (exact gradients here)
    double prev = -1e9;
    for (const auto& rec : traj.records) {
        if (rec.stage != 2) continue;
        CHECK(rec.beta >= prev - 1e-12);
        prev = rec.beta;
    }
    CHECK(prev > 0.0);

    auto csv = traj.to_csv();
    CHECK(csv.rfind("step,stage,loss,loss_gap,beta,avg_attn,min_edge_softmax", 0) == 0);

    // determinism: same seed, same trajectory
    Rng rng2(11);
    auto [theta2, traj2] = train_algorithm1(g, prior, cfg, rng2);
    CHECK(max_abs_diff(theta.A1, theta2.A1) == 0.0);
    CHECK(traj2.to_csv() == csv);
}
