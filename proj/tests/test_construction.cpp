#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "causaltf/construction.hpp"
#include "causaltf/reduced_model.hpp"
#include "causaltf/sequence_gen.hpp"
#include "causaltf/theory.hpp"
#include "doctest.h"

using namespace causaltf;

namespace {

std::vector<int> random_tokens(int S, int T, Rng& rng) {
    std::vector<int> t(T);
    for (auto& v : t) v = rng.next_below(S);
    return t;
}

}  // namespace

TEST_CASE("sparsity pattern of the single-parent construction") {
    auto g = CausalGraph::icl(8);
    const int S = 3, T = 8, d = S + T;
    auto p = build_single_parent(g, S, {7.0, 9.0});

    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            double expect = 0.0;
            if (a >= S && b >= S) {
                int i = a - S + 1, j = b - S + 1;
                if (!g.is_root(i) && g.parent(i) == j) expect = 7.0;
            }
            CHECK(p.layers[0][0](a, b) == expect);
        }
    for (int a = 0; a < 2 * d; ++a)
        for (int b = 0; b < 2 * d; ++b) {
            double expect = (a < S && b >= d && b - d == a) ? 9.0 : 0.0;
            CHECK(p.layers[1][0](a, b) == expect);
        }
    for (int o = 0; o < S; ++o)
        for (int c = 0; c < 4 * d; ++c) CHECK(p.WO(o, c) == ((c == 2 * d + o) ? 1.0 : 0.0));
}

TEST_CASE("route equivalence with the reduced model") {
    Rng rng(1);
    auto g = CausalGraph::random(9, 0.4, rng);
    const int S = 3;
    auto built = build_single_parent(g, S, {3.0, 2.0});

    ReducedParams reduced = ReducedParams::zeros(S, 9);
    for (int i = 1; i <= 9; ++i)
        if (!g.is_root(i)) reduced.A1(i - 1, g.parent(i) - 1) = 3.0;
    for (int s = 0; s < S; ++s) reduced.A2(s, s) = 2.0;

    for (int n = 0; n < 100; ++n) {
        auto tokens = random_tokens(S, 9, rng);
        Matrix out = disentangled_forward(built, tokens);
        auto red = reduced_forward(reduced, tokens);
        for (int s = 0; s < S; ++s) CHECK(std::abs(out(8, s) - red.f[s]) <= 1e-12);
    }
}

TEST_CASE("hard construction reproduces the empirical transition") {
    Rng rng(2);
    auto g = CausalGraph::chain(24);
    auto pi = sample_kernel({3, 2.0}, rng);
    auto p = build_single_parent(g, 3, {50.0, 50.0});
    int checked = 0;
    for (int n = 0; n < 60 && checked < 25; ++n) {
        auto smp = generate(g, pi, rng);
        if (smp.tokens[0] == smp.tokens.back()) continue;
        auto hat = empirical_transition(smp.tokens, g, 3);
        int q = smp.tokens.back();
        if (!hat.defined[q]) continue;
        Matrix out = disentangled_forward(p, smp.tokens);
        for (int s = 0; s < 3; ++s) CHECK(std::abs(out(23, s) - hat.table(q, s)) <= 0.01);
        ++checked;
    }
    CHECK(checked >= 25);
}

TEST_CASE("beta2 = 0 mixes the tokens uniformly") {
    Rng rng(3);
    auto g = CausalGraph::chain(7);
    const int S = 2, T = 7;
    auto p = build_single_parent(g, S, {4.0, 0.0});
    auto tokens = random_tokens(S, T, rng);
    Matrix out = disentangled_forward(p, tokens);

    // uniform second attention: the read-out block is (1/T) sum_i e_{s_i}
    auto mu = empirical_freq(tokens, S);
    for (int s = 0; s < S; ++s) CHECK(out(T - 1, s) == doctest::Approx(mu[s]).epsilon(1e-12));
}

TEST_CASE("k = 1 multi-parent head reduces to the dual-role single-parent variant") {
    Rng rng(4);
    auto base = CausalGraph::chain(8);
    const int S = 3, T = 8, d = S + T;
    auto lifted = MultiParentGraph::single_parent_lift(base, T);
    auto multi = build_multi_parent(lifted, S, {50.0, 50.0});

    // Eq.11 layout with the extra dual-role row T attending to itself
    DisentangledParams variant = build_single_parent(base, S, {50.0, 50.0});
    variant.layers[0][0](S + T - 1, S + T - 1) = 50.0;

    for (int n = 0; n < 50; ++n) {
        auto tokens = random_tokens(S, T, rng);
        Matrix a = disentangled_forward(multi, tokens);
        Matrix b = disentangled_forward(variant, tokens);
        for (int s = 0; s < S; ++s) CHECK(std::abs(a(T - 1, s) - b(T - 1, s)) <= 1e-9);
    }
}

TEST_CASE("3-gram construction approximates the pair-conditional transition") {
    Rng rng(5);
    const int S = 2, T = 40;
    auto g = MultiParentGraph::ngram(T, 3);
    auto mk = sample_multi_kernel(S, 2, 1.0, rng);
    auto p = build_multi_parent(g, S, {50.0, 50.0});

    int checked = 0;
    for (int n = 0; n < 200 && checked < 40; ++n) {
        auto smp = generate_multi(g, mk, rng);
        const auto& pq = g.parents(T + 1);
        int q0 = smp.tokens[pq[0] - 1], q1 = smp.tokens[pq[1] - 1];
        if (q0 == q1 && smp.tokens[0] == q0) continue;  // root-row tie
        // reference with the dual-role row T counted as a match
        Vec ref(S, 0.0);
        int count = 0;
        for (int i = 3; i <= T; ++i) {
            bool match = i == T || (smp.tokens[i - 3] == q0 && smp.tokens[i - 2] == q1);
            if (match) {
                ref[smp.tokens[i - 1]] += 1.0;
                ++count;
            }
        }
        if (count < 3) continue;
        for (double& v : ref) v /= count;
        Matrix out = disentangled_forward(p, smp.tokens);
        for (int s = 0; s < S; ++s) CHECK(std::abs(out(T - 1, s) - ref[s]) <= 0.02);
        ++checked;
    }
    CHECK(checked >= 40);
}

TEST_CASE("second-layer attention concentrates on full parent matches") {
    Rng rng(6);
    const int S = 2, T = 30;
    auto g = MultiParentGraph::ngram(T, 3);
    auto mk = sample_multi_kernel(S, 2, 1.0, rng);
    auto p = build_multi_parent(g, S, {50.0, 50.0});

    int checked = 0;
    for (int n = 0; n < 50 && checked < 10; ++n) {
        auto smp = generate_multi(g, mk, rng);
        const auto& pq = g.parents(T + 1);
        int q0 = smp.tokens[pq[0] - 1], q1 = smp.tokens[pq[1] - 1];
        if (q0 == q1 && smp.tokens[0] == q0) continue;
        ForwardTrace trace;
        disentangled_forward(p, smp.tokens, &trace);
        const Matrix& pat = trace.patterns[1][0];
        double mass = 0.0;
        for (int i = 3; i <= T; ++i) {
            bool match = i == T || (smp.tokens[i - 3] == q0 && smp.tokens[i - 2] == q1);
            if (match) mass += pat(T - 1, i - 1);
        }
        CHECK(mass >= 1.0 - 1e-3);
        ++checked;
    }
    CHECK(checked >= 10);
}

TEST_CASE("brute-force check on the fully enumerable 3-gram case") {
    // S=2, k=2, T=8: walk every sequence, compare against the counting oracle
    const int S = 2, T = 8;
    auto g = MultiParentGraph::ngram(T, 3);
    auto p = build_multi_parent(g, S, {50.0, 50.0});
    std::vector<int> tokens(T, 0);
    int compared = 0;
    while (true) {
        const auto& pq = g.parents(T + 1);
        int q0 = tokens[pq[0] - 1], q1 = tokens[pq[1] - 1];
        bool tie = (q0 == q1 && tokens[0] == q0);
        if (!tie) {
            Vec ref(S, 0.0);
            int count = 0;
            for (int i = 3; i <= T; ++i) {
                bool match = i == T || (tokens[i - 3] == q0 && tokens[i - 2] == q1);
                if (match) {
                    ref[tokens[i - 1]] += 1.0;
                    ++count;
                }
            }
            for (double& v : ref) v /= count;
            Matrix out = disentangled_forward(p, tokens);
            for (int s = 0; s < S; ++s) CHECK(std::abs(out(T - 1, s) - ref[s]) <= 0.02);
            ++compared;
        }
        int pos = T - 1;
        while (pos >= 0 && ++tokens[pos] == S) tokens[pos--] = 0;
        if (pos < 0) break;
    }
    CHECK(compared > 128);
}

TEST_CASE("fidelity report: errors shrink as beta grows") {
    Rng rng(7);
    auto g = CausalGraph::chain(32);
    auto pi = sample_kernel({3, 1.0}, rng);
    Vec betas{1.0, 5.0, 20.0, 50.0};
    auto rep = fidelity_report(g, pi, 200, betas, rng);
    REQUIRE(rep.rows.size() == 4);
    for (size_t b = 1; b < rep.rows.size(); ++b) CHECK(rep.rows[b].mean_err <= rep.rows[b - 1].mean_err + 1e-9);
    CHECK(rep.rows[3].mean_err <= 0.01);
    CHECK(rep.rows[0].n_defined > 50);
    auto csv = rep.to_csv();
    CHECK(csv.rfind("beta,mean_err,max_err,n_defined", 0) == 0);

    // at beta = 0 attention ignores the graph: the second layer averages rows
    auto p0 = build_single_parent(g, 3, {0.0, 0.0});
    auto tokens = random_tokens(3, 32, rng);
    ForwardTrace trace;
    disentangled_forward(p0, tokens, &trace);
    for (int j = 0; j < 32; ++j) CHECK(trace.patterns[1][0](31, j) == doctest::Approx(1.0 / 32).epsilon(1e-12));
}

TEST_CASE("multi-parent fidelity report") {
    Rng rng(8);
    const int S = 2, T = 24;
    auto g = MultiParentGraph::ngram(T, 3);
    auto mk = sample_multi_kernel(S, 2, 1.0, rng);
    Vec betas{5.0, 50.0};
    auto rep = fidelity_report_multi(g, mk, 200, betas, rng);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[1].mean_err <= rep.rows[0].mean_err + 1e-9);
    CHECK(rep.rows[1].mean_err <= 0.02);
    CHECK(rep.rows[1].n_defined > 20);
}
