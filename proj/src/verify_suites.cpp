#include "causaltf/verify_suites.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "causaltf/causal_graph.hpp"
#include "causaltf/markov.hpp"
#include "causaltf/matrix.hpp"
#include "causaltf/reduced_model.hpp"
#include "causaltf/rng.hpp"
#include "causaltf/sequence_gen.hpp"
#include "causaltf/theory.hpp"
#include "causaltf/transformer.hpp"

namespace causaltf {

namespace {

struct Checker {
    bool ok = true;
    std::ostringstream detail;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << "FAIL: " << what << "; ";
        }
    }
};

SuiteResult markov_suite(uint64_t seed) {
    Rng rng(seed);
    Checker c;
    double worst_fixed_point = 0.0, worst_orth = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        int S = 2 + rng.next_below(4);
        TransitionKernel k = sample_kernel({S, 1.0}, rng);
        for (int s = 0; s < S; ++s) {
            double sum = 0.0;
            for (int t = 0; t < S; ++t) sum += k.rows(s, t);
            c.expect(std::abs(sum - 1.0) <= 1e-12, "row sum");
        }
        // mu^T pi = mu^T
        for (int t = 0; t < S; ++t) {
            double v = 0.0;
            for (int s = 0; s < S; ++s) v += k.stationary[s] * k.rows(s, t);
            worst_fixed_point = std::max(worst_fixed_point, std::abs(v - k.stationary[t]));
        }
        Matrix B = b_matrix(k);
        for (int t = 0; t < S; ++t) {
            double v = 0.0;
            for (int s = 0; s < S; ++s) v += std::sqrt(k.stationary[s]) * B(s, t);
            worst_orth = std::max(worst_orth, std::abs(v));
        }
        // min entry >= gamma/S forces min_s mu(s) >= gamma/S (taking gamma = S min entry)
        double min_entry = k.min_entry();
        double min_mu = *std::min_element(k.stationary.begin(), k.stationary.end());
        c.expect(min_mu >= min_entry - 1e-10, "stationary lower bound");
        // non-degeneracy: ||B||_F^2 >= gamma^3/S^2 for the measured witness
        double gamma = gamma_witness(k);
        c.expect(frobenius_norm_sq(B) >= gamma * gamma * gamma / (S * S) - 1e-10, "B norm lower bound");
        // ||B||_F^2 identity
        double direct = 0.0;
        for (int s = 0; s < S; ++s)
            for (int t = 0; t < S; ++t) direct += k.stationary[s] * k.rows(s, t) * k.rows(s, t) / k.stationary[t];
        c.expect(std::abs(frobenius_norm_sq(B) - (direct - 1.0)) <= 1e-10, "B norm identity");
        // spectral gap vs min-entry bound
        c.expect(1.0 - spectral_gap(k) <= 1.0 - min_entry + 1e-8, "lambda <= 1 - gamma/S");
    }
    c.expect(worst_fixed_point <= 1e-10, "stationary fixed point tolerance");
    c.expect(worst_orth <= 1e-10, "sqrt(mu)^T B = 0");

    // contraction of chi^2 under the kernel (Cohen)
    for (int trial = 0; trial < 1000; ++trial) {
        int S = 2 + rng.next_below(4);
        TransitionKernel k = sample_kernel({S, 1.0}, rng);
        Vec p = rng.dirichlet(S, 1.0), q = rng.dirichlet(S, 1.0);
        Vec kp(S, 0.0), kq(S, 0.0);
        for (int t = 0; t < S; ++t)
            for (int s = 0; s < S; ++s) {
                kp[t] += k.rows(s, t) * p[s];
                kq[t] += k.rows(s, t) * q[s];
            }
        double lhs = chi2_divergence(kp, kq);
        double rhs = contraction_coefficient(k) * chi2_divergence(p, q);
        c.expect(lhs <= rhs + 1e-9, "chi2 contraction");
    }

    SuiteResult r{"markov", c.ok, c.detail.str()};
    if (r.pass) r.detail = "1000 kernels: stationarity, B identities, gap & contraction bounds";
    return r;
}

SuiteResult jacobian_suite(uint64_t seed) {
    Rng rng(seed);
    Checker c;
    for (int trial = 0; trial < 10000; ++trial) {
        int k = 2 + rng.next_below(15);
        Vec vraw(k), u(k), w(k);
        for (int i = 0; i < k; ++i) {
            vraw[i] = 4.0 * rng.next_double() - 2.0;
            u[i] = 2.0 * rng.next_double();
            w[i] = 2.0 * rng.next_double();
        }
        Vec sv = softmax(vraw);
        // ||J(S(v)) u||_1 <= 2 S(v)^T u
        Vec ju = softmax_jacobian_apply(sv, u);
        double l1 = 0.0;
        for (double x : ju) l1 += std::abs(x);
        double svu = dot(sv, u);
        c.expect(l1 <= 2.0 * svu + 1e-9, "J l1 bound");

        // ||grad_v [u^T J(S(v)) w]||_1 <= 2 S^T (u.w) + 4 S^T u S^T w
        Vec uw(k);
        for (int i = 0; i < k; ++i) uw[i] = u[i] * w[i];
        double svw = dot(sv, w);
        Vec grad = softmax_jacobian_apply(sv, uw);
        Vec jw = softmax_jacobian_apply(sv, w);
        for (int i = 0; i < k; ++i) grad[i] -= svw * ju[i] + svu * jw[i];
        double g1 = 0.0;
        for (double x : grad) g1 += std::abs(x);
        c.expect(g1 <= 2.0 * dot(sv, uw) + 4.0 * svu * svw + 1e-9, "grad-J l1 bound");
    }
    SuiteResult r{"jacobian", c.ok, c.detail.str()};
    if (r.pass) r.detail = "10^4 randomized softmax-Jacobian l1 bounds";
    return r;
}

SuiteResult teff_suite(uint64_t seed) {
    Rng rng(seed);
    Checker c;
    for (int trial = 0; trial < 100; ++trial) {
        int T = 5 + rng.next_below(40);
        CausalGraph g = CausalGraph::random(T, 0.5, rng);
        auto st = effective_length(g);
        // bound with the undirected leaf count (paths may exit through the
        // root, so the childless count alone under-counts distance spheres)
        int max_u =
            *std::max_element(st.undirected_leaves_per_tree.begin(), st.undirected_leaves_per_tree.end());
        for (double lambda : {0.1, 0.5, 0.9}) {
            double tl = effective_length_lambda(g, lambda);
            c.expect(tl >= (1.0 - lambda) * T / max_u - 1e-9, "T_eff(lambda) lower bound");
        }
        // forest bookkeeping
        int edges = 0;
        for (int i = 1; i <= T; ++i)
            if (!g.is_root(i)) ++edges;
        c.expect(edges == T - static_cast<int>(g.roots().size()), "edge count = T - |R|");
    }
    SuiteResult r{"teff", c.ok, c.detail.str()};
    if (r.pass) r.detail = "100 random graphs: T_eff(lambda) >= (1-l) T/maxleaves (undirected) + forest bookkeeping";
    return r;
}

// brute-force joint law of (s_j, s_i) by enumerating all sequences of the task
Matrix brute_force_joint(const CausalGraph& g, const TransitionKernel& pi, int i, int j) {
    const int T = g.length();
    const int S = pi.size;
    Matrix table(S, S);
    std::vector<int> seq(T, 0);
    while (true) {
        double w = 1.0 / S;  // position T uniform
        for (int pos = 1; pos < T; ++pos)
            w *= g.is_root(pos) ? pi.stationary[seq[pos - 1]] : pi.rows(seq[g.parent(pos) - 1], seq[pos - 1]);
        table(seq[j - 1], seq[i - 1]) += w;
        int pos = T - 1;
        while (pos >= 0 && ++seq[pos] == S) seq[pos--] = 0;
        if (pos < 0) break;
    }
    return table;
}

SuiteResult joint_suite(uint64_t seed) {
    Rng rng(seed);
    Checker c;
    for (int T = 3; T <= 5; ++T) {
        std::vector<CausalGraph> graphs{CausalGraph::chain(T), CausalGraph::random(T, 0.5, rng)};
        if (T % 2 == 0) graphs.push_back(CausalGraph::icl(T));
        for (const auto& g : graphs) {
            TransitionKernel pi = sample_kernel({2, 1.0}, rng);
            for (int i = 1; i <= T; ++i)
                for (int j = 1; j <= T; ++j) {
                    if (i == j) continue;
                    JointTable jt = joint_distribution(g, pi, i, j);
                    Matrix bf = brute_force_joint(g, pi, i, j);
                    c.expect(max_abs_diff(jt.table, bf) <= 1e-12, "joint vs enumeration");
                    // swap symmetry
                    JointTable swapped = joint_distribution(g, pi, j, i);
                    c.expect(max_abs_diff(jt.table, transpose(swapped.table)) <= 1e-14, "swap symmetry");
                    // marginals
                    double sum = 0.0;
                    for (double v : jt.table.data) sum += v;
                    c.expect(std::abs(sum - 1.0) <= 1e-12, "joint sums to 1");
                    for (int s = 0; s < pi.size; ++s) {
                        double row = 0.0, col = 0.0;
                        for (int t = 0; t < pi.size; ++t) {
                            row += jt.table(s, t);
                            col += jt.table(t, s);
                        }
                        double mj = (j == T) ? 1.0 / pi.size : pi.stationary[s];
                        double mi = (i == T) ? 1.0 / pi.size : pi.stationary[s];
                        c.expect(std::abs(row - mj) <= 1e-12, "row marginal");
                        c.expect(std::abs(col - mi) <= 1e-12, "col marginal");
                    }
                }
        }
    }
    SuiteResult r{"joint", c.ok, c.detail.str()};
    if (r.pass) r.detail = "S=2, T<=5: exact joints match full-sequence enumeration";
    return r;
}

SuiteResult dpi_suite(uint64_t seed) {
    Rng rng(seed);
    std::vector<TransitionKernel> kernels;
    while (kernels.size() < 100) {
        TransitionKernel k = sample_kernel({3, 1.0}, rng);
        if (gamma_witness(k) >= 0.1) kernels.push_back(std::move(k));
    }
    Checker c;
    for (const auto& g : {CausalGraph::chain(8), CausalGraph::icl(8)}) {
        DpiReport rep = verify_dpi(g, kernels);
        c.expect(rep.all_pass, "strict DPI gap");
    }
    SuiteResult r{"dpi", c.ok, c.detail.str()};
    if (r.pass) r.detail = "100 kernels (gamma >= 0.1), chain(8) and icl(8): all pairs pass";
    return r;
}

SuiteResult gradcheck_suite(uint64_t seed) {
    Rng rng(seed);
    Checker c;
    // G2 column sums vanish per sample; f is a convex combination
    CausalGraph g = CausalGraph::chain(6);
    for (int trial = 0; trial < 50; ++trial) {
        TransitionKernel pi = sample_kernel({3, 1.0}, rng);
        ReducedParams p = ReducedParams::zeros(3, 6);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j <= i; ++j) p.A1(i, j) = rng.normal();
        for (auto& v : p.A2.data) v = rng.normal();
        SequenceSample smp = generate(g, pi, rng);
        std::vector<SequenceSample> data{smp};
        EvalResult ev = finite_sample_eval(p, data, 0.1, true);
        for (int col = 0; col < 3; ++col) {
            double sum = 0.0;
            for (int row = 0; row < 3; ++row) sum += ev.G2(row, col);
            c.expect(std::abs(sum) <= 1e-14, "G2 column sum zero");
        }
        for (int i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (int j = 0; j <= i; ++j) sum += ev.G1(i, j);
            c.expect(std::abs(sum) <= 1e-13, "G1 row orthogonal to ones");
        }
        ReducedOut out = reduced_forward(p, smp.tokens);
        double fs = 0.0, fmin = 1.0;
        for (double v : out.f) {
            fs += v;
            fmin = std::min(fmin, v);
        }
        c.expect(std::abs(fs - 1.0) <= 1e-12 && fmin >= 0.0, "f convex combination");
    }
    // attention rows: nonneg, sum 1, causal support
    for (int trial = 0; trial < 20; ++trial) {
        int T = 4 + rng.next_below(6), D = 3 + rng.next_below(5);
        Matrix h(T, D), A(D, D);
        for (auto& v : h.data) v = rng.normal();
        for (auto& v : A.data) v = rng.normal();
        auto res = causal_attention(h, A);
        for (int i = 0; i < T; ++i) {
            double sum = 0.0;
            for (int j = 0; j < T; ++j) {
                c.expect(res.pattern(i, j) >= 0.0, "pattern nonneg");
                if (j > i) c.expect(res.pattern(i, j) == 0.0, "causal support");
                sum += res.pattern(i, j);
            }
            c.expect(std::abs(sum - 1.0) <= 1e-12, "pattern row sum");
        }
    }
    SuiteResult r{"gradcheck", c.ok, c.detail.str()};
    if (r.pass) r.detail = "G2 column sums, G1 row orthogonality, attention row-stochasticity";
    return r;
}

SuiteResult equivalence_suite(uint64_t seed) {
    Rng rng(seed);
    Checker c;
    const int S = 5, T = 8;
    for (int trial = 0; trial < 10; ++trial) {
        StandardParams sp;
        sp.S = S;
        sp.T = T;
        sp.dim = 8;
        sp.d_out = S;
        int L = 1 + rng.next_below(2);
        for (int l = 0; l < L; ++l) {
            std::vector<HeadQKV> heads(1 + rng.next_below(2));
            for (auto& h : heads) {
                h.Q = Matrix(sp.dim, sp.dim);
                h.K = Matrix(sp.dim, sp.dim);
                h.V = Matrix(sp.dim, sp.dim);
                for (auto& v : h.Q.data) v = rng.normal() * 0.5;
                for (auto& v : h.K.data) v = rng.normal() * 0.5;
                for (auto& v : h.V.data) v = rng.normal() * 0.5;
            }
            sp.layers.push_back(std::move(heads));
        }
        sp.E = Matrix(sp.dim, S);
        sp.P = Matrix(sp.dim, T);
        sp.WO = Matrix(S, sp.dim);
        for (auto& v : sp.E.data) v = rng.normal() * 0.5;
        for (auto& v : sp.P.data) v = rng.normal() * 0.5;
        for (auto& v : sp.WO.data) v = rng.normal() * 0.5;

        DisentangledParams dp = disentangle(sp);
        for (int n = 0; n < 5; ++n) {
            std::vector<int> tokens(T);
            for (auto& t : tokens) t = rng.next_below(S);
            double diff = max_abs_diff(standard_forward(sp, tokens), disentangled_forward(dp, tokens));
            c.expect(diff <= 1e-9, "disentangle equivalence");
        }
    }
    SuiteResult r{"equivalence", c.ok, c.detail.str()};
    if (r.pass) r.detail = "random standard transformers match their disentangled forms";
    return r;
}

}  // namespace

std::vector<std::string> suite_names() {
    return {"markov", "jacobian", "teff", "joint", "dpi", "gradcheck", "equivalence"};
}

SuiteResult run_suite(const std::string& name, uint64_t seed) {
    static const std::map<std::string, SuiteResult (*)(uint64_t)> table = {
        {"markov", markov_suite},   {"jacobian", jacobian_suite}, {"teff", teff_suite},
        {"joint", joint_suite},     {"dpi", dpi_suite},           {"gradcheck", gradcheck_suite},
        {"equivalence", equivalence_suite},
    };
    auto it = table.find(name);
    if (it == table.end()) throw std::invalid_argument("unknown verify suite: " + name);
    return it->second(seed);
}

}  // namespace causaltf
