#include "causaltf/theory.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace causaltf {

namespace {

// pi^d as a matrix power (d >= 0)
Matrix kernel_power(const TransitionKernel& pi, int d) {
    Matrix out = Matrix::identity(pi.size);
    Matrix base = pi.rows;
    while (d > 0) {
        if (d & 1) out = matmul(out, base);
        base = matmul(base, base);
        d >>= 1;
    }
    return out;
}

}  // namespace

JointTable joint_distribution(const CausalGraph& g, const TransitionKernel& pi, int i, int j) {
    if (i == j) throw std::invalid_argument("joint_distribution: need i != j");
    const int S = pi.size;
    const int T = g.length();
    JointTable out;
    out.i = i;
    out.j = j;
    out.table = Matrix(S, S);

    auto marginal = [&](int pos) -> Vec {
        if (pos == T) return Vec(S, 1.0 / S);
        return pi.stationary;
    };

    // position T is resampled uniformly, independent of everything else
    if (i == T || j == T || g.tree_id(i) != g.tree_id(j)) {
        Vec mj = marginal(j), mi = marginal(i);
        for (int s = 0; s < S; ++s)
            for (int sp = 0; sp < S; ++sp) out.table(s, sp) = mj[s] * mi[sp];
        return out;
    }

    int k = *least_common_ancestor(g, i, j);
    int di = graph_distance(g, k, i).value;
    int dj = graph_distance(g, k, j).value;
    Matrix pi_to_i = kernel_power(pi, di);
    Matrix pi_to_j = kernel_power(pi, dj);
    // P[s_j = s, s_i = s'] = sum_{sk} mu(sk) pi^{dj}(s|sk) pi^{di}(s'|sk)
    for (int sk = 0; sk < S; ++sk) {
        double m = pi.stationary[sk];
        for (int s = 0; s < S; ++s) {
            double a = m * pi_to_j(sk, s);
            if (a == 0.0) continue;
            for (int sp = 0; sp < S; ++sp) out.table(s, sp) += a * pi_to_i(sk, sp);
        }
    }
    return out;
}

double idealized_g_pi(const CausalGraph& g, const TransitionKernel& pi, int i, int j) {
    const int S = pi.size;
    if (i == j) {
        double tr = 0.0;
        for (int s = 0; s < S; ++s) tr += pi.rows(s, s);
        return tr - 1.0;
    }
    JointTable jt = joint_distribution(g, pi, i, j);
    double acc = 0.0;
    for (int s = 0; s < S; ++s)
        for (int sp = 0; sp < S; ++sp) acc += pi.rows(s, sp) / pi.stationary[sp] * jt.table(s, sp);
    return acc - 1.0;
}

IdealizedGradient idealized_g(const CausalGraph& g, const KernelPrior& prior, int n_prior_samples,
                              Rng& rng) {
    const int T = g.length();
    IdealizedGradient out;
    out.T = T;
    out.value = Matrix(T, T);
    out.stderr_ = Matrix(T, T);

    auto accumulate = [&](const TransitionKernel& pi, double w, Matrix& sum, Matrix& sumsq) {
        for (int i = 1; i <= T; ++i)
            for (int j = 1; j <= i; ++j) {
                double v = idealized_g_pi(g, pi, i, j);
                sum(i - 1, j - 1) += w * v;
                sumsq(i - 1, j - 1) += w * v * v;
            }
    };

    Matrix sum(T, T), sumsq(T, T);
    if (prior.is_finite()) {
        const auto& f = prior.finite();
        for (size_t k = 0; k < f.kernels.size(); ++k) accumulate(f.kernels[k], f.weights[k], sum, sumsq);
        out.value = sum;
        out.n_samples = static_cast<int>(f.kernels.size());
        // exact expectation: zero standard error
    } else {
        for (int n = 0; n < n_prior_samples; ++n) {
            TransitionKernel pi = prior.sample(rng);
            accumulate(pi, 1.0, sum, sumsq);
        }
        out.n_samples = n_prior_samples;
        for (int i = 0; i < T; ++i)
            for (int j = 0; j <= i; ++j) {
                double mean = sum(i, j) / n_prior_samples;
                out.value(i, j) = mean;
                if (n_prior_samples > 1) {
                    double var = (sumsq(i, j) - n_prior_samples * mean * mean) / (n_prior_samples - 1);
                    out.stderr_(i, j) = std::sqrt(std::max(0.0, var) / n_prior_samples);
                }
            }
    }
    return out;
}

DpiReport verify_dpi(const CausalGraph& g, std::span<const TransitionKernel> kernels) {
    if (kernels.empty()) throw std::invalid_argument("verify_dpi: no kernels");
    const int T = g.length();
    DpiReport rep;
    rep.gamma = 1.0;
    for (const auto& k : kernels) rep.gamma = std::min(rep.gamma, gamma_witness(k));
    const bool assumptions_ok = rep.gamma > 0.0;

    std::vector<double> alpha(kernels.size()), bnorm(kernels.size());
    for (size_t n = 0; n < kernels.size(); ++n) {
        alpha[n] = contraction_coefficient(kernels[n]);
        bnorm[n] = frobenius_norm_sq(b_matrix(kernels[n]));
    }

    rep.all_pass = true;
    for (int i = 1; i <= T; ++i) {
        if (g.is_root(i)) continue;
        const int pi_parent = g.parent(i);
        for (int j = 1; j < i; ++j) {
            if (j == pi_parent) continue;
            DpiPairReport pr;
            pr.i = i;
            pr.j = j;
            pr.inconclusive = !assumptions_ok;
            double mean_gap = 0.0;
            double min_margin = 1e300;
            for (size_t n = 0; n < kernels.size(); ++n) {
                double gp = idealized_g_pi(g, kernels[n], i, pi_parent);
                double gj = idealized_g_pi(g, kernels[n], i, j);
                double bound = 0.5 * (1.0 - alpha[n]) * bnorm[n];
                mean_gap += (gp - gj) / kernels.size();
                min_margin = std::min(min_margin, gp - gj - bound);
            }
            pr.gap = mean_gap;
            pr.min_margin = min_margin;
            pr.per_pi_pass = min_margin >= -1e-9;
            const double S = kernels[0].size;
            pr.prior_pass = mean_gap >= rep.gamma * rep.gamma * rep.gamma / (2.0 * S) - 1e-9;
            if (!pr.inconclusive && (!pr.per_pi_pass || !pr.prior_pass)) rep.all_pass = false;
            rep.pairs.push_back(pr);
        }
    }
    return rep;
}

double default_oracle_threshold(const IdealizedGradient& mi) {
    double mx = 0.0;
    for (int i = 0; i < mi.T; ++i)
        for (int j = 0; j < i; ++j) mx = std::max(mx, mi.stderr_(i, j));
    // floor keeps float noise in exactly-enumerated tables from reading as edges
    return std::max(3.0 * mx, 1e-12);
}

OracleResult oracle_recover(const IdealizedGradient& mi, double threshold) {
    const int T = mi.T;
    std::vector<int> parents(T, 0);
    std::vector<OracleDecision> decisions;
    for (int i = 2; i <= T; ++i) {
        OracleDecision d;
        d.i = i;
        double best = -1e300;
        int arg = 0;
        for (int j = 1; j < i; ++j) {
            double v = mi.value(i - 1, j - 1);
            if (v > best) {
                best = v;
                arg = j;
                d.tie = false;
            } else if (v == best) {
                arg = j;  // ties break toward the larger index
                d.tie = true;
            }
        }
        d.best_value = best;
        if (best > threshold && i < T) {  // position T is a root by construction
            parents[i - 1] = arg;
            d.chosen_parent = arg;
        }
        decisions.push_back(d);
    }
    OracleResult out{CausalGraph(T, std::move(parents)), std::move(decisions), threshold};
    return out;
}

double g_hat_h(double z, double beta, double r, double mu_s) {
    const double eb = std::exp(beta);
    const double ebm = std::exp(beta * mu_s);
    const double denom1 = (1.0 - r) * (eb - 1.0) * mu_s * z + (1.0 - r) + r * ebm;
    const double denom0 = (1.0 - r) * (eb - 1.0) * mu_s + (1.0 - r) + r * ebm;
    return ((1.0 - r) * eb * z * z + r * ebm * z) / denom1 - ((1.0 - r) * eb + r * ebm) / denom0;
}

GHatResult g_hat_beta(double beta, double r, const KernelPrior& prior, int n_samples, Rng& rng) {
    if (!(beta >= 0.0) || !(r >= 0.0 && r < 1.0)) throw std::invalid_argument("need beta >= 0, r in [0,1)");
    auto one = [&](const TransitionKernel& k) {
        const int S = k.size;
        double acc = 0.0;
        for (int s = 0; s < S; ++s) {
            double inner = 0.0;
            for (int sp = 0; sp < S; ++sp)
                inner += k.stationary[sp] * g_hat_h(k.rows(s, sp) / k.stationary[sp], beta, r, k.stationary[s]);
            acc += k.stationary[s] * inner;
        }
        return acc / (S * (S - 1.0));
    };
    GHatResult out;
    if (prior.is_finite()) {
        const auto& f = prior.finite();
        for (size_t k = 0; k < f.kernels.size(); ++k) out.value += f.weights[k] * one(f.kernels[k]);
    } else {
        double sum = 0.0, sumsq = 0.0;
        for (int n = 0; n < n_samples; ++n) {
            double v = one(prior.sample(rng));
            sum += v;
            sumsq += v * v;
        }
        out.value = sum / n_samples;
        if (n_samples > 1) {
            double var = (sumsq - sum * sum / n_samples) / (n_samples - 1);
            out.stderr_ = std::sqrt(std::max(0.0, var) / n_samples);
        }
    }
    return out;
}

EmpiricalTransition empirical_transition(std::span<const int> tokens, const CausalGraph& g, int S) {
    const int T = g.length();
    if (static_cast<int>(tokens.size()) != T) throw std::invalid_argument("empirical_transition: length mismatch");
    Matrix counts(S, S);
    Vec denom(S, 0.0);
    for (int i = 1; i <= T; ++i) {
        if (g.is_root(i)) continue;
        int s = tokens[g.parent(i) - 1];
        counts(s, tokens[i - 1]) += 1.0;
        denom[s] += 1.0;
    }
    EmpiricalTransition out;
    out.table = Matrix(S, S);
    out.defined.assign(S, false);
    for (int s = 0; s < S; ++s) {
        if (denom[s] > 0.0) {
            out.defined[s] = true;
            for (int sp = 0; sp < S; ++sp) out.table(s, sp) = counts(s, sp) / denom[s];
        }
    }
    return out;
}

MultiEmpiricalTransition empirical_transition_multi(std::span<const int> tokens, const MultiParentGraph& g,
                                                    int S) {
    const int T = g.length();
    if (static_cast<int>(tokens.size()) != T) throw std::invalid_argument("length mismatch");
    const int k = g.arity();
    int nrows = 1;
    for (int l = 0; l < k; ++l) nrows *= S;
    Matrix counts(nrows, S);
    Vec denom(nrows, 0.0);
    for (int i = 1; i <= T; ++i) {
        if (g.is_root(i)) continue;
        int row = 0;
        for (int p : g.parents(i)) row = row * S + tokens[p - 1];
        counts(row, tokens[i - 1]) += 1.0;
        denom[row] += 1.0;
    }
    MultiEmpiricalTransition out;
    out.table = Matrix(nrows, S);
    out.defined.assign(nrows, false);
    for (int r = 0; r < nrows; ++r) {
        if (denom[r] > 0.0) {
            out.defined[r] = true;
            for (int sp = 0; sp < S; ++sp) out.table(r, sp) = counts(r, sp) / denom[r];
        }
    }
    return out;
}

std::string mi_table_csv(const IdealizedGradient& mi) {
    std::ostringstream out;
    out << "i,j,value,stderr\n";
    out.precision(17);
    for (int i = 1; i <= mi.T; ++i)
        for (int j = 1; j <= i; ++j)
            out << i << "," << j << "," << mi.value(i - 1, j - 1) << "," << mi.stderr_(i - 1, j - 1) << "\n";
    return out.str();
}

}  // namespace causaltf
