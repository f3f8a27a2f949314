#include "causaltf/reduced_model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace causaltf {

ReducedParams ReducedParams::stage_init(int S, int T, double beta0) {
    ReducedParams p = zeros(S, T);
    for (int s = 0; s < S; ++s) p.A2(s, s) = beta0;
    return p;
}

Matrix masked_row_softmax(const Matrix& A1) {
    const int T = A1.rows;
    Matrix out(T, T);
    for (int i = 0; i < T; ++i) {
        double mx = -1e300;
        for (int j = 0; j <= i; ++j) mx = std::max(mx, A1(i, j));
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
            out(i, j) = std::exp(A1(i, j) - mx);
            z += out(i, j);
        }
        for (int j = 0; j <= i; ++j) out(i, j) /= z;
    }
    return out;
}

double beta_projection(const Matrix& A2) {
    const int S = A2.rows;
    double tr = 0.0, total = 0.0;
    for (int a = 0; a < S; ++a) {
        tr += A2(a, a);
        for (int b = 0; b < S; ++b) total += A2(a, b);
    }
    return (tr - total / S) / (S - 1);
}

namespace {

// v = S(z), z = SA1 (X A2 e_s); f = X^T v
ReducedOut forward_from_sa1(const Matrix& SA1, const Matrix& A2, std::span<const int> tokens, int s) {
    const int T = static_cast<int>(tokens.size());
    const int S = A2.rows;
    Vec q(T);
    for (int i = 0; i < T; ++i) q[i] = A2(tokens[i], s);
    Vec z(T, 0.0);
    for (int i = 0; i < T; ++i) {
        const double* row = &SA1.data[static_cast<size_t>(i) * T];
        double acc = 0.0;
        for (int j = 0; j <= i; ++j) acc += row[j] * q[j];
        z[i] = acc;
    }
    softmax_inplace(z);
    ReducedOut out;
    out.v = std::move(z);
    out.f.assign(S, 0.0);
    for (int i = 0; i < T; ++i) out.f[tokens[i]] += out.v[i];
    return out;
}

// Shared inner loop: the contribution of one sequence, conditioned on s with
// target row pi_row and weight w, to the loss and (pre-preconditioner)
// gradient accumulators:
//   loss     += -w sum_{s'} pi(s'|s) log(f_{s'} + eps)
//   R_i      += w sum_{s'} [pi(s'|s)/(f+eps)] delta_{s'}^T J(v) e_i * q_{<=i}
//   G2[:, s] += w sum_{s'} [pi(s'|s)/(f+eps)] X^T SA1^T J(v) delta_{s'}
// where q = X A2 e_s. G1 is recovered later as G1_i = -J(S(A1_i)) R_i, and
// G2 is negated at the end (per Lemma of the population gradients).
void accumulate_conditioned(const Matrix& SA1, const Matrix& A2, std::span<const int> tokens,
                            std::span<const double> pi_row, int s, double eps, double w,
                            double& loss, Matrix* R, Matrix* G2) {
    const int T = static_cast<int>(tokens.size());
    const int S = A2.rows;
    ReducedOut o = forward_from_sa1(SA1, A2, tokens, s);

    Vec rho(S);
    double rho_f = 0.0;  // sum_{s'} rho_{s'} f_{s'}
    for (int sp = 0; sp < S; ++sp) {
        loss -= w * pi_row[sp] * std::log(o.f[sp] + eps);
        rho[sp] = pi_row[sp] / (o.f[sp] + eps);
        rho_f += rho[sp] * o.f[sp];
    }
    if (!R && !G2) return;

    // c_i = sum_{s'} rho_{s'} (J(v) delta_{s'})_i = v_i (rho_{s_i} - rho_f)
    Vec c(T);
    for (int i = 0; i < T; ++i) c[i] = o.v[i] * (rho[tokens[i]] - rho_f);

    if (R) {
        Vec q(T);
        for (int i = 0; i < T; ++i) q[i] = A2(tokens[i], s);
        for (int i = 0; i < T; ++i) {
            if (c[i] == 0.0) continue;
            const double wc = w * c[i];
            double* rrow = &R->data[static_cast<size_t>(i) * T];
            for (int j = 0; j <= i; ++j) rrow[j] += wc * q[j];
        }
    }
    if (G2) {
        // m = SA1^T c, then scatter X^T m into column s
        Vec m(T, 0.0);
        for (int i = 0; i < T; ++i) {
            const double ci = c[i];
            if (ci == 0.0) continue;
            const double* row = &SA1.data[static_cast<size_t>(i) * T];
            for (int j = 0; j <= i; ++j) m[j] += ci * row[j];
        }
        for (int i = 0; i < T; ++i) (*G2)(tokens[i], s) += w * m[i];
    }
}

// turn the accumulators into gradients: apply J(S(A1_i)) row-wise and the
// -1/S (already folded into w) sign
void finalize_grads(const Matrix& SA1, Matrix& R, Matrix& G2) {
    const int T = SA1.rows;
    for (int i = 0; i < T; ++i) {
        const double* si = &SA1.data[static_cast<size_t>(i) * T];
        double* ri = &R.data[static_cast<size_t>(i) * T];
        double sv = 0.0;
        for (int j = 0; j <= i; ++j) sv += si[j] * ri[j];
        for (int j = 0; j <= i; ++j) ri[j] = -(si[j] * (ri[j] - sv));
    }
    for (double& v : G2.data) v = -v;
}

// log-probability of the prefix s_{1:T-1}; the last position is where the
// conditioning substitutes e_s
double prefix_log_weight(const CausalGraph& g, const TransitionKernel& pi, std::span<const int> tokens) {
    const int T = g.length();
    double lw = 0.0;
    for (int i = 1; i < T; ++i) {
        double p = g.is_root(i) ? pi.stationary[tokens[i - 1]] : pi.rows(tokens[g.parent(i) - 1], tokens[i - 1]);
        lw += std::log(p);
    }
    return lw;
}

// Per-kernel expectation over X: exact enumeration of the prefix or MC.
// Conditioning on s_T = s replaces the last row of X by e_s, so the uniform
// draw of s_T becomes the (1/S) average over the conditioning value.
double eval_kernel(const ReducedParams& p, const Matrix& SA1, const CausalGraph& g,
                   const TransitionKernel& pi, const EstimatorConfig& est, double eps, Rng& rng,
                   Matrix* R, Matrix* G2) {
    const int S = p.S;
    const int T = p.T;
    double loss = 0.0;
    if (est.exact_sequences) {
        std::vector<int> tokens(T, 0);
        while (true) {
            double w = std::exp(prefix_log_weight(g, pi, tokens));
            for (int s = 0; s < S; ++s) {
                tokens[T - 1] = s;
                accumulate_conditioned(SA1, p.A2, tokens, pi.rows.row(s), s, eps, w / S, loss, R, G2);
            }
            tokens[T - 1] = 0;
            int pos = T - 2;
            while (pos >= 0 && ++tokens[pos] == S) tokens[pos--] = 0;
            if (pos < 0) break;
        }
    } else {
        const double w = 1.0 / est.n_sequences;
        for (int n = 0; n < est.n_sequences; ++n) {
            SequenceSample smp = generate(g, pi, rng);
            for (int s = 0; s < S; ++s) {
                smp.tokens[T - 1] = s;
                accumulate_conditioned(SA1, p.A2, smp.tokens, pi.rows.row(s), s, eps, w / S, loss, R, G2);
            }
        }
    }
    return loss;
}

}  // namespace

ReducedOut reduced_forward(const ReducedParams& p, std::span<const int> tokens) {
    return forward_from_sa1(masked_row_softmax(p.A1), p.A2, tokens, tokens.back());
}

ReducedOut reduced_forward_conditioned(const ReducedParams& p, std::span<const int> tokens, int s) {
    // conditioning substitutes e_s for the last row of X as well as the query
    std::vector<int> cond(tokens.begin(), tokens.end());
    cond.back() = s;
    return forward_from_sa1(masked_row_softmax(p.A1), p.A2, cond, s);
}

EstimatorConfig auto_estimator(int S, int T) {
    EstimatorConfig est;
    double st = std::pow(static_cast<double>(S), T);
    est.exact_sequences = st <= 4096.0;
    return est;
}

EvalResult population_eval(const ReducedParams& p, const CausalGraph& g, const KernelPrior& prior,
                           const EstimatorConfig& est, double eps, Rng& rng, bool want_grads) {
    if (!(eps > 0.0)) throw std::domain_error("population_eval: eps must be > 0");
    const Matrix SA1 = masked_row_softmax(p.A1);
    EvalResult res;
    Matrix R(p.T, p.T), G2(p.S, p.S);
    Matrix* Rp = want_grads ? &R : nullptr;
    Matrix* G2p = want_grads ? &G2 : nullptr;

    if (prior.is_finite()) {
        const auto& f = prior.finite();
        double loss = 0.0;
        for (size_t k = 0; k < f.kernels.size(); ++k) {
            // scale contributions by the mixture weight
            Matrix Rk(p.T, p.T), G2k(p.S, p.S);
            double lk = eval_kernel(p, SA1, g, f.kernels[k], est, eps, rng, want_grads ? &Rk : nullptr,
                                    want_grads ? &G2k : nullptr);
            loss += f.weights[k] * lk;
            if (want_grads) {
                for (size_t i = 0; i < R.data.size(); ++i) R.data[i] += f.weights[k] * Rk.data[i];
                for (size_t i = 0; i < G2.data.size(); ++i) G2.data[i] += f.weights[k] * G2k.data[i];
            }
        }
        res.loss = loss;
    } else {
        double sum = 0.0, sumsq = 0.0;
        for (int k = 0; k < est.n_prior; ++k) {
            TransitionKernel pi = prior.sample(rng);
            Matrix Rk(p.T, p.T), G2k(p.S, p.S);
            double lk = eval_kernel(p, SA1, g, pi, est, eps, rng, want_grads ? &Rk : nullptr,
                                    want_grads ? &G2k : nullptr);
            sum += lk;
            sumsq += lk * lk;
            if (want_grads) {
                for (size_t i = 0; i < R.data.size(); ++i) R.data[i] += Rk.data[i];
                for (size_t i = 0; i < G2.data.size(); ++i) G2.data[i] += G2k.data[i];
            }
        }
        res.loss = sum / est.n_prior;
        if (est.n_prior > 1) {
            double var = (sumsq - sum * sum / est.n_prior) / (est.n_prior - 1);
            res.loss_se = std::sqrt(std::max(0.0, var) / est.n_prior);
        }
        if (want_grads) {
            double inv = 1.0 / est.n_prior;
            for (double& v : R.data) v *= inv;
            for (double& v : G2.data) v *= inv;
        }
    }
    if (want_grads) {
        finalize_grads(SA1, R, G2);
        res.G1 = std::move(R);
        res.G2 = std::move(G2);
    }
    return res;
}

OptimalLoss optimal_loss(const KernelPrior& prior, double eps, int n_samples, Rng& rng) {
    OptimalLoss out;
    auto entropy_terms = [&](const TransitionKernel& k, double& l, double& leps) {
        const int S = k.size;
        double a = 0.0, b = 0.0;
        for (int s = 0; s < S; ++s)
            for (int sp = 0; sp < S; ++sp) {
                double pi = k.rows(s, sp);
                if (pi > 0.0) a -= pi * std::log(pi);
                b -= pi * std::log(pi + eps);
            }
        l = a / S;
        leps = b / S;
    };
    if (prior.is_finite()) {
        const auto& f = prior.finite();
        for (size_t k = 0; k < f.kernels.size(); ++k) {
            double l, le;
            entropy_terms(f.kernels[k], l, le);
            out.l_star += f.weights[k] * l;
            out.l_star_eps += f.weights[k] * le;
        }
    } else {
        double sum = 0.0, sumsq = 0.0, sum_eps = 0.0;
        for (int n = 0; n < n_samples; ++n) {
            double l, le;
            entropy_terms(prior.sample(rng), l, le);
            sum += l;
            sumsq += l * l;
            sum_eps += le;
        }
        out.l_star = sum / n_samples;
        out.l_star_eps = sum_eps / n_samples;
        if (n_samples > 1) {
            double var = (sumsq - sum * sum / n_samples) / (n_samples - 1);
            out.se = std::sqrt(std::max(0.0, var) / n_samples);
        }
    }
    return out;
}

double finite_sample_loss(const ReducedParams& p, std::span<const SequenceSample> data, double eps) {
    return finite_sample_eval(p, data, eps, false).loss;
}

EvalResult finite_sample_eval(const ReducedParams& p, std::span<const SequenceSample> data, double eps,
                              bool want_grads) {
    if (data.empty()) throw std::invalid_argument("finite_sample_eval: empty dataset");
    if (!(eps > 0.0)) throw std::domain_error("finite_sample_eval: eps must be > 0");
    const Matrix SA1 = masked_row_softmax(p.A1);
    EvalResult res;
    Matrix R(p.T, p.T), G2(p.S, p.S);
    double loss = 0.0;
    const double w = 1.0 / static_cast<double>(data.size());
    for (const auto& smp : data) {
        int s = smp.tokens.back();
        accumulate_conditioned(SA1, p.A2, smp.tokens, smp.kernel.rows.row(s), s, eps, w, loss,
                               want_grads ? &R : nullptr, want_grads ? &G2 : nullptr);
    }
    res.loss = loss;
    if (want_grads) {
        finalize_grads(SA1, R, G2);
        res.G1 = std::move(R);
        res.G2 = std::move(G2);
    }
    return res;
}

TrainConfig TrainConfig::defaults(const CausalGraph& g, int S) {
    TrainConfig cfg;
    double t_eff = effective_length(g).t_eff;
    const int T = g.length();
    cfg.beta0 = 0.01 * std::pow(t_eff, -1.5);
    cfg.epsilon = std::pow(t_eff, -0.5);
    // eta1 = S T^2 / beta0 makes the stage-1 edge increments O(gamma^3/S^2),
    // which lands the saturation point around a few hundred steps
    cfg.eta1 = S * T * T / cfg.beta0;
    cfg.eta2 = 1.0;
    cfg.tau1 = 500;
    cfg.tau2 = 2000;
    cfg.stage2_beta_target = std::log(t_eff) / 4.0;
    cfg.est = auto_estimator(S, T);
    if (!cfg.est.exact_sequences) {
        // one fresh kernel per sequence, 4096 sequences per step
        cfg.est.n_sequences = 1;
        cfg.est.n_prior = 4096;
    }
    return cfg;
}

namespace {

TrajectoryRecord make_record(int step, int stage, double loss, double l_star, const ReducedParams& p,
                             const CausalGraph& g) {
    TrajectoryRecord r;
    r.step = step;
    r.stage = stage;
    r.loss = loss;
    r.loss_gap = loss - l_star;
    r.beta = beta_projection(p.A2);
    Matrix SA1 = masked_row_softmax(p.A1);
    r.min_edge_softmax = 1.0;
    double sum = 0.0;
    int n = 0;
    for (int i = 1; i <= g.length(); ++i) {
        if (g.is_root(i)) continue;
        double w = SA1(i - 1, g.parent(i) - 1);
        r.edge_softmax.push_back(w);
        r.min_edge_softmax = std::min(r.min_edge_softmax, w);
        sum += w;
        ++n;
    }
    r.avg_attn = n > 0 ? sum / n : 0.0;
    return r;
}

void check_finite(double loss, int step, int stage) {
    if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at stage " << stage << " step " << step
            << " (an f entry underflowed eps or a parameter overflowed)";
        throw std::runtime_error(msg.str());
    }
}

}  // namespace

std::string TrainTrajectory::to_csv() const {
    std::ostringstream out;
    out << "step,stage,loss,loss_gap,beta,avg_attn,min_edge_softmax\n";
    out.precision(17);
    for (const auto& r : records)
        out << r.step << "," << r.stage << "," << r.loss << "," << r.loss_gap << "," << r.beta << ","
            << r.avg_attn << "," << r.min_edge_softmax << "\n";
    return out.str();
}

std::pair<ReducedParams, TrainTrajectory> train_algorithm1(const CausalGraph& g, const KernelPrior& prior,
                                                           const TrainConfig& cfg, Rng& rng) {
    const int S = prior.alphabet_size();
    const int T = g.length();
    ReducedParams p = ReducedParams::stage_init(S, T, cfg.beta0);
    TrainTrajectory traj;
    {
        Rng lrng = rng.stream(0x10c0ffee);
        OptimalLoss ol = optimal_loss(prior, cfg.epsilon, cfg.n_lstar_samples, lrng);
        traj.l_star = ol.l_star;
        traj.l_star_eps = ol.l_star_eps;
    }

    int step = 0;
    for (int t = 0; t < cfg.tau1; ++t) {
        Rng srng = rng.stream(0x57a6e1'0000ull + static_cast<uint64_t>(step));
        EvalResult ev = population_eval(p, g, prior, cfg.est, cfg.epsilon, srng, true);
        check_finite(ev.loss, step, 1);
        for (int i = 0; i < T; ++i)
            for (int j = 0; j <= i; ++j) p.A1(i, j) -= cfg.eta1 * ev.G1(i, j);
        traj.records.push_back(make_record(step, 1, ev.loss, traj.l_star, p, g));
        ++step;
        if (cfg.stage1_early_stop && traj.records.back().min_edge_softmax >= 1.0 - 1.0 / T) break;
    }
    for (int t = 0; t < cfg.tau2; ++t) {
        Rng srng = rng.stream(0x57a6e2'0000ull + static_cast<uint64_t>(step));
        EvalResult ev = population_eval(p, g, prior, cfg.est, cfg.epsilon, srng, true);
        check_finite(ev.loss, step, 2);
        p.A2 = p.A2 - cfg.eta2 * ev.G2;
        traj.records.push_back(make_record(step, 2, ev.loss, traj.l_star, p, g));
        ++step;
        if (cfg.stage2_beta_target > 0.0 && traj.records.back().beta >= cfg.stage2_beta_target) break;
    }
    return {std::move(p), std::move(traj)};
}

std::pair<ReducedParams, TrainTrajectory> train_joint(const CausalGraph& g, const KernelPrior& prior,
                                                      const JointTrainConfig& cfg, Rng& rng) {
    const int S = prior.alphabet_size();
    const int T = g.length();
    double eps = cfg.epsilon > 0.0 ? cfg.epsilon : std::pow(effective_length(g).t_eff, -0.5);
    ReducedParams p = ReducedParams::zeros(S, T);
    TrainTrajectory traj;
    {
        Rng lrng = rng.stream(0x10c0ffee);
        OptimalLoss ol = optimal_loss(prior, eps, cfg.n_lstar_samples, lrng);
        traj.l_star = ol.l_star;
        traj.l_star_eps = ol.l_star_eps;
    }
    std::vector<SequenceSample> batch;
    batch.reserve(cfg.batch);
    for (int t = 0; t < cfg.steps; ++t) {
        Rng srng = rng.stream(0x10147'0000ull + static_cast<uint64_t>(t));
        batch.clear();
        for (int n = 0; n < cfg.batch; ++n) {
            TransitionKernel pi = prior.sample(srng);
            batch.push_back(generate(g, pi, srng));
        }
        EvalResult ev = finite_sample_eval(p, batch, eps, true);
        check_finite(ev.loss, t, 0);
        for (int i = 0; i < T; ++i)
            for (int j = 0; j <= i; ++j) p.A1(i, j) -= cfg.lr * ev.G1(i, j);
        p.A2 = p.A2 - cfg.lr * ev.G2;
        traj.records.push_back(make_record(t, 0, ev.loss, traj.l_star, p, g));
    }
    return {std::move(p), std::move(traj)};
}

}  // namespace causaltf
