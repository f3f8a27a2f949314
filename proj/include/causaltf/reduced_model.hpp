#pragma once

#include <string>
#include <utility>
#include <vector>

#include "causaltf/causal_graph.hpp"
#include "causaltf/markov.hpp"
#include "causaltf/matrix.hpp"
#include "causaltf/sequence_gen.hpp"

namespace causaltf {

// theta = (A1, A2) of the reduced two-layer model
//   f_theta(X; s) = X^T S( S(MASK(A1)) X A2 e_s ),
// A1 is T x T and only entries on/below the diagonal are ever read; A2 is S x S.
struct ReducedParams {
    int S = 0, T = 0;
    Matrix A1;
    Matrix A2;

    static ReducedParams zeros(int S, int T) { return {S, T, Matrix(T, T), Matrix(S, S)}; }
    static ReducedParams stage_init(int S, int T, double beta0);  // A1 = 0, A2 = beta0 I
};

// Row-wise masked softmax of A1: row i is a softmax over entries j <= i;
// entries above the diagonal are exactly 0.
Matrix masked_row_softmax(const Matrix& A1);

// beta coordinate of A2 along I - (1/S) 1 1^T (well-defined for any A2):
// beta = (tr A2 - sum(A2)/S) / (S - 1)
double beta_projection(const Matrix& A2);

struct ReducedOut {
    Vec f;  // length S, nonneg, sums to 1
    Vec v;  // length T, the outer attention weights
};

ReducedOut reduced_forward(const ReducedParams& p, std::span<const int> tokens);
ReducedOut reduced_forward_conditioned(const ReducedParams& p, std::span<const int> tokens, int s);

struct EstimatorConfig {
    bool exact_sequences = false;  // enumerate X in [S]^T, weighted by sequence probability
    int n_sequences = 4096;        // MC sequences per kernel otherwise
    int n_prior = 64;              // MC kernel draws (finite priors are enumerated exactly)
};

// exact enumeration when S^T <= 4096, per the estimator contract
EstimatorConfig auto_estimator(int S, int T);

struct EvalResult {
    double loss = 0.0;
    double loss_se = 0.0;  // standard error across kernel draws (0 for exact finite priors)
    Matrix G1;             // T x T lower-triangular gradient
    Matrix G2;             // S x S
};

// Perturbed population loss (and, when requested, the Lemma-E.1 closed-form
// gradients) under the given estimator. Loss and gradients always share the
// same sequence draws.
EvalResult population_eval(const ReducedParams& p, const CausalGraph& g, const KernelPrior& prior,
                           const EstimatorConfig& est, double eps, Rng& rng, bool want_grads);

struct OptimalLoss {
    double l_star = 0.0;      // -E[(1/S) sum pi log pi]
    double l_star_eps = 0.0;  // same with log(pi + eps)
    double se = 0.0;
};
OptimalLoss optimal_loss(const KernelPrior& prior, double eps, int n_samples, Rng& rng);

// Finite-sample loss over a dataset of (sequence, kernel) pairs:
//   L-hat = -(1/N) sum_n sum_{s'} pi_n(s' | s_T^n) log(f(s^n)_{s'} + eps)
double finite_sample_loss(const ReducedParams& p, std::span<const SequenceSample> data, double eps);
EvalResult finite_sample_eval(const ReducedParams& p, std::span<const SequenceSample> data, double eps,
                              bool want_grads);

struct TrainConfig {
    double beta0 = 0.0;
    double eta1 = 0.0;
    double eta2 = 1.0;
    int tau1 = 500;
    int tau2 = 2000;
    double epsilon = 0.0;
    EstimatorConfig est;
    int n_lstar_samples = 4096;
    double stage2_beta_target = 0.0;  // stop stage 2 once beta reaches this
    bool stage1_early_stop = true;    // stop stage 1 when min edge softmax >= 1 - 1/T

    // beta0 = 0.01 T_eff^{-3/2}, eps = T_eff^{-1/2}, eta1 sized for ~500
    // stage-1 steps, beta target log(T_eff)/4; everything overridable.
    static TrainConfig defaults(const CausalGraph& g, int S);
};

struct TrajectoryRecord {
    int step = 0;
    int stage = 0;
    double loss = 0.0;
    double loss_gap = 0.0;  // loss - L*
    double beta = 0.0;
    double avg_attn = 0.0;
    double min_edge_softmax = 0.0;
    Vec edge_softmax;  // S(A1)_{i, p(i)} for each non-root i, in position order
};

struct TrainTrajectory {
    std::vector<TrajectoryRecord> records;
    double l_star = 0.0;
    double l_star_eps = 0.0;

    std::string to_csv() const;  // step,stage,loss,loss_gap,beta,avg_attn,min_edge_softmax
};

// Stage-wise GD: A1(0) = 0, A2(0) = beta0 I; stage 1 updates A1 only for
// tau1 steps with eta1, stage 2 updates A2 only for tau2 steps with eta2.
// Deterministic for a fixed rng seed. Throws on non-finite loss.
std::pair<ReducedParams, TrainTrajectory> train_algorithm1(const CausalGraph& g, const KernelPrior& prior,
                                                           const TrainConfig& cfg, Rng& rng);

struct JointTrainConfig {
    double lr = 0.3;
    int steps = 2000;
    int batch = 1024;
    double epsilon = 0.0;  // 0 -> T_eff^{-1/2}
    int n_lstar_samples = 4096;
};

// Appendix-C style empirical mode for the reduced model: plain GD on both
// matrices simultaneously from theta = 0, finite-sample batches.
std::pair<ReducedParams, TrainTrajectory> train_joint(const CausalGraph& g, const KernelPrior& prior,
                                                      const JointTrainConfig& cfg, Rng& rng);

}  // namespace causaltf
