#pragma once

#include <optional>
#include <string>
#include <vector>

#include "causaltf/causal_graph.hpp"
#include "causaltf/markov.hpp"
#include "causaltf/matrix.hpp"

namespace causaltf {

// Exact joint law of (s_j, s_i) under a fixed kernel: table(s, s') =
// P[s_j = s, s_i = s']. Position T is uniform and independent of the rest.
struct JointTable {
    int i = 0, j = 0;
    Matrix table;  // S x S, rows indexed by the value of s_j
};

JointTable joint_distribution(const CausalGraph& g, const TransitionKernel& pi, int i, int j);

// g_{i,j}(pi) = sum_{s,s'} pi(s'|s)/mu(s') P[s_j = s, s_i = s'] - 1;
// for j = i this reduces to sum_s pi(s|s) - 1.
double idealized_g_pi(const CausalGraph& g, const TransitionKernel& pi, int i, int j);

// Idealized gradient: exact in X, Monte Carlo over the prior (finite priors
// are enumerated exactly, giving zero standard error).
struct IdealizedGradient {
    int T = 0;
    Matrix value;   // lower-triangular incl. diagonal: entries (i-1, j-1) for j <= i
    Matrix stderr_; // matching standard errors
    int n_samples = 0;
};

IdealizedGradient idealized_g(const CausalGraph& g, const KernelPrior& prior, int n_prior_samples,
                              Rng& rng);

// Per-pair check of the strict-DPI gap
//   g_{i,p(i)}(pi) - g_{i,j}(pi) >= (1 - alpha(pi))/2 ||B_pi||_F^2
// plus the prior-level corollary gap gamma^3/(2S) on the averaged values.
struct DpiPairReport {
    int i = 0, j = 0;
    double gap = 0.0;       // averaged over kernels
    double min_margin = 0.0;  // min over kernels of lhs - rhs of the per-pi bound
    bool per_pi_pass = false;
    bool prior_pass = false;
    bool inconclusive = false;  // assumptions failed for some kernel
};

struct DpiReport {
    std::vector<DpiPairReport> pairs;
    double gamma = 0.0;  // measured witness (min over kernels)
    bool all_pass = false;
};

DpiReport verify_dpi(const CausalGraph& g, std::span<const TransitionKernel> kernels);

// Chow-Liu-style recovery with a known topological order: for each i,
// p(i) = argmax_{j<i} MI if the max clears the threshold, else root.
// Ties break toward the larger index.
struct OracleDecision {
    int i = 0;
    int chosen_parent = 0;  // 0 = root
    double best_value = 0.0;
    bool tie = false;
};

struct OracleResult {
    CausalGraph graph;
    std::vector<OracleDecision> decisions;
    double threshold = 0.0;
};

OracleResult oracle_recover(const IdealizedGradient& mi, double threshold);
// threshold = 3 x the largest standard error in the table (Algorithm's
// "I > 0" test adjusted for MC noise)
double default_oracle_threshold(const IdealizedGradient& mi);

// Stage-2 idealized gradient g-hat(beta) with root fraction r:
//   (1/(S(S-1))) sum_s E[mu(s) sum_{s'} mu(s') h_s(pi(s'|s)/mu(s'))]
struct GHatResult {
    double value = 0.0;
    double stderr_ = 0.0;
};
GHatResult g_hat_beta(double beta, double r, const KernelPrior& prior, int n_samples, Rng& rng);

// h_s evaluated directly (exposed for tests)
double g_hat_h(double z, double beta, double r, double mu_s);

// Empirical transition over the graph's edges. Rows with no occurrences of
// the conditioning value among parents are tagged undefined.
struct EmpiricalTransition {
    Matrix table;               // S x S
    std::vector<bool> defined;  // per row
};
EmpiricalTransition empirical_transition(std::span<const int> tokens, const CausalGraph& g, int S);

// k-parent analogue: counts over edges into i <= T.
struct MultiEmpiricalTransition {
    Matrix table;               // S^k x S
    std::vector<bool> defined;
};
MultiEmpiricalTransition empirical_transition_multi(std::span<const int> tokens, const MultiParentGraph& g,
                                                    int S);

std::string mi_table_csv(const IdealizedGradient& mi);  // i,j,value,stderr

}  // namespace causaltf
