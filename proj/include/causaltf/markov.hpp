#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "causaltf/matrix.hpp"
#include "causaltf/rng.hpp"

namespace causaltf {

// Row-stochastic transition matrix pi over an alphabet of size S, with its
// stationary measure mu cached at construction. Immutable after construction.
struct TransitionKernel {
    int size = 0;      // S
    Matrix rows;       // S x S, rows(s, s') = pi(s' | s)
    Vec stationary;    // mu, length S

    // Validates row sums (1e-12), nonnegativity, and computes the stationary
    // measure by power iteration. Throws std::invalid_argument /
    // std::runtime_error on bad input or non-convergence.
    static TransitionKernel from_rows(Matrix r);

    double min_entry() const;
    std::string to_json() const;
    static TransitionKernel from_json(const std::string& text);
};

// k-parent transition tensor: a distribution over [S] for every ordered
// k-tuple of parent values.
struct MultiKernel {
    int size = 0;    // S
    int arity = 0;   // k
    Matrix table;    // S^k rows, S cols; row index = sum_l a_l * S^(k-1-l)

    static MultiKernel from_table(int S, int k, Matrix t);
    int row_index(std::span<const int> parent_values) const;
    std::span<const double> conditional(std::span<const int> parent_values) const;
};

struct DirichletPrior {
    int size = 0;
    double alpha = 1.0;
};

// Finite mixture of kernels; supports exact expectations over the prior.
struct FinitePrior {
    std::vector<TransitionKernel> kernels;
    std::vector<double> weights;  // sums to 1
};

// Prior over kernels: either Dirichlet rows or an explicit finite mixture.
struct KernelPrior {
    std::variant<DirichletPrior, FinitePrior> spec;

    KernelPrior(DirichletPrior d) : spec(d) {}
    KernelPrior(FinitePrior f) : spec(std::move(f)) {}

    int alphabet_size() const;
    TransitionKernel sample(Rng& rng) const;
    bool is_finite() const { return std::holds_alternative<FinitePrior>(spec); }
    const FinitePrior& finite() const { return std::get<FinitePrior>(spec); }
};

// Witness report for the prior conditions (transition lower bound,
// non-degeneracy, permutation symmetry, constant mean). The first two are
// checkable per sample; the last two are distributional and only their
// sample-mean deviations are reported.
struct PriorCertificate {
    double gamma = 0.0;
    bool cond_transition_lower = false;
    bool cond_nondegenerate = false;
    double symmetry_deviation = 0.0;   // max diag / offdiag spread of the mean
    double mean_deviation = 0.0;       // max |E[pi] - 1/S|
    int n_samples = 0;
};

TransitionKernel sample_kernel(const DirichletPrior& prior, Rng& rng);
MultiKernel sample_multi_kernel(int S, int arity, double alpha, Rng& rng);

// Left fixed point mu^T pi = mu^T by power iteration (tol 1e-12, cap 1e5).
Vec stationary_measure(const Matrix& rows);

// (B_pi)_{s,s'} = sqrt(mu(s)/mu(s')) (pi(s'|s) - mu(s'))
Matrix b_matrix(const TransitionKernel& k);

// 1 - ||B_pi||_2, operator norm by power iteration on B^T B.
double spectral_gap(const TransitionKernel& k);

// alpha(pi) = max_{j != k} TV(pi(.|j), pi(.|k))
double contraction_coefficient(const TransitionKernel& k);

// chi^2(p || q) = sum p^2/q - 1; +inf when q has a zero where p does not.
double chi2_divergence(std::span<const double> p, std::span<const double> q);

// I_{chi^2} from a joint table (entries sum to 1), via its marginals.
double chi2_mutual_info(const Matrix& joint);

PriorCertificate check_assumptions(std::span<const TransitionKernel> samples, double gamma);

// Largest gamma in (0,1] for which both per-sample conditions hold:
// min entry >= gamma/S and sum_s ||pi(.|s)-mu||^2 >= gamma^2/S. Zero if the
// kernel is degenerate.
double gamma_witness(const TransitionKernel& k);

// The symmetric two-kernel prior used in several tests: equal mixture of
// [[1-p, p], [p, 1-p]] and its complement, which has constant mean and
// permutation-invariant law.
FinitePrior symmetric_two_kernel_prior(double p);

// Uniform mixture over all S! relabelings of the given kernels (use small S).
FinitePrior permutation_closure(const std::vector<TransitionKernel>& base,
                                const std::vector<double>& weights);

// Permutation closure of a sticky kernel and a shift kernel, weighted so all
// four prior conditions hold exactly: min entry (1-stay)/(S-1), summed-row
// deviation bounded away from zero, permutation-invariant law, and mean
// exactly (1/S) 11^T (the mixture trace is 1). Exactly enumerable.
FinitePrior constant_mean_symmetric_prior(int S, double stay = 0.6);

}  // namespace causaltf
