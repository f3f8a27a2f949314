#pragma once

#include <string>
#include <vector>

#include "causaltf/causal_graph.hpp"
#include "causaltf/markov.hpp"
#include "causaltf/transformer.hpp"

namespace causaltf {

struct ConstructionSpec {
    double beta1 = 50.0;
    double beta2 = 50.0;
};

// Two-layer, one-head-per-layer disentangled weights realizing the
// single-parent construction: the first attention's position-position block
// is beta1 x adjacency, the second compares the token part of x_T against the
// token part of the first attention's output with beta2 I_S, and the output
// matrix reads the token part of the third block. Everything outside those
// three blocks is exactly zero.
DisentangledParams build_single_parent(const CausalGraph& g, int S, const ConstructionSpec& spec);

// k-head construction for multi-parent graphs: head l copies parent l (and
// p(T+1)_l at row T); the second layer block-diagonally compares the copied
// parent tokens; the output reads the token part of the x block.
DisentangledParams build_multi_parent(const MultiParentGraph& g, int S, const ConstructionSpec& spec);

struct FidelityRow {
    double beta = 0.0;
    double mean_err = 0.0;      // restricted comparison (no spurious root tie)
    double max_err = 0.0;
    int n_defined = 0;          // sequences entering the restricted comparison
    double mean_err_full = 0.0; // all sequences with a defined reference row
    int n_full = 0;
};

struct FidelityReport {
    std::vector<FidelityRow> rows;
    std::string to_csv() const;  // beta,mean_err,max_err,n_defined
};

// Sup-norm error between the built transformer's output and the empirical
// transition, over freshly sampled sequences, for each beta in the schedule
// (beta1 = beta2 = beta). Sequences whose reference row is undefined are
// skipped; the restricted columns additionally drop sequences where a root
// row ties the top attention score (the "vanishing fraction" caveat), with
// the unrestricted error reported alongside.
FidelityReport fidelity_report(const CausalGraph& g, const TransitionKernel& pi, int n_sequences,
                               std::span<const double> beta_schedule, Rng& rng);

FidelityReport fidelity_report_multi(const MultiParentGraph& g, const MultiKernel& pi, int n_sequences,
                                     std::span<const double> beta_schedule, Rng& rng);

}  // namespace causaltf
