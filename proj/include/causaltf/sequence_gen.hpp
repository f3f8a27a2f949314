#pragma once

#include <vector>

#include "causaltf/causal_graph.hpp"
#include "causaltf/markov.hpp"
#include "causaltf/matrix.hpp"

namespace causaltf {

// One draw of the task: tokens s_{1:T} (0-indexed values in [0,S)), the
// target s_{T+1}, and the kernel that generated them.
struct SequenceSample {
    std::vector<int> tokens;
    int target = 0;
    TransitionKernel kernel;
};

struct MultiSequenceSample {
    std::vector<int> tokens;
    int target = 0;
    MultiKernel kernel;
};

struct EmbeddedSequence {
    Matrix token_onehots;       // X-bar: T x S
    Matrix disentangled_input;  // X-tilde: T x (S+T), rows [e_{s_t}, e_t]
};

// Task: roots i < T from mu_pi, s_T uniform, non-roots from pi(.|s_{p(i)}),
// target from pi(.|s_T).
SequenceSample generate(const CausalGraph& g, const TransitionKernel& pi, Rng& rng);

// Allocation-light variant for training loops: fills a reused token buffer,
// no target draw, no kernel copy.
void generate_tokens(const CausalGraph& g, const TransitionKernel& pi, Rng& rng,
                     std::vector<int>& tokens);

// k-parent task: roots uniform, others from pi(.|parent tuple), target is
// s_{T+1} drawn from its parents.
MultiSequenceSample generate_multi(const MultiParentGraph& g, const MultiKernel& pi, Rng& rng);

EmbeddedSequence embed(std::span<const int> tokens, int S);
Matrix token_onehots(std::span<const int> tokens, int S);

// delta_s(X): 0/1 vector of positions carrying token s
Vec token_indicator(std::span<const int> tokens, int s);

// empirical token frequency over the sequence
Vec empirical_freq(std::span<const int> tokens, int S);

// JSON-lines batch: one {"tokens": [...], "target": int, "kernel_id": int}
// per line; kernels are written to a sidecar file, one kernel JSON per line.
void write_batch(const std::string& path, const std::string& kernels_path,
                 std::span<const SequenceSample> batch);

}  // namespace causaltf
