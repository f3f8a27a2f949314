#pragma once

#include <optional>
#include <string>
#include <vector>

#include "causaltf/rng.hpp"

namespace causaltf {

// Distance in the undirected forest; infinity when the endpoints lie in
// different trees. Carried as a tagged value, never a sentinel integer.
struct GraphDistance {
    bool finite = false;
    int value = 0;

    static GraphDistance infinite() { return {false, 0}; }
    static GraphDistance of(int v) { return {true, v}; }
    bool operator==(const GraphDistance&) const = default;
};

struct GraphStats {
    int tree_count = 0;
    std::vector<int> leaves_per_tree;  // childless nodes per tree
    double t_eff = 0.0;                // T / max leaves
    double root_fraction = 0.0;        // r = |R| / T

    // Degree-<=-1 nodes per tree in the undirected view (the childless count
    // plus one when the root has a single child). This is the constant that
    // actually bounds distance spheres: a path from i can leave through the
    // root, so T_eff(lambda) >= (1-lambda) T / max undirected leaves; with
    // childless counts alone the chain graph is already a counterexample.
    std::vector<int> undirected_leaves_per_tree;
};

// Single-parent causal forest on positions 1..T. parents[i-1] = 0 marks a
// root; otherwise the 1-indexed parent, always < i. Position T is a root
// (the task resamples s_T uniformly).
class CausalGraph {
public:
    CausalGraph(int T, std::vector<int> parents);

    int length() const { return T_; }
    // 0 when i is a root
    int parent(int i) const { return parents_[i - 1]; }
    bool is_root(int i) const { return parents_[i - 1] == 0; }
    const std::vector<int>& roots() const { return roots_; }
    int tree_id(int i) const { return tree_id_[i - 1]; }

    static CausalGraph chain(int T);
    static CausalGraph icl(int T);
    static CausalGraph random(int T, double root_prob, Rng& rng);

    std::string to_json() const;
    static CausalGraph from_json(const std::string& text);

    bool operator==(const CausalGraph& o) const { return T_ == o.T_ && parents_ == o.parents_; }

private:
    int T_;
    std::vector<int> parents_;
    std::vector<int> roots_;
    std::vector<int> tree_id_;
};

// k-parent DAG on positions 1..T+1. Every position has either no parents or
// exactly k, sorted strictly increasing and all < i; position T+1 has parents.
class MultiParentGraph {
public:
    MultiParentGraph(int T, int arity, std::vector<std::vector<int>> parents);

    int length() const { return T_; }       // T; positions run 1..T+1
    int arity() const { return k_; }
    const std::vector<int>& parents(int i) const { return parents_[i - 1]; }
    bool is_root(int i) const { return parents_[i - 1].empty(); }

    // p(i) = {i-n+1, ..., i-1} for i >= n; roots are 1..n-1
    static MultiParentGraph ngram(int T, int n);
    static MultiParentGraph single_parent_lift(const CausalGraph& g, int target_parent);

    std::string to_json() const;
    static MultiParentGraph from_json(const std::string& text);

private:
    int T_;
    int k_;
    std::vector<std::vector<int>> parents_;  // size T+1
};

GraphDistance graph_distance(const CausalGraph& g, int i, int j);
std::optional<int> least_common_ancestor(const CausalGraph& g, int i, int j);
GraphStats effective_length(const CausalGraph& g);
double effective_length_lambda(const CausalGraph& g, double lambda);

// All-pairs distance table (memoized per-tree BFS); entry (i-1, j-1).
std::vector<std::vector<GraphDistance>> all_pairs_distances(const CausalGraph& g);

}  // namespace causaltf
