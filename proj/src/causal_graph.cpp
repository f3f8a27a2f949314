#include "causaltf/causal_graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "json.hpp"

namespace causaltf {

CausalGraph::CausalGraph(int T, std::vector<int> parents) : T_(T), parents_(std::move(parents)) {
    if (T_ < 3) throw std::invalid_argument("graph needs T >= 3");
    if (static_cast<int>(parents_.size()) != T_) throw std::invalid_argument("parents size != T");
    for (int i = 1; i <= T_; ++i) {
        int p = parents_[i - 1];
        if (p < 0 || p >= i) throw std::invalid_argument("parent must satisfy p(i) < i (0 for roots)");
    }
    if (parents_[T_ - 1] != 0) throw std::invalid_argument("position T must be a root");

    tree_id_.assign(T_, -1);
    for (int i = 1; i <= T_; ++i) {
        if (parents_[i - 1] == 0) {
            roots_.push_back(i);
            tree_id_[i - 1] = static_cast<int>(roots_.size()) - 1;
        } else {
            tree_id_[i - 1] = tree_id_[parents_[i - 1] - 1];
        }
    }
}

CausalGraph CausalGraph::chain(int T) {
    std::vector<int> p(T, 0);
    for (int i = 2; i < T; ++i) p[i - 1] = i - 1;
    return CausalGraph(T, std::move(p));
}

CausalGraph CausalGraph::icl(int T) {
    std::vector<int> p(T, 0);
    for (int i = 2; i < T; i += 2) p[i - 1] = i - 1;  // p(2k) = 2k-1
    return CausalGraph(T, std::move(p));
}

CausalGraph CausalGraph::random(int T, double root_prob, Rng& rng) {
    std::vector<int> p(T, 0);
    for (int i = 2; i < T; ++i) {
        if (rng.next_double() < root_prob) continue;
        p[i - 1] = 1 + rng.next_below(i - 1);
    }
    // position T stays a root regardless of the coin
    return CausalGraph(T, std::move(p));
}

std::string CausalGraph::to_json() const {
    nlohmann::json j;
    j["T"] = T_;
    auto ps = nlohmann::json::array();
    for (int p : parents_) {
        if (p == 0)
            ps.push_back(nullptr);
        else
            ps.push_back(p);
    }
    j["parents"] = ps;
    return j.dump();
}

CausalGraph CausalGraph::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    int T = j.at("T").get<int>();
    std::vector<int> p;
    for (const auto& v : j.at("parents")) p.push_back(v.is_null() ? 0 : v.get<int>());
    return CausalGraph(T, std::move(p));
}

MultiParentGraph::MultiParentGraph(int T, int arity, std::vector<std::vector<int>> parents)
    : T_(T), k_(arity), parents_(std::move(parents)) {
    if (T_ < 3 || k_ < 1) throw std::invalid_argument("need T >= 3 and k >= 1");
    if (static_cast<int>(parents_.size()) != T_ + 1) throw std::invalid_argument("parents size != T+1");
    for (int i = 1; i <= T_ + 1; ++i) {
        const auto& ps = parents_[i - 1];
        if (!ps.empty() && static_cast<int>(ps.size()) != k_)
            throw std::invalid_argument("|p(i)| must be 0 or k");
        for (size_t l = 0; l < ps.size(); ++l) {
            if (ps[l] < 1 || ps[l] >= i) throw std::invalid_argument("multi-parent out of range");
            if (l > 0 && ps[l] <= ps[l - 1]) throw std::invalid_argument("parent tuple must be sorted increasing");
        }
    }
    if (parents_[T_].empty()) throw std::invalid_argument("position T+1 must have parents");
}

MultiParentGraph MultiParentGraph::ngram(int T, int n) {
    if (n < 2 || T + 1 <= n) throw std::invalid_argument("ngram needs n >= 2 and T+1 > n");
    int k = n - 1;
    std::vector<std::vector<int>> ps(T + 1);
    for (int i = n; i <= T + 1; ++i) {
        std::vector<int> tup;
        for (int l = i - n + 1; l <= i - 1; ++l) tup.push_back(l);
        ps[i - 1] = std::move(tup);
    }
    return MultiParentGraph(T, k, std::move(ps));
}

MultiParentGraph MultiParentGraph::single_parent_lift(const CausalGraph& g, int target_parent) {
    const int T = g.length();
    if (target_parent < 1 || target_parent > T) throw std::invalid_argument("bad target parent");
    std::vector<std::vector<int>> ps(T + 1);
    for (int i = 1; i <= T; ++i)
        if (!g.is_root(i)) ps[i - 1] = {g.parent(i)};
    ps[T] = {target_parent};
    return MultiParentGraph(T, 1, std::move(ps));
}

std::string MultiParentGraph::to_json() const {
    nlohmann::json j;
    j["T"] = T_;
    j["k"] = k_;
    auto ps = nlohmann::json::array();
    for (const auto& tup : parents_) {
        if (tup.empty())
            ps.push_back(nullptr);
        else
            ps.push_back(tup);
    }
    j["parents"] = ps;
    return j.dump();
}

MultiParentGraph MultiParentGraph::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    int T = j.at("T").get<int>();
    int k = j.at("k").get<int>();
    std::vector<std::vector<int>> ps;
    for (const auto& v : j.at("parents")) {
        if (v.is_null())
            ps.emplace_back();
        else
            ps.push_back(v.get<std::vector<int>>());
    }
    return MultiParentGraph(T, k, std::move(ps));
}

namespace {

std::vector<std::vector<int>> adjacency(const CausalGraph& g) {
    std::vector<std::vector<int>> adj(g.length() + 1);
    for (int i = 1; i <= g.length(); ++i) {
        int p = g.parent(i);
        if (p != 0) {
            adj[i].push_back(p);
            adj[p].push_back(i);
        }
    }
    return adj;
}

std::vector<int> bfs_from(const std::vector<std::vector<int>>& adj, int src) {
    std::vector<int> dist(adj.size(), -1);
    std::deque<int> q{src};
    dist[src] = 0;
    while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        for (int v : adj[u])
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
    }
    return dist;
}

}  // namespace

GraphDistance graph_distance(const CausalGraph& g, int i, int j) {
    if (i < 1 || i > g.length() || j < 1 || j > g.length())
        throw std::out_of_range("graph_distance: index out of range");
    if (i == j) return GraphDistance::of(0);
    if (g.tree_id(i) != g.tree_id(j)) return GraphDistance::infinite();
    auto d = bfs_from(adjacency(g), i);
    return GraphDistance::of(d[j]);
}

std::optional<int> least_common_ancestor(const CausalGraph& g, int i, int j) {
    if (g.tree_id(i) != g.tree_id(j)) return std::nullopt;
    std::vector<int> ai;  // i and its ancestors up to the root
    for (int u = i; u != 0; u = g.parent(u)) ai.push_back(u);
    std::vector<int> aj;
    for (int u = j; u != 0; u = g.parent(u)) aj.push_back(u);
    // deepest common suffix element
    int a = static_cast<int>(ai.size()) - 1, b = static_cast<int>(aj.size()) - 1;
    int lca = -1;
    while (a >= 0 && b >= 0 && ai[a] == aj[b]) {
        lca = ai[a];
        --a;
        --b;
    }
    if (lca < 0) return std::nullopt;
    return lca;
}

GraphStats effective_length(const CausalGraph& g) {
    const int T = g.length();
    std::vector<int> children(T + 1, 0);
    for (int i = 1; i <= T; ++i)
        if (!g.is_root(i)) ++children[g.parent(i)];

    GraphStats st;
    st.tree_count = static_cast<int>(g.roots().size());
    st.leaves_per_tree.assign(st.tree_count, 0);
    for (int i = 1; i <= T; ++i)
        if (children[i] == 0) ++st.leaves_per_tree[g.tree_id(i)];
    st.undirected_leaves_per_tree = st.leaves_per_tree;
    for (int r : g.roots())
        if (children[r] == 1) ++st.undirected_leaves_per_tree[g.tree_id(r)];
    int max_leaves = *std::max_element(st.leaves_per_tree.begin(), st.leaves_per_tree.end());
    st.t_eff = static_cast<double>(T) / max_leaves;
    st.root_fraction = static_cast<double>(st.tree_count) / T;
    return st;
}

std::vector<std::vector<GraphDistance>> all_pairs_distances(const CausalGraph& g) {
    const int T = g.length();
    auto adj = adjacency(g);
    std::vector<std::vector<GraphDistance>> out(T, std::vector<GraphDistance>(T, GraphDistance::infinite()));
    for (int i = 1; i <= T; ++i) {
        auto d = bfs_from(adj, i);
        for (int j = 1; j <= T; ++j)
            if (d[j] >= 0) out[i - 1][j - 1] = GraphDistance::of(d[j]);
    }
    return out;
}

double effective_length_lambda(const CausalGraph& g, double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must be in (0,1)");
    const int T = g.length();
    auto dist = all_pairs_distances(g);
    double denom = 0.0;
    for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j)
            if (dist[i][j].finite) denom += std::pow(lambda, dist[i][j].value);  // lambda^inf := 0
    return static_cast<double>(T) * T / denom;
}

}  // namespace causaltf
