#include "causaltf/sequence_gen.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace causaltf {

void generate_tokens(const CausalGraph& g, const TransitionKernel& pi, Rng& rng,
                     std::vector<int>& tokens) {
    const int T = g.length();
    tokens.resize(T);
    // index order is a valid generation order since p(i) < i
    for (int i = 1; i < T; ++i) {
        if (g.is_root(i))
            tokens[i - 1] = rng.categorical(pi.stationary);
        else
            tokens[i - 1] = rng.categorical(pi.rows.row(tokens[g.parent(i) - 1]));
    }
    tokens[T - 1] = rng.next_below(pi.size);
}

SequenceSample generate(const CausalGraph& g, const TransitionKernel& pi, Rng& rng) {
    SequenceSample out;
    generate_tokens(g, pi, rng, out.tokens);
    out.target = rng.categorical(pi.rows.row(out.tokens[g.length() - 1]));
    out.kernel = pi;
    return out;
}

MultiSequenceSample generate_multi(const MultiParentGraph& g, const MultiKernel& pi, Rng& rng) {
    const int T = g.length();
    const int S = pi.size;
    MultiSequenceSample out;
    std::vector<int> seq(T + 1);
    std::vector<int> pvals(pi.arity);
    for (int i = 1; i <= T + 1; ++i) {
        if (g.is_root(i)) {
            seq[i - 1] = rng.next_below(S);
        } else {
            const auto& ps = g.parents(i);
            for (size_t l = 0; l < ps.size(); ++l) pvals[l] = seq[ps[l] - 1];
            seq[i - 1] = rng.categorical(pi.conditional(pvals));
        }
    }
    out.target = seq[T];
    seq.resize(T);
    out.tokens = std::move(seq);
    out.kernel = pi;
    return out;
}

Matrix token_onehots(std::span<const int> tokens, int S) {
    Matrix x(static_cast<int>(tokens.size()), S);
    for (size_t t = 0; t < tokens.size(); ++t) x(static_cast<int>(t), tokens[t]) = 1.0;
    return x;
}

EmbeddedSequence embed(std::span<const int> tokens, int S) {
    const int T = static_cast<int>(tokens.size());
    EmbeddedSequence e;
    e.token_onehots = token_onehots(tokens, S);
    e.disentangled_input = Matrix(T, S + T);
    for (int t = 0; t < T; ++t) {
        e.disentangled_input(t, tokens[t]) = 1.0;
        e.disentangled_input(t, S + t) = 1.0;
    }
    return e;
}

Vec token_indicator(std::span<const int> tokens, int s) {
    Vec d(tokens.size(), 0.0);
    for (size_t t = 0; t < tokens.size(); ++t)
        if (tokens[t] == s) d[t] = 1.0;
    return d;
}

Vec empirical_freq(std::span<const int> tokens, int S) {
    Vec mu(S, 0.0);
    for (int t : tokens) mu[t] += 1.0;
    for (double& v : mu) v /= static_cast<double>(tokens.size());
    return mu;
}

void write_batch(const std::string& path, const std::string& kernels_path,
                 std::span<const SequenceSample> batch) {
    std::ofstream seq_out(path);
    std::ofstream ker_out(kernels_path);
    if (!seq_out || !ker_out) throw std::runtime_error("write_batch: cannot open output files");
    for (size_t n = 0; n < batch.size(); ++n) {
        nlohmann::json j;
        j["tokens"] = batch[n].tokens;
        j["target"] = batch[n].target;
        j["kernel_id"] = n;
        seq_out << j.dump() << "\n";
        ker_out << batch[n].kernel.to_json() << "\n";
    }
}

}  // namespace causaltf
