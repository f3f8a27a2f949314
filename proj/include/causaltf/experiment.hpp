#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "causaltf/causal_graph.hpp"
#include "causaltf/markov.hpp"
#include "causaltf/reduced_model.hpp"
#include "causaltf/transformer.hpp"

namespace causaltf {

// Two-layer, one-head-per-layer disentangled transformer in the packed form
// used by the joint-training experiments: attention matrices A1 (d0 x d0),
// A2 (2 d0 x 2 d0) and the readout WO (S x 4 d0). The prediction is a softmax
// over the last row of the output.
struct TwoLayerParams {
    int S = 0, T = 0;
    Matrix A1, A2, WO;

    static TwoLayerParams zeros(int S, int T);
    DisentangledParams to_disentangled() const;
    static TwoLayerParams from_disentangled(const DisentangledParams& p);

    // masked softmax of the position-position block of A1 (the avg-attn input)
    Matrix position_pattern() const;
};

struct TwoLayerGrads {
    Matrix A1, A2, WO;
};

// Cross-entropy of softmax(output row T) against the soft target pi(.|s_T),
// with gradients accumulated into g (scaled by weight). Exploits the one-hot
// input structure and the last-row readout; validated against the generic
// disentangled backward in the tests.
double two_layer_loss_grad(const TwoLayerParams& p, std::span<const int> tokens,
                           std::span<const double> target, double weight, TwoLayerGrads* g);

struct JointRunConfig {
    int steps = 2000;
    int batch = 1024;
    double lr = 0.3;
    // cosine decay over `schedule_steps` (the full-scale horizon), truncated
    // at `steps`; 0 decays over `steps` itself
    int schedule_steps = 0;
    bool cosine_decay = true;
    int threads = 1;
    int record_every = 10;
};

struct JointRunRecord {
    int step = 0;
    double loss = 0.0;
    double avg_attn = 0.0;
    double min_edge = 0.0;
};

struct JointRunResult {
    TwoLayerParams params;
    std::vector<JointRunRecord> records;
    double final_avg_attn = 0.0;
    double final_min_edge = 0.0;
};

// Plain GD on all parameters from zero init, fresh kernel per sequence,
// soft-target cross entropy, optional cosine decay. Deterministic for a
// fixed seed at any thread count (ordered reduction).
JointRunResult train_disentangled_joint(const CausalGraph& g, const KernelPrior& prior,
                                        const JointRunConfig& cfg, Rng& rng);

double avg_attention(const Matrix& pattern, const CausalGraph& g);
double min_edge_attention(const Matrix& pattern, const CausalGraph& g);

// Embed reduced-model parameters into the Eq.-11-sparse two-layer transformer
// (the two routes compute identical predictions).
DisentangledParams reduced_to_disentangled(const ReducedParams& p);

struct OodStats {
    double mean = 0.0;
    double q50 = 0.0, q90 = 0.0, q99 = 0.0;
    double max = 0.0;
    int n = 0;
};

// Samples sequences from the task under the fixed kernel and reports the
// distribution of sup_{s'} |f(s_{1:T})_{s'} - pi(s'|s_T)| for the reduced
// model (last-row prediction of the checkpointed transformer).
OodStats run_ood(const DisentangledParams& model, const CausalGraph& g, const TransitionKernel& tilde_pi,
                 int n_sequences, Rng& rng);

// ---- small experiment utilities ----

// Key/value configuration with [section] headers; values are raw strings.
// Grammar: comments start with '#', `key = value` lines belong to the most
// recent [section]; keys are addressed as "section.key".
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::string& path);

    std::string get(const std::string& key, const std::string& fallback) const;
    double get(const std::string& key, double fallback) const;
    int get(const std::string& key, int fallback) const;
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string echo() const;  // re-serialized, sorted, with every resolved key

private:
    std::map<std::string, std::string> values_;
};

// Grayscale ASCII PGM (P2, maxval 255), entries linearly mapped from
// [0, max entry]; zero-size-safe.
void write_pgm(const std::string& path, const Matrix& m);

}  // namespace causaltf
