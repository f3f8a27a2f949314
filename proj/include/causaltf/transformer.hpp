#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "causaltf/matrix.hpp"

namespace causaltf {

struct AttentionResult {
    Matrix out;      // T x D
    Matrix pattern;  // T x T, row i supported on j <= i, rows sum to 1
};

// attn(h; A) = S(MASK(h A h^T)) h. The mask is implemented by restricting
// each row's softmax to j <= i; entries above the diagonal are exactly 0.
AttentionResult causal_attention(const Matrix& h, const Matrix& A);

struct HeadQKV {
    Matrix Q, K, V;  // d x d
};

// Decoder-based attention-only transformer:
// h^0 = embed, h^l = h^{l-1} + sum_i attn(h^{l-1}; Q_i K_i^T) V_i^T,
// output = h^L W_O^T.
struct StandardParams {
    int S = 0, T = 0;
    int dim = 0;    // d
    int d_out = 0;
    std::vector<std::vector<HeadQKV>> layers;
    Matrix E;   // d x S
    Matrix P;   // d x T
    Matrix WO;  // d_out x d

    int depth() const { return static_cast<int>(layers.size()); }
};

// Disentangled transformer: layer outputs are appended, not added.
// d_0 = S + T, d_l = (1 + m_l) d_{l-1}, output = h^L W_O^T.
struct DisentangledParams {
    int S = 0, T = 0;
    int d_out = 0;
    std::vector<std::vector<Matrix>> layers;  // attn matrices, d_{l-1} x d_{l-1}
    Matrix WO;                                // d_out x d_L

    int depth() const { return static_cast<int>(layers.size()); }
    std::vector<int> dim_ladder() const;
    void validate() const;
};

// Residual streams and attention patterns cached by a forward pass.
struct ForwardTrace {
    std::vector<Matrix> h;                           // h^0 .. h^L
    std::vector<std::vector<Matrix>> patterns;       // per layer, per head
    uint64_t params_fingerprint = 0;
};

Matrix standard_forward(const StandardParams& p, std::span<const int> tokens, ForwardTrace* trace = nullptr);
Matrix disentangled_forward(const DisentangledParams& p, std::span<const int> tokens,
                            ForwardTrace* trace = nullptr);

// Exact conversions between the two architectures (same depth and heads).
DisentangledParams disentangle(const StandardParams& p);
StandardParams entangle(const DisentangledParams& p);

struct DisentangledGrads {
    std::vector<std::vector<Matrix>> layers;
    Matrix WO;
};

// Reverse mode through the disentangled stack using the cached trace.
// upstream is dL/d(output), T x d_out. Throws if the trace was produced by
// different parameters.
DisentangledGrads disentangled_backward(const DisentangledParams& p, const ForwardTrace& trace,
                                        const Matrix& upstream);

uint64_t params_fingerprint(const DisentangledParams& p);

// Checkpoint: one-line JSON header, then a flat little-endian float64
// payload, row-major, in declaration order (attention matrices layer-major
// then head-major, then the output matrix).
void save_checkpoint(const std::string& path, const DisentangledParams& p);
DisentangledParams load_checkpoint(const std::string& path);

}  // namespace causaltf
