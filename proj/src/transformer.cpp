#include "causaltf/transformer.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little-endian");

namespace causaltf {

AttentionResult causal_attention(const Matrix& h, const Matrix& A) {
    const int T = h.rows;
    AttentionResult r;
    r.pattern = Matrix(T, T);
    Matrix hA = matmul(h, A);  // T x D
    for (int i = 0; i < T; ++i) {
        auto row = r.pattern.row(i);
        double mx = -1e300;
        for (int j = 0; j <= i; ++j) {
            row[j] = dot(hA.row(i), h.row(j));
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (int j = 0; j <= i; ++j) row[j] /= z;
    }
    r.out = matmul(r.pattern, h);
    return r;
}

std::vector<int> DisentangledParams::dim_ladder() const {
    std::vector<int> d{S + T};
    for (const auto& layer : layers) d.push_back(static_cast<int>(1 + layer.size()) * d.back());
    return d;
}

void DisentangledParams::validate() const {
    auto d = dim_ladder();
    for (size_t l = 0; l < layers.size(); ++l)
        for (const auto& A : layers[l])
            if (A.rows != d[l] || A.cols != d[l]) throw std::invalid_argument("attention matrix off the dim ladder");
    if (WO.cols != d.back() || WO.rows != d_out) throw std::invalid_argument("output matrix shape mismatch");
}

Matrix standard_forward(const StandardParams& p, std::span<const int> tokens, ForwardTrace* trace) {
    if (static_cast<int>(tokens.size()) != p.T) throw std::invalid_argument("sequence length != T");
    const int T = p.T;
    Matrix h(T, p.dim);
    for (int t = 0; t < T; ++t) {
        if (tokens[t] < 0 || tokens[t] >= p.S) throw std::invalid_argument("token out of range");
        for (int a = 0; a < p.dim; ++a) h(t, a) = p.E(a, tokens[t]) + p.P(a, t);
    }
    if (trace) {
        trace->h.clear();
        trace->patterns.clear();
        trace->h.push_back(h);
    }
    for (const auto& layer : p.layers) {
        Matrix next = h;
        std::vector<Matrix> pats;
        for (const auto& head : layer) {
            auto r = causal_attention(h, matmulT(head.Q, head.K));
            next = next + matmulT(r.out, head.V);
            if (trace) pats.push_back(std::move(r.pattern));
        }
        h = std::move(next);
        if (trace) {
            trace->h.push_back(h);
            trace->patterns.push_back(std::move(pats));
        }
    }
    return matmulT(h, p.WO);
}

Matrix disentangled_forward(const DisentangledParams& p, std::span<const int> tokens, ForwardTrace* trace) {
    if (static_cast<int>(tokens.size()) != p.T) throw std::invalid_argument("sequence length != T");
    const int T = p.T;
    Matrix h(T, p.S + T);
    for (int t = 0; t < T; ++t) {
        if (tokens[t] < 0 || tokens[t] >= p.S) throw std::invalid_argument("token out of range");
        h(t, tokens[t]) = 1.0;
        h(t, p.S + t) = 1.0;
    }
    if (trace) {
        trace->h.clear();
        trace->patterns.clear();
        trace->h.push_back(h);
        trace->params_fingerprint = params_fingerprint(p);
    }
    for (const auto& layer : p.layers) {
        const int d_prev = h.cols;
        Matrix next(T, static_cast<int>(1 + layer.size()) * d_prev);
        for (int t = 0; t < T; ++t)
            for (int a = 0; a < d_prev; ++a) next(t, a) = h(t, a);
        std::vector<Matrix> pats;
        int offset = d_prev;
        for (const auto& A : layer) {
            auto r = causal_attention(h, A);
            for (int t = 0; t < T; ++t)
                for (int a = 0; a < d_prev; ++a) next(t, offset + a) = r.out(t, a);
            offset += d_prev;
            if (trace) pats.push_back(std::move(r.pattern));
        }
        h = std::move(next);
        if (trace) {
            trace->h.push_back(h);
            trace->patterns.push_back(std::move(pats));
        }
    }
    return matmulT(h, p.WO);
}

DisentangledParams disentangle(const StandardParams& p) {
    DisentangledParams out;
    out.S = p.S;
    out.T = p.T;
    out.d_out = p.WO.rows;
    // Z^0 = [E, P]; Z^l = [Z^{l-1}, V_1 Z^{l-1}, ..., V_m Z^{l-1}]
    Matrix Z(p.dim, p.S + p.T);
    for (int a = 0; a < p.dim; ++a) {
        for (int s = 0; s < p.S; ++s) Z(a, s) = p.E(a, s);
        for (int t = 0; t < p.T; ++t) Z(a, p.S + t) = p.P(a, t);
    }
    for (const auto& layer : p.layers) {
        std::vector<Matrix> attn;
        for (const auto& head : layer) {
            // A = Z^T Q K^T Z
            attn.push_back(matTmul(Z, matmul(matmulT(head.Q, head.K), Z)));
        }
        Matrix nz(p.dim, static_cast<int>(1 + layer.size()) * Z.cols);
        for (int a = 0; a < p.dim; ++a)
            for (int c = 0; c < Z.cols; ++c) nz(a, c) = Z(a, c);
        int offset = Z.cols;
        for (const auto& head : layer) {
            Matrix vz = matmul(head.V, Z);
            for (int a = 0; a < p.dim; ++a)
                for (int c = 0; c < Z.cols; ++c) nz(a, offset + c) = vz(a, c);
            offset += Z.cols;
        }
        out.layers.push_back(std::move(attn));
        Z = std::move(nz);
    }
    out.WO = matmul(p.WO, Z);
    out.validate();
    return out;
}

StandardParams entangle(const DisentangledParams& p) {
    p.validate();
    auto dims = p.dim_ladder();
    const int dL = dims.back();
    StandardParams out;
    out.S = p.S;
    out.T = p.T;
    out.dim = dL;
    out.d_out = p.d_out;
    out.E = Matrix(dL, p.S);
    for (int s = 0; s < p.S; ++s) out.E(s, s) = 1.0;
    out.P = Matrix(dL, p.T);
    for (int t = 0; t < p.T; ++t) out.P(p.S + t, t) = 1.0;
    for (size_t l = 0; l < p.layers.size(); ++l) {
        const int d_prev = dims[l];
        std::vector<HeadQKV> heads;
        for (size_t i = 0; i < p.layers[l].size(); ++i) {
            HeadQKV head;
            head.Q = Matrix(dL, dL);
            for (int a = 0; a < d_prev; ++a)
                for (int b = 0; b < d_prev; ++b) head.Q(a, b) = p.layers[l][i](a, b);
            head.K = Matrix(dL, dL);
            for (int a = 0; a < d_prev; ++a) head.K(a, a) = 1.0;
            // value block writes the attended stream at block offset (i+1) d_prev
            head.V = Matrix(dL, dL);
            int offset = static_cast<int>(i + 1) * d_prev;
            for (int a = 0; a < d_prev; ++a) head.V(offset + a, a) = 1.0;
            heads.push_back(std::move(head));
        }
        out.layers.push_back(std::move(heads));
    }
    out.WO = p.WO;
    return out;
}

namespace {

void hash_doubles(uint64_t& h, const std::vector<double>& v) {
    for (double x : v) {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        h ^= bits;
        h *= 0x100000001b3ull;  // FNV-1a step
    }
}

}  // namespace

uint64_t params_fingerprint(const DisentangledParams& p) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& layer : p.layers)
        for (const auto& A : layer) hash_doubles(h, A.data);
    hash_doubles(h, p.WO.data);
    return h;
}

DisentangledGrads disentangled_backward(const DisentangledParams& p, const ForwardTrace& trace,
                                        const Matrix& upstream) {
    if (trace.params_fingerprint != params_fingerprint(p))
        throw std::logic_error("disentangled_backward: trace is stale for these parameters");
    const int L = p.depth();
    if (static_cast<int>(trace.h.size()) != L + 1) throw std::logic_error("trace depth mismatch");
    const int T = p.T;

    DisentangledGrads g;
    g.layers.resize(L);
    // output layer: TF = h^L WO^T
    g.WO = matTmul(upstream, trace.h[L]);
    Matrix dh = matmul(upstream, p.WO);  // dL/dh^L

    for (int l = L - 1; l >= 0; --l) {
        const Matrix& h = trace.h[l];
        const int d_prev = h.cols;
        const int m = static_cast<int>(p.layers[l].size());
        Matrix dh_prev(T, d_prev);
        for (int t = 0; t < T; ++t)
            for (int a = 0; a < d_prev; ++a) dh_prev(t, a) = dh(t, a);

        for (int i = 0; i < m; ++i) {
            const Matrix& A = p.layers[l][i];
            const Matrix& pat = trace.patterns[l][i];
            Matrix dout(T, d_prev);
            int offset = (i + 1) * d_prev;
            for (int t = 0; t < T; ++t)
                for (int a = 0; a < d_prev; ++a) dout(t, a) = dh(t, offset + a);

            // attn = pat * h
            dh_prev = dh_prev + matTmul(pat, dout);
            Matrix dpat = matmulT(dout, h);  // T x T

            // through the row softmax, restricted to j <= r
            Matrix dscore(T, T);
            for (int r = 0; r < T; ++r) {
                double pv = 0.0;
                for (int c = 0; c <= r; ++c) pv += pat(r, c) * dpat(r, c);
                for (int c = 0; c <= r; ++c) dscore(r, c) = pat(r, c) * (dpat(r, c) - pv);
            }

            // score = h A h^T (masked): dA = h^T dscore h,
            // dh += dscore (h A^T) + dscore^T (h A)
            Matrix hA = matmul(h, A);
            Matrix hAT = matmulT(h, A);  // h * A^T
            g.layers[l].push_back(matTmul(h, matmul(dscore, h)));
            dh_prev = dh_prev + matmul(dscore, hAT) + matTmul(dscore, hA);
        }
        dh = std::move(dh_prev);
    }
    return g;
}

void save_checkpoint(const std::string& path, const DisentangledParams& p) {
    nlohmann::json j;
    j["kind"] = "disentangled";
    j["S"] = p.S;
    j["T"] = p.T;
    j["d_out"] = p.d_out;
    std::vector<int> heads;
    for (const auto& layer : p.layers) heads.push_back(static_cast<int>(layer.size()));
    j["heads"] = heads;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f << j.dump() << "\n";
    auto dump = [&](const Matrix& m) {
        f.write(reinterpret_cast<const char*>(m.data.data()),
                static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    };
    for (const auto& layer : p.layers)
        for (const auto& A : layer) dump(A);
    dump(p.WO);
}

DisentangledParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string header;
    std::getline(f, header);
    auto j = nlohmann::json::parse(header);
    DisentangledParams p;
    p.S = j.at("S").get<int>();
    p.T = j.at("T").get<int>();
    p.d_out = j.at("d_out").get<int>();
    std::vector<int> heads = j.at("heads").get<std::vector<int>>();
    auto slurp = [&](Matrix& m) {
        f.read(reinterpret_cast<char*>(m.data.data()),
               static_cast<std::streamsize>(m.data.size() * sizeof(double)));
        if (!f) throw std::runtime_error("checkpoint payload truncated");
    };
    int d = p.S + p.T;
    for (int m_l : heads) {
        std::vector<Matrix> layer;
        for (int i = 0; i < m_l; ++i) {
            Matrix A(d, d);
            slurp(A);
            layer.push_back(std::move(A));
        }
        p.layers.push_back(std::move(layer));
        d *= (1 + m_l);
    }
    p.WO = Matrix(p.d_out, d);
    slurp(p.WO);
    p.validate();
    return p;
}

}  // namespace causaltf
