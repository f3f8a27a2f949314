#include "causaltf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "causaltf/sequence_gen.hpp"

namespace causaltf {

TwoLayerParams TwoLayerParams::zeros(int S, int T) {
    TwoLayerParams p;
    p.S = S;
    p.T = T;
    const int d = S + T;
    p.A1 = Matrix(d, d);
    p.A2 = Matrix(2 * d, 2 * d);
    p.WO = Matrix(S, 4 * d);
    return p;
}

DisentangledParams TwoLayerParams::to_disentangled() const {
    DisentangledParams p;
    p.S = S;
    p.T = T;
    p.d_out = S;
    p.layers = {{A1}, {A2}};
    p.WO = WO;
    p.validate();
    return p;
}

TwoLayerParams TwoLayerParams::from_disentangled(const DisentangledParams& p) {
    if (p.depth() != 2 || p.layers[0].size() != 1 || p.layers[1].size() != 1)
        throw std::invalid_argument("expected a two-layer single-head transformer");
    TwoLayerParams q;
    q.S = p.S;
    q.T = p.T;
    q.A1 = p.layers[0][0];
    q.A2 = p.layers[1][0];
    q.WO = p.WO;
    return q;
}

Matrix TwoLayerParams::position_pattern() const {
    Matrix block(T, T);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j) block(i, j) = A1(S + i, S + j);
    return masked_row_softmax(block);
}

double avg_attention(const Matrix& pattern, const CausalGraph& g) {
    double sum = 0.0;
    int n = 0;
    for (int i = 1; i <= g.length(); ++i) {
        if (g.is_root(i)) continue;
        sum += pattern(i - 1, g.parent(i) - 1);
        ++n;
    }
    return n > 0 ? sum / n : 0.0;
}

double min_edge_attention(const Matrix& pattern, const CausalGraph& g) {
    double mn = 1.0;
    for (int i = 1; i <= g.length(); ++i)
        if (!g.is_root(i)) mn = std::min(mn, pattern(i - 1, g.parent(i) - 1));
    return mn;
}

double two_layer_loss_grad(const TwoLayerParams& p, std::span<const int> tokens,
                           std::span<const double> target, double weight, TwoLayerGrads* g) {
    const int S = p.S, T = p.T;
    if (T > 512) throw std::invalid_argument("two_layer_loss_grad: T > 512");
    const int d0 = S + T, d1 = 2 * d0;
    const int last = T - 1;

    // scratch reused across calls; the trainer visits this millions of times
    thread_local Matrix P1, attn1, D;
    thread_local Vec qvec, score2, p2, out2, y, prob, dy, dh1_last, du, dp2, ds2, wsum;
    auto reset_mat = [](Matrix& m, int r, int c) {
        if (m.rows != r || m.cols != c)
            m = Matrix(r, c);
        else
            std::fill(m.data.begin(), m.data.end(), 0.0);
    };

    // layer 1: scores through the one-hot structure, masked row softmax
    reset_mat(P1, T, T);
    for (int i = 0; i < T; ++i) {
        double mx = -1e300;
        for (int j = 0; j <= i; ++j) {
            double sc = p.A1(tokens[i], tokens[j]) + p.A1(tokens[i], S + j) + p.A1(S + i, tokens[j]) +
                        p.A1(S + i, S + j);
            P1(i, j) = sc;
            mx = std::max(mx, sc);
        }
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
            P1(i, j) = std::exp(P1(i, j) - mx);
            z += P1(i, j);
        }
        for (int j = 0; j <= i; ++j) P1(i, j) /= z;
    }
    reset_mat(attn1, T, d0);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j <= i; ++j) {
            attn1(i, tokens[j]) += P1(i, j);
            attn1(i, S + j) += P1(i, j);
        }

    // h1_j = [x_j, attn1_j]; only the last row queries layer 2
    // qvec = A2^T h1_last
    qvec.assign(d1, 0.0);
    auto add_row = [&](int row, double c) {
        const double* r = &p.A2.data[static_cast<size_t>(row) * d1];
        for (int a = 0; a < d1; ++a) qvec[a] += c * r[a];
    };
    add_row(tokens[last], 1.0);
    add_row(S + last, 1.0);
    for (int c = 0; c < d0; ++c)
        if (attn1(last, c) != 0.0) add_row(d0 + c, attn1(last, c));

    score2.resize(T);
    for (int j = 0; j < T; ++j) {
        double sc = qvec[tokens[j]] + qvec[S + j];
        const double* aj = &attn1.data[static_cast<size_t>(j) * d0];
        for (int c = 0; c < d0; ++c) sc += qvec[d0 + c] * aj[c];
        score2[j] = sc;
    }
    p2.assign(score2.begin(), score2.end());
    softmax_inplace(p2);

    out2.assign(d1, 0.0);
    for (int j = 0; j < T; ++j) {
        out2[tokens[j]] += p2[j];
        out2[S + j] += p2[j];
        const double* aj = &attn1.data[static_cast<size_t>(j) * d0];
        for (int c = 0; c < d0; ++c) out2[d0 + c] += p2[j] * aj[c];
    }

    // y = WO [h1_last, out2]
    y.assign(S, 0.0);
    for (int o = 0; o < S; ++o) {
        const double* w = &p.WO.data[static_cast<size_t>(o) * 4 * d0];
        double v = w[tokens[last]] + w[S + last];
        for (int c = 0; c < d0; ++c) v += w[d0 + c] * attn1(last, c);
        for (int a = 0; a < d1; ++a) v += w[d1 + a] * out2[a];
        y[o] = v;
    }
    prob.assign(y.begin(), y.end());
    softmax_inplace(prob);
    double loss = 0.0;
    for (int o = 0; o < S; ++o)
        if (target[o] > 0.0) loss -= weight * target[o] * std::log(prob[o]);
    if (!g) return loss;

    // dL/dy, then back through WO
    dy.resize(S);
    for (int o = 0; o < S; ++o) dy[o] = weight * (prob[o] - target[o]);

    dh1_last.assign(d1, 0.0);
    du.assign(d1, 0.0);
    for (int o = 0; o < S; ++o) {
        double* wg = &g->WO.data[static_cast<size_t>(o) * 4 * d0];
        wg[tokens[last]] += dy[o];
        wg[S + last] += dy[o];
        for (int c = 0; c < d0; ++c) wg[d0 + c] += dy[o] * attn1(last, c);
        for (int a = 0; a < d1; ++a) wg[d1 + a] += dy[o] * out2[a];
        const double* w = &p.WO.data[static_cast<size_t>(o) * 4 * d0];
        for (int a = 0; a < d1; ++a) {
            dh1_last[a] += dy[o] * w[a];
            du[a] += dy[o] * w[d1 + a];
        }
    }

    // out2 = sum_j p2_j h1_j
    dp2.resize(T);
    for (int j = 0; j < T; ++j) {
        double v = du[tokens[j]] + du[S + j];
        const double* aj = &attn1.data[static_cast<size_t>(j) * d0];
        for (int c = 0; c < d0; ++c) v += du[d0 + c] * aj[c];
        dp2[j] = v;
    }
    double pd = dot(p2, dp2);
    ds2.resize(T);
    for (int j = 0; j < T; ++j) ds2[j] = p2[j] * (dp2[j] - pd);

    // score2(j) = h1_last^T A2 h1_j
    wsum.assign(d1, 0.0);  // sum_j ds2_j h1_j
    for (int j = 0; j < T; ++j) {
        wsum[tokens[j]] += ds2[j];
        wsum[S + j] += ds2[j];
        const double* aj = &attn1.data[static_cast<size_t>(j) * d0];
        for (int c = 0; c < d0; ++c) wsum[d0 + c] += ds2[j] * aj[c];
    }
    // dA2 += h1_last (x) wsum
    auto outer_add = [&](int row, double c) {
        double* r = &g->A2.data[static_cast<size_t>(row) * d1];
        for (int a = 0; a < d1; ++a) r[a] += c * wsum[a];
    };
    outer_add(tokens[last], 1.0);
    outer_add(S + last, 1.0);
    for (int c = 0; c < d0; ++c)
        if (attn1(last, c) != 0.0) outer_add(d0 + c, attn1(last, c));
    // dh1_last += A2 wsum
    for (int a = 0; a < d1; ++a) {
        const double* r = &p.A2.data[static_cast<size_t>(a) * d1];
        double v = 0.0;
        for (int b = 0; b < d1; ++b) v += r[b] * wsum[b];
        dh1_last[a] += v;
    }

    // per-row gradient of h1: value path p2_j du + query-key path ds2_j qvec
    reset_mat(D, T, d0);  // gradient of attn1 rows
    for (int j = 0; j < T; ++j) {
        const double a = p2[j], b = ds2[j];
        for (int c = 0; c < d0; ++c) D(j, c) = a * du[d0 + c] + b * qvec[d0 + c];
    }
    for (int c = 0; c < d0; ++c) D(last, c) += dh1_last[d0 + c];

    // attn1 = P1 X; back through the masked softmax rows into A1
    for (int i = 0; i < T; ++i) {
        double dp_row[512];
        double pv = 0.0;
        for (int j = 0; j <= i; ++j) {
            dp_row[j] = D(i, tokens[j]) + D(i, S + j);
            pv += P1(i, j) * dp_row[j];
        }
        for (int j = 0; j <= i; ++j) {
            double ds = P1(i, j) * (dp_row[j] - pv);
            if (ds == 0.0) continue;
            g->A1(tokens[i], tokens[j]) += ds;
            g->A1(tokens[i], S + j) += ds;
            g->A1(S + i, tokens[j]) += ds;
            g->A1(S + i, S + j) += ds;
        }
    }
    return loss;
}

JointRunResult train_disentangled_joint(const CausalGraph& g, const KernelPrior& prior,
                                        const JointRunConfig& cfg, Rng& rng) {
    const int S = prior.alphabet_size();
    const int T = g.length();
    if (T > 500) throw std::invalid_argument("joint trainer is desk-scale (T <= 500)");
    TwoLayerParams p = TwoLayerParams::zeros(S, T);

    const int n_threads = std::max(1, cfg.threads);
    JointRunResult result;

    const int horizon = cfg.schedule_steps > 0 ? cfg.schedule_steps : cfg.steps;
    for (int step = 0; step < cfg.steps; ++step) {
        double lr = cfg.lr;
        if (cfg.cosine_decay) lr *= 0.5 * (1.0 + std::cos(M_PI * std::min(step, horizon) / horizon));

        std::vector<TwoLayerGrads> partial(n_threads);
        std::vector<double> losses(n_threads, 0.0);
        for (auto& gr : partial) {
            gr.A1 = Matrix(S + T, S + T);
            gr.A2 = Matrix(2 * (S + T), 2 * (S + T));
            gr.WO = Matrix(S, 4 * (S + T));
        }
        const double w = 1.0 / cfg.batch;
        auto worker = [&](int tid) {
            std::vector<int> tokens;
            for (int n = tid; n < cfg.batch; n += n_threads) {
                Rng srng = rng.stream(0x70661u + static_cast<uint64_t>(step) * cfg.batch + n);
                TransitionKernel pi = prior.sample(srng);
                generate_tokens(g, pi, srng, tokens);
                losses[tid] += two_layer_loss_grad(p, tokens, pi.rows.row(tokens.back()), w,
                                                   &partial[tid]);
            }
        };
        if (n_threads == 1) {
            worker(0);
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
            for (auto& th : pool) th.join();
        }
        double loss = 0.0;
        for (int t = 0; t < n_threads; ++t) {
            loss += losses[t];
            for (size_t i = 0; i < p.A1.data.size(); ++i) p.A1.data[i] -= lr * partial[t].A1.data[i];
            for (size_t i = 0; i < p.A2.data.size(); ++i) p.A2.data[i] -= lr * partial[t].A2.data[i];
            for (size_t i = 0; i < p.WO.data.size(); ++i) p.WO.data[i] -= lr * partial[t].WO.data[i];
        }
        if (!std::isfinite(loss)) throw std::runtime_error("joint training diverged at step " + std::to_string(step));

        if (step % cfg.record_every == 0 || step == cfg.steps - 1) {
            Matrix pat = p.position_pattern();
            result.records.push_back({step, loss, avg_attention(pat, g), min_edge_attention(pat, g)});
        }
    }
    Matrix pat = p.position_pattern();
    result.final_avg_attn = avg_attention(pat, g);
    result.final_min_edge = min_edge_attention(pat, g);
    result.params = std::move(p);
    return result;
}

DisentangledParams reduced_to_disentangled(const ReducedParams& p) {
    const int S = p.S, T = p.T;
    const int d = S + T;
    DisentangledParams out;
    out.S = S;
    out.T = T;
    out.d_out = S;
    Matrix A1(d, d);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j <= i; ++j) A1(S + i, S + j) = p.A1(i, j);
    // the reduced model applies A2 on the right of X, so the comparator block
    // carries its transpose
    Matrix A2(2 * d, 2 * d);
    for (int a = 0; a < S; ++a)
        for (int b = 0; b < S; ++b) A2(a, d + b) = p.A2(b, a);
    Matrix WO(S, 4 * d);
    for (int s = 0; s < S; ++s) WO(s, 2 * d + s) = 1.0;
    out.layers = {{std::move(A1)}, {std::move(A2)}};
    out.WO = std::move(WO);
    out.validate();
    return out;
}

OodStats run_ood(const DisentangledParams& model, const CausalGraph& g, const TransitionKernel& tilde_pi,
                 int n_sequences, Rng& rng) {
    std::vector<double> errs;
    errs.reserve(n_sequences);
    for (int n = 0; n < n_sequences; ++n) {
        SequenceSample smp = generate(g, tilde_pi, rng);
        Matrix out = disentangled_forward(model, smp.tokens);
        double sup = 0.0;
        for (int s = 0; s < tilde_pi.size; ++s)
            sup = std::max(sup, std::abs(out(model.T - 1, s) - tilde_pi.rows(smp.tokens.back(), s)));
        errs.push_back(sup);
    }
    std::sort(errs.begin(), errs.end());
    OodStats st;
    st.n = n_sequences;
    for (double e : errs) st.mean += e / n_sequences;
    auto q = [&](double f) { return errs[std::min<size_t>(errs.size() - 1, static_cast<size_t>(f * errs.size()))]; };
    st.q50 = q(0.50);
    st.q90 = q(0.90);
    st.q99 = q(0.99);
    st.max = errs.back();
    return st;
}

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("config: expected key = value, got: " + line);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
}

Config Config::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse(buf.str());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
}

int Config::get(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoi(it->second);
}

std::string Config::echo() const {
    std::ostringstream out;
    std::string section;
    for (const auto& [key, value] : values_) {
        auto dotpos = key.find('.');
        std::string sec = dotpos == std::string::npos ? "" : key.substr(0, dotpos);
        std::string name = dotpos == std::string::npos ? key : key.substr(dotpos + 1);
        if (sec != section) {
            out << "[" << sec << "]\n";
            section = sec;
        }
        out << name << " = " << value << "\n";
    }
    return out.str();
}

void write_pgm(const std::string& path, const Matrix& m) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open pgm for writing: " + path);
    double mx = max_abs(m);
    f << "P2\n" << m.cols << " " << m.rows << "\n255\n";
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            int v = mx > 0.0 ? static_cast<int>(std::lround(std::abs(m(i, j)) / mx * 255.0)) : 0;
            f << v << (j + 1 == m.cols ? "" : " ");
        }
        f << "\n";
    }
}

}  // namespace causaltf
