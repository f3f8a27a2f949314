#include "causaltf/markov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace causaltf {

namespace {
constexpr double kRowSumTol = 1e-12;
constexpr double kStationaryTol = 1e-12;
constexpr int kStationaryMaxIter = 100000;
}  // namespace

Vec stationary_measure(const Matrix& rows) {
    const int S = rows.rows;
    Vec mu(S, 1.0 / S);
    Vec next(S);
    for (int it = 0; it < kStationaryMaxIter; ++it) {
        // next = mu^T pi
        std::fill(next.begin(), next.end(), 0.0);
        for (int s = 0; s < S; ++s) {
            const double m = mu[s];
            const double* row = &rows.data[static_cast<size_t>(s) * S];
            for (int t = 0; t < S; ++t) next[t] += m * row[t];
        }
        double z = std::accumulate(next.begin(), next.end(), 0.0);
        for (double& v : next) v /= z;
        double diff = 0.0;
        for (int s = 0; s < S; ++s) diff = std::max(diff, std::abs(next[s] - mu[s]));
        mu.swap(next);
        if (diff < kStationaryTol) return mu;
    }
    throw std::runtime_error("stationary_measure: power iteration did not converge");
}

TransitionKernel TransitionKernel::from_rows(Matrix r) {
    if (r.rows != r.cols || r.rows < 2) throw std::invalid_argument("kernel must be square with S >= 2");
    const int S = r.rows;
    for (int s = 0; s < S; ++s) {
        double sum = 0.0;
        for (int t = 0; t < S; ++t) {
            double v = r(s, t);
            if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("kernel entries must be finite and >= 0");
            sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTol) throw std::invalid_argument("kernel row does not sum to 1");
    }
    TransitionKernel k;
    k.size = S;
    k.stationary = stationary_measure(r);
    k.rows = std::move(r);
    return k;
}

double TransitionKernel::min_entry() const {
    return *std::min_element(rows.data.begin(), rows.data.end());
}

std::string TransitionKernel::to_json() const {
    nlohmann::json j;
    j["S"] = size;
    auto rr = nlohmann::json::array();
    for (int s = 0; s < size; ++s) {
        auto row = nlohmann::json::array();
        for (int t = 0; t < size; ++t) row.push_back(rows(s, t));
        rr.push_back(row);
    }
    j["rows"] = rr;
    return j.dump();
}

TransitionKernel TransitionKernel::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    int S = j.at("S").get<int>();
    Matrix r(S, S);
    const auto& rr = j.at("rows");
    for (int s = 0; s < S; ++s)
        for (int t = 0; t < S; ++t) r(s, t) = rr.at(s).at(t).get<double>();
    return TransitionKernel::from_rows(std::move(r));
}

MultiKernel MultiKernel::from_table(int S, int k, Matrix t) {
    int expected_rows = 1;
    for (int i = 0; i < k; ++i) expected_rows *= S;
    if (t.rows != expected_rows || t.cols != S) throw std::invalid_argument("multi-kernel table shape mismatch");
    for (int r = 0; r < t.rows; ++r) {
        double sum = 0.0;
        for (int c = 0; c < S; ++c) sum += t(r, c);
        if (std::abs(sum - 1.0) > kRowSumTol) throw std::invalid_argument("multi-kernel conditional does not sum to 1");
    }
    MultiKernel m;
    m.size = S;
    m.arity = k;
    m.table = std::move(t);
    return m;
}

int MultiKernel::row_index(std::span<const int> parent_values) const {
    assert(static_cast<int>(parent_values.size()) == arity);
    int idx = 0;
    for (int v : parent_values) idx = idx * size + v;
    return idx;
}

std::span<const double> MultiKernel::conditional(std::span<const int> parent_values) const {
    return table.row(row_index(parent_values));
}

TransitionKernel sample_kernel(const DirichletPrior& prior, Rng& rng) {
    if (prior.size < 2 || !(prior.alpha > 0.0)) throw std::invalid_argument("need S >= 2 and alpha > 0");
    Matrix r(prior.size, prior.size);
    for (int s = 0; s < prior.size; ++s) rng.dirichlet_into(r.row(s), prior.alpha);
    return TransitionKernel::from_rows(std::move(r));
}

MultiKernel sample_multi_kernel(int S, int arity, double alpha, Rng& rng) {
    int nrows = 1;
    for (int i = 0; i < arity; ++i) nrows *= S;
    Matrix t(nrows, S);
    for (int r = 0; r < nrows; ++r) {
        Vec row = rng.dirichlet(S, alpha);
        for (int c = 0; c < S; ++c) t(r, c) = row[c];
    }
    return MultiKernel::from_table(S, arity, std::move(t));
}

int KernelPrior::alphabet_size() const {
    if (auto* d = std::get_if<DirichletPrior>(&spec)) return d->size;
    return std::get<FinitePrior>(spec).kernels.at(0).size;
}

TransitionKernel KernelPrior::sample(Rng& rng) const {
    if (auto* d = std::get_if<DirichletPrior>(&spec)) return sample_kernel(*d, rng);
    const auto& f = std::get<FinitePrior>(spec);
    return f.kernels[rng.categorical(f.weights)];
}

Matrix b_matrix(const TransitionKernel& k) {
    const int S = k.size;
    for (double m : k.stationary)
        if (!(m > 0.0)) throw std::domain_error("b_matrix: stationary measure has a zero entry");
    Matrix b(S, S);
    for (int s = 0; s < S; ++s)
        for (int t = 0; t < S; ++t)
            b(s, t) = std::sqrt(k.stationary[s] / k.stationary[t]) * (k.rows(s, t) - k.stationary[t]);
    return b;
}

double spectral_gap(const TransitionKernel& k) {
    Matrix b = b_matrix(k);
    const int S = k.size;
    if (frobenius_norm_sq(b) < 1e-280) return 1.0;
    // ||B||_2 via power iteration on B^T B; pseudo-random start so we never
    // begin orthogonal to the top eigenvector (the uniform vector does, for
    // symmetric kernels)
    Matrix g = matTmul(b, b);
    Vec v(S);
    uint64_t lcg = 0x2545F4914F6CDD1Dull;
    for (double& x : v) {
        lcg = lcg * 6364136223846793005ull + 1442695040888963407ull;
        x = 0.5 + static_cast<double>(lcg >> 40) / static_cast<double>(1ull << 24);
    }
    double lambda_sq = 0.0;
    for (int it = 0; it < kStationaryMaxIter; ++it) {
        Vec w = matvec(g, v);
        double norm = std::sqrt(dot(w, w));
        if (norm < 1e-300) return 1.0;
        for (double& x : w) x /= norm;
        double next = dot(w, matvec(g, w));
        bool done = std::abs(next - lambda_sq) < 1e-12 * std::max(1.0, next);
        lambda_sq = next;
        v.swap(w);
        if (done) break;
    }
    return 1.0 - std::sqrt(std::max(0.0, lambda_sq));
}

double contraction_coefficient(const TransitionKernel& k) {
    const int S = k.size;
    double alpha = 0.0;
    for (int j = 0; j < S; ++j) {
        for (int l = j + 1; l < S; ++l) {
            double tv = 0.0;
            for (int t = 0; t < S; ++t) tv += std::abs(k.rows(j, t) - k.rows(l, t));
            alpha = std::max(alpha, 0.5 * tv);
        }
    }
    return alpha;
}

double chi2_divergence(std::span<const double> p, std::span<const double> q) {
    assert(p.size() == q.size());
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (q[i] <= 0.0) {
            if (p[i] > 0.0) return std::numeric_limits<double>::infinity();
            continue;
        }
        s += p[i] * p[i] / q[i];
    }
    return s - 1.0;
}

double chi2_mutual_info(const Matrix& joint) {
    Vec pr(joint.rows, 0.0), pc(joint.cols, 0.0);
    for (int i = 0; i < joint.rows; ++i)
        for (int j = 0; j < joint.cols; ++j) {
            pr[i] += joint(i, j);
            pc[j] += joint(i, j);
        }
    double s = 0.0;
    for (int i = 0; i < joint.rows; ++i)
        for (int j = 0; j < joint.cols; ++j) {
            double q = pr[i] * pc[j];
            double p = joint(i, j);
            if (q <= 0.0) {
                if (p > 0.0) return std::numeric_limits<double>::infinity();
                continue;
            }
            s += p * p / q;
        }
    return s - 1.0;
}

double gamma_witness(const TransitionKernel& k) {
    const int S = k.size;
    double g1 = S * k.min_entry();
    double dev = 0.0;
    for (int s = 0; s < S; ++s)
        for (int t = 0; t < S; ++t) {
            double d = k.rows(s, t) - k.stationary[t];
            dev += d * d;
        }
    double g2 = std::sqrt(S * dev);
    return std::min({g1, g2, 1.0});
}

PriorCertificate check_assumptions(std::span<const TransitionKernel> samples, double gamma) {
    if (samples.empty()) throw std::invalid_argument("check_assumptions: empty sample list");
    const int S = samples[0].size;
    PriorCertificate cert;
    cert.n_samples = static_cast<int>(samples.size());

    bool lower = true, nondeg = true;
    Matrix mean(S, S);
    for (const auto& k : samples) {
        if (!(k.min_entry() > gamma / S)) lower = false;
        double dev = 0.0;
        for (int s = 0; s < S; ++s)
            for (int t = 0; t < S; ++t) {
                double d = k.rows(s, t) - k.stationary[t];
                dev += d * d;
            }
        if (!(dev >= gamma * gamma / S)) nondeg = false;
        for (size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += k.rows.data[i];
    }
    for (double& v : mean.data) v /= cert.n_samples;

    cert.cond_transition_lower = lower;
    cert.cond_nondegenerate = nondeg;
    cert.gamma = (lower && nondeg) ? gamma : 0.0;

    // Conditions 3-4 are statements about the prior's law; on a finite sample
    // we only report how far the sample mean is from the symmetric target.
    double diag_min = 1.0, diag_max = 0.0, off_min = 1.0, off_max = 0.0;
    double mean_dev = 0.0;
    for (int s = 0; s < S; ++s)
        for (int t = 0; t < S; ++t) {
            double v = mean(s, t);
            mean_dev = std::max(mean_dev, std::abs(v - 1.0 / S));
            if (s == t) {
                diag_min = std::min(diag_min, v);
                diag_max = std::max(diag_max, v);
            } else {
                off_min = std::min(off_min, v);
                off_max = std::max(off_max, v);
            }
        }
    cert.symmetry_deviation = std::max(diag_max - diag_min, off_max - off_min);
    cert.mean_deviation = mean_dev;
    return cert;
}

FinitePrior symmetric_two_kernel_prior(double p) {
    Matrix a(2, 2), b(2, 2);
    a(0, 0) = 1 - p; a(0, 1) = p;
    a(1, 0) = p;     a(1, 1) = 1 - p;
    b(0, 0) = p;     b(0, 1) = 1 - p;
    b(1, 0) = 1 - p; b(1, 1) = p;
    FinitePrior f;
    f.kernels.push_back(TransitionKernel::from_rows(std::move(a)));
    f.kernels.push_back(TransitionKernel::from_rows(std::move(b)));
    f.weights = {0.5, 0.5};
    return f;
}

FinitePrior constant_mean_symmetric_prior(int S, double stay) {
    double off = (1.0 - stay) / (S - 1);
    Matrix a(S, S, off), b(S, S, off);
    for (int s = 0; s < S; ++s) {
        a(s, s) = stay;
        b(s, (s + 1) % S) = stay;
    }
    double tr_a = S * stay, tr_b = S * off;
    double w = (1.0 - tr_b) / (tr_a - tr_b);
    return permutation_closure(
        {TransitionKernel::from_rows(std::move(a)), TransitionKernel::from_rows(std::move(b))},
        {w, 1.0 - w});
}

FinitePrior permutation_closure(const std::vector<TransitionKernel>& base,
                                const std::vector<double>& weights) {
    if (base.empty() || base.size() != weights.size())
        throw std::invalid_argument("permutation_closure: bad inputs");
    const int S = base[0].size;
    std::vector<int> perm(S);
    std::iota(perm.begin(), perm.end(), 0);
    FinitePrior out;
    int n_perms = 0;
    do {
        ++n_perms;
        for (size_t b = 0; b < base.size(); ++b) {
            Matrix r(S, S);
            for (int s = 0; s < S; ++s)
                for (int t = 0; t < S; ++t) r(s, t) = base[b].rows(perm[s], perm[t]);
            out.kernels.push_back(TransitionKernel::from_rows(std::move(r)));
            out.weights.push_back(weights[b]);
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (double& w : out.weights) w /= n_perms;
    return out;
}

}  // namespace causaltf
