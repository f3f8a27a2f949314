#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace causaltf {

// Seeded generator with hand-rolled samplers so that results are
// bit-reproducible across standard libraries (std::*_distribution is
// implementation-defined). mt19937_64 is only used as the bit source.
//
// Parallel streams are derived as base_seed XOR stream_index.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t seed() const { return seed_; }
    Rng stream(uint64_t index) const { return Rng(seed_ ^ index); }

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1) with 53 random bits
    double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    int next_below(int n) {
        assert(n > 0);
        return static_cast<int>(next_double() * n) % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // Marsaglia polar method
        double u, v, s;
        do {
            u = 2.0 * next_double() - 1.0;
            v = 2.0 * next_double() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    // Marsaglia-Tsang; boosted for alpha < 1
    double gamma(double alpha) {
        assert(alpha > 0.0);
        if (alpha < 1.0) {
            double u = next_double();
            while (u == 0.0) u = next_double();
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        while (true) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            double u = next_double();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // probability vector of length n, all concentrations alpha
    std::vector<double> dirichlet(int n, double alpha) {
        std::vector<double> out(n);
        dirichlet_into(out, alpha);
        return out;
    }

    void dirichlet_into(std::span<double> out, double alpha) {
        double sum = 0.0;
        for (double& v : out) {
            v = gamma(alpha);
            sum += v;
        }
        if (!(sum > 0.0) || !std::isfinite(sum))
            throw std::runtime_error("degenerate Dirichlet draw (alpha too small?)");
        for (double& v : out) v /= sum;
    }

    // index ~ p (p must sum to ~1); CDF inversion
    int categorical(std::span<const double> p) {
        double u = next_double();
        double acc = 0.0;
        for (size_t i = 0; i < p.size(); ++i) {
            acc += p[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(p.size()) - 1;
    }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace causaltf
