#pragma once

// Independent reference implementations. Written from the definitions, with
// no code shared with the library.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

/// Pairwise counting: (#{pos > neg} + 0.5 #{pos == neg}) / (P Q).
inline double auc_pairs(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
    double wins = 0.0;
    double p = 0.0, q = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i]) p += 1.0; else q += 1.0;
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / (p * q);
}

/// Row-major (n, 6) probabilities and targets, class weights w.
inline double weighted_bce(const std::vector<double>& p, const std::vector<double>& y, std::size_t n,
                           const std::array<double, 6>& w, double eps) {
    double loss = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
        double sum = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            double q = p[r * 6 + c];
            if (q < eps) q = eps;
            if (q > 1.0 - eps) q = 1.0 - eps;
            const double t = y[r * 6 + c];
            sum += -(t * std::log(q) + (1.0 - t) * std::log(1.0 - q));
        }
        loss += w[c] * sum / static_cast<double>(n);
    }
    return loss;
}

/// Loss on logits, written with the naive sigmoid; fine for |z| < 30.
inline double weighted_bce_logits(const std::vector<double>& z, const std::vector<double>& y, std::size_t n,
                                  const std::array<double, 6>& w) {
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < 6; ++c) {
            const double s = 1.0 / (1.0 + std::exp(-z[r * 6 + c]));
            const double t = y[r * 6 + c];
            loss += w[c] * -(t * std::log(s) + (1.0 - t) * std::log(1.0 - s));
        }
    }
    return loss / static_cast<double>(n);
}

inline double cosine_warmup_lr(double step, double peak, double warmup, double total, double eta_min) {
    if (step < warmup) return peak * step / warmup;
    const double pi = std::acos(-1.0);
    return eta_min + 0.5 * (peak - eta_min) * (1.0 + std::cos(pi * (step - warmup) / (total - warmup)));
}

inline constexpr std::array<double, 6> kChallengeWeights{1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 2.0 / 7};

}  // namespace oracle
