#ifndef BLINDEQ_QSTATS_HPP
#define BLINDEQ_QSTATS_HPP

#include <cstddef>
#include <vector>

#include "blindeq/constellation.hpp"

namespace blindeq {

// Factorized posterior over transmitted symbols: one categorical
// distribution per time index, stored row-major (rows() x cols()).
struct SymbolProbabilities {
    std::size_t n = 0; // time indices
    std::size_t m = 0; // constellation size
    std::vector<double> p;

    SymbolProbabilities() = default;
    SymbolProbabilities(std::size_t rows, std::size_t cols)
        : n(rows), m(cols), p(rows * cols, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return p[i * m + j]; }
    double at(std::size_t i, std::size_t j) const { return p[i * m + j]; }

    static SymbolProbabilities uniform(std::size_t rows, std::size_t cols);
    static SymbolProbabilities one_hot(const std::vector<int>& idx, std::size_t cols);

    // Rows sum to 1 within 1e-9 and entries lie in [0, 1].
    void validate() const;
};

// Per-time-index moments E[x], E[x^2], E[x^3], E[x^4] of the posterior.
struct MomentSequence {
    std::vector<double> m1, m2, m3, m4;

    std::size_t size() const { return m1.size(); }
    void resize(std::size_t len);
};

// m_k[i] = sum_m probs[i,m] * A_m^k for k = 1..4.
MomentSequence compute_moments(const SymbolProbabilities& probs, const Constellation& c);

// Zero-insertion upsampling of a moment sequence to the receive sample
// rate. Inserted positions are deterministic zeros in every moment order.
MomentSequence upsample_moments(const MomentSequence& ms, std::size_t sps);

} // namespace blindeq

#endif
