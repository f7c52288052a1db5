#ifndef BLINDEQ_ELBO_HPP
#define BLINDEQ_ELBO_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "blindeq/constellation.hpp"
#include "blindeq/qstats.hpp"

namespace blindeq {

// Symmetric L x L kernel stored as a packed upper triangle, so asymmetry
// is impossible by construction.
class SymmetricKernel {
public:
    SymmetricKernel() = default;
    explicit SymmetricKernel(std::size_t dim) : dim_(dim), a_(dim * (dim + 1) / 2, 0.0) {}

    // Builds from a full row-major matrix; rejects asymmetric input.
    static SymmetricKernel from_full(const std::vector<double>& full, std::size_t dim);
    // Builds (A + A^T)/2 from a full row-major matrix.
    static SymmetricKernel symmetrized(const std::vector<double>& full, std::size_t dim);

    std::size_t dim() const { return dim_; }
    std::size_t packed_size() const { return a_.size(); }

    double operator()(std::size_t i, std::size_t j) const { return a_[pack(i, j)]; }
    void set(std::size_t i, std::size_t j, double v) { a_[pack(i, j)] = v; }

    std::vector<double>& packed() { return a_; }
    const std::vector<double>& packed() const { return a_; }

    // Packed index of (i, j); order of i and j does not matter.
    std::size_t pack(std::size_t i, std::size_t j) const {
        if (i > j) std::swap(i, j);
        return i * dim_ - i * (i - 1) / 2 + (j - i);
    }

    // y = H * x
    void matvec(std::span<const double> x, std::span<double> y) const;

private:
    std::size_t dim_ = 0;
    std::vector<double> a_;
};

struct LinearChannelModel {
    std::vector<double> h;
    double sigma2 = 1.0;
};

struct VolterraChannelModel {
    std::vector<double> h;
    SymmetricKernel H;
    double sigma2 = 1.0;
};

struct SymbolPrior {
    std::vector<double> probs;
    static SymbolPrior flat(std::size_t m);
};

struct ResidualResult {
    double total = 0.0;               // C
    std::vector<double> per_sample;   // c_n
};

// ---------------------------------------------------------------------------
// Expected squared residual E_Q[(y_n - yhat_n)^2].
//
// The time-lagged window of y[n] covers moment positions n + offset - i for
// window index i = 0..L-1; positions outside the moment sequence are treated
// as deterministic zeros (consistent with zero-stuffed upsampling).
// ---------------------------------------------------------------------------

ResidualResult residual_linear(std::span<const double> y, const MomentSequence& ms,
                               std::span<const double> h, std::ptrdiff_t offset = 0);

// E_Q[(x^T h)(x^T H x)] for the window at sample n. Factorized O(L^2) path.
double cross_moment(const MomentSequence& ms, std::ptrdiff_t n, std::span<const double> h,
                    const SymmetricKernel& H, std::ptrdiff_t offset = 0);
// Reference implementation with explicit index sums, O(L^3).
double cross_moment_naive(const MomentSequence& ms, std::ptrdiff_t n, std::span<const double> h,
                          const SymmetricKernel& H, std::ptrdiff_t offset = 0);

// E_Q[(x^T H x)^2] for the window at sample n. Factorized O(L^2) path.
double quad_sq_moment(const MomentSequence& ms, std::ptrdiff_t n, const SymmetricKernel& H,
                      std::ptrdiff_t offset = 0);
// Reference implementation with explicit index sums, O(L^4).
double quad_sq_moment_naive(const MomentSequence& ms, std::ptrdiff_t n, const SymmetricKernel& H,
                            std::ptrdiff_t offset = 0);

// Second-order Volterra residual, factorized fast path (default).
ResidualResult residual_volterra(std::span<const double> y, const MomentSequence& ms,
                                 const VolterraChannelModel& model, std::ptrdiff_t offset = 0);
// Reference path built on the naive window terms.
ResidualResult residual_volterra_naive(std::span<const double> y, const MomentSequence& ms,
                                       const VolterraChannelModel& model,
                                       std::ptrdiff_t offset = 0);

// Brute-force enumeration of E_Q[(y_n - yhat_n)^2] over all symbol windows.
// Ground truth for every analytic expectation above. `sps` places symbol s
// at moment-grid position s*sps with deterministic zeros in between.
// Enumeration guard: L <= 8 and M^L <= 1e6.
double oracle_residual(const SymbolProbabilities& probs, const Constellation& c,
                       std::span<const double> y, std::span<const double> h,
                       const SymmetricKernel* H = nullptr, std::size_t sps = 1,
                       std::ptrdiff_t offset = 0);

// KL(Q || prior), nonnegative; 0*log 0 treated as 0. Rejects a zero prior
// entry wherever Q puts mass.
double kl_term(const SymbolProbabilities& probs, const SymbolPrior& prior);

// Closed-form noise variance, floored at 1e-12.
double sigma2_plugin(double C, std::size_t n_samples);

// Loss after the sigma^2 plug-in: KL + N log C (C floored at 1e-12).
double vae_loss(const SymbolProbabilities& probs, const Constellation& c,
                std::span<const double> y, const LinearChannelModel& model,
                const SymbolPrior& prior, std::size_t sps = 1, std::ptrdiff_t offset = 0);
double vae_loss(const SymbolProbabilities& probs, const Constellation& c,
                std::span<const double> y, const VolterraChannelModel& model,
                const SymbolPrior& prior, std::size_t sps = 1, std::ptrdiff_t offset = 0);

// Negative ELBO with an explicit sigma^2 (no plug-in); used to check the
// stationarity of the plug-in value.
double neg_elbo(const SymbolProbabilities& probs, const Constellation& c,
                std::span<const double> y, const VolterraChannelModel& model,
                const SymbolPrior& prior, double sigma2, std::size_t sps = 1,
                std::ptrdiff_t offset = 0);

// ---------------------------------------------------------------------------
// Analytic gradients of the plugged-in loss.
//
// All gradient accumulation runs in sample order n = 0..N-1 with inner loops
// in window order, so results are deterministic for a fixed input.
// ---------------------------------------------------------------------------

struct VaeLossGradients {
    double loss = 0.0;
    double C = 0.0;
    double kl = 0.0;
    double sigma2 = 0.0;             // plug-in value C/N
    SymbolProbabilities d_probs;     // dLoss/dQ
    std::vector<double> d_h;         // dLoss/dh
    std::vector<double> d_H;         // dLoss/dH (packed); empty for linear model
};

// Loss and gradients w.r.t. h, H and the probability matrix. Pass H = nullptr
// for the linear model.
VaeLossGradients vae_loss_grad(const SymbolProbabilities& probs, const Constellation& c,
                               std::span<const double> y, std::span<const double> h,
                               const SymmetricKernel* H, const SymbolPrior& prior,
                               std::size_t sps = 1, std::ptrdiff_t offset = 0);

} // namespace blindeq

#endif
