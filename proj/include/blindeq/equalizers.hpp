#ifndef BLINDEQ_EQUALIZERS_HPP
#define BLINDEQ_EQUALIZERS_HPP

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "blindeq/constellation.hpp"
#include "blindeq/elbo.hpp"
#include "blindeq/qstats.hpp"

namespace blindeq {

// Linear feed-forward equalizer over a 2-sps input, one output per symbol.
struct FfeEqualizer {
    std::vector<double> w1;

    // Center-spike start: pass-through at iteration 0.
    static FfeEqualizer initial(std::size_t n_taps);
};

// Second-order Volterra equalizer. The quadratic kernel acts on the center
// n2 lags of the (longer) first-order window; both windows share the same
// center tap.
struct VolterraEqualizer {
    std::vector<double> w1;
    SymmetricKernel w2;

    static VolterraEqualizer initial(std::size_t n1_taps, std::size_t n2_taps);
};

// Per-symbol noise scaling weights of the soft demapper.
struct SoftDemapper {
    std::vector<double> beta;

    static SoftDemapper initial(std::size_t m);
};

// ---------------------------------------------------------------------------
// Forward passes.
//
// Input is the synchronized 2-sps signal: symbol s lines up with samples
// 2s and 2s + 1. The lag window of symbol s covers signal indices
// 2s - (n1-1)/2 + i for i = 0..n1-1; windows crossing the signal edge are
// zero-padded. One estimate per symbol period: floor(len / 2) outputs.
// ---------------------------------------------------------------------------

std::vector<double> equalize(std::span<const double> signal, const FfeEqualizer& eq);
std::vector<double> equalize(std::span<const double> signal, const VolterraEqualizer& eq);

// Gradients of a scalar loss w.r.t. equalizer taps given d(loss)/d(xhat).
struct EqualizerGradients {
    std::vector<double> d_w1;
    std::vector<double> d_w2; // packed upper triangle; empty for FFE
};

EqualizerGradients equalize_backward(std::span<const double> signal, const FfeEqualizer& eq,
                                     std::span<const double> d_xhat);
EqualizerGradients equalize_backward(std::span<const double> signal, const VolterraEqualizer& eq,
                                     std::span<const double> d_xhat);

// ---------------------------------------------------------------------------
// Soft demapper: q[n,m] = softmax_m( -(xhat_n - A_m)^2 / (beta_m sigma2) ),
// computed with max subtraction. sigma2 is the previous plug-in value and is
// treated as a constant w.r.t. gradients.
// ---------------------------------------------------------------------------

SymbolProbabilities soft_demap(std::span<const double> xhat, const Constellation& c,
                               double sigma2, const SoftDemapper& demapper);

struct DemapperGradients {
    std::vector<double> d_xhat;
    std::vector<double> d_beta;
};

// probs must be the forward output for the same inputs.
DemapperGradients soft_demap_backward(std::span<const double> xhat, const Constellation& c,
                                      double sigma2, const SoftDemapper& demapper,
                                      const SymbolProbabilities& probs,
                                      const SymbolProbabilities& d_probs);

// ---------------------------------------------------------------------------
// Decisions and the supervised criterion.
// ---------------------------------------------------------------------------

// Nearest constellation point; ties go to the lower index.
std::vector<int> hard_decision_euclidean(std::span<const double> xhat, const Constellation& c);

// Per-row argmax; ties go to the lower index.
std::vector<int> hard_decision_map(const SymbolProbabilities& probs);

// Mean squared error against known pilot symbols.
double supervised_loss(std::span<const double> xhat, std::span<const double> pilots);

// d(mse)/d(xhat).
std::vector<double> supervised_loss_grad(std::span<const double> xhat,
                                         std::span<const double> pilots);

// ---------------------------------------------------------------------------
// Checkpointing: plain text, hex-float payload (bit-exact round trip).
// ---------------------------------------------------------------------------

void save_equalizer(std::ostream& os, const VolterraEqualizer& eq, const SoftDemapper& d);
void load_equalizer(std::istream& is, VolterraEqualizer& eq, SoftDemapper& d);
void save_equalizer_file(const std::string& path, const VolterraEqualizer& eq,
                         const SoftDemapper& d);
void load_equalizer_file(const std::string& path, VolterraEqualizer& eq, SoftDemapper& d);

} // namespace blindeq

#endif
