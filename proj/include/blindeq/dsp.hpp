#ifndef BLINDEQ_DSP_HPP
#define BLINDEQ_DSP_HPP

#include <complex>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace blindeq {

// Sample sequence with rate bookkeeping.
struct SampledSignal {
    std::vector<double> samples;
    double rate = 1.0;   // samples per second
    std::size_t sps = 1; // samples per symbol

    SampledSignal() = default;
    SampledSignal(std::vector<double> s, double r, std::size_t k)
        : samples(std::move(s)), rate(r), sps(k) {}
};

// Root-raised-cosine taps, length span*sps + 1, normalized to unit energy
// (sum of squares = 1). Singular points (t = 0 and |t| = 1/(4 rolloff)) are
// evaluated by their limits.
std::vector<double> rrc_taps(double rolloff, std::size_t span_symbols, std::size_t sps);

std::vector<double> upsample_zero_insert(std::span<const double> x, std::size_t sps);

enum class ConvMode {
    full,   // length N + K - 1
    same,   // length N, centered on tap (K-1)/2
    causal, // length N, output n = sum_k taps[k] x[n-k]
};

std::vector<double> convolve(std::span<const double> x, std::span<const double> taps,
                             ConvMode mode);

// out[i] = x[phase + i*factor]
std::vector<double> decimate(std::span<const double> x, std::size_t factor, std::size_t phase);

// Adds white Gaussian noise sized against the empirical signal power:
// sigma^2 = mean(x^2) / 10^(snr_db/10). snr_db = +infinity is a no-op.
void add_awgn(std::span<double> x, double snr_db, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Bessel low-pass (analog prototype, bilinear transform with cutoff
// prewarping, DC gain exactly 1), applied as a cascade of first/second order
// sections.
// ---------------------------------------------------------------------------

struct IirCascade {
    struct Section {
        double b0, b1, b2; // numerator
        double a1, a2;     // denominator (a0 = 1)
    };
    std::vector<Section> sections;
    double gain = 1.0;

    // Complex frequency response at digital frequency f (Hz).
    std::complex<double> response(double f, double sample_rate) const;
};

IirCascade bessel_lowpass(int order, double cutoff_hz, double sample_rate);

std::vector<double> iir_apply(const IirCascade& filt, std::span<const double> x);

// ---------------------------------------------------------------------------
// Fiber pieces (complex baseband field at the given sample rate).
// ---------------------------------------------------------------------------

// All-pass quadratic spectral phase exp(+j pi D lambda^2 f^2 L / c), applied
// by FFT -> multiply -> inverse FFT. D in ps/(nm km), lambda in nm, length in
// km. The absolute sign is a convention; the governing test is that +L then
// -L restores the input.
std::vector<std::complex<double>> chromatic_dispersion(std::span<const std::complex<double>> field,
                                                       double length_km, double d_ps_nm_km,
                                                       double lambda_nm, double sample_rate);

// Field amplitude scaling 10^(-alpha L / 20).
void attenuate(std::span<std::complex<double>> field, double alpha_db_per_km, double length_km);

// ---------------------------------------------------------------------------
// Direct detection
// ---------------------------------------------------------------------------

struct PhotodiodeParams {
    double temperature_k = 293.0;
    double bandwidth_hz = 55e9;
    double impedance_ohm = 50.0;
    double responsivity_a_w = 1.0;
    double dark_current_a = 1e-8;
    double sample_rate = 400e9;
    bool noiseless = false;
};

// out = |E|^2 + thermal + shot. Thermal variance 4 k T Fs / (B Z); shot
// variance 2 e (R * mean|E|^2 + I_d) Fs / B, using the batch-average power.
std::vector<double> square_law_detect(std::span<const std::complex<double>> field,
                                      const PhotodiodeParams& pd, std::mt19937_64& rng);

double thermal_noise_variance(const PhotodiodeParams& pd);
double shot_noise_variance(const PhotodiodeParams& pd, double mean_power);

// ---------------------------------------------------------------------------
// Alignment and scoring
// ---------------------------------------------------------------------------

// Lag in [0, max_lag] maximizing the absolute normalized cross-correlation
// of rx against ref (absolute value, so a sign-flipping channel still
// locks). Applying the lag means symbol n of ref lines up with rx[lag + n].
std::size_t synchronize(std::span<const double> rx, std::span<const double> ref,
                        std::size_t max_lag);

double symbol_error_rate(std::span<const int> decisions, std::span<const int> truth);

} // namespace blindeq

#endif
