#ifndef BLINDEQ_CHANNELS_HPP
#define BLINDEQ_CHANNELS_HPP

#include "blindeq/constellation.hpp"
#include "blindeq/dsp.hpp"

#include <complex>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace blindeq {

// ---------------------------------------------------------------------------
// Wiener-Hammerstein link: RRC shaping at 4 sps, FIR h1, memoryless
// second-order polynomial, FIR h2, AWGN sized against the channel-output
// power, matched filter, decimation to 2 sps, synchronization.
// ---------------------------------------------------------------------------

struct WhConfig {
    std::vector<double> h1{1.0, 0.3, 0.1};
    std::vector<double> h2{1.0, -0.2, 0.02};
    double alpha = 0.0;  // weight of the quadratic term in g
    double snr_db = std::numeric_limits<double>::infinity();
    std::size_t sps_channel = 4;
    std::size_t sps_out = 2;
    double rolloff = 0.1;
    std::size_t rrc_span = 32;
};

// g(x) = (1 - alpha) x + alpha x^2
double wh_nonlinearity(double x, double alpha);

// A simulated receive signal, aligned so that symbol n of the caller's
// sequence sits at rx[sps_out*n + k], k = 0..sps_out-1. The returned signal
// is standardized to zero mean and the constellation's mean power.
struct ChannelRun {
    std::vector<double> rx;
    std::size_t sync_lag = 0;
};

// Optional taps into the simulator's intermediate signals (all including the
// internal pad symbols, which carry the filter edge transients).
struct WhProbe {
    std::vector<double> padded_symbols;      // amplitudes, pad + payload + pad
    std::vector<double> channel_out_clean;   // 4 sps, after h2 o g o h1, before noise
    std::vector<double> channel_out_noisy;   // 4 sps, after AWGN
    std::vector<double> two_sps_raw;         // matched-filtered + decimated, unstandardized
    double standardize_mean = 0.0;
    double standardize_scale = 1.0;
    std::size_t pad_symbols = 0;
};

ChannelRun simulate_wh(std::span<const int> symbols, const Constellation& c, const WhConfig& cfg,
                       std::mt19937_64& rng, WhProbe* probe = nullptr);

// ---------------------------------------------------------------------------
// IM/DD optical link: RRC shaping, DAC range normalization, transmitter
// Bessel filter, Mach-Zehnder modulator, fiber (chromatic dispersion +
// attenuation), square-law photodiode with thermal and shot noise, receiver
// Bessel filter, matched filter, decimation to 2 sps, synchronization.
// ---------------------------------------------------------------------------

struct ImddConfig {
    double baud = 100e9; // symbols per second
    double vpp = 1.2;    // drive peak-to-peak voltage
    double v_pi = 2.0;
    double v_b = -0.5;
    double p_in = 1.0; // laser power, normalized watts
    double fiber_km = 0.0;
    double lambda_nm = 1270.0;
    double lambda0_nm = 1310.0;
    double s0_ps_nm2_km = 0.092; // dispersion slope at lambda0
    double alpha_db_km = 0.2;
    double bessel_cutoff_hz = 55e9;
    int bessel_order = 5;
    double rolloff = 0.1;
    std::size_t rrc_span = 32;
    std::size_t sps_channel = 4;
    std::size_t sps_out = 2;
    // The modulator transfer is cos((V + V_b)/(2 V_pi)), exactly as the
    // source system is specified; set this to insert the conventional pi
    // factor into the argument instead.
    bool mzm_pi_convention = false;
    // The specified dispersion figure for this link; clearing the override
    // falls back to the printed slope formula, which evaluates to about a
    // quarter of this (the two disagree; see dispersion_parameter).
    std::optional<double> dispersion_override_ps_nm_km = -15.43;
    // Fixes the DAC gain instead of scaling each batch to [-1/2, 1/2].
    std::optional<double> dac_scale_override;
    PhotodiodeParams photodiode; // sample_rate is set by the simulator
};

// E = sqrt(p_in) * cos((V + v_b)/(2 v_pi)), optionally with a pi factor.
std::vector<double> mzm(std::span<const double> voltage, double p_in, double v_pi, double v_b,
                        bool pi_convention = false);

// D in ps/(nm km): the override if set, otherwise (S0/4)(lambda -
// lambda0^4/lambda^3) evaluated at the configured wavelengths.
double dispersion_parameter(const ImddConfig& cfg);

struct ImddProbe {
    std::vector<double> padded_symbols;
    std::vector<double> drive;          // DAC output voltage, 4 sps, before the TX Bessel
    std::vector<double> detected_clean; // |E|^2 before photodiode noise
    std::vector<double> detected;       // photodiode output, 4 sps, before the RX Bessel
    std::vector<double> two_sps_raw;    // before standardization
    double dac_scale = 1.0;
    double standardize_mean = 0.0;
    double standardize_scale = 1.0;
    std::size_t pad_symbols = 0;
};

ChannelRun simulate_imdd(std::span<const int> symbols, const Constellation& c,
                         const ImddConfig& cfg, std::mt19937_64& rng, ImddProbe* probe = nullptr);

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

// In-place affine map to zero mean and the given mean-square value; returns
// the removed mean and the applied scale.
struct Standardization {
    double mean = 0.0;
    double scale = 1.0;
};
Standardization standardize_signal(std::span<double> x, double target_power);

// Uniform symbol indices in [0, m). m must divide 2^64 (true for PAM-4) so
// the modulo draw is exactly uniform.
std::vector<int> random_symbols(std::mt19937_64& rng, std::size_t n, std::size_t m);

} // namespace blindeq

#endif
