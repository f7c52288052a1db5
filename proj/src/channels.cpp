#include "blindeq/channels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace blindeq {

namespace {

// Extra symbols wrapped around the payload so every payload symbol has full
// pulse support and the synchronizer can shift without eating payload.
constexpr std::size_t kPadSymbols = 32;
constexpr std::size_t kMaxSyncLag = 48;

std::vector<double> pad_and_map(std::span<const int> symbols, const Constellation& c,
                                std::mt19937_64& rng, std::vector<double>* padded_out,
                                std::size_t m) {
    std::vector<double> amps;
    amps.reserve(symbols.size() + 2 * kPadSymbols);
    const auto pad_front = random_symbols(rng, kPadSymbols, m);
    const auto pad_back = random_symbols(rng, kPadSymbols, m);
    for (int idx : pad_front) amps.push_back(c.point(static_cast<std::size_t>(idx)));
    for (int idx : symbols) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= c.size())
            throw std::invalid_argument("simulate: symbol index out of range");
        amps.push_back(c.point(static_cast<std::size_t>(idx)));
    }
    for (int idx : pad_back) amps.push_back(c.point(static_cast<std::size_t>(idx)));
    if (padded_out) *padded_out = amps;
    return amps;
}

// Standardize, align against the padded reference, and cut out the payload.
ChannelRun finalize_run(std::vector<double> two_sps, const std::vector<double>& padded_amps,
                        std::size_t n_payload, std::size_t sps_out, double target_power,
                        Standardization* std_out) {
    const auto st = standardize_signal(two_sps, target_power);
    if (std_out) *std_out = st;
    const auto ref = upsample_zero_insert(padded_amps, sps_out);
    const std::size_t lag = synchronize(two_sps, ref, kMaxSyncLag);
    const std::size_t start = lag + sps_out * kPadSymbols;
    const std::size_t want = sps_out * n_payload;
    if (start + want > two_sps.size())
        throw std::runtime_error("simulate: synchronized payload exceeds signal");
    ChannelRun run;
    run.sync_lag = lag;
    run.rx.assign(two_sps.begin() + static_cast<std::ptrdiff_t>(start),
                  two_sps.begin() + static_cast<std::ptrdiff_t>(start + want));
    return run;
}

} // namespace

double wh_nonlinearity(double x, double alpha) { return (1.0 - alpha) * x + alpha * x * x; }

ChannelRun simulate_wh(std::span<const int> symbols, const Constellation& c, const WhConfig& cfg,
                       std::mt19937_64& rng, WhProbe* probe) {
    if (symbols.empty()) throw std::invalid_argument("simulate_wh: empty symbol sequence");
    if (!(cfg.alpha >= 0.0) || cfg.alpha > 1.0)
        throw std::invalid_argument("simulate_wh: alpha must lie in [0, 1]");
    if (std::isnan(cfg.snr_db) || cfg.snr_db == -std::numeric_limits<double>::infinity())
        throw std::invalid_argument("simulate_wh: bad snr_db");
    if (cfg.sps_channel % cfg.sps_out != 0)
        throw std::invalid_argument("simulate_wh: sps_channel must be a multiple of sps_out");

    std::vector<double> padded;
    const auto amps = pad_and_map(symbols, c, rng, &padded, c.size());

    const auto rrc = rrc_taps(cfg.rolloff, cfg.rrc_span, cfg.sps_channel);
    auto x = convolve(upsample_zero_insert(amps, cfg.sps_channel), rrc, ConvMode::same);

    x = convolve(x, upsample_zero_insert(cfg.h1, cfg.sps_channel), ConvMode::causal);
    for (double& v : x) v = wh_nonlinearity(v, cfg.alpha);
    x = convolve(x, upsample_zero_insert(cfg.h2, cfg.sps_channel), ConvMode::causal);

    if (probe) probe->channel_out_clean = x;
    add_awgn(x, cfg.snr_db, rng);
    if (probe) probe->channel_out_noisy = x;

    x = convolve(x, rrc, ConvMode::same);
    auto two_sps = decimate(x, cfg.sps_channel / cfg.sps_out, 0);
    if (probe) probe->two_sps_raw = two_sps;

    Standardization st;
    auto run = finalize_run(std::move(two_sps), padded, symbols.size(), cfg.sps_out,
                            c.mean_power(), &st);
    if (probe) {
        probe->padded_symbols = padded;
        probe->standardize_mean = st.mean;
        probe->standardize_scale = st.scale;
        probe->pad_symbols = kPadSymbols;
    }
    return run;
}

std::vector<double> mzm(std::span<const double> voltage, double p_in, double v_pi, double v_b,
                        bool pi_convention) {
    if (!(p_in >= 0.0)) throw std::invalid_argument("mzm: p_in must be non-negative");
    if (v_pi == 0.0) throw std::invalid_argument("mzm: v_pi must be non-zero");
    const double amplitude = std::sqrt(p_in);
    const double arg_scale = (pi_convention ? std::numbers::pi : 1.0) / (2.0 * v_pi);
    std::vector<double> field(voltage.size());
    for (std::size_t i = 0; i < voltage.size(); ++i)
        field[i] = amplitude * std::cos(arg_scale * (voltage[i] + v_b));
    return field;
}

double dispersion_parameter(const ImddConfig& cfg) {
    if (cfg.dispersion_override_ps_nm_km) return *cfg.dispersion_override_ps_nm_km;
    const double l = cfg.lambda_nm;
    const double l0 = cfg.lambda0_nm;
    return cfg.s0_ps_nm2_km / 4.0 * (l - l0 * l0 * l0 * l0 / (l * l * l));
}

ChannelRun simulate_imdd(std::span<const int> symbols, const Constellation& c,
                         const ImddConfig& cfg, std::mt19937_64& rng, ImddProbe* probe) {
    if (symbols.empty()) throw std::invalid_argument("simulate_imdd: empty symbol sequence");
    if (!(cfg.vpp > 0.0)) throw std::invalid_argument("simulate_imdd: vpp must be positive");
    if (!(cfg.fiber_km >= 0.0)) throw std::invalid_argument("simulate_imdd: negative fiber length");
    if (cfg.sps_channel % cfg.sps_out != 0)
        throw std::invalid_argument("simulate_imdd: sps_channel must be a multiple of sps_out");

    const double sample_rate = cfg.baud * static_cast<double>(cfg.sps_channel);

    std::vector<double> padded;
    const auto amps = pad_and_map(symbols, c, rng, &padded, c.size());

    const auto rrc = rrc_taps(cfg.rolloff, cfg.rrc_span, cfg.sps_channel);
    auto shaped = convolve(upsample_zero_insert(amps, cfg.sps_channel), rrc, ConvMode::same);

    // DAC: map the shaped signal into [-1/2, 1/2], then scale to the drive
    // swing.
    double max_abs = 0.0;
    for (double v : shaped) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs == 0.0) throw std::runtime_error("simulate_imdd: all-zero shaped signal");
    const double dac_scale = cfg.dac_scale_override ? *cfg.dac_scale_override : 1.0 / (2.0 * max_abs);
    std::vector<double> drive(shaped.size());
    for (std::size_t i = 0; i < shaped.size(); ++i) drive[i] = shaped[i] * dac_scale * cfg.vpp;
    if (probe) probe->drive = drive;

    const auto tx_filter = bessel_lowpass(cfg.bessel_order, cfg.bessel_cutoff_hz, sample_rate);
    drive = iir_apply(tx_filter, drive);

    const auto field_real = mzm(drive, cfg.p_in, cfg.v_pi, cfg.v_b, cfg.mzm_pi_convention);
    std::vector<std::complex<double>> field(field_real.begin(), field_real.end());

    if (cfg.fiber_km > 0.0) {
        field = chromatic_dispersion(field, cfg.fiber_km, dispersion_parameter(cfg),
                                     cfg.lambda_nm, sample_rate);
        attenuate(field, cfg.alpha_db_km, cfg.fiber_km);
    }

    PhotodiodeParams pd = cfg.photodiode;
    pd.sample_rate = sample_rate;
    if (probe) {
        probe->detected_clean.resize(field.size());
        for (std::size_t i = 0; i < field.size(); ++i)
            probe->detected_clean[i] = std::norm(field[i]);
    }
    auto detected = square_law_detect(field, pd, rng);
    if (probe) probe->detected = detected;

    const auto rx_filter = bessel_lowpass(cfg.bessel_order, cfg.bessel_cutoff_hz, sample_rate);
    detected = iir_apply(rx_filter, detected);

    detected = convolve(detected, rrc, ConvMode::same);
    auto two_sps = decimate(detected, cfg.sps_channel / cfg.sps_out, 0);
    if (probe) probe->two_sps_raw = two_sps;

    Standardization st;
    auto run = finalize_run(std::move(two_sps), padded, symbols.size(), cfg.sps_out,
                            c.mean_power(), &st);
    if (probe) {
        probe->padded_symbols = padded;
        probe->dac_scale = dac_scale;
        probe->standardize_mean = st.mean;
        probe->standardize_scale = st.scale;
        probe->pad_symbols = kPadSymbols;
    }
    return run;
}

Standardization standardize_signal(std::span<double> x, double target_power) {
    if (x.empty()) throw std::invalid_argument("standardize_signal: empty signal");
    if (!(target_power > 0.0)) throw std::invalid_argument("standardize_signal: bad target power");
    Standardization st;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double power = 0.0;
    for (double& v : x) {
        v -= mean;
        power += v * v;
    }
    power /= static_cast<double>(x.size());
    if (power <= 0.0) throw std::domain_error("standardize_signal: zero-variance signal");
    const double scale = std::sqrt(target_power / power);
    for (double& v : x) v *= scale;
    st.mean = mean;
    st.scale = scale;
    return st;
}

std::vector<int> random_symbols(std::mt19937_64& rng, std::size_t n, std::size_t m) {
    if (m == 0 || (m & (m - 1)) != 0)
        throw std::invalid_argument("random_symbols: m must be a power of two");
    std::vector<int> out(n);
    for (auto& v : out) v = static_cast<int>(rng() % m);
    return out;
}

} // namespace blindeq
