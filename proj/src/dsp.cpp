#include "blindeq/dsp.hpp"

#include <Eigen/Dense>
#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace blindeq {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kBoltzmann = 1.380649e-23;   // J/K
constexpr double kElectronCharge = 1.602176634e-19; // C
constexpr double kLightSpeed = 299792458.0;   // m/s

// Uniform in (0, 1], consuming exactly one engine draw.
double uniform_open(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
}

// One standard normal draw via Box-Muller (two engine draws). Written out
// rather than using std::normal_distribution so the stream is identical
// across standard libraries, which the reproducibility contract relies on.
double gaussian(std::mt19937_64& rng) {
    const double u1 = uniform_open(rng);
    const double u2 = uniform_open(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

double mean_square(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

} // namespace

std::vector<double> rrc_taps(double rolloff, std::size_t span_symbols, std::size_t sps) {
    if (!(rolloff >= 0.0) || rolloff > 1.0)
        throw std::invalid_argument("rrc_taps: rolloff must lie in [0, 1]");
    if (span_symbols == 0 || sps == 0)
        throw std::invalid_argument("rrc_taps: span and sps must be positive");
    const std::size_t n = span_symbols * sps + 1;
    const double half = static_cast<double>(span_symbols) / 2.0;
    std::vector<double> taps(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(sps) - half; // symbols
        double v;
        if (std::abs(t) < 1e-12) {
            v = 1.0 + rolloff * (4.0 / kPi - 1.0);
        } else if (rolloff > 0.0 && std::abs(std::abs(t) - 1.0 / (4.0 * rolloff)) < 1e-12) {
            const double a = kPi / (4.0 * rolloff);
            v = rolloff / std::sqrt(2.0) *
                ((1.0 + 2.0 / kPi) * std::sin(a) + (1.0 - 2.0 / kPi) * std::cos(a));
        } else {
            const double fourrt = 4.0 * rolloff * t;
            v = (std::sin(kPi * t * (1.0 - rolloff)) +
                 fourrt * std::cos(kPi * t * (1.0 + rolloff))) /
                (kPi * t * (1.0 - fourrt * fourrt));
        }
        taps[i] = v;
    }
    double energy = 0.0;
    for (double v : taps) energy += v * v;
    const double scale = 1.0 / std::sqrt(energy);
    for (double& v : taps) v *= scale;
    return taps;
}

std::vector<double> upsample_zero_insert(std::span<const double> x, std::size_t sps) {
    if (sps == 0) throw std::invalid_argument("upsample_zero_insert: sps must be positive");
    std::vector<double> out(x.size() * sps, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) out[i * sps] = x[i];
    return out;
}

std::vector<double> convolve(std::span<const double> x, std::span<const double> taps,
                             ConvMode mode) {
    if (taps.empty()) throw std::invalid_argument("convolve: empty taps");
    const std::size_t n = x.size();
    const std::size_t k = taps.size();
    const std::size_t full_len = n == 0 ? 0 : n + k - 1;
    std::vector<double> full(full_len, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (std::size_t j = 0; j < k; ++j) full[i + j] += xi * taps[j];
    }
    switch (mode) {
        case ConvMode::full:
            return full;
        case ConvMode::same: {
            const std::size_t start = (k - 1) / 2;
            return {full.begin() + static_cast<std::ptrdiff_t>(start),
                    full.begin() + static_cast<std::ptrdiff_t>(start + n)};
        }
        case ConvMode::causal:
            full.resize(n);
            return full;
    }
    throw std::logic_error("convolve: bad mode");
}

std::vector<double> decimate(std::span<const double> x, std::size_t factor, std::size_t phase) {
    if (factor == 0) throw std::invalid_argument("decimate: factor must be positive");
    if (phase >= factor) throw std::invalid_argument("decimate: phase must be < factor");
    std::vector<double> out;
    out.reserve(x.size() / factor + 1);
    for (std::size_t i = phase; i < x.size(); i += factor) out.push_back(x[i]);
    return out;
}

void add_awgn(std::span<double> x, double snr_db, std::mt19937_64& rng) {
    if (std::isinf(snr_db) && snr_db > 0.0) return;
    if (!std::isfinite(snr_db)) throw std::invalid_argument("add_awgn: bad snr_db");
    const double power = mean_square(x);
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
    for (double& v : x) v += sigma * gaussian(rng);
}

// ---------------------------------------------------------------------------
// Bessel low-pass
// ---------------------------------------------------------------------------

namespace {

// Coefficients of the reverse Bessel polynomial theta_n, ascending powers.
// theta_0 = 1, theta_1 = s + 1, theta_n = (2n-1) theta_{n-1} + s^2 theta_{n-2}.
std::vector<double> reverse_bessel_coeffs(int order) {
    std::vector<double> prev{1.0};
    if (order == 0) return prev;
    std::vector<double> cur{1.0, 1.0};
    for (int n = 2; n <= order; ++n) {
        std::vector<double> next(static_cast<std::size_t>(n) + 1, 0.0);
        for (std::size_t i = 0; i < cur.size(); ++i)
            next[i] += (2.0 * n - 1.0) * cur[i];
        for (std::size_t i = 0; i < prev.size(); ++i)
            next[i + 2] += prev[i];
        prev = std::move(cur);
        cur = std::move(next);
    }
    return cur;
}

std::complex<double> poly_eval(const std::vector<double>& coeffs, std::complex<double> s) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = coeffs.size(); i-- > 0;) acc = acc * s + coeffs[i];
    return acc;
}

// Frequency (rad/s) where the normalized prototype |theta_n(0)/theta_n(jw)|
// falls to 1/sqrt(2), found by bisection (the Bessel magnitude is monotone).
double prototype_3db(const std::vector<double>& coeffs) {
    const double target = 2.0 * coeffs[0] * coeffs[0];
    auto mag2 = [&](double w) { return std::norm(poly_eval(coeffs, {0.0, w})); };
    double lo = 0.0;
    double hi = 2.0 * static_cast<double>(coeffs.size());
    while (mag2(hi) < target) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mag2(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Roots of a monic real polynomial via its companion matrix.
std::vector<std::complex<double>> companion_roots(const std::vector<double>& coeffs) {
    const auto deg = static_cast<Eigen::Index>(coeffs.size() - 1);
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
    for (Eigen::Index i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
    for (Eigen::Index i = 0; i < deg; ++i) comp(i, deg - 1) = -coeffs[static_cast<std::size_t>(i)];
    Eigen::EigenSolver<Eigen::MatrixXd> solver(comp);
    std::vector<std::complex<double>> roots(static_cast<std::size_t>(deg));
    for (Eigen::Index i = 0; i < deg; ++i) roots[static_cast<std::size_t>(i)] = solver.eigenvalues()(i);
    return roots;
}

// Bilinear transform of an all-pole analog section b0a / (a2 s^2 + a1 s + a0)
// with unity DC gain, using s = K (1 - z^-1)/(1 + z^-1).
IirCascade::Section bilinear_section(double a2, double a1, double a0, double k) {
    IirCascade::Section s{};
    const bool second_order = a2 != 0.0;
    // Analog numerator a0 makes the section's DC gain 1; it maps to
    // a0 (1 + z^-1)^order.
    if (second_order) {
        const double d0 = a2 * k * k + a1 * k + a0;
        s.b0 = a0 / d0;
        s.b1 = 2.0 * a0 / d0;
        s.b2 = a0 / d0;
        s.a1 = 2.0 * (a0 - a2 * k * k) / d0;
        s.a2 = (a2 * k * k - a1 * k + a0) / d0;
    } else {
        const double d0 = a1 * k + a0;
        s.b0 = a0 / d0;
        s.b1 = a0 / d0;
        s.b2 = 0.0;
        s.a1 = (a0 - a1 * k) / d0;
        s.a2 = 0.0;
    }
    // Snap the digital DC gain to exactly 1.
    const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    s.b0 /= dc;
    s.b1 /= dc;
    s.b2 /= dc;
    return s;
}

} // namespace

std::complex<double> IirCascade::response(double f, double sample_rate) const {
    const std::complex<double> z1 = std::exp(std::complex<double>(0.0, -2.0 * kPi * f / sample_rate));
    const std::complex<double> z2 = z1 * z1;
    std::complex<double> h = gain;
    for (const auto& s : sections)
        h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    return h;
}

IirCascade bessel_lowpass(int order, double cutoff_hz, double sample_rate) {
    if (order < 1) throw std::invalid_argument("bessel_lowpass: order must be >= 1");
    if (!(cutoff_hz > 0.0) || !(cutoff_hz < sample_rate / 2.0))
        throw std::invalid_argument("bessel_lowpass: cutoff must lie in (0, fs/2)");
    const auto coeffs = reverse_bessel_coeffs(order);
    const double w3db = prototype_3db(coeffs);
    // Prewarp so the bilinear map puts the analog -3 dB point exactly at
    // cutoff_hz in the digital response.
    const double wa = 2.0 * sample_rate * std::tan(kPi * cutoff_hz / sample_rate);
    const double pole_scale = wa / w3db;

    auto roots = companion_roots(coeffs);
    std::sort(roots.begin(), roots.end(), [](const auto& a, const auto& b) {
        if (a.real() != b.real()) return a.real() < b.real();
        return a.imag() < b.imag();
    });

    IirCascade out;
    const double k = 2.0 * sample_rate;
    std::vector<bool> used(roots.size(), false);
    for (std::size_t i = 0; i < roots.size(); ++i) {
        if (used[i]) continue;
        const std::complex<double> p = roots[i] * pole_scale;
        if (std::abs(roots[i].imag()) < 1e-9 * std::abs(roots[i])) {
            // Real pole: first-order section (s - p).
            out.sections.push_back(bilinear_section(0.0, 1.0, -p.real(), k));
            used[i] = true;
        } else {
            // Pair with the conjugate: s^2 - 2 Re(p) s + |p|^2.
            std::size_t partner = roots.size();
            for (std::size_t j = i + 1; j < roots.size(); ++j) {
                if (used[j]) continue;
                if (std::abs(roots[j] - std::conj(roots[i])) <
                    1e-6 * std::abs(roots[i])) {
                    partner = j;
                    break;
                }
            }
            if (partner == roots.size())
                throw std::runtime_error("bessel_lowpass: unpaired complex pole");
            out.sections.push_back(bilinear_section(1.0, -2.0 * p.real(), std::norm(p), k));
            used[i] = used[partner] = true;
        }
    }
    return out;
}

std::vector<double> iir_apply(const IirCascade& filt, std::span<const double> x) {
    std::vector<double> y(x.begin(), x.end());
    for (const auto& s : filt.sections) {
        double s1 = 0.0, s2 = 0.0; // direct form II transposed state
        for (double& v : y) {
            const double in = v;
            const double outv = s.b0 * in + s1;
            s1 = s.b1 * in - s.a1 * outv + s2;
            s2 = s.b2 * in - s.a2 * outv;
            v = outv;
        }
    }
    if (filt.gain != 1.0)
        for (double& v : y) v *= filt.gain;
    return y;
}

// ---------------------------------------------------------------------------
// Fiber
// ---------------------------------------------------------------------------

std::vector<std::complex<double>> chromatic_dispersion(std::span<const std::complex<double>> field,
                                                       double length_km, double d_ps_nm_km,
                                                       double lambda_nm, double sample_rate) {
    const std::size_t n = field.size();
    std::vector<std::complex<double>> out(field.begin(), field.end());
    if (n == 0 || length_km == 0.0 || d_ps_nm_km == 0.0) return out;

    const double d_si = d_ps_nm_km * 1e-6;     // s/m^2
    const double lambda_m = lambda_nm * 1e-9;  // m
    const double length_m = length_km * 1e3;   // m
    const double phase_coeff = kPi * d_si * lambda_m * lambda_m * length_m / kLightSpeed;

    auto* buf = reinterpret_cast<fftw_complex*>(out.data());
    fftw_plan fwd = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);

    for (std::size_t i = 0; i < n; ++i) {
        // FFT bin frequency, wrapped to (-fs/2, fs/2].
        const double idx = (i <= n / 2) ? static_cast<double>(i)
                                        : static_cast<double>(i) - static_cast<double>(n);
        const double f = idx * sample_rate / static_cast<double>(n);
        out[i] *= std::exp(std::complex<double>(0.0, phase_coeff * f * f));
    }

    fftw_plan inv = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    fftw_execute(inv);
    fftw_destroy_plan(inv);

    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= scale;
    return out;
}

void attenuate(std::span<std::complex<double>> field, double alpha_db_per_km, double length_km) {
    const double scale = std::pow(10.0, -alpha_db_per_km * length_km / 20.0);
    for (auto& v : field) v *= scale;
}

// ---------------------------------------------------------------------------
// Direct detection
// ---------------------------------------------------------------------------

double thermal_noise_variance(const PhotodiodeParams& pd) {
    return 4.0 * kBoltzmann * pd.temperature_k * pd.sample_rate /
           (pd.bandwidth_hz * pd.impedance_ohm);
}

double shot_noise_variance(const PhotodiodeParams& pd, double mean_power) {
    return 2.0 * kElectronCharge * (pd.responsivity_a_w * mean_power + pd.dark_current_a) *
           pd.sample_rate / pd.bandwidth_hz;
}

std::vector<double> square_law_detect(std::span<const std::complex<double>> field,
                                      const PhotodiodeParams& pd, std::mt19937_64& rng) {
    std::vector<double> out(field.size());
    double mean_power = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i) {
        out[i] = std::norm(field[i]);
        mean_power += out[i];
    }
    if (!field.empty()) mean_power /= static_cast<double>(field.size());
    if (pd.noiseless) return out;
    const double sigma = std::sqrt(thermal_noise_variance(pd) + shot_noise_variance(pd, mean_power));
    for (double& v : out) v += sigma * gaussian(rng);
    return out;
}

// ---------------------------------------------------------------------------
// Alignment and scoring
// ---------------------------------------------------------------------------

std::size_t synchronize(std::span<const double> rx, std::span<const double> ref,
                        std::size_t max_lag) {
    if (ref.empty() || rx.empty())
        throw std::invalid_argument("synchronize: empty signal");
    double ref_energy = 0.0;
    for (double v : ref) ref_energy += v * v;
    if (ref_energy == 0.0) throw std::invalid_argument("synchronize: zero reference");

    std::size_t best_lag = 0;
    double best_score = -1.0;
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
        const std::size_t n = std::min(ref.size(), rx.size() > lag ? rx.size() - lag : 0);
        if (n == 0) break;
        double cross = 0.0, rx_energy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            cross += rx[lag + i] * ref[i];
            rx_energy += rx[lag + i] * rx[lag + i];
        }
        if (rx_energy == 0.0) continue;
        const double score = std::abs(cross) / std::sqrt(rx_energy * ref_energy);
        if (score > best_score) {
            best_score = score;
            best_lag = lag;
        }
    }
    return best_lag;
}

double symbol_error_rate(std::span<const int> decisions, std::span<const int> truth) {
    if (decisions.size() != truth.size() || decisions.empty())
        throw std::invalid_argument("symbol_error_rate: length mismatch");
    std::size_t errors = 0;
    for (std::size_t i = 0; i < decisions.size(); ++i)
        if (decisions[i] != truth[i]) ++errors;
    return static_cast<double>(errors) / static_cast<double>(decisions.size());
}

} // namespace blindeq
