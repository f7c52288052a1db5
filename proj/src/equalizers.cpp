#include "blindeq/equalizers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace blindeq {

namespace {

void check_signal(std::span<const double> signal, std::size_t n_taps, const char* who) {
    if (signal.size() < n_taps)
        throw std::invalid_argument(std::string(who) + ": signal shorter than the lag window");
}

// Signal index of window tap i for symbol s: 2s - center + i.
inline std::ptrdiff_t lag_index(std::size_t s, std::size_t center, std::size_t i) {
    return static_cast<std::ptrdiff_t>(2 * s) - static_cast<std::ptrdiff_t>(center) +
           static_cast<std::ptrdiff_t>(i);
}

inline double sample_at(std::span<const double> z, std::ptrdiff_t p) {
    return (p >= 0 && p < static_cast<std::ptrdiff_t>(z.size())) ? z[p] : 0.0;
}

} // namespace

FfeEqualizer FfeEqualizer::initial(std::size_t n_taps) {
    if (n_taps == 0) throw std::invalid_argument("FfeEqualizer: need at least one tap");
    FfeEqualizer eq;
    eq.w1.assign(n_taps, 0.0);
    eq.w1[(n_taps - 1) / 2] = 1.0;
    return eq;
}

VolterraEqualizer VolterraEqualizer::initial(std::size_t n1_taps, std::size_t n2_taps) {
    if (n1_taps == 0) throw std::invalid_argument("VolterraEqualizer: need at least one tap");
    if (n2_taps > n1_taps)
        throw std::invalid_argument("VolterraEqualizer: quadratic window larger than linear");
    VolterraEqualizer eq;
    eq.w1.assign(n1_taps, 0.0);
    eq.w1[(n1_taps - 1) / 2] = 1.0;
    eq.w2 = SymmetricKernel(n2_taps);
    return eq;
}

SoftDemapper SoftDemapper::initial(std::size_t m) {
    SoftDemapper d;
    d.beta.assign(m, 1.0);
    return d;
}

std::vector<double> equalize(std::span<const double> signal, const FfeEqualizer& eq) {
    check_signal(signal, eq.w1.size(), "equalize(ffe)");
    const std::size_t c1 = (eq.w1.size() - 1) / 2;
    std::vector<double> xhat(signal.size() / 2, 0.0);
    for (std::size_t s = 0; s < xhat.size(); ++s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < eq.w1.size(); ++i)
            acc += eq.w1[i] * sample_at(signal, lag_index(s, c1, i));
        xhat[s] = acc;
    }
    return xhat;
}

std::vector<double> equalize(std::span<const double> signal, const VolterraEqualizer& eq) {
    check_signal(signal, eq.w1.size(), "equalize(volterra)");
    const std::size_t c1 = (eq.w1.size() - 1) / 2;
    const std::size_t n2 = eq.w2.dim();
    const std::size_t c2 = n2 ? (n2 - 1) / 2 : 0;
    std::vector<double> u(n2);
    std::vector<double> xhat(signal.size() / 2, 0.0);
    for (std::size_t s = 0; s < xhat.size(); ++s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < eq.w1.size(); ++i)
            acc += eq.w1[i] * sample_at(signal, lag_index(s, c1, i));
        for (std::size_t i = 0; i < n2; ++i) u[i] = sample_at(signal, lag_index(s, c2, i));
        for (std::size_t i = 0; i < n2; ++i) {
            acc += eq.w2(i, i) * u[i] * u[i];
            for (std::size_t j = i + 1; j < n2; ++j) acc += 2.0 * eq.w2(i, j) * u[i] * u[j];
        }
        xhat[s] = acc;
    }
    return xhat;
}

EqualizerGradients equalize_backward(std::span<const double> signal, const FfeEqualizer& eq,
                                     std::span<const double> d_xhat) {
    check_signal(signal, eq.w1.size(), "equalize_backward(ffe)");
    if (d_xhat.size() != signal.size() / 2)
        throw std::invalid_argument("equalize_backward(ffe): gradient length mismatch");
    const std::size_t c1 = (eq.w1.size() - 1) / 2;
    EqualizerGradients g;
    g.d_w1.assign(eq.w1.size(), 0.0);
    for (std::size_t s = 0; s < d_xhat.size(); ++s)
        for (std::size_t i = 0; i < eq.w1.size(); ++i)
            g.d_w1[i] += d_xhat[s] * sample_at(signal, lag_index(s, c1, i));
    return g;
}

EqualizerGradients equalize_backward(std::span<const double> signal, const VolterraEqualizer& eq,
                                     std::span<const double> d_xhat) {
    check_signal(signal, eq.w1.size(), "equalize_backward(volterra)");
    if (d_xhat.size() != signal.size() / 2)
        throw std::invalid_argument("equalize_backward(volterra): gradient length mismatch");
    const std::size_t c1 = (eq.w1.size() - 1) / 2;
    const std::size_t n2 = eq.w2.dim();
    const std::size_t c2 = n2 ? (n2 - 1) / 2 : 0;
    EqualizerGradients g;
    g.d_w1.assign(eq.w1.size(), 0.0);
    g.d_w2.assign(eq.w2.packed_size(), 0.0);
    std::vector<double> u(n2);
    for (std::size_t s = 0; s < d_xhat.size(); ++s) {
        const double d = d_xhat[s];
        for (std::size_t i = 0; i < eq.w1.size(); ++i)
            g.d_w1[i] += d * sample_at(signal, lag_index(s, c1, i));
        for (std::size_t i = 0; i < n2; ++i) u[i] = sample_at(signal, lag_index(s, c2, i));
        for (std::size_t i = 0; i < n2; ++i) {
            g.d_w2[eq.w2.pack(i, i)] += d * u[i] * u[i];
            for (std::size_t j = i + 1; j < n2; ++j)
                g.d_w2[eq.w2.pack(i, j)] += d * 2.0 * u[i] * u[j];
        }
    }
    return g;
}

SymbolProbabilities soft_demap(std::span<const double> xhat, const Constellation& c,
                               double sigma2, const SoftDemapper& demapper) {
    if (sigma2 <= 0.0) throw std::invalid_argument("soft_demap: sigma2 must be positive");
    if (demapper.beta.size() != c.size())
        throw std::invalid_argument("soft_demap: beta size does not match constellation");
    for (double b : demapper.beta)
        if (!(b > 0.0)) throw std::invalid_argument("soft_demap: beta must be positive");

    const std::size_t M = c.size();
    SymbolProbabilities q(xhat.size(), M);
    std::vector<double> f(M);
    for (std::size_t n = 0; n < xhat.size(); ++n) {
        double fmax = -std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < M; ++m) {
            const double d = xhat[n] - c.point(m);
            f[m] = -(d * d) / (demapper.beta[m] * sigma2);
            fmax = std::max(fmax, f[m]);
        }
        double z = 0.0;
        for (std::size_t m = 0; m < M; ++m) z += (f[m] = std::exp(f[m] - fmax));
        for (std::size_t m = 0; m < M; ++m) q.at(n, m) = f[m] / z;
    }
    return q;
}

DemapperGradients soft_demap_backward(std::span<const double> xhat, const Constellation& c,
                                      double sigma2, const SoftDemapper& demapper,
                                      const SymbolProbabilities& probs,
                                      const SymbolProbabilities& d_probs) {
    const std::size_t M = c.size();
    if (probs.n != xhat.size() || probs.m != M || d_probs.n != probs.n || d_probs.m != M)
        throw std::invalid_argument("soft_demap_backward: shape mismatch");

    DemapperGradients g;
    g.d_xhat.assign(xhat.size(), 0.0);
    g.d_beta.assign(M, 0.0);
    for (std::size_t n = 0; n < xhat.size(); ++n) {
        double dot = 0.0;
        for (std::size_t m = 0; m < M; ++m) dot += probs.at(n, m) * d_probs.at(n, m);
        for (std::size_t m = 0; m < M; ++m) {
            const double df = probs.at(n, m) * (d_probs.at(n, m) - dot); // softmax backward
            const double d = xhat[n] - c.point(m);
            const double bm = demapper.beta[m];
            g.d_xhat[n] += df * (-2.0 * d / (bm * sigma2));
            g.d_beta[m] += df * (d * d / (bm * bm * sigma2));
        }
    }
    return g;
}

std::vector<int> hard_decision_euclidean(std::span<const double> xhat, const Constellation& c) {
    std::vector<int> out(xhat.size());
    for (std::size_t n = 0; n < xhat.size(); ++n) {
        int best = 0;
        double best_d = std::abs(xhat[n] - c.point(0));
        for (std::size_t m = 1; m < c.size(); ++m) {
            const double d = std::abs(xhat[n] - c.point(m));
            if (d < best_d) { // strict: ties stay at the lower index
                best_d = d;
                best = static_cast<int>(m);
            }
        }
        out[n] = best;
    }
    return out;
}

std::vector<int> hard_decision_map(const SymbolProbabilities& probs) {
    std::vector<int> out(probs.n);
    for (std::size_t n = 0; n < probs.n; ++n) {
        int best = 0;
        double best_p = probs.at(n, 0);
        for (std::size_t m = 1; m < probs.m; ++m)
            if (probs.at(n, m) > best_p) {
                best_p = probs.at(n, m);
                best = static_cast<int>(m);
            }
        out[n] = best;
    }
    return out;
}

double supervised_loss(std::span<const double> xhat, std::span<const double> pilots) {
    if (xhat.size() != pilots.size() || xhat.empty())
        throw std::invalid_argument("supervised_loss: length mismatch or empty input");
    double acc = 0.0;
    for (std::size_t n = 0; n < xhat.size(); ++n) {
        const double e = xhat[n] - pilots[n];
        acc += e * e;
    }
    return acc / static_cast<double>(xhat.size());
}

std::vector<double> supervised_loss_grad(std::span<const double> xhat,
                                         std::span<const double> pilots) {
    if (xhat.size() != pilots.size() || xhat.empty())
        throw std::invalid_argument("supervised_loss_grad: length mismatch or empty input");
    std::vector<double> g(xhat.size());
    const double inv_n = 1.0 / static_cast<double>(xhat.size());
    for (std::size_t n = 0; n < xhat.size(); ++n)
        g[n] = 2.0 * (xhat[n] - pilots[n]) * inv_n;
    return g;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

namespace {

void write_vec(std::ostream& os, const char* tag, const std::vector<double>& v) {
    os << tag << ' ' << v.size();
    char buf[40];
    for (double x : v) {
        std::snprintf(buf, sizeof buf, " %a", x);
        os << buf;
    }
    os << '\n';
}

std::vector<double> read_vec(std::istream& is, const char* tag) {
    std::string t;
    std::size_t n = 0;
    if (!(is >> t >> n) || t != tag)
        throw std::runtime_error(std::string("load_equalizer: expected '") + tag + "' record");
    std::vector<double> v(n);
    std::string tok;
    for (auto& x : v) {
        if (!(is >> tok)) throw std::runtime_error("load_equalizer: truncated payload");
        x = std::strtod(tok.c_str(), nullptr);
    }
    return v;
}

} // namespace

void save_equalizer(std::ostream& os, const VolterraEqualizer& eq, const SoftDemapper& d) {
    os << "blindeq-equalizer 1\n";
    os << "w2dim " << eq.w2.dim() << '\n';
    write_vec(os, "w1", eq.w1);
    write_vec(os, "w2", eq.w2.packed());
    write_vec(os, "beta", d.beta);
}

void load_equalizer(std::istream& is, VolterraEqualizer& eq, SoftDemapper& d) {
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != "blindeq-equalizer" || version != 1)
        throw std::runtime_error("load_equalizer: not a version-1 equalizer checkpoint");
    std::string t;
    std::size_t w2dim = 0;
    if (!(is >> t >> w2dim) || t != "w2dim")
        throw std::runtime_error("load_equalizer: expected 'w2dim' record");
    eq.w1 = read_vec(is, "w1");
    eq.w2 = SymmetricKernel(w2dim);
    auto packed = read_vec(is, "w2");
    if (packed.size() != eq.w2.packed_size())
        throw std::runtime_error("load_equalizer: kernel payload size mismatch");
    eq.w2.packed() = std::move(packed);
    d.beta = read_vec(is, "beta");
}

void save_equalizer_file(const std::string& path, const VolterraEqualizer& eq,
                         const SoftDemapper& d) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_equalizer_file: cannot open " + path);
    save_equalizer(os, eq, d);
}

void load_equalizer_file(const std::string& path, VolterraEqualizer& eq, SoftDemapper& d) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_equalizer_file: cannot open " + path);
    load_equalizer(is, eq, d);
}

} // namespace blindeq
