#include "blindeq/elbo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace blindeq {

namespace {

constexpr double kCFloor = 1e-12;      // underflow guard before log C
constexpr double kSigma2Floor = 1e-12; // plug-in floor

void require_finite(std::span<const double> x, const char* what) {
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

// Moments of one lag window. Index i maps to moment position n + offset - i;
// out-of-range positions are deterministic zeros.
struct Window {
    std::vector<double> a, b, t3, q4;   // raw moments m1..m4
    std::vector<double> v, w3, u4;      // central moments 2..4

    void resize(std::size_t L) {
        a.resize(L); b.resize(L); t3.resize(L); q4.resize(L);
        v.resize(L); w3.resize(L); u4.resize(L);
    }

    void gather(const MomentSequence& ms, std::ptrdiff_t n, std::ptrdiff_t offset) {
        const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(ms.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::ptrdiff_t p = n + offset - static_cast<std::ptrdiff_t>(i);
            if (p >= 0 && p < len) {
                a[i] = ms.m1[p]; b[i] = ms.m2[p]; t3[i] = ms.m3[p]; q4[i] = ms.m4[p];
            } else {
                a[i] = b[i] = t3[i] = q4[i] = 0.0;
            }
        }
    }

    void centralize() {
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double m1 = a[i], m2 = b[i], m3 = t3[i], m4 = q4[i];
            v[i] = m2 - m1 * m1;
            w3[i] = m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1;
            u4[i] = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1 * m1 * m1 * m1;
        }
    }
};

inline double linear_part(double y, double mu, double var_term) {
    return y * y - 2.0 * y * mu + (mu * mu + var_term);
}

// mu = h . a, var_term = sum h_i^2 v_i. Shared by the linear and Volterra
// paths so the H = 0 reduction is exact.
inline void linear_terms(std::span<const double> h, const Window& w, double& mu,
                         double& var_term) {
    mu = 0.0;
    var_term = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        mu += h[i] * w.a[i];
        var_term += h[i] * h[i] * w.v[i];
    }
}

// Factorized per-sample quantities of the second-order model.
struct VolterraTerms {
    double mu = 0.0;        // E[x^T h]
    double var_term = 0.0;  // sum h_i^2 v_i
    double m2q = 0.0;       // E[x^T H x]
    double cross = 0.0;     // E[(x^T h)(x^T H x)]
    double quadsq = 0.0;    // E[(x^T H x)^2]
    std::vector<double> r;  // H a
    std::vector<double> hv; // row sums sum_j H_ij^2 v_j
};

void volterra_terms(std::span<const double> h, const SymmetricKernel& H, const Window& w,
                    VolterraTerms& t) {
    const std::size_t L = h.size();
    t.r.assign(L, 0.0);
    t.hv.assign(L, 0.0);
    linear_terms(h, w, t.mu, t.var_term);

    for (std::size_t i = 0; i < L; ++i) {
        double ri = 0.0, hvi = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            const double Hij = H(i, j);
            ri += Hij * w.a[j];
            hvi += Hij * Hij * w.v[j];
        }
        t.r[i] = ri;
        t.hv[i] = hvi;
    }

    double S = 0.0, Tv = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        S += w.a[i] * t.r[i];
        Tv += H(i, i) * w.v[i];
    }
    t.m2q = S + Tv;

    double c1 = 0.0, c2 = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        c1 += h[i] * t.r[i] * w.v[i];
        c2 += h[i] * H(i, i) * w.w3[i];
    }
    t.cross = t.mu * t.m2q + 2.0 * c1 + c2;

    double q1 = 0.0, q2 = 0.0, q3 = 0.0, q4 = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        const double Hii = H(i, i);
        q1 += t.r[i] * t.r[i] * w.v[i];
        q2 += t.r[i] * Hii * w.w3[i];
        q3 += w.v[i] * t.hv[i];
        q4 += Hii * Hii * (w.u4[i] - 3.0 * w.v[i] * w.v[i]);
    }
    t.quadsq = t.m2q * t.m2q + 4.0 * q1 + 4.0 * q2 + 2.0 * q3 + q4;
}

} // namespace

// ---------------------------------------------------------------------------
// SymmetricKernel
// ---------------------------------------------------------------------------

SymmetricKernel SymmetricKernel::from_full(const std::vector<double>& full, std::size_t dim) {
    if (full.size() != dim * dim)
        throw std::invalid_argument("SymmetricKernel::from_full: size mismatch");
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i + 1; j < dim; ++j)
            if (full[i * dim + j] != full[j * dim + i])
                throw std::invalid_argument("SymmetricKernel::from_full: asymmetric input");
    SymmetricKernel k(dim);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i; j < dim; ++j) k.set(i, j, full[i * dim + j]);
    return k;
}

SymmetricKernel SymmetricKernel::symmetrized(const std::vector<double>& full, std::size_t dim) {
    if (full.size() != dim * dim)
        throw std::invalid_argument("SymmetricKernel::symmetrized: size mismatch");
    SymmetricKernel k(dim);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i; j < dim; ++j)
            k.set(i, j, 0.5 * (full[i * dim + j] + full[j * dim + i]));
    return k;
}

void SymmetricKernel::matvec(std::span<const double> x, std::span<double> y) const {
    for (std::size_t i = 0; i < dim_; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) s += (*this)(i, j) * x[j];
        y[i] = s;
    }
}

SymbolPrior SymbolPrior::flat(std::size_t m) {
    SymbolPrior p;
    p.probs.assign(m, 1.0 / static_cast<double>(m));
    return p;
}

// ---------------------------------------------------------------------------
// Residuals
// ---------------------------------------------------------------------------

ResidualResult residual_linear(std::span<const double> y, const MomentSequence& ms,
                               std::span<const double> h, std::ptrdiff_t offset) {
    if (h.empty()) throw std::invalid_argument("residual_linear: empty kernel");
    require_finite(y, "residual_linear(y)");
    require_finite(h, "residual_linear(h)");

    ResidualResult res;
    res.per_sample.resize(y.size());
    Window w;
    w.resize(h.size());
    for (std::size_t n = 0; n < y.size(); ++n) {
        w.gather(ms, static_cast<std::ptrdiff_t>(n), offset);
        w.centralize();
        double mu, var_term;
        linear_terms(h, w, mu, var_term);
        const double c = linear_part(y[n], mu, var_term);
        res.per_sample[n] = c;
        res.total += c;
    }
    return res;
}

double cross_moment(const MomentSequence& ms, std::ptrdiff_t n, std::span<const double> h,
                    const SymmetricKernel& H, std::ptrdiff_t offset) {
    if (H.dim() != h.size()) throw std::invalid_argument("cross_moment: kernel size mismatch");
    Window w;
    w.resize(h.size());
    w.gather(ms, n, offset);
    w.centralize();
    VolterraTerms t;
    volterra_terms(h, H, w, t);
    return t.cross;
}

double cross_moment_naive(const MomentSequence& ms, std::ptrdiff_t n, std::span<const double> h,
                          const SymmetricKernel& H, std::ptrdiff_t offset) {
    if (H.dim() != h.size()) throw std::invalid_argument("cross_moment_naive: size mismatch");
    const std::size_t L = h.size();
    Window w;
    w.resize(L);
    w.gather(ms, n, offset);

    // Leading product-of-means term over all index triples.
    double lead = 0.0;
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j)
            for (std::size_t k = 0; k < L; ++k)
                lead += w.a[i] * w.a[j] * w.a[k] * h[i] * H(j, k);

    // Pair-coincidence corrections, full sums.
    double pair = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        const double d2 = w.b[i] - w.a[i] * w.a[i];
        for (std::size_t j = 0; j < L; ++j)
            pair += d2 * w.a[j] * (2.0 * h[i] * H(i, j) + h[j] * H(i, i));
    }

    // Triple coincidence.
    double trip = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        const double d3 = w.t3[i] - 3.0 * w.b[i] * w.a[i] + 2.0 * w.a[i] * w.a[i] * w.a[i];
        trip += d3 * h[i] * H(i, i);
    }
    return lead + pair + trip;
}

double quad_sq_moment(const MomentSequence& ms, std::ptrdiff_t n, const SymmetricKernel& H,
                      std::ptrdiff_t offset) {
    const std::size_t L = H.dim();
    Window w;
    w.resize(L);
    w.gather(ms, n, offset);
    w.centralize();
    std::vector<double> h0(L, 0.0);
    VolterraTerms t;
    volterra_terms(h0, H, w, t);
    return t.quadsq;
}

double quad_sq_moment_naive(const MomentSequence& ms, std::ptrdiff_t n, const SymmetricKernel& H,
                            std::ptrdiff_t offset) {
    const std::size_t L = H.dim();
    Window w;
    w.resize(L);
    w.gather(ms, n, offset);

    double t1 = 0.0;
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j)
            for (std::size_t k = 0; k < L; ++k)
                for (std::size_t l = 0; l < L; ++l)
                    t1 += w.a[i] * w.a[j] * w.a[k] * w.a[l] * H(i, j) * H(k, l);

    double t2 = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        const double d2 = w.b[i] - w.a[i] * w.a[i];
        for (std::size_t j = 0; j < L; ++j)
            for (std::size_t k = 0; k < L; ++k)
                t2 += d2 * w.a[j] * w.a[k] *
                      (2.0 * H(i, i) * H(j, k) + 4.0 * H(i, j) * H(i, k));
    }

    double t3 = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        const double d2i = w.b[i] - w.a[i] * w.a[i];
        for (std::size_t j = 0; j < L; ++j) {
            const double d2j = w.b[j] - w.a[j] * w.a[j];
            t3 += d2i * d2j * (2.0 * H(i, j) * H(i, j) + H(i, i) * H(j, j));
        }
    }

    double t4 = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        const double d3 = w.t3[i] - 3.0 * w.b[i] * w.a[i] + 2.0 * w.a[i] * w.a[i] * w.a[i];
        for (std::size_t j = 0; j < L; ++j) t4 += d3 * w.a[j] * 4.0 * H(i, i) * H(i, j);
    }

    double t5 = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        const double a = w.a[i], b = w.b[i];
        const double d4 = w.q4[i] + 12.0 * b * a * a - 3.0 * b * b - 4.0 * w.t3[i] * a -
                          6.0 * a * a * a * a;
        t5 += d4 * H(i, i) * H(i, i);
    }
    return t1 + t2 + t3 + t4 + t5;
}

ResidualResult residual_volterra(std::span<const double> y, const MomentSequence& ms,
                                 const VolterraChannelModel& model, std::ptrdiff_t offset) {
    const auto& h = model.h;
    if (h.empty()) throw std::invalid_argument("residual_volterra: empty kernel");
    if (model.H.dim() != h.size())
        throw std::invalid_argument("residual_volterra: H dimension does not match h");
    require_finite(y, "residual_volterra(y)");
    require_finite(h, "residual_volterra(h)");
    require_finite(model.H.packed(), "residual_volterra(H)");

    ResidualResult res;
    res.per_sample.resize(y.size());
    Window w;
    w.resize(h.size());
    VolterraTerms t;
    for (std::size_t n = 0; n < y.size(); ++n) {
        w.gather(ms, static_cast<std::ptrdiff_t>(n), offset);
        w.centralize();
        volterra_terms(h, model.H, w, t);
        double c = linear_part(y[n], t.mu, t.var_term);
        c += -2.0 * y[n] * t.m2q + 2.0 * t.cross + t.quadsq;
        res.per_sample[n] = c;
        res.total += c;
    }
    return res;
}

ResidualResult residual_volterra_naive(std::span<const double> y, const MomentSequence& ms,
                                       const VolterraChannelModel& model, std::ptrdiff_t offset) {
    const auto& h = model.h;
    const std::size_t L = h.size();
    if (model.H.dim() != L)
        throw std::invalid_argument("residual_volterra_naive: H dimension does not match h");

    ResidualResult res;
    res.per_sample.resize(y.size());
    Window w;
    w.resize(L);
    for (std::size_t n = 0; n < y.size(); ++n) {
        const auto pn = static_cast<std::ptrdiff_t>(n);
        w.gather(ms, pn, offset);
        w.centralize();
        double mu, var_term;
        linear_terms(h, w, mu, var_term);

        // E[x^T H x]: full double sum with the diagonal replaced by second
        // moments.
        double m2q = 0.0;
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j)
                m2q += (i == j) ? w.b[i] * model.H(i, i) : w.a[i] * w.a[j] * model.H(i, j);

        double c = linear_part(y[n], mu, var_term);
        c += -2.0 * y[n] * m2q + 2.0 * cross_moment_naive(ms, pn, h, model.H, offset) +
             quad_sq_moment_naive(ms, pn, model.H, offset);
        res.per_sample[n] = c;
        res.total += c;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Enumeration oracle
// ---------------------------------------------------------------------------

double oracle_residual(const SymbolProbabilities& probs, const Constellation& c,
                       std::span<const double> y, std::span<const double> h,
                       const SymmetricKernel* H, std::size_t sps, std::ptrdiff_t offset) {
    if (probs.m != c.size())
        throw std::invalid_argument("oracle_residual: probs/constellation size mismatch");
    if (H && H->dim() != h.size())
        throw std::invalid_argument("oracle_residual: H dimension does not match h");
    const std::size_t L = h.size();
    const std::size_t M = c.size();
    double combos = 1.0;
    for (std::size_t i = 0; i < L; ++i) combos *= static_cast<double>(M);
    if (L > 8 || combos > 1e6)
        throw std::invalid_argument(
            "oracle_residual: enumeration budget exceeded (requires L <= 8 and M^L <= 1e6)");

    const std::ptrdiff_t grid_len = static_cast<std::ptrdiff_t>(probs.n * sps);
    std::vector<double> x(L, 0.0);
    std::vector<std::size_t> win_i;   // window indices holding a symbol
    std::vector<std::size_t> win_s;   // corresponding symbol rows
    std::vector<std::size_t> digit;

    double total = 0.0;
    for (std::size_t n = 0; n < y.size(); ++n) {
        win_i.clear();
        win_s.clear();
        std::fill(x.begin(), x.end(), 0.0);
        for (std::size_t i = 0; i < L; ++i) {
            const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(n) + offset -
                                     static_cast<std::ptrdiff_t>(i);
            if (p >= 0 && p < grid_len && p % static_cast<std::ptrdiff_t>(sps) == 0) {
                win_i.push_back(i);
                win_s.push_back(static_cast<std::size_t>(p) / sps);
            }
        }

        digit.assign(win_i.size(), 0);
        double cn = 0.0;
        while (true) {
            double prob = 1.0;
            for (std::size_t k = 0; k < win_i.size(); ++k) {
                x[win_i[k]] = c.point(digit[k]);
                prob *= probs.at(win_s[k], digit[k]);
            }
            if (prob != 0.0) {
                double yhat = 0.0;
                for (std::size_t i = 0; i < L; ++i) yhat += h[i] * x[i];
                if (H) {
                    for (std::size_t i = 0; i < L; ++i) {
                        double ri = 0.0;
                        for (std::size_t j = 0; j < L; ++j) ri += (*H)(i, j) * x[j];
                        yhat += x[i] * ri;
                    }
                }
                const double e = y[n] - yhat;
                cn += prob * e * e;
            }
            // odometer increment
            std::size_t k = 0;
            for (; k < digit.size(); ++k) {
                if (++digit[k] < M) break;
                digit[k] = 0;
            }
            if (k == digit.size()) break;
            if (digit.empty()) break;
        }
        if (win_i.empty()) cn = y[n] * y[n]; // all-zero window
        total += cn;
    }
    return total;
}

// ---------------------------------------------------------------------------
// KL, plug-in, loss
// ---------------------------------------------------------------------------

double kl_term(const SymbolProbabilities& probs, const SymbolPrior& prior) {
    if (prior.probs.size() != probs.m)
        throw std::invalid_argument("kl_term: prior size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < probs.n; ++i) {
        for (std::size_t j = 0; j < probs.m; ++j) {
            const double f = probs.at(i, j);
            if (f == 0.0) continue;
            const double pr = prior.probs[j];
            if (pr <= 0.0)
                throw std::domain_error("kl_term: zero prior mass where Q is positive");
            kl += f * std::log(f / pr);
        }
    }
    return kl;
}

double sigma2_plugin(double C, std::size_t n_samples) {
    if (n_samples == 0) throw std::invalid_argument("sigma2_plugin: need n >= 1");
    return std::max(C / static_cast<double>(n_samples), kSigma2Floor);
}

namespace {
double plugged_loss(double kl, double C, std::size_t n) {
    return kl + static_cast<double>(n) * std::log(std::max(C, kCFloor));
}
} // namespace

double vae_loss(const SymbolProbabilities& probs, const Constellation& c,
                std::span<const double> y, const LinearChannelModel& model,
                const SymbolPrior& prior, std::size_t sps, std::ptrdiff_t offset) {
    const MomentSequence ms = upsample_moments(compute_moments(probs, c), sps);
    const double C = residual_linear(y, ms, model.h, offset).total;
    return plugged_loss(kl_term(probs, prior), C, y.size());
}

double vae_loss(const SymbolProbabilities& probs, const Constellation& c,
                std::span<const double> y, const VolterraChannelModel& model,
                const SymbolPrior& prior, std::size_t sps, std::ptrdiff_t offset) {
    const MomentSequence ms = upsample_moments(compute_moments(probs, c), sps);
    const double C = residual_volterra(y, ms, model, offset).total;
    return plugged_loss(kl_term(probs, prior), C, y.size());
}

double neg_elbo(const SymbolProbabilities& probs, const Constellation& c,
                std::span<const double> y, const VolterraChannelModel& model,
                const SymbolPrior& prior, double sigma2, std::size_t sps,
                std::ptrdiff_t offset) {
    if (sigma2 <= 0.0) throw std::invalid_argument("neg_elbo: sigma2 must be positive");
    const MomentSequence ms = upsample_moments(compute_moments(probs, c), sps);
    const double C = residual_volterra(y, ms, model, offset).total;
    const double n = static_cast<double>(y.size());
    return 0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) + C / (2.0 * sigma2) +
           kl_term(probs, prior);
}

// ---------------------------------------------------------------------------
// Analytic gradients
// ---------------------------------------------------------------------------

VaeLossGradients vae_loss_grad(const SymbolProbabilities& probs, const Constellation& c,
                               std::span<const double> y, std::span<const double> h,
                               const SymmetricKernel* H, const SymbolPrior& prior,
                               std::size_t sps, std::ptrdiff_t offset) {
    if (h.empty()) throw std::invalid_argument("vae_loss_grad: empty kernel");
    if (H && H->dim() != h.size())
        throw std::invalid_argument("vae_loss_grad: H dimension does not match h");
    if (probs.m != c.size())
        throw std::invalid_argument("vae_loss_grad: probs/constellation size mismatch");
    if (sps == 0) throw std::invalid_argument("vae_loss_grad: sps must be >= 1");
    require_finite(y, "vae_loss_grad(y)");
    require_finite(h, "vae_loss_grad(h)");
    if (H) require_finite(H->packed(), "vae_loss_grad(H)");

    const std::size_t L = h.size();
    const std::size_t N = y.size();
    const std::size_t M = c.size();

    const MomentSequence ms = upsample_moments(compute_moments(probs, c), sps);
    const std::ptrdiff_t grid_len = static_cast<std::ptrdiff_t>(ms.size());

    VaeLossGradients g;
    g.d_h.assign(L, 0.0);
    if (H) g.d_H.assign(H->packed_size(), 0.0);
    g.d_probs.n = probs.n;
    g.d_probs.m = probs.m;
    g.d_probs.p.assign(probs.p.size(), 0.0);

    // Gradients w.r.t. raw moments on the upsampled grid, accumulated across
    // samples, then pushed through to Q at the end.
    MomentSequence dms;
    dms.resize(ms.size());

    Window w;
    w.resize(L);
    VolterraTerms t;
    std::vector<double> rho(L), Hrho(L);

    // Pass 1: C.
    double C = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        w.gather(ms, static_cast<std::ptrdiff_t>(n), offset);
        w.centralize();
        if (H) {
            volterra_terms(h, *H, w, t);
            C += linear_part(y[n], t.mu, t.var_term) - 2.0 * y[n] * t.m2q + 2.0 * t.cross +
                 t.quadsq;
        } else {
            double mu, var_term;
            linear_terms(h, w, mu, var_term);
            C += linear_part(y[n], mu, var_term);
        }
    }
    g.C = C;
    g.kl = kl_term(probs, prior);
    g.sigma2 = sigma2_plugin(C, N);
    g.loss = plugged_loss(g.kl, C, N);

    // dLoss/dC of KL + N log(max(C, floor)).
    const double up = (C > kCFloor) ? static_cast<double>(N) / C : 0.0;

    // Pass 2: accumulate dC/d(params) and dC/d(moments), scaled by `up`.
    for (std::size_t n = 0; n < N; ++n) {
        const auto pn = static_cast<std::ptrdiff_t>(n);
        w.gather(ms, pn, offset);
        w.centralize();

        double G;                       // dc_n / d(mu-like channel output sum)
        double d_a_i, d_v_i, d_w_i, d_u_i;
        if (H) {
            volterra_terms(h, *H, w, t);
            G = 2.0 * (t.mu + t.m2q - y[n]);
            for (std::size_t i = 0; i < L; ++i) {
                const double e = h[i] + 2.0 * t.r[i];
                rho[i] = 4.0 * w.v[i] * e + 4.0 * (*H)(i, i) * w.w3[i];
            }
            H->matvec(rho, Hrho);

            for (std::size_t i = 0; i < L; ++i) {
                const double Hii = (*H)(i, i);
                const double e = h[i] + 2.0 * t.r[i];
                g.d_h[i] += up * (G * w.a[i] + 2.0 * w.v[i] * e + 2.0 * Hii * w.w3[i]);

                // Packed dC/dH: diagonal and strict upper triangle.
                g.d_H[H->pack(i, i)] +=
                    up * (G * (w.a[i] * w.a[i] + w.v[i]) + rho[i] * w.a[i] +
                          2.0 * w.w3[i] * e + 2.0 * Hii * (w.u4[i] - w.v[i] * w.v[i]));
                for (std::size_t j = i + 1; j < L; ++j) {
                    g.d_H[H->pack(i, j)] +=
                        up * (2.0 * G * w.a[i] * w.a[j] + rho[i] * w.a[j] + rho[j] * w.a[i] +
                              8.0 * (*H)(i, j) * w.v[i] * w.v[j]);
                }
            }
        } else {
            double mu, var_term;
            linear_terms(h, w, mu, var_term);
            G = 2.0 * (mu - y[n]);
            for (std::size_t i = 0; i < L; ++i)
                g.d_h[i] += up * (G * w.a[i] + 2.0 * h[i] * w.v[i]);
        }

        for (std::size_t i = 0; i < L; ++i) {
            const std::ptrdiff_t p = pn + offset - static_cast<std::ptrdiff_t>(i);
            if (p < 0 || p >= grid_len) continue;

            if (H) {
                const double Hii = (*H)(i, i);
                const double e = h[i] + 2.0 * t.r[i];
                d_a_i = G * e + Hrho[i];
                d_v_i = G * Hii + e * e + 4.0 * t.hv[i] - 6.0 * Hii * Hii * w.v[i];
                d_w_i = 2.0 * Hii * e;
                d_u_i = Hii * Hii;
            } else {
                d_a_i = G * h[i];
                d_v_i = h[i] * h[i];
                d_w_i = 0.0;
                d_u_i = 0.0;
            }

            // Central -> raw moment chain at position p.
            const double m1 = ms.m1[p], m2 = ms.m2[p], m3 = ms.m3[p];
            dms.m1[p] += up * (d_a_i + d_v_i * (-2.0 * m1) +
                               d_w_i * (6.0 * m1 * m1 - 3.0 * m2) +
                               d_u_i * (12.0 * m1 * m2 - 4.0 * m3 - 12.0 * m1 * m1 * m1));
            dms.m2[p] += up * (d_v_i + d_w_i * (-3.0 * m1) + d_u_i * (6.0 * m1 * m1));
            dms.m3[p] += up * (d_w_i + d_u_i * (-4.0 * m1));
            dms.m4[p] += up * d_u_i;
        }
    }

    // Raw moments -> Q, plus the KL part. Moment position of symbol s is
    // s * sps; inserted zeros carry no Q dependence.
    if (prior.probs.size() != M) throw std::invalid_argument("vae_loss_grad: prior size mismatch");
    for (std::size_t s = 0; s < probs.n; ++s) {
        const std::size_t p = s * sps;
        for (std::size_t m = 0; m < M; ++m) {
            const double A = c.point(m);
            const double A2 = A * A;
            double d = dms.m1[p] * A + dms.m2[p] * A2 + dms.m3[p] * A2 * A + dms.m4[p] * A2 * A2;
            const double q = probs.at(s, m);
            d += std::log(std::max(q, 1e-300) / prior.probs[m]) + 1.0;
            g.d_probs.p[s * M + m] = d;
        }
    }
    return g;
}

} // namespace blindeq
