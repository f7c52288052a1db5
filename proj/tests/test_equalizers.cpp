#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "blindeq/equalizers.hpp"

using namespace blindeq;

namespace {

std::mt19937 make_rng(unsigned salt) { return std::mt19937(0xe9000u + salt); }

std::vector<double> random_vec(std::mt19937& rng, std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), 1.0});
}

} // namespace

TEST_CASE("identity equalizer passes symbol-rate samples through") {
    auto rng = make_rng(1);
    const auto z = random_vec(rng, 40, -3.0, 3.0);
    const auto eq = VolterraEqualizer::initial(7, 3);
    const auto xhat = equalize(z, eq);
    REQUIRE(xhat.size() == 20);
    for (std::size_t s = 0; s < xhat.size(); ++s) CHECK(xhat[s] == z[2 * s]);

    const auto ffe = FfeEqualizer::initial(7);
    const auto xf = equalize(z, ffe);
    for (std::size_t s = 0; s < xf.size(); ++s) CHECK(xf[s] == z[2 * s]);
}

TEST_CASE("single off-diagonal quadratic tap gives twice the lag product") {
    auto rng = make_rng(2);
    const auto z = random_vec(rng, 30, -2.0, 2.0);
    VolterraEqualizer eq = VolterraEqualizer::initial(5, 5);
    eq.w1.assign(5, 0.0);
    eq.w2.set(1, 3, 1.0);
    const auto xhat = equalize(z, eq);
    // window tap k of symbol s sits at signal index 2s - 2 + k
    for (std::size_t s = 2; s < xhat.size() - 2; ++s)
        CHECK(xhat[s] == doctest::Approx(2.0 * z[2 * s - 1] * z[2 * s + 1]).epsilon(1e-15));
}

TEST_CASE("linear part scales with w1") {
    auto rng = make_rng(3);
    const auto z = random_vec(rng, 30, -2.0, 2.0);
    VolterraEqualizer eq = VolterraEqualizer::initial(5, 3);
    eq.w1 = random_vec(rng, 5, -1.0, 1.0);
    eq.w2 = SymmetricKernel(3);
    auto scaled = eq;
    for (auto& w : scaled.w1) w *= 2.5;
    const auto a = equalize(z, eq);
    const auto b = equalize(z, scaled);
    for (std::size_t s = 0; s < a.size(); ++s)
        CHECK(b[s] == doctest::Approx(2.5 * a[s]).epsilon(1e-12));
}

TEST_CASE("quadratic evaluation equals the full symmetric double sum") {
    auto rng = make_rng(4);
    const auto z = random_vec(rng, 24, -2.0, 2.0);
    std::vector<double> full = {0.3, -0.2, 0.1, -0.2, 0.5, 0.7, 0.1, 0.7, -0.4};
    VolterraEqualizer eq = VolterraEqualizer::initial(3, 3);
    eq.w1.assign(3, 0.0);
    eq.w2 = SymmetricKernel::from_full(full, 3);
    const auto xhat = equalize(z, eq);
    for (std::size_t s = 1; s + 1 < xhat.size(); ++s) {
        double want = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                want += full[i * 3 + j] * z[2 * s - 1 + i] * z[2 * s - 1 + j];
        CHECK(xhat[s] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("short signal is rejected") {
    const auto eq = VolterraEqualizer::initial(25, 15);
    const std::vector<double> z(10, 0.0);
    CHECK_THROWS_AS(equalize(z, eq), std::invalid_argument);
}

TEST_CASE("equalizer backward matches finite differences") {
    auto rng = make_rng(5);
    const auto z = random_vec(rng, 36, -2.0, 2.0);
    VolterraEqualizer eq = VolterraEqualizer::initial(5, 3);
    eq.w1 = random_vec(rng, 5, -1.0, 1.0);
    for (auto& v : eq.w2.packed()) v = random_vec(rng, 1, -0.5, 0.5)[0];
    const auto d_up = random_vec(rng, 18, -1.0, 1.0); // arbitrary upstream gradient

    auto scalar = [&](const VolterraEqualizer& e) {
        const auto xh = equalize(z, e);
        double s = 0.0;
        for (std::size_t i = 0; i < xh.size(); ++i) s += d_up[i] * xh[i];
        return s;
    };
    const auto g = equalize_backward(z, eq, d_up);

    for (std::size_t i = 0; i < eq.w1.size(); ++i) {
        auto ep = eq, em = eq;
        const double h = 1e-6;
        ep.w1[i] += h;
        em.w1[i] -= h;
        CHECK(rel_err(g.d_w1[i], (scalar(ep) - scalar(em)) / (2 * h)) < 1e-7);
    }
    for (std::size_t k = 0; k < eq.w2.packed().size(); ++k) {
        auto ep = eq, em = eq;
        const double h = 1e-6;
        ep.w2.packed()[k] += h;
        em.w2.packed()[k] -= h;
        CHECK(rel_err(g.d_w2[k], (scalar(ep) - scalar(em)) / (2 * h)) < 1e-7);
    }
}

TEST_CASE("soft demapper") {
    const Constellation c = Constellation::pam4();
    const auto dm = SoftDemapper::initial(4);

    SUBCASE("rows sum to one") {
        auto rng = make_rng(6);
        const auto xh = random_vec(rng, 50, -5.0, 5.0);
        const auto q = soft_demap(xh, c, 0.3, dm);
        for (std::size_t n = 0; n < q.n; ++n) {
            double s = 0.0;
            for (std::size_t m = 0; m < q.m; ++m) s += q.at(n, m);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("midpoint between adjacent symbols splits them equally") {
        const std::vector<double> xh = {0.0}; // midway between -1 and 1
        const auto q = soft_demap(xh, c, 0.5, dm);
        CHECK(q.at(0, 1) == doctest::Approx(q.at(0, 2)).epsilon(1e-12));
        CHECK(q.at(0, 0) == doctest::Approx(q.at(0, 3)).epsilon(1e-12));
        CHECK(q.at(0, 1) > q.at(0, 0));
    }
    SUBCASE("vanishing sigma2 concentrates on the hit symbol") {
        const std::vector<double> xh = {1.0};
        const auto q = soft_demap(xh, c, 1e-9, dm);
        CHECK(q.at(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("invalid inputs rejected") {
        const std::vector<double> xh = {0.0};
        CHECK_THROWS_AS(soft_demap(xh, c, 0.0, dm), std::invalid_argument);
        SoftDemapper bad;
        bad.beta = {1.0, 1.0, -1.0, 1.0};
        CHECK_THROWS_AS(soft_demap(xh, c, 1.0, bad), std::invalid_argument);
    }
}

TEST_CASE("soft demapper backward matches finite differences") {
    auto rng = make_rng(7);
    const Constellation c = Constellation::pam4();
    auto xh = random_vec(rng, 12, -4.0, 4.0);
    SoftDemapper dm;
    dm.beta = random_vec(rng, 4, 0.5, 2.0);
    const double s2 = 0.7;
    // Arbitrary linear functional of the probabilities.
    const auto coef = random_vec(rng, 12 * 4, -1.0, 1.0);
    auto scalar = [&](const std::vector<double>& x, const SoftDemapper& d) {
        const auto q = soft_demap(x, c, s2, d);
        double s = 0.0;
        for (std::size_t i = 0; i < q.p.size(); ++i) s += coef[i] * q.p[i];
        return s;
    };
    const auto q = soft_demap(xh, c, s2, dm);
    SymbolProbabilities d_q(12, 4);
    d_q.p.assign(coef.begin(), coef.end());
    const auto g = soft_demap_backward(xh, c, s2, dm, q, d_q);

    const double h = 1e-6;
    for (std::size_t n = 0; n < xh.size(); ++n) {
        auto xp = xh, xm = xh;
        xp[n] += h;
        xm[n] -= h;
        CHECK(rel_err(g.d_xhat[n], (scalar(xp, dm) - scalar(xm, dm)) / (2 * h)) < 1e-6);
    }
    for (std::size_t m = 0; m < 4; ++m) {
        auto dp = dm, dmm = dm;
        dp.beta[m] += h;
        dmm.beta[m] -= h;
        CHECK(rel_err(g.d_beta[m], (scalar(xh, dp) - scalar(xh, dmm)) / (2 * h)) < 1e-6);
    }
}

TEST_CASE("hard decisions") {
    const Constellation c = Constellation::pam4();
    SUBCASE("euclidean rule") {
        const std::vector<double> xh = {0.9, -100.0, 100.0, -1.9};
        const auto d = hard_decision_euclidean(xh, c);
        CHECK(d[0] == 2);
        CHECK(d[1] == 0);
        CHECK(d[2] == 3);
        CHECK(d[3] == 1);
    }
    SUBCASE("tie goes to the lower index") {
        const Constellation c2({-1.0, 1.0});
        const std::vector<double> xh = {0.0};
        CHECK(hard_decision_euclidean(xh, c2)[0] == 0);
        CHECK(hard_decision_euclidean(std::vector<double>{0.0}, c)[0] == 1);
    }
    SUBCASE("map rule") {
        SymbolProbabilities q(2, 4);
        q.at(0, 0) = 0.4;
        q.at(0, 1) = 0.3;
        q.at(0, 2) = 0.2;
        q.at(0, 3) = 0.1;
        q.at(1, 2) = 1.0;
        const auto d = hard_decision_map(q);
        CHECK(d[0] == 0);
        CHECK(d[1] == 2);
    }
    SUBCASE("map is invariant under strictly monotone row transforms") {
        auto rng = make_rng(8);
        SymbolProbabilities q(6, 4);
        for (auto& v : q.p) v = random_vec(rng, 1, 0.01, 1.0)[0];
        const auto base = hard_decision_map(q);
        SymbolProbabilities t = q;
        for (auto& v : t.p) v = std::exp(3.0 * v) + 1.0;
        CHECK(hard_decision_map(t) == base);
    }
    SUBCASE("map after demap equals euclidean for uniform beta") {
        auto rng = make_rng(9);
        const auto xh = random_vec(rng, 200, -5.0, 5.0);
        const auto dm = SoftDemapper::initial(4);
        const auto q = soft_demap(xh, c, 0.42, dm);
        CHECK(hard_decision_map(q) == hard_decision_euclidean(xh, c));
    }
    SUBCASE("joint permutation of constellation and beta permutes columns only") {
        auto rng = make_rng(10);
        const auto xh = random_vec(rng, 40, -4.0, 4.0);
        SoftDemapper dm;
        dm.beta = random_vec(rng, 4, 0.5, 2.0);
        const auto q = soft_demap(xh, c, 0.6, dm);
        const auto dec = hard_decision_map(q);

        const std::size_t perm[4] = {3, 1, 0, 2};
        std::vector<double> pts(4);
        SoftDemapper dmp;
        dmp.beta.resize(4);
        for (std::size_t j = 0; j < 4; ++j) {
            pts[j] = c.point(perm[j]);
            dmp.beta[j] = dm.beta[perm[j]];
        }
        const Constellation cp(pts);
        const auto qp = soft_demap(xh, cp, 0.6, dmp);
        for (std::size_t n = 0; n < qp.n; ++n)
            for (std::size_t j = 0; j < 4; ++j)
                CHECK(qp.at(n, j) == doctest::Approx(q.at(n, perm[j])).epsilon(1e-12));
        const auto decp = hard_decision_map(qp);
        for (std::size_t n = 0; n < qp.n; ++n)
            CHECK(perm[decp[n]] == static_cast<std::size_t>(dec[n]));
    }
}

TEST_CASE("supervised criterion") {
    const std::vector<double> x = {1.0, -3.0, 3.0, -1.0};
    SUBCASE("perfect estimates give zero") { CHECK(supervised_loss(x, x) == 0.0); }
    SUBCASE("constant offset d gives d squared") {
        std::vector<double> xh = x;
        for (auto& v : xh) v += 0.25;
        CHECK(supervised_loss(xh, x) == doctest::Approx(0.0625).epsilon(1e-12));
    }
    SUBCASE("random case matches direct computation") {
        auto rng = make_rng(11);
        const auto a = random_vec(rng, 64, -4.0, 4.0);
        const auto b = random_vec(rng, 64, -4.0, 4.0);
        double want = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) want += (a[i] - b[i]) * (a[i] - b[i]);
        want /= 64.0;
        CHECK(supervised_loss(a, b) == doctest::Approx(want).epsilon(1e-14));
    }
    SUBCASE("gradient matches finite differences") {
        auto rng = make_rng(12);
        auto a = random_vec(rng, 16, -4.0, 4.0);
        const auto b = random_vec(rng, 16, -4.0, 4.0);
        const auto g = supervised_loss_grad(a, b);
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double h = 1e-6;
            auto ap = a, am = a;
            ap[i] += h;
            am[i] -= h;
            CHECK(rel_err(g[i], (supervised_loss(ap, b) - supervised_loss(am, b)) / (2 * h)) <
                  1e-7);
        }
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    auto rng = make_rng(13);
    VolterraEqualizer eq = VolterraEqualizer::initial(25, 15);
    eq.w1 = random_vec(rng, 25, -1.0, 1.0);
    for (auto& v : eq.w2.packed()) v = random_vec(rng, 1, -0.5, 0.5)[0];
    SoftDemapper dm;
    dm.beta = random_vec(rng, 4, 0.3, 3.0);

    std::stringstream ss;
    save_equalizer(ss, eq, dm);
    VolterraEqualizer eq2;
    SoftDemapper dm2;
    load_equalizer(ss, eq2, dm2);

    CHECK(eq2.w1 == eq.w1);
    CHECK(eq2.w2.dim() == eq.w2.dim());
    CHECK(eq2.w2.packed() == eq.w2.packed());
    CHECK(dm2.beta == dm.beta);

    std::stringstream bad("not-a-checkpoint 9");
    CHECK_THROWS_AS(load_equalizer(bad, eq2, dm2), std::runtime_error);
}
