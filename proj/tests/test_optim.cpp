#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "blindeq/optim.hpp"

using namespace blindeq;

namespace {

std::mt19937 make_rng(unsigned salt) { return std::mt19937(0x0b7100u + salt); }

std::vector<double> random_vec(std::mt19937& rng, std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

// Synthetic synchronized 2-sps linear ISI channel for smoke runs:
//   rx[2n]   = x[n] + isi * x[n-1] + noise
//   rx[2n+1] = 0.5 x[n] + 0.5 x[n+1] + noise
// isi = 0.35 leaves the eye partially open at the pass-through start, which
// is what the blind bootstrap needs (a fully closed eye starves the
// equalizer of gradient through the saturated demapper).
struct SyntheticData {
    std::vector<int> idx;
    std::vector<double> tx;
    std::vector<double> rx2;
};

SyntheticData synthetic_linear(std::mt19937& rng, std::size_t n_sym, double noise_sd,
                               double quad = 0.0, double isi = 0.35) {
    const Constellation c = Constellation::pam4();
    std::uniform_int_distribution<int> pick(0, 3);
    std::normal_distribution<double> g(0.0, noise_sd);
    SyntheticData d;
    d.idx.resize(n_sym);
    d.tx.resize(n_sym);
    for (std::size_t n = 0; n < n_sym; ++n) {
        d.idx[n] = pick(rng);
        d.tx[n] = c.point(d.idx[n]);
    }
    d.rx2.resize(2 * n_sym);
    auto at = [&](std::ptrdiff_t i) {
        return (i >= 0 && i < static_cast<std::ptrdiff_t>(n_sym)) ? d.tx[i] : 0.0;
    };
    for (std::size_t n = 0; n < n_sym; ++n) {
        const auto pn = static_cast<std::ptrdiff_t>(n);
        double even = at(pn) + isi * at(pn - 1);
        double odd = 0.5 * at(pn) + 0.5 * at(pn + 1);
        even += quad * at(pn) * at(pn - 1);
        odd += quad * at(pn) * at(pn);
        d.rx2[2 * n] = even + g(rng);
        d.rx2[2 * n + 1] = odd + g(rng);
    }
    return d;
}

double ser_against(const std::vector<int>& dec, const std::vector<int>& truth) {
    std::size_t bad = 0;
    for (std::size_t i = 0; i < dec.size(); ++i) bad += dec[i] != truth[i];
    return static_cast<double>(bad) / static_cast<double>(dec.size());
}

} // namespace

TEST_CASE("adam update") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<double> p = {1.0, -2.0, 0.5};
        const std::vector<double> g(3, 0.0);
        AdamState st(3);
        adam_step(p, g, st, 0.1);
        CHECK(p == std::vector<double>{1.0, -2.0, 0.5});
    }
    SUBCASE("first step moves by about lr in the gradient sign direction") {
        std::vector<double> p = {0.0, 0.0};
        const std::vector<double> g = {3.7, -0.02};
        AdamState st(2);
        adam_step(p, g, st, 0.05);
        CHECK(p[0] == doctest::Approx(-0.05).epsilon(1e-5));
        CHECK(p[1] == doctest::Approx(0.05).epsilon(1e-4));
    }
    SUBCASE("ten steps on p^2 strictly decrease the objective") {
        std::vector<double> p = {1.0};
        AdamState st(1);
        double prev = 1.0;
        for (int i = 0; i < 10; ++i) {
            const std::vector<double> g = {2.0 * p[0]};
            adam_step(p, g, st, 0.05);
            const double f = p[0] * p[0];
            CHECK(f < prev);
            prev = f;
        }
    }
    SUBCASE("invalid input rejected") {
        std::vector<double> p = {1.0};
        AdamState st(1);
        const std::vector<double> bad = {std::nan("")};
        CHECK_THROWS_AS(adam_step(p, bad, st, 0.1), std::runtime_error);
        const std::vector<double> wrong = {1.0, 2.0};
        CHECK_THROWS_AS(adam_step(p, wrong, st, 0.1), std::invalid_argument);
    }
}

TEST_CASE("step schedule") {
    StepSchedule s;
    s.base_lr = 5e-4;
    s.n_iter = 1000;

    CHECK(schedule_lr(0, s) == 5e-4);
    CHECK(schedule_lr(999, s) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(schedule_lr(5000, s) == doctest::Approx(5e-5).epsilon(1e-12)); // past the end

    SUBCASE("ten distinct plateaus with constant ratio") {
        std::vector<double> levels;
        double last = -1.0;
        for (std::size_t i = 0; i < 1000; ++i) {
            const double lr = schedule_lr(i, s);
            CHECK(lr <= last + 1e-18 * (last < 0 ? 0 : last) + (last < 0 ? 1e9 : 0.0));
            if (lr != last) levels.push_back(lr);
            last = lr;
        }
        REQUIRE(levels.size() == 10);
        const double ratio = std::pow(10.0, -1.0 / 9.0);
        for (std::size_t k = 1; k < 10; ++k)
            CHECK(levels[k] / levels[k - 1] == doctest::Approx(ratio).epsilon(1e-12));
        CHECK(levels[9] == doctest::Approx(s.base_lr / 10.0).epsilon(1e-12));
    }
    SUBCASE("disabled schedule is a fixed rate") {
        s.enabled = false;
        CHECK(schedule_lr(0, s) == 5e-4);
        CHECK(schedule_lr(999, s) == 5e-4);
    }
}

TEST_CASE("finite-difference gradient checker") {
    SUBCASE("exact on quadratics") {
        const std::vector<double> p = {1.0, -0.5, 2.0};
        auto f = [](const std::vector<double>& x) {
            double s = 0.0;
            for (double v : x) s += v * v;
            return s;
        };
        const std::vector<double> g = {2.0, -1.0, 4.0};
        CHECK(grad_check(f, p, g) < 1e-9);
    }
    SUBCASE("detects a corrupted coordinate") {
        const std::vector<double> p = {1.0, -0.5};
        auto f = [](const std::vector<double>& x) { return x[0] * x[0] + x[1] * x[1]; };
        const std::vector<double> g = {4.0, -1.0}; // first entry doubled
        CHECK(grad_check(f, p, g) > 0.3);
    }
}

TEST_CASE("composed training gradients pass the checker on random instances") {
    // End-to-end backward chain: equalizer -> soft demapper -> plugged loss
    // (blind) and equalizer -> MSE (supervised).
    const Constellation c = Constellation::pam4();
    const auto prior = SymbolPrior::flat(4);
    const std::size_t n1 = 5, n2 = 3, lch = 5, B = 8;
    const double sigma2_used = 0.8;
    const std::ptrdiff_t off = (lch - 1) / 2;

    auto rng = make_rng(77);
    int blind_checked = 0, sup_checked = 0;
    for (int trial = 0; trial < 24; ++trial) {
        const auto z = random_vec(rng, 2 * B, -3.0, 3.0);
        const auto pilots = random_vec(rng, B, -3.0, 3.0);
        VolterraEqualizer eq = VolterraEqualizer::initial(n1, n2);
        eq.w1 = random_vec(rng, n1, -1.0, 1.0);
        for (auto& v : eq.w2.packed()) v = random_vec(rng, 1, -0.3, 0.3)[0];
        SoftDemapper dm;
        dm.beta = random_vec(rng, 4, 0.5, 2.0);
        auto h = random_vec(rng, lch, -0.8, 0.8);
        SymmetricKernel H(lch);
        for (auto& v : H.packed()) v = random_vec(rng, 1, -0.3, 0.3)[0];

        const bool use_H = trial % 4 == 1 || trial % 4 == 3;
        const bool blind = trial % 4 <= 1;

        if (blind) {
            // Flatten (w1, w2, beta, h[, H]) into one parameter vector.
            std::vector<double> flat;
            auto push = [&](const std::vector<double>& v) {
                flat.insert(flat.end(), v.begin(), v.end());
            };
            push(eq.w1);
            push(eq.w2.packed());
            push(dm.beta);
            push(h);
            if (use_H) push(H.packed());

            auto loss_fn = [&](const std::vector<double>& f) {
                std::size_t o = 0;
                VolterraEqualizer e2 = eq;
                std::copy_n(f.begin() + o, n1, e2.w1.begin());
                o += n1;
                std::copy_n(f.begin() + o, e2.w2.packed_size(), e2.w2.packed().begin());
                o += e2.w2.packed_size();
                SoftDemapper d2 = dm;
                std::copy_n(f.begin() + o, 4, d2.beta.begin());
                o += 4;
                VolterraChannelModel m;
                m.h.assign(f.begin() + o, f.begin() + o + lch);
                o += lch;
                if (use_H) {
                    m.H = SymmetricKernel(lch);
                    std::copy_n(f.begin() + o, m.H.packed_size(), m.H.packed().begin());
                }
                const auto xh = equalize(z, e2);
                const auto q = soft_demap(xh, c, sigma2_used, d2);
                if (use_H) return vae_loss(q, c, z, m, prior, 2, off);
                LinearChannelModel lm;
                lm.h = m.h;
                return vae_loss(q, c, z, lm, prior, 2, off);
            };

            const auto xh = equalize(z, eq);
            const auto q = soft_demap(xh, c, sigma2_used, dm);
            const auto g = vae_loss_grad(q, c, z, h, use_H ? &H : nullptr, prior, 2, off);
            const auto dmg = soft_demap_backward(xh, c, sigma2_used, dm, q, g.d_probs);
            const auto eg = equalize_backward(z, eq, dmg.d_xhat);

            std::vector<double> analytic;
            auto pushg = [&](const std::vector<double>& v) {
                analytic.insert(analytic.end(), v.begin(), v.end());
            };
            pushg(eg.d_w1);
            pushg(eg.d_w2);
            pushg(dmg.d_beta);
            pushg(g.d_h);
            if (use_H) pushg(g.d_H);

            CHECK(grad_check(loss_fn, flat, analytic) < 1e-4);
            ++blind_checked;
        } else {
            std::vector<double> flat = eq.w1;
            flat.insert(flat.end(), eq.w2.packed().begin(), eq.w2.packed().end());
            auto loss_fn = [&](const std::vector<double>& f) {
                VolterraEqualizer e2 = eq;
                std::copy_n(f.begin(), n1, e2.w1.begin());
                std::copy_n(f.begin() + n1, e2.w2.packed_size(), e2.w2.packed().begin());
                return supervised_loss(equalize(z, e2), pilots);
            };
            const auto xh = equalize(z, eq);
            const auto eg = equalize_backward(z, eq, supervised_loss_grad(xh, pilots));
            std::vector<double> analytic = eg.d_w1;
            analytic.insert(analytic.end(), eg.d_w2.begin(), eg.d_w2.end());
            CHECK(grad_check(loss_fn, flat, analytic) < 1e-4);
            ++sup_checked;
        }
    }
    CHECK(blind_checked >= 10);
    CHECK(sup_checked >= 10);
}

TEST_CASE("training is deterministic for a fixed input") {
    auto rng = make_rng(42);
    const auto data = synthetic_linear(rng, 4000, 0.1);
    const Constellation c = Constellation::pam4();
    TrainConfig cfg;
    cfg.method = Method::v2vae;
    cfg.n1_taps = 9;
    cfg.n2_taps = 5;
    cfg.channel_taps = 7;
    cfg.batch_symbols = 500;
    cfg.base_lr = 1e-3;

    const auto a = train(data.rx2, data.tx, c, cfg);
    const auto b = train(data.rx2, data.tx, c, cfg);
    REQUIRE(a.trace.size() == b.trace.size());
    REQUIRE(a.trace.size() == 8);
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].loss == b.trace[i].loss);
        CHECK(a.trace[i].lr == b.trace[i].lr);
        CHECK(a.trace[i].sigma2 == b.trace[i].sigma2);
    }
    CHECK(a.eq.w1 == b.eq.w1);
    CHECK(a.eq.w2.packed() == b.eq.w2.packed());
    CHECK(a.channel.h == b.channel.h);
    CHECK(a.demapper.beta == b.demapper.beta);
}

TEST_CASE("tracking mode holds the learning rate fixed") {
    auto rng = make_rng(43);
    const auto data = synthetic_linear(rng, 3000, 0.1);
    TrainConfig cfg;
    cfg.method = Method::vae;
    cfg.n1_taps = 9;
    cfg.n2_taps = 0;
    cfg.channel_taps = 7;
    cfg.batch_symbols = 250;
    cfg.base_lr = 2e-3;
    cfg.schedule = false;
    const auto r = train(data.rx2, data.tx, Constellation::pam4(), cfg);
    REQUIRE(r.trace.size() == 12);
    for (const auto& row : r.trace) CHECK(row.lr == 2e-3);
}

TEST_CASE("loss trace CSV format") {
    std::vector<TraceRow> t = {{0, 5e-4, 123.456, 0.25}, {1, 5e-4, 100.0, 0.125}};
    std::stringstream ss;
    write_trace_csv(ss, t);
    std::string line;
    std::getline(ss, line);
    CHECK(line == "iteration,lr,loss,sigma2");
    std::getline(ss, line);
    CHECK(line.substr(0, 2) == "0,");
    std::getline(ss, line);
    CHECK(line.substr(0, 2) == "1,");
}

TEST_CASE("blind training on a linear ISI channel reaches low SER") {
    auto rng = make_rng(44);
    const auto train_data = synthetic_linear(rng, 20000, 0.05);
    const auto eval_data = synthetic_linear(rng, 20000, 0.05);
    const Constellation c = Constellation::pam4();

    TrainConfig cfg;
    cfg.method = Method::vae;
    cfg.batch_symbols = 1000;
    cfg.base_lr = 5e-3;
    cfg.epochs = 10;

    const auto r = train(train_data.rx2, {}, c, cfg);

    // The pass-through start makes frequent errors (residual ISI)...
    const auto init = VolterraEqualizer::initial(cfg.n1_taps, cfg.n2_taps);
    const auto ser0 = ser_against(
        hard_decision_euclidean(equalize(eval_data.rx2, init), c), eval_data.idx);
    CHECK(ser0 > 0.02);

    // ...while the trained equalizer does.
    const auto ser = ser_against(
        hard_decision_euclidean(apply_equalizer(r, eval_data.rx2), c), eval_data.idx);
    CHECK(ser < 1e-3);

    // Loss went down substantially.
    CHECK(r.trace.back().loss < r.trace.front().loss);
}

TEST_CASE("supervised training on the same channel also converges") {
    auto rng = make_rng(45);
    const auto train_data = synthetic_linear(rng, 20000, 0.05);
    const auto eval_data = synthetic_linear(rng, 20000, 0.05);
    const Constellation c = Constellation::pam4();

    TrainConfig cfg;
    cfg.method = Method::ffe;
    cfg.batch_symbols = 1000;
    cfg.base_lr = 5e-3;
    cfg.epochs = 10;

    const auto r = train(train_data.rx2, train_data.tx, c, cfg);
    const auto ser = ser_against(
        hard_decision_euclidean(apply_equalizer(r, eval_data.rx2), c), eval_data.idx);
    CHECK(ser < 1e-3);
}

TEST_CASE("train_continue numbers iterations from the offset") {
    auto rng = make_rng(46);
    const auto d1 = synthetic_linear(rng, 2000, 0.1);
    const auto d2 = synthetic_linear(rng, 2000, 0.1);
    const Constellation c = Constellation::pam4();
    TrainConfig cfg;
    cfg.method = Method::vae;
    cfg.n1_taps = 9;
    cfg.n2_taps = 0;
    cfg.channel_taps = 7;
    cfg.batch_symbols = 500;
    cfg.base_lr = 1e-3;
    cfg.schedule = false;

    auto st = train(d1.rx2, {}, c, cfg);
    REQUIRE(st.trace.size() == 4);
    std::vector<std::size_t> hook_batches;
    train_continue(st, d2.rx2, {}, c, cfg, 4,
                   [&](std::size_t b, std::span<const double>) { hook_batches.push_back(b); });
    REQUIRE(st.trace.size() == 8);
    CHECK(st.trace[4].iter == 4);
    CHECK(st.trace[7].iter == 7);
    CHECK(hook_batches == std::vector<std::size_t>{0, 1, 2, 3});
}
