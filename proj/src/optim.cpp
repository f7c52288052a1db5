#include "blindeq/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace blindeq {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr) {
    if (params.size() != grads.size() || state.m.size() != params.size() ||
        state.v.size() != params.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    for (double g : grads)
        if (!std::isfinite(g))
            throw std::runtime_error("adam_step: non-finite gradient, aborting batch");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

double schedule_lr(std::size_t iter, const StepSchedule& schedule) {
    if (schedule.base_lr <= 0.0) throw std::invalid_argument("schedule_lr: base_lr must be > 0");
    if (!schedule.enabled) return schedule.base_lr;
    if (schedule.n_iter == 0) throw std::invalid_argument("schedule_lr: n_iter must be >= 1");
    std::size_t seg = iter * 10 / schedule.n_iter;
    if (seg > 9) seg = 9;
    return schedule.base_lr * std::pow(10.0, -static_cast<double>(seg) / 9.0);
}

double grad_check(const std::function<double(const std::vector<double>&)>& loss,
                  const std::vector<double>& params, std::span<const double> analytic) {
    if (analytic.size() != params.size())
        throw std::invalid_argument("grad_check: gradient length mismatch");
    double worst = 0.0;
    std::vector<double> p = params;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(p[i]));
        const double saved = p[i];
        p[i] = saved + h;
        const double fp = loss(p);
        p[i] = saved - h;
        const double fm = loss(p);
        p[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1.0});
        worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
    }
    return worst;
}

Method method_from_string(const std::string& s) {
    if (s == "vae") return Method::vae;
    if (s == "v2vae") return Method::v2vae;
    if (s == "ffe") return Method::ffe;
    if (s == "volterra") return Method::volterra;
    throw std::invalid_argument("unknown method '" + s +
                                "' (expected vae, v2vae, ffe or volterra)");
}

std::string method_name(Method m) {
    switch (m) {
    case Method::vae: return "vae";
    case Method::v2vae: return "v2vae";
    case Method::ffe: return "ffe";
    case Method::volterra: return "volterra";
    }
    throw std::logic_error("method_name: bad enum");
}

bool method_is_blind(Method m) { return m == Method::vae || m == Method::v2vae; }

namespace {

constexpr double kBetaFloor = 1e-6;

TrainResult make_initial_state(const Constellation& c, const TrainConfig& cfg) {
    TrainResult st;
    st.method = cfg.method;
    const bool second_order_eq =
        cfg.method == Method::volterra || cfg.method == Method::v2vae;
    const std::size_t n2 = second_order_eq ? cfg.n2_taps : 0;
    st.eq = VolterraEqualizer::initial(cfg.n1_taps, n2);
    st.sigma2 = cfg.sigma2_init;
    st.opt.w1 = AdamState(st.eq.w1.size());
    st.opt.w2 = AdamState(st.eq.w2.packed_size());
    if (method_is_blind(cfg.method)) {
        st.demapper = SoftDemapper::initial(c.size());
        st.opt.beta = AdamState(c.size());
        st.channel.h.assign(cfg.channel_taps, 0.0);
        st.channel.h[(cfg.channel_taps - 1) / 2] = 1.0;
        st.channel.sigma2 = cfg.sigma2_init;
        st.opt.h = AdamState(cfg.channel_taps);
        if (cfg.method == Method::v2vae) {
            st.channel.H = SymmetricKernel(cfg.channel_taps);
            st.opt.H = AdamState(st.channel.H.packed_size());
        }
    }
    return st;
}

} // namespace

void train_continue(TrainResult& state, std::span<const double> rx2,
                    std::span<const double> tx_symbols, const Constellation& c,
                    const TrainConfig& cfg, std::size_t iter0,
                    const std::function<void(std::size_t, std::span<const double>)>& batch_hook) {
    const std::size_t B = cfg.batch_symbols;
    if (B == 0) throw std::invalid_argument("train: batch_symbols must be >= 1");
    const std::size_t n_sym = rx2.size() / 2;
    const std::size_t nb = n_sym / B;
    if (nb == 0) throw std::invalid_argument("train: fewer symbols than one batch");
    const bool blind = method_is_blind(cfg.method);
    if (!blind && tx_symbols.size() < nb * B)
        throw std::invalid_argument("train: supervised method needs pilot symbols");

    StepSchedule sched;
    sched.base_lr = cfg.base_lr;
    sched.n_iter = iter0 + cfg.epochs * nb;
    sched.enabled = cfg.schedule;

    const SymbolPrior prior = SymbolPrior::flat(c.size());
    const std::ptrdiff_t ch_offset =
        static_cast<std::ptrdiff_t>((cfg.channel_taps - 1) / 2);

    std::size_t iter = iter0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t b = 0; b < nb; ++b, ++iter) {
            const auto z = rx2.subspan(2 * B * b, 2 * B);
            const double lr = schedule_lr(iter, sched);
            const auto xhat = equalize(z, state.eq);
            if (batch_hook) batch_hook(iter - iter0, xhat);

            if (blind) {
                const double sigma2_used = state.sigma2;
                const auto q = soft_demap(xhat, c, sigma2_used, state.demapper);
                const SymmetricKernel* H =
                    (cfg.method == Method::v2vae) ? &state.channel.H : nullptr;
                const auto g =
                    vae_loss_grad(q, c, z, state.channel.h, H, prior, 2, ch_offset);
                if (!std::isfinite(g.loss))
                    throw std::runtime_error("train: loss diverged (non-finite) at iteration " +
                                             std::to_string(iter));
                state.trace.push_back({iter, lr, g.loss, g.sigma2});

                const auto dm =
                    soft_demap_backward(xhat, c, sigma2_used, state.demapper, q, g.d_probs);
                const auto eg = equalize_backward(z, state.eq, dm.d_xhat);

                adam_step(state.eq.w1, eg.d_w1, state.opt.w1, lr);
                if (!state.eq.w2.packed().empty())
                    adam_step(state.eq.w2.packed(), eg.d_w2, state.opt.w2, lr);
                adam_step(state.demapper.beta, dm.d_beta, state.opt.beta, lr);
                for (auto& bm : state.demapper.beta) bm = std::max(bm, kBetaFloor);
                adam_step(state.channel.h, g.d_h, state.opt.h, lr);
                if (H) adam_step(state.channel.H.packed(), g.d_H, state.opt.H, lr);
                state.sigma2 = g.sigma2;
                state.channel.sigma2 = g.sigma2;
            } else {
                const auto pilots = tx_symbols.subspan(B * b, B);
                const double loss = supervised_loss(xhat, pilots);
                if (!std::isfinite(loss))
                    throw std::runtime_error("train: loss diverged (non-finite) at iteration " +
                                             std::to_string(iter));
                state.trace.push_back({iter, lr, loss, 0.0});
                const auto d_xhat = supervised_loss_grad(xhat, pilots);
                const auto eg = equalize_backward(z, state.eq, d_xhat);
                adam_step(state.eq.w1, eg.d_w1, state.opt.w1, lr);
                if (!state.eq.w2.packed().empty())
                    adam_step(state.eq.w2.packed(), eg.d_w2, state.opt.w2, lr);
            }
        }
    }
}

TrainResult train(std::span<const double> rx2, std::span<const double> tx_symbols,
                  const Constellation& c, const TrainConfig& cfg) {
    TrainResult st = make_initial_state(c, cfg);
    train_continue(st, rx2, tx_symbols, c, cfg, 0);
    return st;
}

std::vector<double> apply_equalizer(const TrainResult& state, std::span<const double> rx2) {
    return equalize(rx2, state.eq);
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
    os << "iteration,lr,loss,sigma2\n";
    char buf[160];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.iter, r.lr, r.loss,
                      r.sigma2);
        os << buf;
    }
}

void write_trace_csv_file(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_trace_csv_file: cannot open " + path);
    write_trace_csv(os, trace);
}

} // namespace blindeq
