#ifndef BLINDEQ_OPTIM_HPP
#define BLINDEQ_OPTIM_HPP

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "blindeq/constellation.hpp"
#include "blindeq/elbo.hpp"
#include "blindeq/equalizers.hpp"

namespace blindeq {

// Standard Adam accumulators for one parameter group.
struct AdamState {
    std::vector<double> m, v;
    std::size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam update, in place. Rejects non-finite gradients.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr);

// Piecewise-constant schedule: ten equal segments, geometric decay by
// 10^(-1/9) per boundary, so the last segment runs at base_lr / 10.
struct StepSchedule {
    double base_lr = 1e-3;
    std::size_t n_iter = 1;
    bool enabled = true; // disabled => fixed base_lr (tracking mode)
};

double schedule_lr(std::size_t iter, const StepSchedule& schedule);

// Worst-case relative error between an analytic gradient and central finite
// differences with h = 1e-6 * max(1, |p|). The error at each coordinate is
// |a - fd| / max(|a|, |fd|, 1).
double grad_check(const std::function<double(const std::vector<double>&)>& loss,
                  const std::vector<double>& params, std::span<const double> analytic);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class Method {
    vae,      // blind, linear channel model
    v2vae,    // blind, second-order Volterra channel model
    ffe,      // supervised linear equalizer
    volterra, // supervised second-order Volterra equalizer
};

Method method_from_string(const std::string& s);
std::string method_name(Method m);
bool method_is_blind(Method m);

struct TrainConfig {
    Method method = Method::v2vae;
    std::size_t n1_taps = 25;       // equalizer FIR taps (2 sps)
    std::size_t n2_taps = 15;       // equalizer quadratic window; 0 disables
    std::size_t channel_taps = 25;  // channel-model kernel length (2 sps)
    std::size_t batch_symbols = 1000;
    double base_lr = 5e-4;
    bool schedule = true;           // false: fixed lr (tracking)
    std::size_t epochs = 1;
    double sigma2_init = 1.0;
};

struct TraceRow {
    std::size_t iter = 0;
    double lr = 0.0;
    double loss = 0.0;
    double sigma2 = 0.0; // plug-in for blind methods, 0 for supervised
};

struct TrainResult {
    Method method = Method::v2vae;
    VolterraEqualizer eq;          // w2 has dim 0 when the method is ffe
    SoftDemapper demapper;         // empty for supervised methods
    VolterraChannelModel channel;  // H has dim 0 for the linear model; blind only
    double sigma2 = 1.0;           // final plug-in value (blind)
    std::vector<TraceRow> trace;

    // Optimizer accumulators, carried so training can resume mid-stream.
    struct OptStates {
        AdamState w1, w2, beta, h, H;
    } opt;
};

// Batched single-pass training over a synchronized 2-sps signal. Symbol s
// lines up with rx2[2s], rx2[2s+1]. Batches are consecutive, non-overlapping
// and self-contained (windows are zero-padded at batch edges). tx_symbols
// are only read by the supervised methods.
TrainResult train(std::span<const double> rx2, std::span<const double> tx_symbols,
                  const Constellation& c, const TrainConfig& cfg);

// Continue training from an existing state (tracking across a channel
// switch). Appends to result.trace with iterations numbered from iter0.
void train_continue(TrainResult& state, std::span<const double> rx2,
                    std::span<const double> tx_symbols, const Constellation& c,
                    const TrainConfig& cfg, std::size_t iter0,
                    const std::function<void(std::size_t batch, std::span<const double> xhat)>&
                        batch_hook = {});

// Equalizer output of a trained state over a full signal.
std::vector<double> apply_equalizer(const TrainResult& state, std::span<const double> rx2);

// CSV loss trace: header "iteration,lr,loss,sigma2".
void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace);
void write_trace_csv_file(const std::string& path, const std::vector<TraceRow>& trace);

} // namespace blindeq

#endif
