#include "blindeq/harness.hpp"

#include "blindeq/equalizers.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>

namespace blindeq {

namespace {

using nlohmann::json;

// Fixed-format double for CSV cells: round-trippable and byte-stable.
std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string sanitize_reason(std::string s) {
    for (char& ch : s)
        if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
    return s;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const char* ctx) {
    if (!j.is_object()) throw std::invalid_argument(std::string(ctx) + ": expected an object");
    for (const auto& item : j.items())
        if (!allowed.count(item.key()))
            throw std::invalid_argument(std::string(ctx) + ": unknown key '" + item.key() + "'");
}

double get_snr(const json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw std::invalid_argument("channel.snr_db: only the string 'inf' is accepted");
    }
    return j.get<double>();
}

json snr_to_json(double snr) {
    if (std::isinf(snr)) return "inf";
    return snr;
}

const Constellation& pam4() {
    static const Constellation c = Constellation::pam4();
    return c;
}

std::vector<double> amplitudes_of(const std::vector<int>& idx) {
    std::vector<double> a(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        a[i] = pam4().point(static_cast<std::size_t>(idx[i]));
    return a;
}

// Channel config at a sweep point.
WhConfig wh_at_point(const ExperimentConfig& cfg, std::size_t point) {
    WhConfig ch = cfg.wh;
    if (cfg.sweep_parameter == "snr_db") ch.snr_db = cfg.sweep_values[point];
    else if (cfg.sweep_parameter == "alpha") ch.alpha = cfg.sweep_values[point];
    return ch;
}

ImddConfig imdd_at_point(const ExperimentConfig& cfg, std::size_t point) {
    ImddConfig ch = cfg.imdd;
    if (cfg.sweep_parameter == "vpp") ch.vpp = cfg.sweep_values[point];
    else if (cfg.sweep_parameter == "fiber_km") ch.fiber_km = cfg.sweep_values[point];
    return ch;
}

struct SimPair {
    std::vector<int> train_idx, test_idx;
    ChannelRun train_run, test_run;
};

SimPair simulate_pair(const ExperimentConfig& cfg, std::size_t point, std::size_t replicate) {
    const std::uint64_t s = derive_seed(cfg.master_seed, point, replicate);
    std::mt19937_64 train_rng(splitmix64(s ^ 1));
    std::mt19937_64 test_rng(splitmix64(s ^ 2));
    SimPair sim;
    sim.train_idx = random_symbols(train_rng, cfg.train_symbols, pam4().size());
    sim.test_idx = random_symbols(test_rng, cfg.test_symbols, pam4().size());
    if (cfg.kind == ChannelKind::wh) {
        const auto ch = wh_at_point(cfg, point);
        sim.train_run = simulate_wh(sim.train_idx, pam4(), ch, train_rng);
        sim.test_run = simulate_wh(sim.test_idx, pam4(), ch, test_rng);
    } else {
        const auto ch = imdd_at_point(cfg, point);
        sim.train_run = simulate_imdd(sim.train_idx, pam4(), ch, train_rng);
        sim.test_run = simulate_imdd(sim.test_idx, pam4(), ch, test_rng);
    }
    return sim;
}

std::vector<int> decide(const TrainResult& state, std::span<const double> xhat) {
    if (method_is_blind(state.method)) {
        const auto probs = soft_demap(xhat, pam4(), state.sigma2, state.demapper);
        return hard_decision_map(probs);
    }
    return hard_decision_euclidean(xhat, pam4());
}

// Train + score against pre-simulated data; fills the result fields of `row`.
void score_into_row(const ExperimentConfig& cfg, const SimPair& sim, Method method, double lr,
                    SweepRow& row) {
    TrainConfig tc;
    tc.method = method;
    tc.n1_taps = cfg.n1_taps;
    tc.n2_taps = cfg.n2_taps;
    tc.channel_taps = cfg.channel_taps;
    tc.batch_symbols = cfg.batch_symbols;
    tc.base_lr = lr;
    tc.schedule = true;
    tc.epochs = cfg.epochs;
    const auto state = train(sim.train_run.rx, amplitudes_of(sim.train_idx), pam4(), tc);
    const auto xhat = apply_equalizer(state, sim.test_run.rx);
    const auto dec = decide(state, xhat);
    row.ser = symbol_error_rate(dec, sim.test_idx);
    row.final_loss = state.trace.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : state.trace.back().loss;
    row.sigma2 = method_is_blind(method) ? state.sigma2 : std::numeric_limits<double>::quiet_NaN();
    row.status = "ok";
}

bool row_order(const SweepRow& a, const SweepRow& b) {
    if (a.point_index != b.point_index) return a.point_index < b.point_index;
    const auto an = method_name(a.method), bn = method_name(b.method);
    if (an != bn) return an < bn;
    if (a.lr != b.lr) return a.lr < b.lr;
    return a.replicate < b.replicate;
}

} // namespace

// ---------------------------------------------------------------------------
// Config I/O
// ---------------------------------------------------------------------------

ExperimentConfig config_from_json(const json& j) {
    check_keys(j, {"schema_version", "label", "master_seed", "replicates", "train_symbols",
                   "test_symbols", "batch_symbols", "epochs", "methods", "lr_candidates",
                   "equalizer", "channel", "sweep", "tracking"},
               "config");
    ExperimentConfig cfg;
    if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer())
        throw std::invalid_argument("config: schema_version is required");
    cfg.schema_version = j.at("schema_version").get<int>();
    if (cfg.schema_version != 1)
        throw std::invalid_argument("config: unsupported schema_version");
    if (j.contains("label")) cfg.label = j.at("label").get<std::string>();
    if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("replicates")) cfg.replicates = j.at("replicates").get<std::size_t>();
    if (j.contains("train_symbols")) cfg.train_symbols = j.at("train_symbols").get<std::size_t>();
    if (j.contains("test_symbols")) cfg.test_symbols = j.at("test_symbols").get<std::size_t>();
    if (j.contains("batch_symbols")) cfg.batch_symbols = j.at("batch_symbols").get<std::size_t>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("methods")) {
        cfg.methods.clear();
        for (const auto& m : j.at("methods"))
            cfg.methods.push_back(method_from_string(m.get<std::string>()));
        if (cfg.methods.empty()) throw std::invalid_argument("config: empty methods list");
    }
    if (j.contains("lr_candidates")) {
        cfg.lr_candidates = j.at("lr_candidates").get<std::vector<double>>();
        if (cfg.lr_candidates.empty())
            throw std::invalid_argument("config: empty lr_candidates");
        for (double lr : cfg.lr_candidates)
            if (!(lr > 0.0)) throw std::invalid_argument("config: learning rates must be positive");
    }
    if (j.contains("equalizer")) {
        const auto& e = j.at("equalizer");
        check_keys(e, {"n1_taps", "n2_taps", "channel_taps"}, "config.equalizer");
        if (e.contains("n1_taps")) cfg.n1_taps = e.at("n1_taps").get<std::size_t>();
        if (e.contains("n2_taps")) cfg.n2_taps = e.at("n2_taps").get<std::size_t>();
        if (e.contains("channel_taps")) cfg.channel_taps = e.at("channel_taps").get<std::size_t>();
    }

    if (!j.contains("channel")) throw std::invalid_argument("config: channel block is required");
    const auto& ch = j.at("channel");
    if (!ch.contains("kind")) throw std::invalid_argument("config.channel: kind is required");
    const auto kind = ch.at("kind").get<std::string>();
    if (kind == "wh") {
        cfg.kind = ChannelKind::wh;
        check_keys(ch, {"kind", "alpha", "snr_db", "h1", "h2", "rolloff"}, "config.channel");
        if (ch.contains("alpha")) cfg.wh.alpha = ch.at("alpha").get<double>();
        if (ch.contains("snr_db")) cfg.wh.snr_db = get_snr(ch.at("snr_db"));
        if (ch.contains("h1")) cfg.wh.h1 = ch.at("h1").get<std::vector<double>>();
        if (ch.contains("h2")) cfg.wh.h2 = ch.at("h2").get<std::vector<double>>();
        if (ch.contains("rolloff")) cfg.wh.rolloff = ch.at("rolloff").get<double>();
    } else if (kind == "imdd") {
        cfg.kind = ChannelKind::imdd;
        check_keys(ch,
                   {"kind", "vpp", "v_pi", "v_b", "p_in", "fiber_km", "lambda_nm", "lambda0_nm",
                    "s0_ps_nm2_km", "alpha_db_km", "bessel_cutoff_hz", "bessel_order", "noiseless",
                    "mzm_pi_convention", "dispersion_ps_nm_km", "rolloff"},
                   "config.channel");
        auto& im = cfg.imdd;
        if (ch.contains("vpp")) im.vpp = ch.at("vpp").get<double>();
        if (ch.contains("v_pi")) im.v_pi = ch.at("v_pi").get<double>();
        if (ch.contains("v_b")) im.v_b = ch.at("v_b").get<double>();
        if (ch.contains("p_in")) im.p_in = ch.at("p_in").get<double>();
        if (ch.contains("fiber_km")) im.fiber_km = ch.at("fiber_km").get<double>();
        if (ch.contains("lambda_nm")) im.lambda_nm = ch.at("lambda_nm").get<double>();
        if (ch.contains("lambda0_nm")) im.lambda0_nm = ch.at("lambda0_nm").get<double>();
        if (ch.contains("s0_ps_nm2_km")) im.s0_ps_nm2_km = ch.at("s0_ps_nm2_km").get<double>();
        if (ch.contains("alpha_db_km")) im.alpha_db_km = ch.at("alpha_db_km").get<double>();
        if (ch.contains("bessel_cutoff_hz"))
            im.bessel_cutoff_hz = ch.at("bessel_cutoff_hz").get<double>();
        if (ch.contains("bessel_order")) im.bessel_order = ch.at("bessel_order").get<int>();
        if (ch.contains("noiseless")) im.photodiode.noiseless = ch.at("noiseless").get<bool>();
        if (ch.contains("mzm_pi_convention"))
            im.mzm_pi_convention = ch.at("mzm_pi_convention").get<bool>();
        if (ch.contains("dispersion_ps_nm_km")) {
            const auto& d = ch.at("dispersion_ps_nm_km");
            if (d.is_string()) {
                if (d.get<std::string>() != "formula")
                    throw std::invalid_argument(
                        "config.channel.dispersion_ps_nm_km: number or 'formula'");
                im.dispersion_override_ps_nm_km.reset();
            } else {
                im.dispersion_override_ps_nm_km = d.get<double>();
            }
        }
        if (ch.contains("rolloff")) im.rolloff = ch.at("rolloff").get<double>();
    } else {
        throw std::invalid_argument("config.channel: kind must be 'wh' or 'imdd'");
    }

    if (j.contains("sweep")) {
        const auto& sw = j.at("sweep");
        check_keys(sw, {"parameter", "values"}, "config.sweep");
        cfg.sweep_parameter = sw.at("parameter").get<std::string>();
        cfg.sweep_values = sw.at("values").get<std::vector<double>>();
        if (cfg.sweep_values.empty()) throw std::invalid_argument("config.sweep: empty values");
        static const std::set<std::string> wh_params{"snr_db", "alpha"};
        static const std::set<std::string> imdd_params{"vpp", "fiber_km"};
        const auto& allowed = cfg.kind == ChannelKind::wh ? wh_params : imdd_params;
        if (!allowed.count(cfg.sweep_parameter))
            throw std::invalid_argument("config.sweep: parameter '" + cfg.sweep_parameter +
                                        "' not sweepable for this channel");
    }

    if (j.contains("tracking")) {
        const auto& tr = j.at("tracking");
        check_keys(tr, {"segments", "symbols_per_segment", "h1_alt", "lr", "batch_symbols"},
                   "config.tracking");
        if (tr.contains("segments")) cfg.tracking_segments = tr.at("segments").get<std::size_t>();
        if (tr.contains("symbols_per_segment"))
            cfg.tracking_symbols_per_segment = tr.at("symbols_per_segment").get<std::size_t>();
        if (tr.contains("h1_alt")) cfg.tracking_h1_alt = tr.at("h1_alt").get<std::vector<double>>();
        if (tr.contains("lr")) cfg.tracking_lr = tr.at("lr").get<double>();
        if (tr.contains("batch_symbols"))
            cfg.tracking_batch_symbols = tr.at("batch_symbols").get<std::size_t>();
    }

    if (cfg.replicates == 0) throw std::invalid_argument("config: replicates must be positive");
    if (cfg.train_symbols < cfg.batch_symbols)
        throw std::invalid_argument("config: train_symbols smaller than one batch");
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["label"] = cfg.label;
    j["master_seed"] = cfg.master_seed;
    j["replicates"] = cfg.replicates;
    j["train_symbols"] = cfg.train_symbols;
    j["test_symbols"] = cfg.test_symbols;
    j["batch_symbols"] = cfg.batch_symbols;
    j["epochs"] = cfg.epochs;
    json methods = json::array();
    for (Method m : cfg.methods) methods.push_back(method_name(m));
    j["methods"] = methods;
    j["lr_candidates"] = cfg.lr_candidates;
    j["equalizer"] = {{"n1_taps", cfg.n1_taps},
                      {"n2_taps", cfg.n2_taps},
                      {"channel_taps", cfg.channel_taps}};
    if (cfg.kind == ChannelKind::wh) {
        j["channel"] = {{"kind", "wh"},
                        {"alpha", cfg.wh.alpha},
                        {"snr_db", snr_to_json(cfg.wh.snr_db)},
                        {"h1", cfg.wh.h1},
                        {"h2", cfg.wh.h2},
                        {"rolloff", cfg.wh.rolloff}};
    } else {
        const auto& im = cfg.imdd;
        json d;
        if (im.dispersion_override_ps_nm_km) d = *im.dispersion_override_ps_nm_km;
        else d = "formula";
        j["channel"] = {{"kind", "imdd"},
                        {"vpp", im.vpp},
                        {"v_pi", im.v_pi},
                        {"v_b", im.v_b},
                        {"p_in", im.p_in},
                        {"fiber_km", im.fiber_km},
                        {"lambda_nm", im.lambda_nm},
                        {"lambda0_nm", im.lambda0_nm},
                        {"s0_ps_nm2_km", im.s0_ps_nm2_km},
                        {"alpha_db_km", im.alpha_db_km},
                        {"bessel_cutoff_hz", im.bessel_cutoff_hz},
                        {"bessel_order", im.bessel_order},
                        {"noiseless", im.photodiode.noiseless},
                        {"mzm_pi_convention", im.mzm_pi_convention},
                        {"dispersion_ps_nm_km", d},
                        {"rolloff", im.rolloff}};
    }
    if (!cfg.sweep_parameter.empty())
        j["sweep"] = {{"parameter", cfg.sweep_parameter}, {"values", cfg.sweep_values}};
    j["tracking"] = {{"segments", cfg.tracking_segments},
                     {"symbols_per_segment", cfg.tracking_symbols_per_segment},
                     {"h1_alt", cfg.tracking_h1_alt},
                     {"lr", cfg.tracking_lr},
                     {"batch_symbols", cfg.tracking_batch_symbols}};
    return j;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    in >> j;
    return config_from_json(j);
}

std::string canonical_config_string(const ExperimentConfig& cfg) {
    // nlohmann::json objects iterate in key order, so dump() is canonical.
    return config_to_json(cfg).dump();
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string s = canonical_config_string(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void apply_desk_scale(ExperimentConfig& cfg) {
    cfg.train_symbols = std::max<std::size_t>(cfg.train_symbols / 10, cfg.batch_symbols);
    cfg.test_symbols = std::max<std::size_t>(cfg.test_symbols / 10, 1);
    cfg.tracking_symbols_per_segment =
        std::max<std::size_t>(cfg.tracking_symbols_per_segment / 10, cfg.tracking_batch_symbols);
    cfg.replicates = std::min<std::size_t>(cfg.replicates, 5);
}

std::size_t sweep_point_count(const ExperimentConfig& cfg) {
    return cfg.sweep_parameter.empty() ? 1 : cfg.sweep_values.size();
}

double sweep_point_value(const ExperimentConfig& cfg, std::size_t point) {
    if (cfg.sweep_parameter.empty()) return 0.0;
    return cfg.sweep_values.at(point);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::size_t point, std::size_t replicate) {
    std::uint64_t s = splitmix64(master);
    s = splitmix64(s ^ (0x9e3779b97f4a7c15ULL + point));
    s = splitmix64(s ^ (0xbf58476d1ce4e5b9ULL + replicate));
    return s;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

SweepRow run_single(const ExperimentConfig& cfg, std::size_t point, std::size_t replicate,
                    Method method, double lr) {
    SweepRow row;
    row.config_hash = config_hash(cfg);
    row.point_index = point;
    row.parameter = cfg.sweep_parameter.empty() ? "-" : cfg.sweep_parameter;
    row.value = sweep_point_value(cfg, point);
    row.method = method;
    row.lr = lr;
    row.replicate = replicate;
    row.seed = derive_seed(cfg.master_seed, point, replicate);
    try {
        const auto sim = simulate_pair(cfg, point, replicate);
        score_into_row(cfg, sim, method, lr, row);
    } catch (const std::exception& e) {
        row.ser = std::numeric_limits<double>::quiet_NaN();
        row.final_loss = std::numeric_limits<double>::quiet_NaN();
        row.sigma2 = std::numeric_limits<double>::quiet_NaN();
        row.status = "failed:" + sanitize_reason(e.what());
    }
    return row;
}

SweepResult run_sweep(const ExperimentConfig& cfg, unsigned threads) {
    struct Unit {
        std::size_t point, replicate;
    };
    std::vector<Unit> units;
    for (std::size_t p = 0; p < sweep_point_count(cfg); ++p)
        for (std::size_t r = 0; r < cfg.replicates; ++r) units.push_back({p, r});

    struct UnitOut {
        std::vector<SweepRow> rows;
        std::vector<double> wall_ms;
    };
    // One task per (point, replicate): the simulations are shared across
    // methods and learning rates so every method sees the same data.
    auto run_unit = [&cfg](Unit u) {
        UnitOut out;
        const std::string hash = config_hash(cfg);
        const std::uint64_t seed = derive_seed(cfg.master_seed, u.point, u.replicate);
        bool sim_ok = true;
        SimPair sim;
        std::string sim_error;
        try {
            sim = simulate_pair(cfg, u.point, u.replicate);
        } catch (const std::exception& e) {
            sim_ok = false;
            sim_error = sanitize_reason(e.what());
        }
        for (Method m : cfg.methods) {
            for (double lr : cfg.lr_candidates) {
                SweepRow row;
                row.config_hash = hash;
                row.point_index = u.point;
                row.parameter = cfg.sweep_parameter.empty() ? "-" : cfg.sweep_parameter;
                row.value = sweep_point_value(cfg, u.point);
                row.method = m;
                row.lr = lr;
                row.replicate = u.replicate;
                row.seed = seed;
                const auto t0 = std::chrono::steady_clock::now();
                if (!sim_ok) {
                    row.ser = std::numeric_limits<double>::quiet_NaN();
                    row.final_loss = std::numeric_limits<double>::quiet_NaN();
                    row.sigma2 = std::numeric_limits<double>::quiet_NaN();
                    row.status = "failed:" + sim_error;
                } else {
                    try {
                        score_into_row(cfg, sim, m, lr, row);
                    } catch (const std::exception& e) {
                        row.ser = std::numeric_limits<double>::quiet_NaN();
                        row.final_loss = std::numeric_limits<double>::quiet_NaN();
                        row.sigma2 = std::numeric_limits<double>::quiet_NaN();
                        row.status = "failed:" + sanitize_reason(e.what());
                    }
                }
                const auto t1 = std::chrono::steady_clock::now();
                out.wall_ms.push_back(
                    std::chrono::duration<double, std::milli>(t1 - t0).count());
                out.rows.push_back(std::move(row));
            }
        }
        return out;
    };

    std::vector<UnitOut> outs(units.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < units.size(); ++i) outs[i] = run_unit(units[i]);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= units.size()) return;
                outs[i] = run_unit(units[i]);
            }
        };
        std::vector<std::future<void>> pool;
        const unsigned n = std::min<unsigned>(threads, static_cast<unsigned>(units.size()));
        pool.reserve(n);
        for (unsigned t = 0; t < n; ++t) pool.push_back(std::async(std::launch::async, worker));
        for (auto& f : pool) f.get();
    }

    SweepResult result;
    // Keep wall times aligned with rows through the sort.
    std::vector<std::pair<SweepRow, double>> tagged;
    for (auto& out : outs)
        for (std::size_t i = 0; i < out.rows.size(); ++i)
            tagged.emplace_back(std::move(out.rows[i]), out.wall_ms[i]);
    std::sort(tagged.begin(), tagged.end(),
              [](const auto& a, const auto& b) { return row_order(a.first, b.first); });
    for (auto& [row, ms] : tagged) {
        result.rows.push_back(std::move(row));
        result.wall_ms.push_back(ms);
    }
    result.summary = summarize_sweep(cfg, result.rows);
    return result;
}

std::vector<SweepSummaryRow> summarize_sweep(const ExperimentConfig& cfg,
                                             const std::vector<SweepRow>& rows) {
    std::vector<SweepSummaryRow> summary;
    for (std::size_t p = 0; p < sweep_point_count(cfg); ++p) {
        for (Method m : cfg.methods) {
            double best_lr = 0.0, best_mean = 0.0;
            bool have = false;
            std::vector<double> best_sers;
            for (double lr : cfg.lr_candidates) {
                std::vector<double> sers;
                for (const auto& row : rows)
                    if (row.point_index == p && row.method == m && row.lr == lr &&
                        row.status == "ok")
                        sers.push_back(row.ser);
                if (sers.empty()) continue;
                double mean = 0.0;
                for (double v : sers) mean += v;
                mean /= static_cast<double>(sers.size());
                const bool better =
                    !have || mean < best_mean || (mean == best_mean && lr < best_lr);
                if (better) {
                    have = true;
                    best_mean = mean;
                    best_lr = lr;
                    best_sers = std::move(sers);
                }
            }
            if (!have) continue;
            SweepSummaryRow s;
            s.point_index = p;
            s.parameter = cfg.sweep_parameter.empty() ? "-" : cfg.sweep_parameter;
            s.value = sweep_point_value(cfg, p);
            s.method = m;
            s.best_lr = best_lr;
            s.mean_ser = best_mean;
            s.n_ok = best_sers.size();
            if (best_sers.size() > 1) {
                double var = 0.0;
                for (double v : best_sers) var += (v - best_mean) * (v - best_mean);
                var /= static_cast<double>(best_sers.size() - 1);
                s.ci95_half = 1.96 * std::sqrt(var / static_cast<double>(best_sers.size()));
            }
            summary.push_back(s);
        }
    }
    return summary;
}

std::string format_sweep_row(const SweepRow& row) {
    std::string line;
    line += row.config_hash;
    line += ',' + std::to_string(row.point_index);
    line += ',' + row.parameter;
    line += ',' + fmt_g(row.value);
    line += ',' + method_name(row.method);
    line += ',' + fmt_g(row.lr);
    line += ',' + std::to_string(row.replicate);
    line += ',' + std::to_string(row.seed);
    line += ',' + fmt_g(row.ser);
    line += ',' + fmt_g(row.final_loss);
    line += ',' + fmt_g(row.sigma2);
    line += ',' + row.status;
    return line;
}

void write_sweep_csv(std::ostream& os, const SweepResult& result) {
    os << "config_hash,point_index,parameter,value,method,lr,replicate,seed,ser,final_loss,"
          "sigma2,status\n";
    for (const auto& row : result.rows) os << format_sweep_row(row) << '\n';
}

void write_summary_csv(std::ostream& os, const std::vector<SweepSummaryRow>& summary) {
    os << "point_index,parameter,value,method,best_lr,mean_ser,ci95_half,n_ok\n";
    for (const auto& s : summary) {
        os << s.point_index << ',' << s.parameter << ',' << fmt_g(s.value) << ','
           << method_name(s.method) << ',' << fmt_g(s.best_lr) << ',' << fmt_g(s.mean_ser) << ','
           << fmt_g(s.ci95_half) << ',' << s.n_ok << '\n';
    }
}

void write_timings_csv(std::ostream& os, const SweepResult& result) {
    os << "row_index,wall_ms\n";
    for (std::size_t i = 0; i < result.wall_ms.size(); ++i)
        os << i << ',' << fmt_g(result.wall_ms[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Tracking
// ---------------------------------------------------------------------------

TrackingResult run_tracking(const ExperimentConfig& cfg) {
    if (cfg.kind != ChannelKind::wh)
        throw std::invalid_argument("run_tracking: only the wh channel switches systems");
    std::vector<Method> methods;
    for (Method m : cfg.methods)
        if (method_is_blind(m)) methods.push_back(m);
    if (methods.empty())
        throw std::invalid_argument("run_tracking: no blind methods configured");

    TrackingResult result;
    for (std::size_t rep = 0; rep < cfg.replicates; ++rep) {
        const std::uint64_t base = derive_seed(cfg.master_seed ^ 0x747261636bULL, 0, rep);

        // Segment train data and one validation run per system. Both systems'
        // validation sets are simulated up front with replicate-stable seeds
        // so every method scores against identical data.
        struct SegData {
            std::vector<int> idx;
            ChannelRun run;
        };
        auto simulate_with = [&](const std::vector<double>& h1, std::uint64_t seed,
                                 std::size_t n_symbols) {
            WhConfig ch = cfg.wh;
            ch.h1 = h1;
            std::mt19937_64 rng(seed);
            SegData d;
            d.idx = random_symbols(rng, n_symbols, pam4().size());
            d.run = simulate_wh(d.idx, pam4(), ch, rng);
            return d;
        };
        const auto val_h1 = simulate_with(cfg.wh.h1, splitmix64(base ^ 0xa1), cfg.test_symbols);
        const auto val_alt =
            simulate_with(cfg.tracking_h1_alt, splitmix64(base ^ 0xa2), cfg.test_symbols);

        std::vector<SegData> segments;
        for (std::size_t k = 0; k < cfg.tracking_segments; ++k) {
            const auto& h1 = (k % 2 == 0) ? cfg.wh.h1 : cfg.tracking_h1_alt;
            segments.push_back(
                simulate_with(h1, splitmix64(base ^ (0xb0 + k)), cfg.tracking_symbols_per_segment));
        }

        for (Method m : methods) {
            TrainConfig tc;
            tc.method = m;
            tc.n1_taps = cfg.n1_taps;
            tc.n2_taps = cfg.n2_taps;
            tc.channel_taps = cfg.channel_taps;
            tc.batch_symbols = cfg.tracking_batch_symbols;
            tc.base_lr = cfg.tracking_lr;
            tc.schedule = false; // fixed learning rate while tracking
            tc.epochs = 1;

            TrainResult state;
            const std::size_t nb = cfg.tracking_symbols_per_segment / cfg.tracking_batch_symbols;
            for (std::size_t k = 0; k < cfg.tracking_segments; ++k) {
                const auto& seg = segments[k];
                const auto amps = amplitudes_of(seg.idx);
                if (k == 0) state = train(seg.run.rx, amps, pam4(), tc);
                else train_continue(state, seg.run.rx, amps, pam4(), tc, k * nb);

                for (std::size_t i = k * nb; i < state.trace.size(); ++i) {
                    const auto& t = state.trace[i];
                    result.loss.push_back({m, rep, k, t.iter, t.lr, t.loss, t.sigma2});
                }
                const auto& val = (k % 2 == 0) ? val_h1 : val_alt;
                const auto xhat = apply_equalizer(state, val.run.rx);
                const auto dec = decide(state, xhat);
                result.ser.push_back(
                    {m, rep, k, (k % 2 == 0) ? "h1" : "h1_alt",
                     symbol_error_rate(dec, val.idx)});
            }
        }
    }
    return result;
}

void write_tracking_loss_csv(std::ostream& os, const TrackingResult& result) {
    os << "method,replicate,segment,batch,lr,loss,sigma2\n";
    for (const auto& r : result.loss)
        os << method_name(r.method) << ',' << r.replicate << ',' << r.segment << ',' << r.batch
           << ',' << fmt_g(r.lr) << ',' << fmt_g(r.loss) << ',' << fmt_g(r.sigma2) << '\n';
}

void write_tracking_ser_csv(std::ostream& os, const TrackingResult& result) {
    os << "method,replicate,segment,system,ser\n";
    for (const auto& r : result.ser)
        os << method_name(r.method) << ',' << r.replicate << ',' << r.segment << ',' << r.system
           << ',' << fmt_g(r.ser) << '\n';
}

// ---------------------------------------------------------------------------
// Misc outputs
// ---------------------------------------------------------------------------

void export_eye_csv(std::ostream& os, const ExperimentConfig& cfg, std::size_t point,
                    std::size_t n_symbols) {
    const std::uint64_t s = derive_seed(cfg.master_seed ^ 0x657965ULL, point, 0);
    std::mt19937_64 rng(splitmix64(s));
    const auto idx = random_symbols(rng, n_symbols, pam4().size());
    ChannelRun run;
    if (cfg.kind == ChannelKind::wh)
        run = simulate_wh(idx, pam4(), wh_at_point(cfg, point), rng);
    else run = simulate_imdd(idx, pam4(), imdd_at_point(cfg, point), rng);
    os << "symbol,truth_index,truth_amplitude,sample_even,sample_odd\n";
    for (std::size_t n = 0; n < idx.size(); ++n) {
        os << n << ',' << idx[n] << ','
           << fmt_g(pam4().point(static_cast<std::size_t>(idx[n]))) << ','
           << fmt_g(run.rx[2 * n]) << ',' << fmt_g(run.rx[2 * n + 1]) << '\n';
    }
}

nlohmann::json make_manifest(const ExperimentConfig& cfg) {
    json m;
    m["schema_version"] = cfg.schema_version;
    m["label"] = cfg.label;
    m["config_hash"] = config_hash(cfg);
    m["config"] = config_to_json(cfg);
    m["seed_derivation"] =
        "seed = splitmix64(splitmix64(splitmix64(master) ^ (0x9e3779b97f4a7c15 + point)) ^ "
        "(0xbf58476d1ce4e5b9 + replicate)); method and learning rate are excluded so all "
        "methods train on identical simulated data";
    ImddConfig formula_cfg = cfg.imdd;
    formula_cfg.dispersion_override_ps_nm_km.reset();
    m["dispersion_ps_nm_km"] = {
        {"configured", cfg.imdd.dispersion_override_ps_nm_km
                           ? json(*cfg.imdd.dispersion_override_ps_nm_km)
                           : json("formula")},
        {"effective", dispersion_parameter(cfg.imdd)},
        {"slope_formula_value", dispersion_parameter(formula_cfg)},
        {"note", "the printed slope formula and the stated figure disagree by about 4x; "
                 "the stated figure is the default"}};
    m["versions"] = {{"artifact", "1.0.0"}, {"config_schema", 1}};
    return m;
}

} // namespace blindeq
