#ifndef BLINDEQ_HARNESS_HPP
#define BLINDEQ_HARNESS_HPP

#include "blindeq/channels.hpp"
#include "blindeq/constellation.hpp"
#include "blindeq/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace blindeq {

enum class ChannelKind { wh, imdd };

// A full experiment description. Serialized as versioned JSON with strict
// (unknown-key-rejecting) parsing so archived configs stay diffable and
// reproducible.
struct ExperimentConfig {
    int schema_version = 1;
    std::string label = "experiment";
    std::uint64_t master_seed = 1;
    std::size_t replicates = 10;
    std::size_t train_symbols = 1'000'000;
    std::size_t test_symbols = 1'000'000;
    std::size_t batch_symbols = 1000;
    std::size_t epochs = 1;
    std::vector<Method> methods{Method::ffe, Method::volterra, Method::vae, Method::v2vae};
    std::vector<double> lr_candidates{5e-3, 5e-4, 5e-5};
    std::size_t n1_taps = 25;
    std::size_t n2_taps = 15;
    std::size_t channel_taps = 25;

    ChannelKind kind = ChannelKind::wh;
    WhConfig wh;
    ImddConfig imdd;

    // Sweep grid; empty parameter means a single point at the base config.
    std::string sweep_parameter;
    std::vector<double> sweep_values;

    // Channel-switching experiment (blind methods, fixed learning rate).
    std::size_t tracking_segments = 4;
    std::size_t tracking_symbols_per_segment = 2'500'000;
    std::vector<double> tracking_h1_alt{1.0, 0.5, 0.1525};
    double tracking_lr = 5e-4;
    std::size_t tracking_batch_symbols = 500;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);

// Key-sorted single-line dump; the hashing preimage.
std::string canonical_config_string(const ExperimentConfig& cfg);
// FNV-1a (64-bit) of the canonical string, 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// Divide every symbol count by 10 and cap restarts at 5.
void apply_desk_scale(ExperimentConfig& cfg);

// Number of sweep points (at least 1).
std::size_t sweep_point_count(const ExperimentConfig& cfg);
// The swept value at a point (0 for a sweepless config).
double sweep_point_value(const ExperimentConfig& cfg, std::size_t point);

// Per-run RNG stream derivation: splitmix64 steps over (master, point,
// replicate). The method and learning rate are deliberately excluded so all
// methods see identical simulated data (paired comparisons).
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::size_t point, std::size_t replicate);

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    std::string config_hash;
    std::size_t point_index = 0;
    std::string parameter;
    double value = 0.0;
    Method method = Method::v2vae;
    double lr = 0.0;
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    double ser = 0.0;
    double final_loss = 0.0;
    double sigma2 = 0.0;
    std::string status; // "ok" or "failed:<reason>"
};

struct SweepSummaryRow {
    std::size_t point_index = 0;
    std::string parameter;
    double value = 0.0;
    Method method = Method::v2vae;
    double best_lr = 0.0;
    double mean_ser = 0.0;
    double ci95_half = 0.0; // 1.96 * stderr over replicates
    std::size_t n_ok = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;           // sorted by (point, method, lr, replicate)
    std::vector<SweepSummaryRow> summary; // best lr per (point, method)
    std::vector<double> wall_ms;          // aligned with rows; never in the CSV
};

// One fully deterministic unit of work: simulate train/test data from the
// derived seed, train the method, score the test run. Any CSV row can be
// regenerated by calling this with the row's coordinates.
SweepRow run_single(const ExperimentConfig& cfg, std::size_t point, std::size_t replicate,
                    Method method, double lr);

SweepResult run_sweep(const ExperimentConfig& cfg, unsigned threads = 1);

// Summaries recomputed from raw rows (exposed for tests and the screen CLI).
std::vector<SweepSummaryRow> summarize_sweep(const ExperimentConfig& cfg,
                                             const std::vector<SweepRow>& rows);

std::string format_sweep_row(const SweepRow& row);
void write_sweep_csv(std::ostream& os, const SweepResult& result);
void write_summary_csv(std::ostream& os, const std::vector<SweepSummaryRow>& summary);
void write_timings_csv(std::ostream& os, const SweepResult& result);

// ---------------------------------------------------------------------------
// Tracking (channel-switching) experiment
// ---------------------------------------------------------------------------

struct TrackingLossRow {
    Method method;
    std::size_t replicate = 0;
    std::size_t segment = 0;
    std::size_t batch = 0; // global batch index across segments
    double lr = 0.0;
    double loss = 0.0;
    double sigma2 = 0.0;
};

struct TrackingSerRow {
    Method method;
    std::size_t replicate = 0;
    std::size_t segment = 0;
    std::string system; // "h1" or "h1_alt"
    double ser = 0.0;
};

struct TrackingResult {
    std::vector<TrackingLossRow> loss;
    std::vector<TrackingSerRow> ser;
};

TrackingResult run_tracking(const ExperimentConfig& cfg);
void write_tracking_loss_csv(std::ostream& os, const TrackingResult& result);
void write_tracking_ser_csv(std::ostream& os, const TrackingResult& result);

// ---------------------------------------------------------------------------
// Misc outputs
// ---------------------------------------------------------------------------

// Aligned receive samples with ground truth for eyediagram plotting.
void export_eye_csv(std::ostream& os, const ExperimentConfig& cfg, std::size_t point,
                    std::size_t n_symbols);

// Deterministic run manifest: schema/config hash, seed derivation note, and
// the two dispersion figures (configured default and slope-formula value).
nlohmann::json make_manifest(const ExperimentConfig& cfg);

} // namespace blindeq

#endif
