#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vsa/serialize.hpp"
#include "vsa/telemetry.hpp"

namespace vsa {

struct RampSpec {
    double k_start = 1.0;
    double k_end = 2.0;
    double step = 0.01;
};

struct ScenarioConfig {
    std::string case_path;
    std::optional<RampSpec> ramp;       // exactly one of ramp / stream_path
    std::optional<std::string> stream_path;
    bool noise_enabled = true;
    NoiseSpec noise;
    std::uint64_t seed = 1;
    std::size_t window = 30;
    std::optional<double> screening_threshold;  // default depends on the case size
    double band_threshold = 0.01;
    double alpha_fraction = 0.01;
    std::vector<std::string> contingencies;  // branch labels; {"all"} for every branch
    bool security_every_snapshot = false;    // otherwise only on the last snapshot
    std::string output_dir;                  // empty: nothing written
    int port = 8080;
    double replay_rate_hz = 1.0;

    /// Throws ValidationError on a broken invariant.
    void validate() const;

    static ScenarioConfig from_json(const Json& j);
    static ScenarioConfig load(const std::filesystem::path& path);  // relative paths resolve against the file
    Json to_json() const;

    /// FNV-1a 64 of the canonical JSON form, as 16 hex digits.
    std::string hash() const;
};

struct SessionEntry {
    std::size_t snapshot = 0;
    double timestamp = 0.0;
    std::string kind;  // "report", "verdicts" or "error"
    Json payload;
};

/// Append-only run log. Serialized as JSON lines: one metadata line, then one line per entry.
class SessionLog {
  public:
    SessionLog() = default;
    SessionLog(std::string config_hash, std::uint64_t seed) : config_hash_(std::move(config_hash)), seed_(seed) {}

    /// Throws ValidationError if the timestamp goes backwards.
    void append(SessionEntry entry);

    const std::vector<SessionEntry>& entries() const noexcept { return entries_; }
    const std::string& config_hash() const noexcept { return config_hash_; }
    std::uint64_t seed() const noexcept { return seed_; }

    std::string serialize() const;

  private:
    std::string config_hash_;
    std::uint64_t seed_ = 0;
    std::vector<SessionEntry> entries_;
};

/// One processed snapshot: the assessment and the solved network it came from.
struct Snapshot {
    std::size_t id = 0;
    double k = 1.0;  // loading multiplier; NaN for stream replay
    NetworkModel model;     // loaded model at this snapshot
    OperatingState state;   // power flow truth (ramp) or the estimate as a state (stream)
    LoadDirection dir;
    StabilityReport report;
};

struct ScenarioResult {
    NetworkModel base;
    std::vector<Snapshot> snapshots;
    std::vector<ContingencyVerdict> verdicts;  // ranked, from the last security batch
    double screening_threshold = 0.75;
    SessionLog log;
};

/// Per-snapshot callback, invoked in order as snapshots are produced.
using SnapshotSink = std::function<void(const Snapshot&)>;

/// Runs the monitoring pipeline over a load ramp or a recorded stream. A ramp stops at the
/// first power flow that does not converge. Writes reports.csv, buses.csv, session.jsonl,
/// verdicts.json and ranking.csv when an output directory is set.
ScenarioResult run_scenario(const ScenarioConfig& config, const SnapshotSink& sink = {});

/// Resolves the configured contingency labels. Throws ValidationError for an unknown label.
std::vector<BranchId> resolve_contingencies(const NetworkModel& model, const std::vector<std::string>& labels);

}  // namespace vsa
