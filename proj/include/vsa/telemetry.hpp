#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <vector>

#include "vsa/network.hpp"
#include "vsa/powerflow.hpp"

namespace vsa {

/// PMU-class noise: relative magnitude and absolute angle (rad) standard deviations.
/// Scalar channels (generator Q, load P/Q) take the relative magnitude figure.
struct NoiseSpec {
    double sigma_mag = 0.001;
    double sigma_angle = 0.001;

    static NoiseSpec none() { return {0.0, 0.0}; }
};

enum class PhasorKind { BusVoltage, InjectionCurrent, BranchFromCurrent, BranchToCurrent };

struct PhasorMeasurement {
    PhasorKind kind = PhasorKind::BusVoltage;
    std::size_t element = 0;  // bus position or BranchId
    Complex value;
};

/// Which phasors a synthetic PMU fleet reports.
struct MeasurementPlacement {
    bool voltages = true;
    bool injection_currents = true;
    bool branch_currents = true;
};

struct PmuSnapshot {
    double timestamp = 0.0;
    std::vector<PhasorMeasurement> phasors;
    std::vector<double> gen_q;            // per generator
    std::vector<LimitState> gen_limiter;  // per generator, field limiter status
    std::vector<double> load_p;           // per bus
    std::vector<double> load_q;
    NoiseSpec noise;
    std::uint64_t seed = 0;
};

/// Truth phasors of `state` plus independent Gaussian perturbations. Same seed, same output.
PmuSnapshot synthesize_pmu(const NetworkModel& model, const OperatingState& state, const NoiseSpec& noise,
                           std::uint64_t seed, double timestamp, const MeasurementPlacement& placement = {});

/// Linear-state-estimator output for one snapshot.
struct EstimatedState {
    double timestamp = 0.0;
    std::vector<Complex> voltage;  // V^SE
    std::vector<Complex> current;  // I^SE = Ybus V^SE (injection convention)
    std::vector<double> load_p;
    std::vector<double> load_q;
    std::vector<double> gen_q;
    std::vector<double> rpr;  // Qmax - Qg, clamped to [0, Qmax - Qmin]; 0 for out-of-service units
    std::vector<BusRole> roles;
    std::vector<LimitState> limits;  // per bus
    double q_total = 0.0;            // Q_T: total reactive load
    double residual = 0.0;           // weighted residual norm of the fit

    /// Copy of the estimate as an operating state (roles, limits, voltages, injections).
    OperatingState as_operating_state() const;
};

/// Raised when the measurement set does not determine every bus voltage.
class UnobservableError : public Error {
  public:
    UnobservableError(std::vector<int> buses, const std::string& what) : Error(what), buses_(std::move(buses)) {}
    const std::vector<int>& buses() const noexcept { return buses_; }

  private:
    std::vector<int> buses_;
};

/// Weighted least squares over the complex-linear phasor model z = H V.
EstimatedState estimate_state(const PmuSnapshot& snapshot, const NetworkModel& model);

/// Noise-free estimate built straight from a power flow solution.
EstimatedState exact_estimate(const NetworkModel& model, const OperatingState& state, double timestamp = 0.0);

/// Bounded FIFO of estimates, strictly increasing timestamps.
class MeasurementWindow {
  public:
    static constexpr std::size_t kDefaultCapacity = 30;

    explicit MeasurementWindow(std::size_t capacity = kDefaultCapacity);

    /// Appends, evicting the oldest entry at capacity. Throws ValidationError on a stale timestamp.
    void append(EstimatedState est);

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    const EstimatedState& latest() const;
    const EstimatedState& operator[](std::size_t i) const { return items_[i]; }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

  private:
    std::size_t capacity_;
    std::deque<EstimatedState> items_;
};

/// Single-writer window with copy-on-read snapshots for concurrent readers.
class SharedWindow {
  public:
    explicit SharedWindow(std::size_t capacity = MeasurementWindow::kDefaultCapacity) : window_(capacity) {}
    void append(EstimatedState est);
    MeasurementWindow snapshot() const;

  private:
    mutable std::mutex mutex_;
    MeasurementWindow window_;
};

/// Stream file: CSV with header `timestamp,kind,element,a,b`, one row group per snapshot.
void write_stream(std::ostream& out, const std::vector<PmuSnapshot>& snapshots);
std::vector<PmuSnapshot> read_stream(std::istream& in, const NetworkModel& model);

}  // namespace vsa
