#pragma once

#include <optional>
#include <vector>

#include "vsa/network.hpp"
#include "vsa/powerflow.hpp"

namespace vsa {

/// The starting point of a trace did not converge.
class BaseCaseDivergenceError : public Error {
  public:
    using Error::Error;
};

struct CpfPoint {
    double lambda = 0.0;
    OperatingState state;
};

struct CpfOptions {
    double initial_step = 0.05;
    double resolution = 1e-3;
    double max_lambda = 20.0;
    bool enforce_q_limits = true;
};

/// PV curve from lambda = 0 (the given model) to the last convergent point before the nose.
struct CpfTrace {
    std::vector<CpfPoint> points;
    double lambda_max = 0.0;      // last convergent lambda
    double apparent_power = 0.0;  // sum |dS| of the direction, per unit lambda
    bool reached_cap = false;     // stopped at max_lambda, not at a nose

    /// |V| of bus position `b` along the trace.
    std::vector<double> voltage_profile(std::size_t b) const;
};

/// Repeated power flow with step halving near non-convergence. Stops when a step of exactly
/// `resolution` fails, so the flow converges at lambda_max and not at lambda_max + resolution.
/// Throws BaseCaseDivergenceError.
CpfTrace trace_pv_curve(const NetworkModel& model, const LoadDirection& dir, const CpfOptions& options = {});

/// Loadability margin in per-unit apparent power: lambda_max * sum |dS|.
double margin(const CpfTrace& trace);

/// Load bus with the largest relative voltage drop over the final trace segment.
std::optional<std::size_t> critical_bus(const NetworkModel& model, const CpfTrace& trace);

/// Margin of the model, or 0 if its starting point diverges.
double loadability_margin(const NetworkModel& model, const LoadDirection& dir, const CpfOptions& options = {});

}  // namespace vsa
