#pragma once

#include <optional>
#include <vector>

#include "vsa/network.hpp"
#include "vsa/powerflow.hpp"
#include "vsa/telemetry.hpp"

namespace vsa {

/// Linearised response of the network to a small load step, and the fictitious
/// operating point it implies.
struct PerturbationResult {
    double alpha = 0.0;
    std::vector<double> dp;  // injection change applied per bus (negative for added load)
    std::vector<double> dq;
    std::vector<double> d_angle;  // per bus, zero where the angle is not a variable
    std::vector<double> d_mag;    // per bus, zero where the magnitude is not a variable
    std::vector<Complex> v_fict;  // (|V| + dV) at (delta + d delta)
    std::vector<Complex> i_fict;  // Ybus V^f, injection convention
};

/// Step size giving sum |dQ| = `fraction` of the estimate's total reactive load.
double default_alpha(const EstimatedState& est, const LoadDirection& dir, double fraction = 0.01);

/// Solves J [dd; dV] = alpha * [dP; dQ]. dP is the net injection change (load step less any
/// generator redispatch); dQ is applied only at buses that are PQ in `est.roles`, so buses
/// re-typed inside an augmented Jacobian get dQ = 0.
/// Throws SingularJacobianError if J cannot be factored, ValidationError for alpha <= 0.
PerturbationResult perturb(const NetworkModel& model, const JacobianMatrix& jac, const AdmittanceMatrix& ybus, const EstimatedState& est,
                           const LoadDirection& dir, double alpha);

enum class VsiStatus { Ok, NotApplicable, Indeterminate };

std::string_view to_string(VsiStatus s);

struct BusVsi {
    int bus_id = 0;
    VsiStatus status = VsiStatus::NotApplicable;
    Complex z_th;
    Complex z_load;
    double vsi = 0.0;
};

struct VsiProfile {
    std::vector<BusVsi> buses;  // one per bus position

    /// Largest evaluated index and its bus position (nullopt if no bus evaluated).
    std::optional<std::size_t> argmax() const;
    double max() const;
};

/// True for buses the index is evaluated at: no in-service generator and nonzero load.
bool is_load_bus(const NetworkModel& model, const EstimatedState& est, std::size_t b);

/// Per-bus Thevenin impedance from the fictitious operating point and the index |Z_th| / |Z_load|.
VsiProfile compute_vsi(const NetworkModel& model, const EstimatedState& est, const PerturbationResult& pert);

/// Convenience: Jacobian at the estimate, default step, perturbation and index in one call.
VsiProfile hybrid_vsi(const NetworkModel& model, const EstimatedState& est, const LoadDirection& dir,
                      std::optional<double> alpha = std::nullopt);

/// Classic windowed least-squares Thevenin estimate at one bus.
struct TheveninEstimate {
    int bus_id = 0;
    Complex z_th;
    Complex e_th;
    Complex z_load;
    double vsi = 0.0;
    double condition_number = 0.0;
    bool ill_conditioned = false;
};

struct TheveninOptions {
    double max_condition = 1e8;
};

/// Fits E = V + Z I (I drawn by the load) over the window. Needs >= 2 snapshots.
/// Ill-conditioned windows are flagged, not thrown.
TheveninEstimate thevenin_baseline(const MeasurementWindow& window, const NetworkModel& model, int bus_id,
                                   const TheveninOptions& options = {});

}  // namespace vsa
