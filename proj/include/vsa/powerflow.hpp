#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

#include "vsa/network.hpp"

namespace vsa {

enum class BusRole { Slack, PV, PQ };
enum class LimitState { None, AtMax, AtMin };

std::string_view to_string(BusRole r);

/// Direction of load growth: per-bus increments of P and Q demand (p.u. per unit of
/// loading parameter) and per-generator increments of P dispatch.
struct LoadDirection {
    std::vector<double> dp;
    std::vector<double> dq;
    std::vector<double> gen_dp;

    /// Constant power factor growth of the base loads at PQ buses. Generator dispatch is
    /// held and the slack bus picks up the increase. This is the engine default.
    static LoadDirection pq_loads(const NetworkModel& base);

    /// Constant power factor growth of every base load, including loads at PV buses;
    /// non-slack generators pick up active power in proportion to their base dispatch.
    static LoadDirection all_loads(const NetworkModel& base);

    /// Throws ValidationError if sizes do not match `model`, an entry is not finite, or all are zero.
    void validate(const NetworkModel& model) const;

    /// sum_i |dp_i + j dq_i|: apparent power added per unit of loading parameter.
    double apparent_power() const;
};

/// Engine-wide default growth direction.
LoadDirection default_direction(const NetworkModel& base);

/// Model with loads and dispatch moved by (k - 1) along `dir`. k = 1 returns the model unchanged.
NetworkModel scale_loading(const NetworkModel& model, double k, const LoadDirection& dir);

/// Model with loads and dispatch moved by `lambda` along `dir`.
NetworkModel shift_loading(const NetworkModel& model, double lambda, const LoadDirection& dir);

/// Converged (or failed) AC power flow solution.
struct OperatingState {
    std::vector<double> vm;
    std::vector<double> va;  // radians
    std::vector<double> p;   // net injection per bus
    std::vector<double> q;
    std::vector<double> gen_p;  // per generator (0 for out-of-service units)
    std::vector<double> gen_q;
    std::vector<BusRole> roles;
    std::vector<LimitState> limits;

    bool converged = false;
    int iterations = 0;
    double max_mismatch = 0.0;
    int switch_rounds = 0;

    std::vector<Complex> voltages() const;
};

struct PowerFlowOptions {
    bool enforce_q_limits = true;
    double tolerance = 1e-8;
    int max_iterations = 30;
    int max_switch_rounds = 60;
    double q_tolerance = 1e-6;
};

/// Newton-Raphson in polar coordinates. Divergence is reported through
/// `OperatingState::converged`, never thrown. Throws IslandingError if buses are
/// disconnected from the slack. `warm` seeds voltages and PV/PQ roles.
OperatingState solve_power_flow(const NetworkModel& model, const PowerFlowOptions& options = {},
                                const OperatingState* warm = nullptr);

/// Fills gen_p / gen_q from the bus injections in `st.p` / `st.q`. Reactive output is shared in
/// proportion to each unit's range, active output equally beyond the schedule.
void distribute_generation(const NetworkModel& model, OperatingState& st);

/// Solves at loading `k` along the default direction.
OperatingState solve_at_loading(const NetworkModel& model, double k, bool enforce_q_limits);

/// Role every bus takes in a fresh solve: slack, PV where an in-service generator exists, PQ otherwise.
std::vector<BusRole> initial_roles(const NetworkModel& model);

/// Aggregate reactive limits of the in-service generators at bus position `b`.
struct BusQLimits {
    double qmax = 0.0;
    double qmin = 0.0;
};
BusQLimits bus_q_limits(const NetworkModel& model, std::size_t b);

/// Complex power injections S = V .* conj(Y V).
Eigen::VectorXcd bus_injections(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v);

struct PowerDerivatives {
    Eigen::MatrixXcd ds_dva;
    Eigen::MatrixXcd ds_dvm;
};

/// Partial derivatives of S with respect to voltage angles and magnitudes (dense).
PowerDerivatives power_derivatives(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v);

/// Power flow Jacobian [[dP/dd, dP/dV],[dQ/dd, dQ/dV]].
/// Rows: P equations for `angle_buses` then Q equations for `magnitude_buses`;
/// columns: angles of `angle_buses` then magnitudes of `magnitude_buses` (same ordering).
struct JacobianMatrix {
    Eigen::MatrixXd m;
    std::vector<std::size_t> angle_buses;      // all non-slack buses, ascending
    std::vector<std::size_t> magnitude_buses;  // PQ-role buses, ascending

    Eigen::Index size() const { return m.rows(); }
    /// Row/column of the angle variable of bus `b`, if present.
    std::optional<Eigen::Index> angle_position(std::size_t b) const;
    std::optional<Eigen::Index> magnitude_position(std::size_t b) const;
};

JacobianMatrix build_jacobian(const NetworkModel& model, const OperatingState& state);
JacobianMatrix build_jacobian(const AdmittanceMatrix& ybus, std::span<const Complex> voltages,
                              std::span<const BusRole> roles);

/// Assembles the Jacobian for the given index sets from precomputed derivatives.
JacobianMatrix assemble_jacobian(const PowerDerivatives& d, std::vector<std::size_t> angle_buses,
                                 std::vector<std::size_t> magnitude_buses);

/// Index sets implied by a role assignment.
std::vector<std::size_t> angle_buses_for(std::span<const BusRole> roles);
std::vector<std::size_t> magnitude_buses_for(std::span<const BusRole> roles);

/// Specified net injections of the model for the given roles and limit states
/// (generator Q at limited buses is fixed at the aggregate limit).
struct SpecifiedInjections {
    Eigen::VectorXd p;
    Eigen::VectorXd q;
};
SpecifiedInjections specified_injections(const NetworkModel& model, std::span<const BusRole> roles,
                                         std::span<const LimitState> limits);

/// Mismatch vector (calculated minus specified) stacked like the Jacobian rows.
Eigen::VectorXd mismatch_vector(const AdmittanceMatrix& ybus, std::span<const Complex> voltages,
                                const SpecifiedInjections& spec, std::span<const std::size_t> angle_buses,
                                std::span<const std::size_t> magnitude_buses);

}  // namespace vsa
