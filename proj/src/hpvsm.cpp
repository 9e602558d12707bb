#include "vsa/hpvsm.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace vsa {

std::string_view to_string(VsiStatus s) {
    switch (s) {
        case VsiStatus::Ok: return "ok";
        case VsiStatus::NotApplicable: return "n/a";
        case VsiStatus::Indeterminate: return "indeterminate";
    }
    return "?";
}

double default_alpha(const EstimatedState& est, const LoadDirection& dir, double fraction) {
    double dq = 0.0;
    for (std::size_t b = 0; b < dir.dq.size(); ++b)
        if (est.roles[b] == BusRole::PQ) dq += std::abs(dir.dq[b]);
    if (dq == 0.0 || est.q_total == 0.0) return fraction;
    return fraction * std::abs(est.q_total) / dq;
}

PerturbationResult perturb(const NetworkModel& model, const JacobianMatrix& jac, const AdmittanceMatrix& ybus,
                           const EstimatedState& est, const LoadDirection& dir, double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("perturbation scale alpha must be positive");
    const auto n = est.voltage.size();
    if (dir.dp.size() != n || dir.dq.size() != n) throw ValidationError("load direction size does not match the state");
    std::vector<double> net_dp(n);
    for (std::size_t b = 0; b < n; ++b) net_dp[b] = -dir.dp[b];
    for (std::size_t g = 0; g < dir.gen_dp.size(); ++g) {
        const auto& gen = model.generators()[g];
        if (gen.in_service) net_dp[model.bus_index(gen.bus)] += dir.gen_dp[g];
    }

    PerturbationResult r;
    r.alpha = alpha;
    r.dp.assign(n, 0.0);
    r.dq.assign(n, 0.0);
    const auto na = static_cast<Eigen::Index>(jac.angle_buses.size());
    Eigen::VectorXd rhs(jac.size());
    for (Eigen::Index k = 0; k < na; ++k) {
        const auto b = jac.angle_buses[static_cast<std::size_t>(k)];
        r.dp[b] = alpha * net_dp[b];
        rhs(k) = r.dp[b];
    }
    for (std::size_t k = 0; k < jac.magnitude_buses.size(); ++k) {
        const auto b = jac.magnitude_buses[k];
        r.dq[b] = est.roles[b] == BusRole::PQ ? -alpha * dir.dq[b] : 0.0;
        rhs(na + static_cast<Eigen::Index>(k)) = r.dq[b];
    }

    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac.m);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-14)) throw SingularJacobianError("Jacobian is singular (rcond " + std::to_string(rcond) + ")");
    const Eigen::VectorXd dx = lu.solve(rhs);
    if (!dx.allFinite()) throw SingularJacobianError("Jacobian solve produced non-finite deltas");

    r.d_angle.assign(n, 0.0);
    r.d_mag.assign(n, 0.0);
    for (Eigen::Index k = 0; k < na; ++k) r.d_angle[jac.angle_buses[static_cast<std::size_t>(k)]] = dx(k);
    for (std::size_t k = 0; k < jac.magnitude_buses.size(); ++k)
        r.d_mag[jac.magnitude_buses[k]] = dx(na + static_cast<Eigen::Index>(k));

    r.v_fict.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double mag = std::abs(est.voltage[i]) + r.d_mag[i];
        const double ang = std::arg(est.voltage[i]) + r.d_angle[i];
        r.v_fict[i] = std::polar(mag, ang);
    }
    const Eigen::VectorXcd vf = Eigen::Map<const Eigen::VectorXcd>(r.v_fict.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXcd itf = ybus.y * vf;
    r.i_fict.assign(itf.data(), itf.data() + n);
    return r;
}

bool is_load_bus(const NetworkModel& model, const EstimatedState& est, std::size_t b) {
    if (!model.generators_at(b).empty() || b == model.slack_index()) return false;
    return std::abs(est.load_p[b]) + std::abs(est.load_q[b]) > 1e-9;
}

std::optional<std::size_t> VsiProfile::argmax() const {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].status != VsiStatus::Ok) continue;
        if (!best || buses[i].vsi > buses[*best].vsi) best = i;
    }
    return best;
}

double VsiProfile::max() const {
    auto a = argmax();
    return a ? buses[*a].vsi : 0.0;
}

VsiProfile compute_vsi(const NetworkModel& model, const EstimatedState& est, const PerturbationResult& pert) {
    const auto n = est.voltage.size();
    // Common rotation of both the measured and fictitious points to the slack reference.
    const Complex rot = std::polar(1.0, -std::arg(est.voltage[model.slack_index()]));
    VsiProfile out;
    out.buses.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
        auto& bv = out.buses[b];
        bv.bus_id = model.buses()[b].id;
        if (!is_load_bus(model, est, b)) continue;
        const Complex v = est.voltage[b] * rot;
        const Complex i = est.current[b] * rot;
        if (std::abs(i) < 1e-12) continue;
        const Complex dv = (pert.v_fict[b] - est.voltage[b]) * rot;
        const Complex di = (pert.i_fict[b] - est.current[b]) * rot;
        bv.z_load = -v / i;
        if (std::abs(di) < 1e-12) {
            bv.status = VsiStatus::Indeterminate;
            continue;
        }
        bv.z_th = dv / di;
        bv.vsi = std::abs(bv.z_th) / std::abs(bv.z_load);
        bv.status = VsiStatus::Ok;
    }
    return out;
}

VsiProfile hybrid_vsi(const NetworkModel& model, const EstimatedState& est, const LoadDirection& dir,
                      std::optional<double> alpha) {
    const auto ybus = build_ybus(model);
    const auto jac = build_jacobian(ybus, est.voltage, est.roles);
    const double a = alpha.value_or(default_alpha(est, dir));
    return compute_vsi(model, est, perturb(model, jac, ybus, est, dir, a));
}

TheveninEstimate thevenin_baseline(const MeasurementWindow& window, const NetworkModel& model, int bus_id,
                                   const TheveninOptions& options) {
    if (window.size() < 2) throw ValidationError("Thevenin fit needs at least 2 snapshots");
    const auto b = model.bus_index(bus_id);
    const auto rows = static_cast<Eigen::Index>(2 * window.size());
    Eigen::MatrixXd a(rows, 4);
    Eigen::VectorXd rhs(rows);
    Eigen::Index r = 0;
    for (const auto& est : window) {
        const Complex v = est.voltage[b];
        const Complex i = -est.current[b];  // drawn by the load
        // Re: V_r = u - r I_r + v I_i ; Im: V_i = w - r I_i - v I_r
        a.row(r) << 1.0, 0.0, -i.real(), i.imag();
        rhs(r++) = v.real();
        a.row(r) << 0.0, 1.0, -i.imag(), -i.real();
        rhs(r++) = v.imag();
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double smin = sv(sv.size() - 1);
    TheveninEstimate t;
    t.bus_id = bus_id;
    t.condition_number = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
    t.ill_conditioned = !(t.condition_number <= options.max_condition);
    const Eigen::VectorXd x = svd.solve(rhs);
    t.e_th = {x(0), x(1)};
    t.z_th = {x(2), x(3)};
    const auto& last = window.latest();
    const Complex il = -last.current[b];
    t.z_load = std::abs(il) > 0.0 ? last.voltage[b] / il : Complex(std::numeric_limits<double>::infinity(), 0.0);
    t.vsi = std::abs(t.z_th) / std::abs(t.z_load);
    return t;
}

}  // namespace vsa
