#include "vsa/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vsa {

std::string_view to_string(BusRole r) {
    switch (r) {
        case BusRole::Slack: return "slack";
        case BusRole::PV: return "PV";
        case BusRole::PQ: return "PQ";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Load direction and scaling

namespace {

LoadDirection make_direction(const NetworkModel& base, bool include_pv_loads, bool redispatch) {
    LoadDirection d;
    const auto n = base.bus_count();
    d.dp.assign(n, 0.0);
    d.dq.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& b = base.buses()[i];
        const bool pq = b.type == BusType::PQ || base.generators_at(i).empty();
        if (pq || include_pv_loads) {
            d.dp[i] = b.pd;
            d.dq[i] = b.qd;
        }
    }
    d.gen_dp.assign(base.generators().size(), 0.0);
    for (std::size_t g = 0; g < base.generators().size(); ++g) {
        const auto& gen = base.generators()[g];
        if (!redispatch || !gen.in_service) continue;
        if (base.bus_index(gen.bus) == base.slack_index()) continue;
        d.gen_dp[g] = gen.pg;
    }
    return d;
}

}  // namespace

LoadDirection LoadDirection::pq_loads(const NetworkModel& base) { return make_direction(base, false, false); }
LoadDirection LoadDirection::all_loads(const NetworkModel& base) { return make_direction(base, true, true); }

void LoadDirection::validate(const NetworkModel& model) const {
    if (dp.size() != model.bus_count() || dq.size() != model.bus_count())
        throw ValidationError("load direction size does not match the bus count");
    if (gen_dp.size() != model.generators().size())
        throw ValidationError("load direction size does not match the generator count");
    bool nonzero = false;
    for (std::size_t i = 0; i < dp.size(); ++i) {
        if (!std::isfinite(dp[i]) || !std::isfinite(dq[i])) throw ValidationError("load direction is not finite");
        nonzero = nonzero || dp[i] != 0.0 || dq[i] != 0.0;
    }
    for (double g : gen_dp)
        if (!std::isfinite(g)) throw ValidationError("load direction is not finite");
    if (!nonzero) throw ValidationError("load direction has no nonzero entry");
}

double LoadDirection::apparent_power() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dp.size(); ++i) s += std::hypot(dp[i], dq[i]);
    return s;
}

LoadDirection default_direction(const NetworkModel& base) { return LoadDirection::pq_loads(base); }

NetworkModel shift_loading(const NetworkModel& model, double lambda, const LoadDirection& dir) {
    dir.validate(model);
    if (lambda == 0.0) return model;
    auto buses = model.buses();
    for (std::size_t i = 0; i < buses.size(); ++i) {
        buses[i].pd += lambda * dir.dp[i];
        buses[i].qd += lambda * dir.dq[i];
    }
    auto gens = model.generators();
    for (std::size_t g = 0; g < gens.size(); ++g) gens[g].pg += lambda * dir.gen_dp[g];
    return NetworkModel::create(model.base_mva(), std::move(buses), model.branches(), std::move(gens), model.name());
}

NetworkModel scale_loading(const NetworkModel& model, double k, const LoadDirection& dir) {
    if (!(k > 0.0)) throw ValidationError("loading multiplier must be positive");
    return shift_loading(model, k - 1.0, dir);
}

// ---------------------------------------------------------------------------
// Shared numerics

std::vector<Complex> OperatingState::voltages() const {
    std::vector<Complex> v(vm.size());
    for (std::size_t i = 0; i < vm.size(); ++i) v[i] = std::polar(vm[i], va[i]);
    return v;
}

Eigen::VectorXcd bus_injections(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v) {
    const Eigen::VectorXcd i = y * v;
    return v.cwiseProduct(i.conjugate());
}

PowerDerivatives power_derivatives(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v) {
    const Eigen::Index n = v.size();
    const Eigen::VectorXcd ibus = y * v;
    Eigen::VectorXcd vnorm(n);
    for (Eigen::Index i = 0; i < n; ++i) vnorm(i) = v(i) / std::abs(v(i));

    PowerDerivatives d;
    d.ds_dvm.resize(n, n);
    d.ds_dva.resize(n, n);
    const Complex j1(0.0, 1.0);
    for (Eigen::Index c = 0; c < n; ++c) {
        for (Eigen::Index r = 0; r < n; ++r) {
            const Complex yrc = y(r, c);
            d.ds_dvm(r, c) = v(r) * std::conj(yrc * vnorm(c));
            d.ds_dva(r, c) = -j1 * v(r) * std::conj(yrc * v(c));
        }
        d.ds_dvm(c, c) += std::conj(ibus(c)) * vnorm(c);
        d.ds_dva(c, c) += j1 * v(c) * std::conj(ibus(c));
    }
    return d;
}

std::vector<std::size_t> angle_buses_for(std::span<const BusRole> roles) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roles.size(); ++i)
        if (roles[i] != BusRole::Slack) out.push_back(i);
    return out;
}

std::vector<std::size_t> magnitude_buses_for(std::span<const BusRole> roles) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roles.size(); ++i)
        if (roles[i] == BusRole::PQ) out.push_back(i);
    return out;
}

std::optional<Eigen::Index> JacobianMatrix::angle_position(std::size_t b) const {
    auto it = std::lower_bound(angle_buses.begin(), angle_buses.end(), b);
    if (it == angle_buses.end() || *it != b) return std::nullopt;
    return static_cast<Eigen::Index>(it - angle_buses.begin());
}

std::optional<Eigen::Index> JacobianMatrix::magnitude_position(std::size_t b) const {
    auto it = std::lower_bound(magnitude_buses.begin(), magnitude_buses.end(), b);
    if (it == magnitude_buses.end() || *it != b) return std::nullopt;
    return static_cast<Eigen::Index>(angle_buses.size()) + static_cast<Eigen::Index>(it - magnitude_buses.begin());
}

JacobianMatrix assemble_jacobian(const PowerDerivatives& d, std::vector<std::size_t> angle_buses,
                                 std::vector<std::size_t> magnitude_buses) {
    JacobianMatrix j;
    j.angle_buses = std::move(angle_buses);
    j.magnitude_buses = std::move(magnitude_buses);
    const auto na = static_cast<Eigen::Index>(j.angle_buses.size());
    const auto nm = static_cast<Eigen::Index>(j.magnitude_buses.size());
    j.m.resize(na + nm, na + nm);
    auto idx = [](std::size_t b) { return static_cast<Eigen::Index>(b); };
    for (Eigen::Index c = 0; c < na; ++c) {
        const auto bc = idx(j.angle_buses[static_cast<std::size_t>(c)]);
        for (Eigen::Index r = 0; r < na; ++r) j.m(r, c) = d.ds_dva(idx(j.angle_buses[static_cast<std::size_t>(r)]), bc).real();
        for (Eigen::Index r = 0; r < nm; ++r)
            j.m(na + r, c) = d.ds_dva(idx(j.magnitude_buses[static_cast<std::size_t>(r)]), bc).imag();
    }
    for (Eigen::Index c = 0; c < nm; ++c) {
        const auto bc = idx(j.magnitude_buses[static_cast<std::size_t>(c)]);
        for (Eigen::Index r = 0; r < na; ++r)
            j.m(r, na + c) = d.ds_dvm(idx(j.angle_buses[static_cast<std::size_t>(r)]), bc).real();
        for (Eigen::Index r = 0; r < nm; ++r)
            j.m(na + r, na + c) = d.ds_dvm(idx(j.magnitude_buses[static_cast<std::size_t>(r)]), bc).imag();
    }
    return j;
}

JacobianMatrix build_jacobian(const AdmittanceMatrix& ybus, std::span<const Complex> voltages,
                              std::span<const BusRole> roles) {
    const Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(voltages.data(), static_cast<Eigen::Index>(voltages.size()));
    return assemble_jacobian(power_derivatives(ybus.y, v), angle_buses_for(roles), magnitude_buses_for(roles));
}

JacobianMatrix build_jacobian(const NetworkModel& model, const OperatingState& state) {
    const auto v = state.voltages();
    return build_jacobian(build_ybus(model), v, state.roles);
}

std::vector<BusRole> initial_roles(const NetworkModel& model) {
    std::vector<BusRole> roles(model.bus_count(), BusRole::PQ);
    for (std::size_t i = 0; i < model.bus_count(); ++i) {
        if (i == model.slack_index()) roles[i] = BusRole::Slack;
        else if (model.buses()[i].type == BusType::PV && !model.generators_at(i).empty()) roles[i] = BusRole::PV;
    }
    return roles;
}

BusQLimits bus_q_limits(const NetworkModel& model, std::size_t b) {
    BusQLimits l;
    for (auto g : model.generators_at(b)) {
        l.qmax += model.generators()[g].qmax;
        l.qmin += model.generators()[g].qmin;
    }
    return l;
}

SpecifiedInjections specified_injections(const NetworkModel& model, std::span<const BusRole> roles,
                                         std::span<const LimitState> limits) {
    const auto n = static_cast<Eigen::Index>(model.bus_count());
    SpecifiedInjections s{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto bi = static_cast<std::size_t>(i);
        const auto& bus = model.buses()[bi];
        double pg = 0.0, qg = 0.0;
        for (auto g : model.generators_at(bi)) {
            pg += model.generators()[g].pg;
            qg += model.generators()[g].qg;
        }
        if (roles[bi] == BusRole::PQ && !model.generators_at(bi).empty()) {
            const auto lim = bus_q_limits(model, bi);
            if (limits[bi] == LimitState::AtMax) qg = lim.qmax;
            else if (limits[bi] == LimitState::AtMin) qg = lim.qmin;
        }
        s.p(i) = pg - bus.pd;
        s.q(i) = qg - bus.qd;
    }
    return s;
}

Eigen::VectorXd mismatch_vector(const AdmittanceMatrix& ybus, std::span<const Complex> voltages,
                                const SpecifiedInjections& spec, std::span<const std::size_t> angle_buses,
                                std::span<const std::size_t> magnitude_buses) {
    const Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(voltages.data(), static_cast<Eigen::Index>(voltages.size()));
    const Eigen::VectorXcd s = bus_injections(ybus.y, v);
    const auto na = static_cast<Eigen::Index>(angle_buses.size());
    const auto nm = static_cast<Eigen::Index>(magnitude_buses.size());
    Eigen::VectorXd f(na + nm);
    for (Eigen::Index r = 0; r < na; ++r) {
        const auto b = static_cast<Eigen::Index>(angle_buses[static_cast<std::size_t>(r)]);
        f(r) = s(b).real() - spec.p(b);
    }
    for (Eigen::Index r = 0; r < nm; ++r) {
        const auto b = static_cast<Eigen::Index>(magnitude_buses[static_cast<std::size_t>(r)]);
        f(na + r) = s(b).imag() - spec.q(b);
    }
    return f;
}

// ---------------------------------------------------------------------------
// Newton-Raphson with PV/PQ switching

namespace {

double bus_vsetpoint(const NetworkModel& model, std::size_t b) {
    const auto& gens = model.generators_at(b);
    return gens.empty() ? model.buses()[b].vm : model.generators()[gens.front()].vsetpoint;
}

struct NewtonOutcome {
    bool converged = false;
    int iterations = 0;
    double max_mismatch = 0.0;
};

NewtonOutcome newton(const NetworkModel& model, const AdmittanceMatrix& ybus, std::vector<double>& vm,
                     std::vector<double>& va, std::span<const BusRole> roles, std::span<const LimitState> limits,
                     const PowerFlowOptions& opt) {
    const auto spec = specified_injections(model, roles, limits);
    const auto ab = angle_buses_for(roles);
    const auto mb = magnitude_buses_for(roles);
    const auto na = static_cast<Eigen::Index>(ab.size());
    const auto n = vm.size();
    std::vector<Complex> v(n);
    auto refresh = [&] {
        for (std::size_t i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
    };
    refresh();

    NewtonOutcome out;
    Eigen::VectorXd f = mismatch_vector(ybus, v, spec, ab, mb);
    out.max_mismatch = f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;
    while (true) {
        if (!std::isfinite(out.max_mismatch)) return out;
        if (out.max_mismatch <= opt.tolerance) {
            out.converged = true;
            return out;
        }
        if (out.iterations >= opt.max_iterations) return out;
        ++out.iterations;

        const Eigen::VectorXcd ve = Eigen::Map<const Eigen::VectorXcd>(v.data(), static_cast<Eigen::Index>(n));
        const JacobianMatrix j = assemble_jacobian(power_derivatives(ybus.y, ve), ab, mb);
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(j.m);
        const Eigen::VectorXd dx = lu.solve(-f);
        if (!dx.allFinite()) return out;
        for (Eigen::Index r = 0; r < na; ++r) va[ab[static_cast<std::size_t>(r)]] += dx(r);
        for (std::size_t r = 0; r < mb.size(); ++r) vm[mb[r]] += dx(na + static_cast<Eigen::Index>(r));
        for (auto b : mb)
            if (!(vm[b] > 0.0)) return out;
        refresh();
        f = mismatch_vector(ybus, v, spec, ab, mb);
        out.max_mismatch = f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;
        if (out.max_mismatch > 1e10) return out;
    }
}
}  // namespace

void distribute_generation(const NetworkModel& model, OperatingState& st) {
    st.gen_p.assign(model.generators().size(), 0.0);
    st.gen_q.assign(model.generators().size(), 0.0);
    for (std::size_t b = 0; b < model.bus_count(); ++b) {
        const auto& gens = model.generators_at(b);
        if (gens.empty()) continue;
        const auto& bus = model.buses()[b];
        const double qbus = st.q[b] + bus.qd;
        const double pbus = st.p[b] + bus.pd;
        double psched = 0.0;
        for (auto g : gens) psched += model.generators()[g].pg;
        const auto lim = bus_q_limits(model, b);
        const double range = lim.qmax - lim.qmin;
        for (auto g : gens) {
            const auto& gen = model.generators()[g];
            if (range > 1e-12) st.gen_q[g] = gen.qmin + (qbus - lim.qmin) * (gen.qmax - gen.qmin) / range;
            else st.gen_q[g] = qbus / static_cast<double>(gens.size());
            st.gen_p[g] = gen.pg + (pbus - psched) / static_cast<double>(gens.size());
        }
    }
}

OperatingState solve_power_flow(const NetworkModel& model, const PowerFlowOptions& opt, const OperatingState* warm) {
    if (auto isl = islanded_buses(model); !isl.empty()) {
        std::vector<int> ids;
        for (auto b : isl) ids.push_back(model.buses()[b].id);
        throw IslandingError(ids, "network is islanded: " + std::to_string(ids.size()) +
                                      " bus(es) disconnected from the slack bus");
    }
    const auto n = model.bus_count();
    const AdmittanceMatrix ybus = build_ybus(model);

    OperatingState st;
    st.roles = initial_roles(model);
    st.limits.assign(n, LimitState::None);
    st.vm.assign(n, 1.0);
    const double slack_angle = model.buses()[model.slack_index()].va_deg * std::numbers::pi / 180.0;
    st.va.assign(n, slack_angle);
    const bool use_warm = warm && warm->vm.size() == n && warm->roles.size() == n;
    if (use_warm) {
        st.vm = warm->vm;
        st.va = warm->va;
        if (opt.enforce_q_limits) {
            for (std::size_t i = 0; i < n; ++i) {
                if (st.roles[i] == BusRole::PV && warm->roles[i] == BusRole::PQ && warm->limits[i] != LimitState::None) {
                    st.roles[i] = BusRole::PQ;
                    st.limits[i] = warm->limits[i];
                }
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (st.roles[i] != BusRole::PQ) st.vm[i] = bus_vsetpoint(model, i);
    st.va[model.slack_index()] = slack_angle;

    std::vector<int> back_switches(n, 0);
    while (true) {
        const NewtonOutcome nr = newton(model, ybus, st.vm, st.va, st.roles, st.limits, opt);
        st.iterations += nr.iterations;
        st.max_mismatch = nr.max_mismatch;
        if (!nr.converged) {
            st.converged = false;
            break;
        }
        st.converged = true;

        const auto v = st.voltages();
        const Eigen::VectorXcd s =
            bus_injections(ybus.y, Eigen::Map<const Eigen::VectorXcd>(v.data(), static_cast<Eigen::Index>(n)));
        st.p.resize(n);
        st.q.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            st.p[i] = s(static_cast<Eigen::Index>(i)).real();
            st.q[i] = s(static_cast<Eigen::Index>(i)).imag();
        }
        if (!opt.enforce_q_limits || st.switch_rounds >= opt.max_switch_rounds) break;

        // Worst violation first, one switch per round.
        std::optional<std::size_t> worst;
        double worst_amount = 0.0;
        LimitState worst_state = LimitState::None;
        for (std::size_t i = 0; i < n; ++i) {
            if (st.roles[i] != BusRole::PV) continue;
            const auto lim = bus_q_limits(model, i);
            const double qg = st.q[i] + model.buses()[i].qd;
            if (qg - lim.qmax > opt.q_tolerance && qg - lim.qmax > worst_amount) {
                worst = i;
                worst_amount = qg - lim.qmax;
                worst_state = LimitState::AtMax;
            } else if (lim.qmin - qg > opt.q_tolerance && lim.qmin - qg > worst_amount) {
                worst = i;
                worst_amount = lim.qmin - qg;
                worst_state = LimitState::AtMin;
            }
        }
        if (worst) {
            st.roles[*worst] = BusRole::PQ;
            st.limits[*worst] = worst_state;
            ++st.switch_rounds;
            continue;
        }
        // Back-switch a limited bus whose voltage has crossed back over its setpoint.
        std::optional<std::size_t> back;
        double back_amount = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (st.limits[i] == LimitState::None || back_switches[i] >= 2) continue;
            const double vsp = bus_vsetpoint(model, i);
            const double excess = st.limits[i] == LimitState::AtMax ? st.vm[i] - vsp : vsp - st.vm[i];
            if (excess > 1e-9 && excess > back_amount) {
                back = i;
                back_amount = excess;
            }
        }
        if (!back) break;
        st.roles[*back] = BusRole::PV;
        st.limits[*back] = LimitState::None;
        st.vm[*back] = bus_vsetpoint(model, *back);
        ++back_switches[*back];
        ++st.switch_rounds;
    }
    if (st.converged) distribute_generation(model, st);
    return st;
}

OperatingState solve_at_loading(const NetworkModel& model, double k, bool enforce_q_limits) {
    const auto scaled = scale_loading(model, k, default_direction(model));
    PowerFlowOptions opt;
    opt.enforce_q_limits = enforce_q_limits;
    return solve_power_flow(scaled, opt);
}

}  // namespace vsa
