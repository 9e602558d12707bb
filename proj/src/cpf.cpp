#include "vsa/cpf.hpp"

#include <cmath>

namespace vsa {

std::vector<double> CpfTrace::voltage_profile(std::size_t b) const {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.state.vm.at(b));
    return out;
}

CpfTrace trace_pv_curve(const NetworkModel& model, const LoadDirection& dir, const CpfOptions& options) {
    if (!(options.resolution > 0.0) || !(options.initial_step >= options.resolution))
        throw ValidationError("CPF step must be at least the resolution, and both positive");
    dir.validate(model);

    PowerFlowOptions pf;
    pf.enforce_q_limits = options.enforce_q_limits;

    CpfTrace trace;
    trace.apparent_power = dir.apparent_power();
    auto base = solve_power_flow(model, pf);
    if (!base.converged) throw BaseCaseDivergenceError("starting point of the trace does not converge");
    trace.points.push_back({0.0, std::move(base)});

    double step = options.initial_step;
    // Integer step counting in units of the resolution keeps lambda free of drift.
    const double res = options.resolution;
    long long at = 0;
    long long inc = std::llround(step / res);
    while (true) {
        const long long next = at + inc;
        const double lambda = static_cast<double>(next) * res;
        if (lambda > options.max_lambda + 1e-12) {
            trace.reached_cap = true;
            break;
        }
        auto st = solve_power_flow(shift_loading(model, lambda, dir), pf, &trace.points.back().state);
        if (st.converged) {
            at = next;
            trace.points.push_back({lambda, std::move(st)});
            continue;
        }
        if (inc == 1) break;
        inc = std::max<long long>(1, inc / 2);
    }
    trace.lambda_max = static_cast<double>(at) * res;
    return trace;
}

double margin(const CpfTrace& trace) { return trace.lambda_max * trace.apparent_power; }

std::optional<std::size_t> critical_bus(const NetworkModel& model, const CpfTrace& trace) {
    if (trace.points.size() < 2) return std::nullopt;
    const auto& a = trace.points[trace.points.size() - 2].state;
    const auto& b = trace.points.back().state;
    std::optional<std::size_t> best;
    double drop = -1.0;
    for (std::size_t i = 0; i < model.bus_count(); ++i) {
        const auto& bus = model.buses()[i];
        if (!model.generators_at(i).empty() || (bus.pd == 0.0 && bus.qd == 0.0)) continue;
        const double d = (a.vm[i] - b.vm[i]) / a.vm[i];
        if (d > drop) {
            drop = d;
            best = i;
        }
    }
    return best;
}

double loadability_margin(const NetworkModel& model, const LoadDirection& dir, const CpfOptions& options) {
    try {
        return margin(trace_pv_curve(model, dir, options));
    } catch (const BaseCaseDivergenceError&) {
        return 0.0;
    } catch (const IslandingError&) {
        return 0.0;
    }
}

}  // namespace vsa
