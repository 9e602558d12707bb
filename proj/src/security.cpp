#include "vsa/security.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>

namespace vsa {

std::string_view to_string(ActiveSet s) {
    switch (s) {
        case ActiveSet::PQ: return "P_Q";
        case ActiveSet::NQ: return "N_Q";
        case ActiveSet::PV: return "P_v";
        case ActiveSet::NV: return "N_v";
    }
    return "?";
}

std::string_view to_string(VerdictOutcome o) {
    switch (o) {
        case VerdictOutcome::Assessed: return "assessed";
        case VerdictOutcome::Diverged: return "diverged";
        case VerdictOutcome::Islanding: return "islanding";
    }
    return "?";
}

namespace {

double vsetpoint(const NetworkModel& model, std::size_t b) {
    const auto& gens = model.generators_at(b);
    return gens.empty() ? model.buses()[b].vm : model.generators()[gens.front()].vsetpoint;
}

[[noreturn]] void throw_islanding(const NetworkModel& model, const std::vector<std::size_t>& isl) {
    std::vector<int> ids;
    for (auto b : isl) ids.push_back(model.buses()[b].id);
    throw IslandingError(ids, "outage islands " + std::to_string(ids.size()) + " bus(es)");
}

}  // namespace

PiecewiseTrace piecewise_post_contingency(const NetworkModel& model, const OperatingState& state, BranchId branch,
                                          const PiecewiseOptions& options) {
    if (branch >= model.branches().size()) throw ValidationError("unknown branch " + std::to_string(branch));
    if (!model.branches()[branch].in_service) throw ValidationError("branch " + model.branch_label(branch) + " is already open");
    if (!state.converged) throw ValidationError("piecewise tracking needs a converged starting state");
    if (!(options.severity >= 0.0 && options.severity <= 1.0)) throw ValidationError("severity must be in [0, 1]");

    const auto n = model.bus_count();
    const auto post = options.severity > 0.0 ? apply_outage(model, branch, options.severity) : model;
    if (auto isl = islanded_buses(post); !isl.empty()) throw_islanding(model, isl);

    const Eigen::MatrixXcd y0 = build_ybus(model).y;
    const auto st = branch_stamp(model, branch, true);
    Eigen::MatrixXcd dy = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    const auto f = static_cast<Eigen::Index>(st.from), t = static_cast<Eigen::Index>(st.to);
    dy(f, f) -= st.yff;
    dy(f, t) -= st.yft;
    dy(t, f) -= st.ytf;
    dy(t, t) -= st.ytt;

    std::vector<double> vm = state.vm, va = state.va;
    std::vector<BusRole> roles = state.roles;
    std::vector<LimitState> limits = state.limits;
    std::vector<double> qg(n, 0.0);  // bus-aggregate generator Q
    std::vector<bool> tracked(n, false);
    for (std::size_t b = 0; b < n; ++b) {
        if (model.generators_at(b).empty() || b == model.slack_index()) continue;
        tracked[b] = true;
        qg[b] = state.q[b] + model.buses()[b].qd;
    }

    PiecewiseTrace trace;
    trace.branch = branch;
    double k = 0.0;
    const double k_end = options.severity;
    std::vector<std::size_t> last_pq, last_nq;
    std::vector<bool> flipped(n, false);  // transitioned at the end of the previous step

    while (k < k_end - 1e-12) {
        if (trace.steps.size() >= options.max_steps) throw TraceDivergenceError(k, "piecewise tracking did not finish");
        AdmittanceMatrix yk;
        yk.y = y0 + k * dy;
        Eigen::VectorXcd v(static_cast<Eigen::Index>(n));
        for (std::size_t b = 0; b < n; ++b) v(static_cast<Eigen::Index>(b)) = std::polar(vm[b], va[b]);
        std::vector<Complex> vv(v.data(), v.data() + n);
        const auto jac = build_jacobian(yk, vv, roles);
        const Eigen::VectorXcd g = v.cwiseProduct((dy * v).conjugate());
        const auto na = static_cast<Eigen::Index>(jac.angle_buses.size());
        Eigen::VectorXd rhs(jac.size());
        for (Eigen::Index r = 0; r < na; ++r) rhs(r) = g(static_cast<Eigen::Index>(jac.angle_buses[r])).real();
        for (std::size_t r = 0; r < jac.magnitude_buses.size(); ++r)
            rhs(na + static_cast<Eigen::Index>(r)) = g(static_cast<Eigen::Index>(jac.magnitude_buses[r])).imag();
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac.m);
        if (!(lu.rcond() > 1e-14)) throw TraceDivergenceError(k, "Jacobian singular during outage tracking");
        const Eigen::VectorXd dx = -lu.solve(rhs);
        if (!dx.allFinite()) throw TraceDivergenceError(k, "non-finite sensitivities during outage tracking");

        Eigen::VectorXd dth = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        Eigen::VectorXd dvm = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        for (Eigen::Index r = 0; r < na; ++r) dth(static_cast<Eigen::Index>(jac.angle_buses[r])) = dx(r);
        for (std::size_t r = 0; r < jac.magnitude_buses.size(); ++r)
            dvm(static_cast<Eigen::Index>(jac.magnitude_buses[r])) = dx(na + static_cast<Eigen::Index>(r));
        const auto d = power_derivatives(yk.y, v);
        const Eigen::VectorXcd ds = d.ds_dva * dth + d.ds_dvm * dvm + g;

        PiecewiseStep step;
        step.k = k;
        for (std::size_t b = 0; b < n; ++b) {
            if (!tracked[b]) continue;
            const auto lim = bus_q_limits(model, b);
            const auto bi = static_cast<Eigen::Index>(b);
            ActiveEntry e;
            e.bus = b;
            if (limits[b] == LimitState::None) {
                e.gradient = ds(bi).imag();
                if (e.gradient > 0.0) {
                    e.set = ActiveSet::PQ;
                    e.room = lim.qmax - qg[b];
                } else if (e.gradient < 0.0) {
                    e.set = ActiveSet::NQ;
                    e.room = lim.qmin - qg[b];
                } else {
                    continue;
                }
            } else {
                e.set = limits[b] == LimitState::AtMax ? ActiveSet::PV : ActiveSet::NV;
                e.gradient = dvm(bi);
                e.room = vsetpoint(model, b) - vm[b];
                if (e.gradient == 0.0) continue;
            }
            e.ratio = e.room / e.gradient;
            if (!std::isfinite(e.ratio) || e.ratio < 0.0) continue;
            // A bus that just changed type cannot flip back at the same K.
            if (flipped[b] && e.ratio <= options.min_step) continue;
            step.active.push_back(e);
        }

        double dk = k_end - k;
        for (const auto& e : step.active) dk = std::min(dk, e.ratio);
        dk = std::min(std::max(dk, options.min_step), k_end - k);
        step.dk = dk;
        // Events within the floor of the chosen step are applied together.
        const double reach = dk + (dk <= options.min_step ? options.min_step : 1e-9);

        last_pq.clear();
        last_nq.clear();
        for (const auto& e : step.active) {
            if (e.set == ActiveSet::PQ) last_pq.push_back(e.bus);
            if (e.set == ActiveSet::NQ) last_nq.push_back(e.bus);
        }

        for (std::size_t b = 0; b < n; ++b) {
            va[b] += dth(static_cast<Eigen::Index>(b)) * dk;
            vm[b] += dvm(static_cast<Eigen::Index>(b)) * dk;
            if (tracked[b] && limits[b] == LimitState::None) qg[b] += ds(static_cast<Eigen::Index>(b)).imag() * dk;
        }
        std::fill(flipped.begin(), flipped.end(), false);
        for (const auto& e : step.active) {
            if (e.ratio > reach) continue;
            flipped[e.bus] = true;
            const auto lim = bus_q_limits(model, e.bus);
            switch (e.set) {
                case ActiveSet::PQ:
                    roles[e.bus] = BusRole::PQ;
                    limits[e.bus] = LimitState::AtMax;
                    qg[e.bus] = lim.qmax;
                    break;
                case ActiveSet::NQ:
                    roles[e.bus] = BusRole::PQ;
                    limits[e.bus] = LimitState::AtMin;
                    qg[e.bus] = lim.qmin;
                    break;
                case ActiveSet::PV:
                case ActiveSet::NV:
                    roles[e.bus] = BusRole::PV;
                    limits[e.bus] = LimitState::None;
                    vm[e.bus] = vsetpoint(model, e.bus);
                    break;
            }
            step.events.push_back({e.bus, e.set});
        }
        k += dk;
        trace.steps.push_back(std::move(step));
    }

    trace.k_reached = k;

    OperatingState out;
    out.vm = vm;
    out.va = va;
    out.roles = roles;
    out.limits = limits;
    out.converged = true;
    out.iterations = static_cast<int>(trace.steps.size());
    const auto ypost = build_ybus(post).y;
    Eigen::VectorXcd v(static_cast<Eigen::Index>(n));
    for (std::size_t b = 0; b < n; ++b) v(static_cast<Eigen::Index>(b)) = std::polar(vm[b], va[b]);
    const Eigen::VectorXcd s = bus_injections(ypost, v);
    out.p.resize(n);
    out.q.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
        const auto bi = static_cast<Eigen::Index>(b);
        out.p[b] = s(bi).real();
        out.q[b] = tracked[b] ? qg[b] - model.buses()[b].qd : s(bi).imag();
    }
    distribute_generation(post, out);
    trace.predicted_state = out;
    if (options.correct_final && k_end > 0.0) {
        auto corrected = solve_power_flow(post, {}, &out);
        if (!corrected.converged) throw TraceDivergenceError(k, "post-contingency corrector did not converge");
        trace.final_state = std::move(corrected);
    } else {
        trace.final_state = std::move(out);
    }

    // A bus that ends at a limit is no longer heading there.
    const auto& fin = trace.final_state.limits;
    std::erase_if(last_pq, [&](std::size_t b) { return fin[b] != LimitState::None; });
    std::erase_if(last_nq, [&](std::size_t b) { return fin[b] != LimitState::None; });
    trace.final_p_q = std::move(last_pq);
    trace.final_n_q = std::move(last_nq);
    return trace;
}

CriticalGeneratorList tracked_critical_list(const NetworkModel& model, const PiecewiseTrace& trace) {
    CriticalGeneratorList list;
    list.threshold = 0.0;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const auto add = [&](std::size_t b, RootSide side) {
        for (auto g : model.generators_at(b)) list.items.push_back({g, model.buses()[b].id, nan, side});
    };
    for (auto b : trace.final_p_q) add(b, RootSide::Upper);
    for (auto b : trace.final_n_q) add(b, RootSide::Lower);
    return list;
}

double default_screening_threshold(const NetworkModel& model) { return model.bus_count() >= 100 ? 0.85 : 0.75; }

ContingencyVerdict assess_contingency(const NetworkModel& model, const OperatingState& state, BranchId branch,
                                      const LoadDirection& dir, const ScreeningOptions& options) {
    ContingencyVerdict v;
    v.branch = branch;
    v.label = model.branch_label(branch);
    try {
        const auto trace = piecewise_post_contingency(model, state, branch, options.piecewise);
        const auto post = apply_outage(model, branch, options.piecewise.severity);
        const auto est = exact_estimate(post, trace.final_state);
        const auto list = tracked_critical_list(model, trace);
        const auto report = assess_with_list(post, est, dir, list, options.assessment);
        v.list = report.critical;
        v.w1 = report.w1;
        v.max_wvsi = report.max_wvsi();
        if (auto b = report.critical_bus()) v.critical_bus = report.buses[*b].bus_id;
        v.critical = v.max_wvsi > options.threshold;
    } catch (const IslandingError& e) {
        v.outcome = VerdictOutcome::Islanding;
        v.detail = e.what();
        v.max_wvsi = std::numeric_limits<double>::infinity();
        v.critical = true;
    } catch (const TraceDivergenceError& e) {
        v.outcome = VerdictOutcome::Diverged;
        v.detail = e.what();
        v.max_wvsi = std::numeric_limits<double>::infinity();
        v.critical = true;
    } catch (const SingularJacobianError& e) {
        v.outcome = VerdictOutcome::Diverged;
        v.detail = e.what();
        v.max_wvsi = std::numeric_limits<double>::infinity();
        v.critical = true;
    }
    return v;
}

std::vector<ContingencyVerdict> screen_contingencies(const NetworkModel& model, const OperatingState& state,
                                                     std::span<const BranchId> branches, const LoadDirection& dir,
                                                     const ScreeningOptions& options) {
    std::vector<ContingencyVerdict> out(branches.size());
    if (branches.empty()) return out;
    unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, branches.size()));
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < branches.size();)
            out[i] = assess_contingency(model, state, branches[i], dir, options);
    };
    if (threads == 1) {
        work();
        return out;
    }
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    pool.clear();
    return out;
}

std::vector<ContingencyVerdict> rank_contingencies(std::vector<ContingencyVerdict> verdicts) {
    std::stable_sort(verdicts.begin(), verdicts.end(), [](const auto& a, const auto& b) {
        const bool fa = a.outcome != VerdictOutcome::Assessed, fb = b.outcome != VerdictOutcome::Assessed;
        if (fa != fb) return fa;
        if (!fa && a.max_wvsi != b.max_wvsi) return a.max_wvsi > b.max_wvsi;
        return a.branch < b.branch;
    });
    for (std::size_t i = 0; i < verdicts.size(); ++i) verdicts[i].rank = static_cast<int>(i + 1);
    return verdicts;
}

std::vector<BranchId> all_branches(const NetworkModel& model) {
    std::vector<BranchId> out;
    for (BranchId b = 0; b < model.branches().size(); ++b)
        if (model.branches()[b].in_service) out.push_back(b);
    return out;
}

double default_margin_threshold(const NetworkModel& model) { return model.bus_count() >= 100 ? 0.9 : 0.75; }

std::vector<ContingencyVerdict> evaluate_contingencies(const NetworkModel& model, const OperatingState& state,
                                                       std::span<const BranchId> branches, const LoadDirection& dir,
                                                       const EvaluationOptions& options) {
    auto verdicts = screen_contingencies(model, state, branches, dir, options.screening);
    unsigned threads = options.screening.threads ? options.screening.threads
                                                 : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, branches.size())));
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < branches.size();) {
            const auto post = apply_outage(model, branches[i], 1.0);
            const double dl = loadability_margin(post, dir, options.cpf);
            verdicts[i].delta_lambda = dl;
            verdicts[i].actual_critical = dl < options.margin_threshold;
        }
    };
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    }
    return verdicts;
}

ConfusionMetrics confusion_from_counts(long tp, long fp, long fn, long tn) {
    if (tp < 0 || fp < 0 || fn < 0 || tn < 0) throw ValidationError("confusion counts must be non-negative");
    ConfusionMetrics m{tp, fp, fn, tn};
    const long total = tp + fp + fn + tn;
    m.accuracy = total ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;
    m.precision_undefined = tp + fp == 0;
    m.recall_undefined = tp + fn == 0;
    m.precision = m.precision_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = m.recall_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.f_score = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    if (fp == 0 && fn == 0) m.f_score = 1.0;
    return m;
}

ConfusionMetrics confusion_metrics(std::span<const bool> predicted, std::span<const bool> actual) {
    if (predicted.size() != actual.size()) throw ValidationError("label vectors differ in length");
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] && actual[i]) ++tp;
        else if (predicted[i]) ++fp;
        else if (actual[i]) ++fn;
        else ++tn;
    }
    return confusion_from_counts(tp, fp, fn, tn);
}

namespace {

// Number of sign assignments reaching each doubled rank sum.
std::vector<double> signed_rank_counts(const std::vector<int>& doubled_ranks) {
    int total = 0;
    for (int r : doubled_ranks) total += r;
    std::vector<double> c(static_cast<std::size_t>(total) + 1, 0.0);
    c[0] = 1.0;
    int reach = 0;
    for (int r : doubled_ranks) {
        for (int s = reach; s >= 0; --s)
            if (c[static_cast<std::size_t>(s)] != 0.0) c[static_cast<std::size_t>(s + r)] += c[static_cast<std::size_t>(s)];
        reach += r;
    }
    return c;
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, double confidence) {
    if (a.size() != b.size()) throw ValidationError("rank vectors differ in length");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ValidationError("confidence must be in (0, 1)");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i] - b[i];
        if (std::abs(x) > 1e-12) d.push_back(x);
    }
    WilcoxonResult r;
    r.confidence = confidence;
    r.n = d.size();
    if (d.empty()) {
        r.degenerate = true;
        return r;
    }
    if (d.size() > 25) throw ValidationError("exact signed-rank test supports at most 25 non-zero differences");

    std::vector<std::size_t> order(d.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return std::abs(d[x]) < std::abs(d[y]); });
    std::vector<int> doubled(d.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && std::abs(std::abs(d[order[j + 1]]) - std::abs(d[order[i]])) <= 1e-12) ++j;
        const int twice_avg = static_cast<int>(i + 1 + j + 1);  // 2 * average of ranks i+1..j+1
        for (std::size_t k = i; k <= j; ++k) doubled[order[k]] = twice_avg;
        i = j + 1;
    }
    int w2 = 0, total2 = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        total2 += doubled[i];
        if (d[i] > 0.0) w2 += doubled[i];
    }
    r.w_plus = w2 / 2.0;
    r.w_minus = (total2 - w2) / 2.0;

    const auto counts = signed_rank_counts(doubled);
    const double all = std::ldexp(1.0, static_cast<int>(d.size()));
    double le = 0.0, ge = 0.0;
    for (std::size_t s = 0; s < counts.size(); ++s) {
        if (static_cast<int>(s) <= w2) le += counts[s];
        if (static_cast<int>(s) >= w2) ge += counts[s];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / all);

    // Walsh averages and the exact untied critical value.
    std::vector<double> walsh;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = i; j < d.size(); ++j) walsh.push_back((d[i] + d[j]) / 2.0);
    std::sort(walsh.begin(), walsh.end());
    std::vector<int> plain(d.size());
    for (std::size_t i = 0; i < plain.size(); ++i) plain[i] = 2 * static_cast<int>(i + 1);
    const auto pc = signed_rank_counts(plain);
    const double tail = (1.0 - confidence) / 2.0;
    double cum = 0.0;
    long c = -1;  // largest W with P(W <= c) <= tail
    for (std::size_t s = 0; s < pc.size(); s += 2) {
        cum += pc[s];
        if (cum / all <= tail) c = static_cast<long>(s / 2);
        else break;
    }
    const auto m = static_cast<long>(walsh.size());
    if (c < 0) {
        r.ci_low = walsh.front();
        r.ci_high = walsh.back();
    } else {
        r.ci_low = walsh[static_cast<std::size_t>(c + 1)];
        r.ci_high = walsh[static_cast<std::size_t>(m - 2 - c)];
    }
    return r;
}

RankingComparison compare_rankings(std::span<const ContingencyVerdict> verdicts, std::size_t top) {
    std::vector<const ContingencyVerdict*> pool;
    for (const auto& v : verdicts) {
        if (!v.delta_lambda) throw ValidationError("verdict " + v.label + " has no oracle margin");
        pool.push_back(&v);
    }
    std::sort(pool.begin(), pool.end(), [](auto a, auto b) {
        if (*a->delta_lambda != *b->delta_lambda) return *a->delta_lambda < *b->delta_lambda;
        return a->branch < b->branch;
    });
    pool.resize(std::min(top, pool.size()));

    std::vector<ContingencyVerdict> subset;
    for (auto p : pool) subset.push_back(*p);
    const auto by_index = rank_contingencies(subset);

    RankingComparison out;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        out.branches.push_back(pool[i]->branch);
        out.oracle_rank.push_back(static_cast<double>(i + 1));
        const auto it = std::find_if(by_index.begin(), by_index.end(),
                                     [&](const auto& v) { return v.branch == pool[i]->branch; });
        out.index_rank.push_back(static_cast<double>(it->rank));
    }
    out.test = wilcoxon_signed_rank(out.index_rank, out.oracle_rank);
    return out;
}

}  // namespace vsa
