#include "vsa/qlimits.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>

namespace vsa {

RprModel RprModel::from_coefficients(double a, double b, double c) {
    RprModel m;
    m.qa = a;
    m.qb = b;
    m.qc = c;
    return m;
}

// RPR = A x^2 + B x + C with x = (Q - m) / s, expanded in Q.
double RprModel::a() const { return qa / (scale * scale); }
double RprModel::b() const { return qb / scale - 2.0 * qa * center / (scale * scale); }
double RprModel::c() const {
    return qa * center * center / (scale * scale) - qb * center / scale + qc;
}

double RprModel::evaluate(double q_total) const {
    const double x = (q_total - center) / scale;
    return (qa * x + qb) * x + qc;
}

RprModel fit_rpr(std::span<const double> q_total, std::span<const double> rpr, const RprFitOptions& options) {
    if (q_total.size() != rpr.size()) throw ValidationError("Q_T and RPR series differ in length");
    const auto n = q_total.size();
    if (n < 3) throw DegenerateWindowError("reserve fit needs at least 3 samples");
    if (!(options.forgetting > 0.0 && options.forgetting <= 1.0))
        throw ValidationError("forgetting factor must be in (0, 1]");

    std::vector<double> distinct(q_total.begin(), q_total.end());
    std::sort(distinct.begin(), distinct.end());
    const double span_q = distinct.back() - distinct.front();
    const double tol = 1e-12 * std::max(1.0, std::abs(distinct.back()));
    std::size_t count = 1;
    for (std::size_t i = 1; i < n; ++i)
        if (distinct[i] - distinct[i - 1] > tol) ++count;
    if (count < 3) throw DegenerateWindowError("reserve fit needs at least 3 distinct Q_T values");

    RprModel m;
    double mean = 0.0;
    for (double q : q_total) mean += q;
    m.center = mean / static_cast<double>(n);
    m.scale = span_q / 2.0;

    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd y(n);
    Eigen::VectorXd w(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = (q_total[i] - m.center) / m.scale;
        const double wi = std::sqrt(std::pow(options.forgetting, static_cast<double>(n - 1 - i)));
        w(static_cast<Eigen::Index>(i)) = wi;
        a.row(static_cast<Eigen::Index>(i)) << wi * x * x, wi * x, wi;
        y(static_cast<Eigen::Index>(i)) = wi * rpr[i];
    }
    const Eigen::Vector3d coef = a.colPivHouseholderQr().solve(y);
    m.qa = coef(0);
    m.qb = coef(1);
    m.qc = coef(2);
    const double wsum = w.squaredNorm();
    m.residual = std::sqrt((a * coef - y).squaredNorm() / wsum);
    m.latest_q_total = q_total[n - 1];
    m.latest_rpr = rpr[n - 1];
    return m;
}

RprModel fit_rpr_model(const MeasurementWindow& window, const NetworkModel& model, GeneratorId gen,
                       const RprFitOptions& options) {
    if (gen >= model.generators().size()) throw ValidationError("unknown generator " + std::to_string(gen));
    if (window.empty()) throw DegenerateWindowError("empty window");
    const auto& g = model.generators()[gen];
    const auto b = model.bus_index(g.bus);
    const bool at_limit = window.latest().limits[b] != LimitState::None;
    // Samples taken while the unit sat at a limit carry no information about its regulating regime,
    // so only the trailing run sharing the latest limit state is fitted.
    std::size_t first = window.size();
    while (first > 0 && (window[first - 1].limits[b] != LimitState::None) == at_limit) --first;
    std::vector<double> qt, rpr;
    for (std::size_t i = first; i < window.size(); ++i) {
        qt.push_back(window[i].q_total);
        rpr.push_back(window[i].rpr[gen]);
    }
    RprModel m = fit_rpr(qt, rpr, options);
    m.gen = gen;
    m.bus_id = g.bus;
    m.at_limit = at_limit;
    m.q_cr = predict_qcr(m, m.latest_q_total, RootSide::Upper);
    return m;
}

std::optional<double> predict_qcr(const RprModel& model, double q_total, RootSide side) {
    const auto realistic = [&](double q) {
        if (!std::isfinite(q)) return false;
        return side == RootSide::Upper ? q > q_total : q < q_total;
    };
    std::vector<double> roots;
    if (std::abs(model.a()) < 1e-9) {
        const double b = model.b();
        if (b == 0.0) return std::nullopt;
        roots.push_back(-model.c() / b);
    } else {
        // Stable quadratic roots in the scaled variable, mapped back to Q_T.
        const double a = model.qa, b = model.qb, c = model.qc;
        const double disc = b * b - 4.0 * a * c;
        if (disc < 0.0) return std::nullopt;
        const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
        if (q != 0.0) {
            roots.push_back(model.center + model.scale * (q / a));
            roots.push_back(model.center + model.scale * (c / q));
        } else {
            roots.push_back(model.center);
        }
    }
    std::optional<double> best;
    for (double r : roots)
        if (realistic(r) && (!best || std::abs(r - q_total) < std::abs(*best - q_total))) best = r;
    return best;
}

CriticalGeneratorList select_critical_generators(std::span<const RprModel> models, double q_total,
                                                 double threshold) {
    if (!(threshold >= 0.0)) throw ValidationError("critical-generator threshold must be non-negative");
    CriticalGeneratorList list;
    list.threshold = threshold;
    list.q_total = q_total;
    std::vector<CriticalGenerator> cand;
    for (const auto& m : models) {
        if (m.at_limit || m.latest_rpr <= 0.0) continue;
        if (auto r = predict_qcr(m, q_total, RootSide::Upper)) cand.push_back({m.gen, m.bus_id, *r});
    }
    if (cand.empty()) return list;
    std::sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) {
        return x.q_cr != y.q_cr ? x.q_cr < y.q_cr : x.gen < y.gen;
    });
    const double limit = cand.front().q_cr + threshold * q_total;
    for (const auto& c : cand)
        if (c.q_cr <= limit) list.items.push_back(c);
    return list;
}

AugmentedJacobian augment_jacobian(const JacobianMatrix& jac, const CriticalGeneratorList& list,
                                   const NetworkModel& model, const AdmittanceMatrix& ybus,
                                   std::span<const Complex> voltages) {
    AugmentedJacobian out;
    std::set<std::size_t> add;
    for (const auto& c : list.items) {
        const auto b = model.bus_index(c.bus_id);
        if (b == model.slack_index()) {
            out.warnings.push_back("generator at bus " + std::to_string(c.bus_id) + " is the slack; not re-typed");
        } else if (jac.magnitude_position(b)) {
            out.warnings.push_back("bus " + std::to_string(c.bus_id) + " is already PQ; not re-typed");
        } else {
            add.insert(b);
        }
    }
    if (add.empty()) {
        out.jac = jac;
        return out;
    }

    std::vector<std::size_t> mags = jac.magnitude_buses;
    mags.insert(mags.end(), add.begin(), add.end());
    std::sort(mags.begin(), mags.end());
    out.retyped.assign(add.begin(), add.end());

    const auto na = static_cast<Eigen::Index>(jac.angle_buses.size());
    const auto nm = static_cast<Eigen::Index>(mags.size());
    // Old index -> new index.
    std::vector<Eigen::Index> map(static_cast<std::size_t>(jac.size()));
    for (Eigen::Index i = 0; i < na; ++i) map[static_cast<std::size_t>(i)] = i;
    for (std::size_t k = 0, j = 0; k < mags.size(); ++k) {
        if (j < jac.magnitude_buses.size() && jac.magnitude_buses[j] == mags[k])
            map[static_cast<std::size_t>(na) + j++] = na + static_cast<Eigen::Index>(k);
    }

    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(na + nm, na + nm);
    for (Eigen::Index r = 0; r < jac.size(); ++r)
        for (Eigen::Index c = 0; c < jac.size(); ++c)
            m(map[static_cast<std::size_t>(r)], map[static_cast<std::size_t>(c)]) = jac.m(r, c);

    const Eigen::VectorXcd v =
        Eigen::Map<const Eigen::VectorXcd>(voltages.data(), static_cast<Eigen::Index>(voltages.size()));
    const auto d = power_derivatives(ybus.y, v);
    const auto bus_of = [&](Eigen::Index idx) { return idx < na ? jac.angle_buses[idx] : mags[idx - na]; };
    for (std::size_t k = 0; k < mags.size(); ++k) {
        if (!add.count(mags[k])) continue;
        const auto x = static_cast<Eigen::Index>(mags[k]);
        const Eigen::Index pos = na + static_cast<Eigen::Index>(k);
        for (Eigen::Index idx = 0; idx < na + nm; ++idx) {
            const auto j = static_cast<Eigen::Index>(bus_of(idx));
            // New Q_x row.
            m(pos, idx) = idx < na ? d.ds_dva(x, j).imag() : d.ds_dvm(x, j).imag();
            // New |V_x| column.
            m(idx, pos) = idx < na ? d.ds_dvm(j, x).real() : d.ds_dvm(j, x).imag();
        }
    }
    out.jac.m = std::move(m);
    out.jac.angle_buses = jac.angle_buses;
    out.jac.magnitude_buses = std::move(mags);
    return out;
}

std::optional<std::size_t> StabilityReport::critical_bus() const {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].status != VsiStatus::Ok) continue;
        if (!best || buses[i].wvsi > buses[*best].wvsi) best = i;
    }
    return best;
}

double StabilityReport::max_wvsi() const {
    auto b = critical_bus();
    return b ? buses[*b].wvsi : 0.0;
}

double reserve_weight(const NetworkModel& model, const EstimatedState& est, const CriticalGeneratorList& list,
                      std::vector<std::string>* warnings) {
    if (list.empty()) return 1.0;
    double reserve = 0.0, capacity = 0.0;
    for (const auto& c : list.items) {
        const auto& g = model.generators()[c.gen];
        if (c.side == RootSide::Upper) {
            reserve += est.rpr[c.gen];
            capacity += g.qmax;
        } else {
            reserve += std::max(0.0, est.gen_q[c.gen] - g.qmin);
            capacity += std::abs(g.qmin);
        }
    }
    if (capacity <= 0.0) {
        if (warnings) warnings->push_back("listed generators have no upper reactive capacity; w1 set to 0");
        return 0.0;
    }
    return std::clamp(reserve / capacity, 0.0, 1.0);
}

StabilityReport compute_wvsi(const NetworkModel& model, const EstimatedState& est, const VsiProfile& vsi,
                             const CriticalGeneratorList& list, const VsiProfile& vsi_u) {
    if (vsi.buses.size() != est.voltage.size() || vsi_u.buses.size() != est.voltage.size())
        throw ValidationError("index profiles do not match the state");
    StabilityReport r;
    r.timestamp = est.timestamp;
    r.q_total = est.q_total;
    r.critical = list;
    r.w1 = reserve_weight(model, est, list, &r.warnings);
    r.w2 = 1.0 - r.w1;
    r.buses.resize(vsi.buses.size());
    for (std::size_t b = 0; b < vsi.buses.size(); ++b) {
        auto& o = r.buses[b];
        const auto& p = vsi.buses[b];
        o.bus_id = p.bus_id;
        o.status = p.status;
        if (p.status != VsiStatus::Ok) continue;
        o.vsi = p.vsi;
        o.vsi_u = list.empty() || vsi_u.buses[b].status != VsiStatus::Ok ? p.vsi : vsi_u.buses[b].vsi;
        o.wvsi = list.empty() ? o.vsi : r.w1 * o.vsi + r.w2 * o.vsi_u;
    }
    return r;
}

StabilityReport assess_with_list(const NetworkModel& model, const EstimatedState& est, const LoadDirection& dir,
                                 const CriticalGeneratorList& list, const AssessmentOptions& options) {
    const auto ybus = build_ybus(model);
    const auto jac = build_jacobian(ybus, est.voltage, est.roles);
    const double alpha = default_alpha(est, dir, options.alpha_fraction);
    const auto vsi = compute_vsi(model, est, perturb(model, jac, ybus, est, dir, alpha));
    if (list.empty()) return compute_wvsi(model, est, vsi, list, vsi);

    auto aug = augment_jacobian(jac, list, model, ybus, est.voltage);
    VsiProfile vsi_u;
    std::vector<std::string> notes = aug.warnings;
    try {
        vsi_u = compute_vsi(model, est, perturb(model, aug.jac, ybus, est, dir, alpha));
    } catch (const SingularJacobianError&) {
        // Re-typed system sits at its own nose.
        vsi_u = vsi;
        for (auto& b : vsi_u.buses)
            if (b.status == VsiStatus::Ok) b.vsi = 1.0;
        notes.push_back("augmented Jacobian singular; anticipated index set to 1");
    }
    auto report = compute_wvsi(model, est, vsi, list, vsi_u);
    report.warnings.insert(report.warnings.begin(), notes.begin(), notes.end());
    return report;
}

StabilityReport assess(const NetworkModel& model, const MeasurementWindow& window, const LoadDirection& dir,
                       const AssessmentOptions& options) {
    if (window.empty()) throw ValidationError("empty measurement window");
    const auto& est = window.latest();
    std::vector<RprModel> models;
    std::vector<std::string> notes;
    const auto slack = model.slack_index();
    for (GeneratorId g = 0; g < model.generators().size(); ++g) {
        const auto& gen = model.generators()[g];
        if (!gen.in_service || model.bus_index(gen.bus) == slack) continue;
        try {
            models.push_back(fit_rpr_model(window, model, g, options.fit));
        } catch (const DegenerateWindowError&) {
            if (notes.empty()) notes.push_back("window has fewer than 3 distinct Q_T values; no reserve fits");
        }
    }
    const auto list = select_critical_generators(models, est.q_total, options.threshold);
    auto report = assess_with_list(model, est, dir, list, options);
    report.rpr_models = std::move(models);
    report.warnings.insert(report.warnings.end(), notes.begin(), notes.end());
    return report;
}

}  // namespace vsa
