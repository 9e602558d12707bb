#include "vsa/telemetry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace vsa {
namespace {

LimitState bus_limit_from_generators(const NetworkModel& model, std::size_t b, const std::vector<LimitState>& gl) {
    for (auto g : model.generators_at(b))
        if (gl[g] != LimitState::None) return gl[g];
    return LimitState::None;
}

/// Row of H for a measurement, as (bus, coefficient) pairs.
std::vector<std::pair<std::size_t, Complex>> measurement_row(const NetworkModel& model, const AdmittanceMatrix& y,
                                                             const PhasorMeasurement& m) {
    std::vector<std::pair<std::size_t, Complex>> row;
    switch (m.kind) {
        case PhasorKind::BusVoltage:
            row.emplace_back(m.element, Complex(1.0, 0.0));
            break;
        case PhasorKind::InjectionCurrent:
            for (std::size_t j = 0; j < model.bus_count(); ++j) {
                const Complex c = y.y(static_cast<Eigen::Index>(m.element), static_cast<Eigen::Index>(j));
                if (c != Complex(0.0, 0.0)) row.emplace_back(j, c);
            }
            break;
        case PhasorKind::BranchFromCurrent: {
            const auto& s = y.stamps.at(m.element);
            row.emplace_back(s.from, s.yff);
            row.emplace_back(s.to, s.yft);
            break;
        }
        case PhasorKind::BranchToCurrent: {
            const auto& s = y.stamps.at(m.element);
            row.emplace_back(s.from, s.ytf);
            row.emplace_back(s.to, s.ytt);
            break;
        }
    }
    return row;
}

Complex true_value(const AdmittanceMatrix& y, const Eigen::VectorXcd& v, PhasorKind kind, std::size_t element) {
    switch (kind) {
        case PhasorKind::BusVoltage: return v(static_cast<Eigen::Index>(element));
        case PhasorKind::InjectionCurrent: return (y.y.row(static_cast<Eigen::Index>(element)) * v)(0);
        case PhasorKind::BranchFromCurrent: {
            const auto& s = y.stamps.at(element);
            return s.yff * v(static_cast<Eigen::Index>(s.from)) + s.yft * v(static_cast<Eigen::Index>(s.to));
        }
        case PhasorKind::BranchToCurrent: {
            const auto& s = y.stamps.at(element);
            return s.ytf * v(static_cast<Eigen::Index>(s.from)) + s.ytt * v(static_cast<Eigen::Index>(s.to));
        }
    }
    return {};
}

void fill_derived(const NetworkModel& model, const AdmittanceMatrix& y, EstimatedState& est,
                  const std::vector<LimitState>& gen_limiter) {
    const auto n = model.bus_count();
    const Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(est.voltage.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXcd i = y.y * v;
    est.current.assign(i.data(), i.data() + n);

    est.roles = initial_roles(model);
    est.limits.assign(n, LimitState::None);
    for (std::size_t b = 0; b < n; ++b) {
        if (est.roles[b] != BusRole::PV) continue;
        const auto l = bus_limit_from_generators(model, b, gen_limiter);
        if (l != LimitState::None) {
            est.roles[b] = BusRole::PQ;
            est.limits[b] = l;
        }
    }
    est.rpr.assign(model.generators().size(), 0.0);
    for (std::size_t g = 0; g < model.generators().size(); ++g) {
        const auto& gen = model.generators()[g];
        if (!gen.in_service) continue;
        est.rpr[g] = std::clamp(gen.qmax - est.gen_q[g], 0.0, gen.qmax - gen.qmin);
    }
    est.q_total = 0.0;
    for (double q : est.load_q) est.q_total += q;
}

}  // namespace

OperatingState EstimatedState::as_operating_state() const {
    OperatingState st;
    const auto n = voltage.size();
    st.vm.resize(n);
    st.va.resize(n);
    st.p.resize(n);
    st.q.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        st.vm[i] = std::abs(voltage[i]);
        st.va[i] = std::arg(voltage[i]);
        const Complex s = voltage[i] * std::conj(current[i]);
        st.p[i] = s.real();
        st.q[i] = s.imag();
    }
    st.gen_q = gen_q;
    st.roles = roles;
    st.limits = limits;
    st.converged = true;
    return st;
}

PmuSnapshot synthesize_pmu(const NetworkModel& model, const OperatingState& state, const NoiseSpec& noise,
                           std::uint64_t seed, double timestamp, const MeasurementPlacement& placement) {
    const auto y = build_ybus(model);
    const auto vv = state.voltages();
    const Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(vv.data(), static_cast<Eigen::Index>(vv.size()));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto perturb_phasor = [&](Complex z) {
        if (noise.sigma_mag == 0.0 && noise.sigma_angle == 0.0) return z;
        const double mag = std::abs(z) * (1.0 + noise.sigma_mag * gauss(rng));
        const double ang = std::arg(z) + noise.sigma_angle * gauss(rng);
        return std::polar(mag, ang);
    };
    auto perturb_scalar = [&](double x) {
        if (noise.sigma_mag == 0.0) return x;
        return x * (1.0 + noise.sigma_mag * gauss(rng));
    };

    PmuSnapshot snap;
    snap.timestamp = timestamp;
    snap.noise = noise;
    snap.seed = seed;
    const auto n = model.bus_count();
    if (placement.voltages)
        for (std::size_t b = 0; b < n; ++b)
            snap.phasors.push_back({PhasorKind::BusVoltage, b, perturb_phasor(true_value(y, v, PhasorKind::BusVoltage, b))});
    if (placement.injection_currents)
        for (std::size_t b = 0; b < n; ++b)
            snap.phasors.push_back(
                {PhasorKind::InjectionCurrent, b, perturb_phasor(true_value(y, v, PhasorKind::InjectionCurrent, b))});
    if (placement.branch_currents) {
        for (BranchId k = 0; k < model.branches().size(); ++k) {
            if (!model.branches()[k].in_service) continue;
            snap.phasors.push_back(
                {PhasorKind::BranchFromCurrent, k, perturb_phasor(true_value(y, v, PhasorKind::BranchFromCurrent, k))});
            snap.phasors.push_back(
                {PhasorKind::BranchToCurrent, k, perturb_phasor(true_value(y, v, PhasorKind::BranchToCurrent, k))});
        }
    }

    snap.gen_q.resize(model.generators().size());
    snap.gen_limiter.assign(model.generators().size(), LimitState::None);
    for (std::size_t g = 0; g < model.generators().size(); ++g) {
        snap.gen_q[g] = perturb_scalar(state.gen_q.empty() ? 0.0 : state.gen_q[g]);
        if (model.generators()[g].in_service)
            snap.gen_limiter[g] = state.limits[model.bus_index(model.generators()[g].bus)];
    }
    snap.load_p.resize(n);
    snap.load_q.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
        snap.load_p[b] = perturb_scalar(model.buses()[b].pd);
        snap.load_q[b] = perturb_scalar(model.buses()[b].qd);
    }
    return snap;
}

EstimatedState estimate_state(const PmuSnapshot& snapshot, const NetworkModel& model) {
    const auto n = model.bus_count();
    const auto y = build_ybus(model);
    const auto m = snapshot.phasors.size();

    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    Eigen::VectorXcd z(static_cast<Eigen::Index>(m));
    Eigen::VectorXd w(static_cast<Eigen::Index>(m));
    const double var_rel = snapshot.noise.sigma_mag * snapshot.noise.sigma_mag +
                           snapshot.noise.sigma_angle * snapshot.noise.sigma_angle;
    for (std::size_t r = 0; r < m; ++r) {
        const auto& meas = snapshot.phasors[r];
        for (auto [col, c] : measurement_row(model, y, meas))
            h(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = c;
        z(static_cast<Eigen::Index>(r)) = meas.value;
        // Floor keeps near-zero currents (unloaded buses) from dominating the fit.
        const double mag = std::max(std::abs(meas.value), 1e-3);
        w(static_cast<Eigen::Index>(r)) = var_rel > 0.0 ? 1.0 / (var_rel * mag * mag) : 1.0;
    }

    std::vector<int> missing;
    for (std::size_t b = 0; b < n; ++b)
        if (m == 0 || h.col(static_cast<Eigen::Index>(b)).cwiseAbs().maxCoeff() == 0.0) missing.push_back(model.buses()[b].id);
    if (m == 0 || !missing.empty()) {
        std::string ids;
        for (int id : missing) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
        throw UnobservableError(missing, "measurement set does not observe bus(es) " + ids);
    }

    const Eigen::MatrixXcd hw = h.adjoint() * w.asDiagonal();
    const Eigen::MatrixXcd gain = hw * h;
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(gain);
    if (qr.rank() < static_cast<Eigen::Index>(n)) {
        throw UnobservableError({}, "measurement model is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                                        std::to_string(n) + ")");
    }
    const Eigen::VectorXcd vhat = qr.solve(hw * z);

    EstimatedState est;
    est.timestamp = snapshot.timestamp;
    est.voltage.assign(vhat.data(), vhat.data() + n);
    const Eigen::VectorXcd res = z - h * vhat;
    est.residual = std::sqrt((res.cwiseAbs2().cwiseProduct(w)).sum());
    est.load_p = snapshot.load_p;
    est.load_q = snapshot.load_q;
    est.gen_q = snapshot.gen_q;
    fill_derived(model, y, est, snapshot.gen_limiter);
    return est;
}

EstimatedState exact_estimate(const NetworkModel& model, const OperatingState& state, double timestamp) {
    const auto y = build_ybus(model);
    EstimatedState est;
    est.timestamp = timestamp;
    est.voltage = state.voltages();
    est.load_p.resize(model.bus_count());
    est.load_q.resize(model.bus_count());
    for (std::size_t b = 0; b < model.bus_count(); ++b) {
        est.load_p[b] = model.buses()[b].pd;
        est.load_q[b] = model.buses()[b].qd;
    }
    est.gen_q = state.gen_q;
    std::vector<LimitState> gl(model.generators().size(), LimitState::None);
    for (std::size_t g = 0; g < gl.size(); ++g)
        if (model.generators()[g].in_service) gl[g] = state.limits[model.bus_index(model.generators()[g].bus)];
    fill_derived(model, y, est, gl);
    return est;
}

// ---------------------------------------------------------------------------

MeasurementWindow::MeasurementWindow(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ValidationError("window capacity must be at least 1");
}

void MeasurementWindow::append(EstimatedState est) {
    if (!items_.empty() && !(est.timestamp > items_.back().timestamp))
        throw ValidationError("out-of-order timestamp " + std::to_string(est.timestamp) + " (latest is " +
                              std::to_string(items_.back().timestamp) + ")");
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(est));
}

const EstimatedState& MeasurementWindow::latest() const {
    if (items_.empty()) throw ValidationError("measurement window is empty");
    return items_.back();
}

void SharedWindow::append(EstimatedState est) {
    std::lock_guard lock(mutex_);
    window_.append(std::move(est));
}

MeasurementWindow SharedWindow::snapshot() const {
    std::lock_guard lock(mutex_);
    return window_;
}

// ---------------------------------------------------------------------------
// Stream files

namespace {

const char* kind_tag(PhasorKind k) {
    switch (k) {
        case PhasorKind::BusVoltage: return "V";
        case PhasorKind::InjectionCurrent: return "I";
        case PhasorKind::BranchFromCurrent: return "IF";
        case PhasorKind::BranchToCurrent: return "IT";
    }
    return "?";
}

const char* limit_tag(LimitState l) {
    switch (l) {
        case LimitState::None: return "0";
        case LimitState::AtMax: return "1";
        case LimitState::AtMin: return "-1";
    }
    return "0";
}

}  // namespace

void write_stream(std::ostream& out, const std::vector<PmuSnapshot>& snapshots) {
    out << "timestamp,kind,element,a,b\n";
    out << std::setprecision(17);
    for (const auto& s : snapshots) {
        out << s.timestamp << ",NOISE," << s.seed << ',' << s.noise.sigma_mag << ',' << s.noise.sigma_angle << '\n';
        for (const auto& p : s.phasors)
            out << s.timestamp << ',' << kind_tag(p.kind) << ',' << p.element << ',' << p.value.real() << ','
                << p.value.imag() << '\n';
        for (std::size_t g = 0; g < s.gen_q.size(); ++g)
            out << s.timestamp << ",QG," << g << ',' << s.gen_q[g] << ',' << limit_tag(s.gen_limiter[g]) << '\n';
        for (std::size_t b = 0; b < s.load_p.size(); ++b)
            out << s.timestamp << ",LOAD," << b << ',' << s.load_p[b] << ',' << s.load_q[b] << '\n';
    }
}

std::vector<PmuSnapshot> read_stream(std::istream& in, const NetworkModel& model) {
    std::vector<PmuSnapshot> out;
    std::string line;
    int line_no = 0;
    std::optional<double> current_ts;
    auto start_snapshot = [&](double ts) {
        PmuSnapshot s;
        s.timestamp = ts;
        s.gen_q.assign(model.generators().size(), 0.0);
        s.gen_limiter.assign(model.generators().size(), LimitState::None);
        s.load_p.assign(model.bus_count(), 0.0);
        s.load_q.assign(model.bus_count(), 0.0);
        out.push_back(std::move(s));
        current_ts = ts;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (line_no == 1 && line.rfind("timestamp", 0) == 0) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 5) throw ParseError(line_no, "row", "expected 5 fields");
        double ts = 0, a = 0, b = 0;
        std::size_t el = 0;
        try {
            ts = std::stod(f[0]);
            el = std::stoull(f[2]);
            a = std::stod(f[3]);
            b = std::stod(f[4]);
        } catch (const std::exception&) {
            throw ParseError(line_no, "row", "non-numeric field");
        }
        if (!current_ts || ts != *current_ts) {
            if (current_ts && ts < *current_ts) throw ParseError(line_no, "timestamp", "timestamps must not decrease");
            start_snapshot(ts);
        }
        auto& s = out.back();
        const std::string& kind = f[1];
        auto check_bus = [&] {
            if (el >= model.bus_count()) throw ParseError(line_no, "element", "bus position out of range");
        };
        auto check_branch = [&] {
            if (el >= model.branches().size()) throw ParseError(line_no, "element", "branch id out of range");
        };
        if (kind == "NOISE") {
            s.seed = el;
            s.noise = {a, b};
        } else if (kind == "V") {
            check_bus();
            s.phasors.push_back({PhasorKind::BusVoltage, el, {a, b}});
        } else if (kind == "I") {
            check_bus();
            s.phasors.push_back({PhasorKind::InjectionCurrent, el, {a, b}});
        } else if (kind == "IF") {
            check_branch();
            s.phasors.push_back({PhasorKind::BranchFromCurrent, el, {a, b}});
        } else if (kind == "IT") {
            check_branch();
            s.phasors.push_back({PhasorKind::BranchToCurrent, el, {a, b}});
        } else if (kind == "QG") {
            if (el >= s.gen_q.size()) throw ParseError(line_no, "element", "generator id out of range");
            s.gen_q[el] = a;
            s.gen_limiter[el] = b > 0.5 ? LimitState::AtMax : (b < -0.5 ? LimitState::AtMin : LimitState::None);
        } else if (kind == "LOAD") {
            check_bus();
            s.load_p[el] = a;
            s.load_q[el] = b;
        } else {
            throw ParseError(line_no, "kind", "unknown row kind '" + kind + "'");
        }
    }
    return out;
}

}  // namespace vsa
