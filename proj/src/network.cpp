#include "vsa/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <queue>

namespace vsa {

std::string_view to_string(BusType t) {
    switch (t) {
        case BusType::PQ: return "PQ";
        case BusType::PV: return "PV";
        case BusType::Slack: return "slack";
    }
    return "?";
}

NetworkModel NetworkModel::create(double base_mva, std::vector<Bus> buses, std::vector<Branch> branches,
                                  std::vector<Generator> generators, std::string name) {
    NetworkModel m;
    m.name_ = std::move(name);
    m.base_mva_ = base_mva;
    m.buses_ = std::move(buses);
    m.branches_ = std::move(branches);
    m.generators_ = std::move(generators);
    m.validate_and_index();
    return m;
}

void NetworkModel::validate_and_index() {
    if (!(base_mva_ > 0.0)) throw ValidationError("base MVA must be positive");
    if (buses_.empty()) throw ValidationError("case has no buses");

    index_.clear();
    int slack_count = 0;
    for (std::size_t i = 0; i < buses_.size(); ++i) {
        const auto& b = buses_[i];
        if (!index_.emplace(b.id, i).second)
            throw ValidationError("duplicate bus id " + std::to_string(b.id));
        if (b.type == BusType::Slack) {
            ++slack_count;
            slack_ = i;
        }
        if (!std::isfinite(b.pd) || !std::isfinite(b.qd) || !std::isfinite(b.gs) || !std::isfinite(b.bs))
            throw ValidationError("bus " + std::to_string(b.id) + " has non-finite data");
    }
    if (slack_count != 1)
        throw ValidationError("exactly one slack bus required, found " + std::to_string(slack_count));

    for (std::size_t k = 0; k < branches_.size(); ++k) {
        const auto& br = branches_[k];
        const std::string tag = "branch " + std::to_string(k) + " (" + std::to_string(br.from) + "-" +
                                std::to_string(br.to) + ")";
        if (!has_bus(br.from) || !has_bus(br.to)) throw ValidationError(tag + " references an unknown bus");
        if (br.from == br.to) throw ValidationError(tag + " has identical endpoints");
        if (br.r == 0.0 && br.x == 0.0) throw ValidationError(tag + " has zero series impedance");
        if (!(br.ratio > 0.0)) throw ValidationError(tag + " has a non-positive tap ratio");
        if (br.scale < 0.0 || br.scale > 1.0) throw ValidationError(tag + " has admittance scale outside [0,1]");
    }

    gens_at_.assign(buses_.size(), {});
    for (std::size_t g = 0; g < generators_.size(); ++g) {
        const auto& gen = generators_[g];
        const std::string tag = "generator " + std::to_string(g) + " at bus " + std::to_string(gen.bus);
        if (!has_bus(gen.bus)) throw ValidationError(tag + " references an unknown bus");
        if (gen.qmin > gen.qmax) throw ValidationError(tag + " has Qmin > Qmax");
        if (!(gen.vsetpoint > 0.0)) throw ValidationError(tag + " has a non-positive voltage setpoint");
        if (gen.in_service) gens_at_[index_.at(gen.bus)].push_back(g);
    }
}

std::size_t NetworkModel::bus_index(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("unknown bus id " + std::to_string(id));
    return it->second;
}

std::string NetworkModel::branch_label(BranchId id) const {
    const auto& br = branches_.at(id);
    int circuit = 1;
    for (BranchId k = 0; k < id; ++k) {
        const auto& o = branches_[k];
        if ((o.from == br.from && o.to == br.to) || (o.from == br.to && o.to == br.from)) ++circuit;
    }
    std::string s = std::to_string(br.from) + "-" + std::to_string(br.to);
    if (circuit > 1) s += "#" + std::to_string(circuit);
    return s;
}

std::optional<BranchId> NetworkModel::find_branch(std::string_view label) const {
    auto parse_int = [](std::string_view s, int& out) {
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        return ec == std::errc{} && p == s.data() + s.size();
    };
    const auto dash = label.find('-');
    if (dash == std::string_view::npos || dash == 0) {
        int idx = 0;
        if (parse_int(label, idx) && idx >= 0 && static_cast<std::size_t>(idx) < branches_.size())
            return static_cast<BranchId>(idx);
        return std::nullopt;
    }
    std::string_view rest = label.substr(dash + 1);
    int circuit = 1;
    if (auto hash = rest.find('#'); hash != std::string_view::npos) {
        if (!parse_int(rest.substr(hash + 1), circuit)) return std::nullopt;
        rest = rest.substr(0, hash);
    }
    int f = 0, t = 0;
    if (!parse_int(label.substr(0, dash), f) || !parse_int(rest, t)) return std::nullopt;
    int seen = 0;
    for (BranchId k = 0; k < branches_.size(); ++k) {
        const auto& o = branches_[k];
        if ((o.from == f && o.to == t) || (o.from == t && o.to == f)) {
            if (++seen == circuit) return k;
        }
    }
    return std::nullopt;
}

NetworkModel NetworkModel::with_buses(std::vector<Bus> buses) const {
    return create(base_mva_, std::move(buses), branches_, generators_, name_);
}
NetworkModel NetworkModel::with_branches(std::vector<Branch> branches) const {
    return create(base_mva_, buses_, std::move(branches), generators_, name_);
}
NetworkModel NetworkModel::with_generators(std::vector<Generator> generators) const {
    return create(base_mva_, buses_, branches_, std::move(generators), name_);
}

BranchStamp branch_stamp(const NetworkModel& model, BranchId id, bool apply_scale) {
    const auto& br = model.branches().at(id);
    BranchStamp s;
    s.from = model.bus_index(br.from);
    s.to = model.bus_index(br.to);
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex charging(0.0, br.b / 2.0);
    const Complex tap = std::polar(br.ratio, br.shift_deg * std::numbers::pi / 180.0);
    const Complex ytt = ys + charging;
    s.yff = ytt / (tap * std::conj(tap));
    s.yft = -ys / std::conj(tap);
    s.ytf = -ys / tap;
    s.ytt = ytt;
    if (apply_scale) {
        const double f = br.in_service ? br.scale : 0.0;
        s.yff *= f;
        s.yft *= f;
        s.ytf *= f;
        s.ytt *= f;
    }
    return s;
}

AdmittanceMatrix build_ybus(const NetworkModel& model) {
    const auto n = static_cast<Eigen::Index>(model.bus_count());
    AdmittanceMatrix a;
    a.y = Eigen::MatrixXcd::Zero(n, n);
    a.stamps.reserve(model.branches().size());
    for (BranchId k = 0; k < model.branches().size(); ++k) {
        BranchStamp s = branch_stamp(model, k);
        const auto f = static_cast<Eigen::Index>(s.from);
        const auto t = static_cast<Eigen::Index>(s.to);
        a.y(f, f) += s.yff;
        a.y(f, t) += s.yft;
        a.y(t, f) += s.ytf;
        a.y(t, t) += s.ytt;
        a.stamps.push_back(s);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = model.buses()[static_cast<std::size_t>(i)];
        a.y(i, i) += Complex(b.gs, b.bs);
    }
    return a;
}

NetworkModel apply_outage(const NetworkModel& model, BranchId branch, double severity) {
    if (branch >= model.branches().size())
        throw ValidationError("unknown branch id " + std::to_string(branch));
    if (!(severity >= 0.0 && severity <= 1.0)) throw ValidationError("outage severity K must lie in [0,1]");
    auto branches = model.branches();
    auto& br = branches[branch];
    if (!br.in_service || br.scale == 0.0)
        throw ValidationError("branch " + model.branch_label(branch) + " is already out of service");
    br.scale *= (1.0 - severity);
    if (severity == 1.0) {
        br.in_service = false;
        br.scale = 0.0;
    }
    return model.with_branches(std::move(branches));
}

std::vector<std::size_t> islanded_buses(const NetworkModel& model) {
    const std::size_t n = model.bus_count();
    std::vector<std::vector<std::size_t>> adj(n);
    for (const auto& br : model.branches()) {
        if (!br.in_service || br.scale == 0.0) continue;
        const auto f = model.bus_index(br.from);
        const auto t = model.bus_index(br.to);
        adj[f].push_back(t);
        adj[t].push_back(f);
    }
    std::vector<bool> seen(n, false);
    std::queue<std::size_t> q;
    q.push(model.slack_index());
    seen[model.slack_index()] = true;
    while (!q.empty()) {
        const auto u = q.front();
        q.pop();
        for (auto v : adj[u]) {
            if (!seen[v]) {
                seen[v] = true;
                q.push(v);
            }
        }
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
        if (!seen[i]) out.push_back(i);
    return out;
}

}  // namespace vsa
