#include "vsa/runner.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace vsa {

namespace fs = std::filesystem;

void ScenarioConfig::validate() const {
    if (case_path.empty()) throw ValidationError("config: case path missing");
    if (ramp.has_value() == stream_path.has_value()) throw ValidationError("config: give exactly one of ramp or stream");
    if (ramp) {
        if (!(ramp->step > 0.0)) throw ValidationError("config: ramp step must be positive");
        if (!(ramp->k_end >= ramp->k_start) || !(ramp->k_start > 0.0))
            throw ValidationError("config: ramp needs 0 < k_start <= k_end");
    }
    if (window < 3) throw ValidationError("config: window length must be at least 3");
    const auto in_range = [](double x) { return x > 0.0 && x < 2.0; };
    if (screening_threshold && !in_range(*screening_threshold))
        throw ValidationError("config: screening threshold must lie in (0, 2)");
    if (!in_range(band_threshold)) throw ValidationError("config: band threshold must lie in (0, 2)");
    if (!(alpha_fraction > 0.0)) throw ValidationError("config: alpha fraction must be positive");
    if (!(noise.sigma_mag >= 0.0 && noise.sigma_angle >= 0.0)) throw ValidationError("config: noise must be non-negative");
    if (!(replay_rate_hz > 0.0)) throw ValidationError("config: replay rate must be positive");
    if (port < 0 || port > 65535) throw ValidationError("config: port out of range");
}

ScenarioConfig ScenarioConfig::from_json(const Json& j) {
    ScenarioConfig c;
    try {
        c.case_path = j.at("case").get<std::string>();
        if (j.contains("ramp")) {
            const auto& r = j.at("ramp");
            c.ramp = RampSpec{r.value("k_start", 1.0), r.value("k_end", 2.0), r.value("step", 0.01)};
        }
        if (j.contains("stream")) c.stream_path = j.at("stream").get<std::string>();
        if (j.contains("noise")) {
            const auto& n = j.at("noise");
            c.noise_enabled = n.value("enabled", true);
            c.noise.sigma_mag = n.value("sigma_mag", c.noise.sigma_mag);
            c.noise.sigma_angle = n.value("sigma_angle", c.noise.sigma_angle);
        }
        c.seed = j.value("seed", c.seed);
        c.window = j.value("window", c.window);
        if (j.contains("screening_threshold") && !j.at("screening_threshold").is_null())
            c.screening_threshold = j.at("screening_threshold").get<double>();
        c.band_threshold = j.value("band_threshold", c.band_threshold);
        c.alpha_fraction = j.value("alpha_fraction", c.alpha_fraction);
        if (j.contains("contingencies")) {
            const auto& cs = j.at("contingencies");
            if (cs.is_string()) c.contingencies = {cs.get<std::string>()};
            else c.contingencies = cs.get<std::vector<std::string>>();
        }
        c.security_every_snapshot = j.value("security_every_snapshot", false);
        c.output_dir = j.value("output_dir", std::string{});
        c.port = j.value("port", c.port);
        c.replay_rate_hz = j.value("replay_rate_hz", c.replay_rate_hz);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

ScenarioConfig ScenarioConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
    auto c = from_json(j);
    const auto base = path.parent_path();
    const auto resolve = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(c.case_path);
    if (c.stream_path) resolve(*c.stream_path);
    resolve(c.output_dir);
    return c;
}

Json ScenarioConfig::to_json() const {
    Json j{{"case", case_path},
           {"noise", {{"enabled", noise_enabled}, {"sigma_mag", noise.sigma_mag}, {"sigma_angle", noise.sigma_angle}}},
           {"seed", seed},
           {"window", window},
           {"screening_threshold", screening_threshold ? Json(*screening_threshold) : Json(nullptr)},
           {"band_threshold", band_threshold},
           {"alpha_fraction", alpha_fraction},
           {"contingencies", contingencies},
           {"security_every_snapshot", security_every_snapshot},
           {"output_dir", output_dir},
           {"port", port},
           {"replay_rate_hz", replay_rate_hz}};
    if (ramp) j["ramp"] = {{"k_start", ramp->k_start}, {"k_end", ramp->k_end}, {"step", ramp->step}};
    if (stream_path) j["stream"] = *stream_path;
    return j;
}

std::string ScenarioConfig::hash() const {
    const auto text = to_json().dump();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void SessionLog::append(SessionEntry entry) {
    if (!entries_.empty() && entry.timestamp < entries_.back().timestamp)
        throw ValidationError("session log timestamps must not decrease");
    entries_.push_back(std::move(entry));
}

std::string SessionLog::serialize() const {
    std::string out = Json{{"config_hash", config_hash_}, {"seed", seed_}, {"entries", entries_.size()}}.dump();
    out += '\n';
    for (const auto& e : entries_) {
        out += Json{{"snapshot", e.snapshot}, {"timestamp", e.timestamp}, {"kind", e.kind}, {"payload", e.payload}}.dump();
        out += '\n';
    }
    return out;
}

std::vector<BranchId> resolve_contingencies(const NetworkModel& model, const std::vector<std::string>& labels) {
    if (labels.size() == 1 && (labels[0] == "all" || labels[0] == "all-n1")) return all_branches(model);
    std::vector<BranchId> out;
    for (const auto& l : labels) {
        auto b = model.find_branch(l);
        if (!b) throw ValidationError("unknown branch '" + l + "'");
        out.push_back(*b);
    }
    return out;
}

namespace {

NetworkModel with_estimated_loads(const NetworkModel& base, const EstimatedState& est) {
    auto buses = base.buses();
    for (std::size_t i = 0; i < buses.size(); ++i) {
        buses[i].pd = est.load_p[i];
        buses[i].qd = est.load_q[i];
    }
    return base.with_buses(std::move(buses));
}

std::string fmt(double x) {
    if (!std::isfinite(x)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

void write_outputs(const fs::path& dir, const ScenarioResult& r) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "reports.csv");
        out << "snapshot,timestamp,k,q_total,critical_bus,max_vsi,max_wvsi,w1,critical_generators\n";
        for (const auto& s : r.snapshots) {
            const auto& rep = s.report;
            double max_vsi = 0.0;
            for (const auto& b : rep.buses)
                if (b.status == VsiStatus::Ok) max_vsi = std::max(max_vsi, b.vsi);
            const auto cb = rep.critical_bus();
            std::string gens;
            for (const auto& g : rep.critical.items) gens += (gens.empty() ? "" : ";") + std::to_string(g.bus_id);
            out << s.id << ',' << fmt(rep.timestamp) << ',' << fmt(s.k) << ',' << fmt(rep.q_total) << ','
                << (cb ? std::to_string(rep.buses[*cb].bus_id) : "") << ',' << fmt(max_vsi) << ','
                << fmt(rep.max_wvsi()) << ',' << fmt(rep.w1) << ',' << gens << '\n';
        }
    }
    {
        std::ofstream out(dir / "buses.csv");
        out << "snapshot,k,bus,status,vsi,vsi_u,wvsi\n";
        for (const auto& s : r.snapshots)
            for (const auto& b : s.report.buses)
                out << s.id << ',' << fmt(s.k) << ',' << b.bus_id << ',' << to_string(b.status) << ',' << fmt(b.vsi)
                    << ',' << fmt(b.vsi_u) << ',' << fmt(b.wvsi) << '\n';
    }
    {
        std::ofstream out(dir / "session.jsonl");
        out << r.log.serialize();
    }
    if (!r.verdicts.empty()) {
        Json arr = Json::array();
        for (const auto& v : r.verdicts) arr.push_back(verdict_json(v, r.screening_threshold));
        std::ofstream(dir / "verdicts.json") << arr.dump(2) << '\n';
        std::ofstream out(dir / "ranking.csv");
        out << "rank,branch,label,outcome,max_wvsi,critical,critical_bus\n";
        for (const auto& v : r.verdicts)
            out << v.rank << ',' << v.branch << ',' << v.label << ',' << to_string(v.outcome) << ','
                << fmt(v.max_wvsi) << ',' << (v.critical ? 1 : 0) << ','
                << (v.critical_bus ? std::to_string(*v.critical_bus) : "") << '\n';
    }
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& config, const SnapshotSink& sink) {
    config.validate();
    ScenarioResult result;
    result.base = load_case_file(config.case_path);
    const auto& base = result.base;
    result.screening_threshold = config.screening_threshold.value_or(default_screening_threshold(base));
    result.log = SessionLog(config.hash(), config.seed);
    const auto branches = resolve_contingencies(base, config.contingencies);

    AssessmentOptions aopt;
    aopt.threshold = config.band_threshold;
    aopt.alpha_fraction = config.alpha_fraction;
    ScreeningOptions sopt;
    sopt.threshold = result.screening_threshold;
    sopt.assessment = aopt;

    MeasurementWindow window(config.window);
    const auto noise = config.noise_enabled ? config.noise : NoiseSpec::none();
    const auto base_dir = LoadDirection::pq_loads(base);

    const auto security = [&](const Snapshot& s) {
        if (branches.empty()) return;
        auto verdicts = rank_contingencies(screen_contingencies(s.model, s.state, branches, s.dir, sopt));
        Json arr = Json::array();
        for (const auto& v : verdicts) arr.push_back(v);
        result.log.append({s.id, s.report.timestamp, "verdicts", std::move(arr)});
        result.verdicts = std::move(verdicts);
    };

    const auto finish = [&](Snapshot s) {
        result.log.append({s.id, s.report.timestamp, "report", s.report});
        if (config.security_every_snapshot) security(s);
        if (sink) sink(s);
        result.snapshots.push_back(std::move(s));
    };

    std::size_t id = 0;
    if (config.ramp) {
        const auto& r = *config.ramp;
        const auto count = static_cast<std::size_t>(std::floor((r.k_end - r.k_start) / r.step + 1e-9)) + 1;
        OperatingState prev;
        bool have = false;
        for (std::size_t i = 0; i < count; ++i) {
            const double k = r.k_start + static_cast<double>(i) * r.step;
            const double t = static_cast<double>(i) / config.replay_rate_hz;
            Snapshot s;
            s.id = id;
            s.k = k;
            s.model = scale_loading(base, k, base_dir);
            s.state = solve_power_flow(s.model, {}, have ? &prev : nullptr);
            if (!s.state.converged) {
                result.log.append({id, t, "error", Json{{"k", k}, {"message", "power flow did not converge"}}});
                break;
            }
            prev = s.state;
            have = true;
            try {
                auto est = config.noise_enabled
                               ? estimate_state(synthesize_pmu(s.model, s.state, noise, config.seed + i, t), s.model)
                               : exact_estimate(s.model, s.state, t);
                window.append(std::move(est));
                s.dir = LoadDirection::pq_loads(s.model);
                s.report = assess(s.model, window, s.dir, aopt);
            } catch (const Error& e) {
                result.log.append({id, t, "error", Json{{"k", k}, {"message", e.what()}}});
                continue;
            }
            ++id;
            finish(std::move(s));
        }
    } else {
        std::ifstream in(*config.stream_path);
        if (!in) throw ValidationError("cannot open stream " + *config.stream_path);
        const auto snaps = read_stream(in, base);
        for (const auto& snap : snaps) {
            try {
                auto est = estimate_state(snap, base);
                Snapshot s;
                s.id = id;
                s.k = std::numeric_limits<double>::quiet_NaN();
                s.model = with_estimated_loads(base, est);
                s.state = est.as_operating_state();
                s.dir = LoadDirection::pq_loads(s.model);
                window.append(std::move(est));
                s.report = assess(s.model, window, s.dir, aopt);
                ++id;
                finish(std::move(s));
            } catch (const Error& e) {
                result.log.append({id, snap.timestamp, "error", Json{{"message", e.what()}}});
            }
        }
    }
    if (!config.security_every_snapshot && !result.snapshots.empty()) security(result.snapshots.back());

    if (!config.output_dir.empty()) write_outputs(config.output_dir, result);
    return result;
}

}  // namespace vsa
