#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "vsa/cpf.hpp"
#include "vsa/runner.hpp"
#include "vsa/serialize.hpp"
#include "vsa/service.hpp"

using namespace vsa;

namespace {

std::string num(double x) {
    if (!std::isfinite(x)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

// Writes to `path`, or stdout when empty or "-".
class Output {
  public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path);
            if (!file_) throw ValidationError("cannot write " + path);
        }
    }
    std::ostream& get() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

  private:
    std::ofstream file_;
};

struct CaseArgs {
    std::string path;
    double k = 1.0;
    bool no_qlim = false;  // only used where a subcommand registers the flag
};

void add_case(CLI::App* app, CaseArgs& a, bool with_k = true) {
    app->add_option("--case", a.path, "MATPOWER .m or JSON case file")->required()->check(CLI::ExistingFile);
    if (with_k) app->add_option("--k", a.k, "loading multiplier of the base load")->check(CLI::PositiveNumber);
}

struct Loaded {
    NetworkModel base;
    NetworkModel model;
    LoadDirection dir;
};

Loaded load_at(const CaseArgs& a) {
    Loaded l;
    l.base = load_case_file(a.path);
    l.model = scale_loading(l.base, a.k, LoadDirection::pq_loads(l.base));
    l.dir = LoadDirection::pq_loads(l.model);
    return l;
}

OperatingState solve_or_throw(const NetworkModel& m, bool qlim = true) {
    PowerFlowOptions o;
    o.enforce_q_limits = qlim;
    auto st = solve_power_flow(m, o);
    if (!st.converged) throw Error("power flow did not converge");
    return st;
}

std::vector<double> parse_ks(const std::vector<std::string>& items) {
    std::vector<double> out;
    for (const auto& s : items) out.push_back(std::stod(s));
    return out;
}

int cmd_pf(const CaseArgs& a) {
    const auto l = load_at(a);
    PowerFlowOptions o;
    o.enforce_q_limits = !a.no_qlim;
    const auto st = solve_power_flow(l.model, o);
    Json j = state_json(l.model, st);
    j["case"] = l.base.name();
    j["k"] = a.k;
    std::cout << j.dump(2) << '\n';
    return st.converged ? 0 : 2;
}

int cmd_ramp(const CaseArgs& a, double kmax, double step, const std::string& out_path) {
    const auto base = load_case_file(a.path);
    const auto dir = LoadDirection::pq_loads(base);
    Output out(out_path);
    auto& os = out.get();
    os << "k";
    for (const auto& b : base.buses()) os << ",V" << b.id;
    for (std::size_t g = 0; g < base.generators().size(); ++g) os << ",Qg" << g << "@" << base.generators()[g].bus;
    os << '\n';
    OperatingState prev;
    bool have = false;
    for (std::size_t i = 0;; ++i) {
        const double k = a.k + static_cast<double>(i) * step;
        if (k > kmax + 1e-9) break;
        auto st = solve_power_flow(scale_loading(base, k, dir), {}, have ? &prev : nullptr);
        if (!st.converged) break;
        os << num(k);
        for (double v : st.vm) os << ',' << num(v);
        for (double q : st.gen_q) os << ',' << num(q);
        os << '\n';
        prev = std::move(st);
        have = true;
    }
    return 0;
}

int cmd_cpf(const CaseArgs& a, const std::string& outage, const std::string& csv_path) {
    auto l = load_at(a);
    auto model = l.model;
    if (!outage.empty()) {
        auto b = model.find_branch(outage);
        if (!b) throw ValidationError("unknown branch '" + outage + "'");
        model = apply_outage(model, *b, 1.0);
    }
    Json summary{{"case", l.base.name()}, {"k", a.k}, {"outage", outage.empty() ? Json(nullptr) : Json(outage)}};
    try {
        const auto trace = trace_pv_curve(model, l.dir, {});
        Output out(csv_path);
        auto& os = out.get();
        os << "lambda";
        for (const auto& b : model.buses()) os << ",V" << b.id;
        os << '\n';
        for (const auto& p : trace.points) {
            os << num(p.lambda);
            for (double v : p.state.vm) os << ',' << num(v);
            os << '\n';
        }
        summary["lambda_max"] = trace.lambda_max;
        summary["delta_lambda"] = margin(trace);
        summary["reached_cap"] = trace.reached_cap;
        auto cb = critical_bus(model, trace);
        summary["critical_bus"] = cb ? Json(model.buses()[*cb].id) : Json(nullptr);
    } catch (const BaseCaseDivergenceError&) {
        summary["lambda_max"] = 0.0;
        summary["delta_lambda"] = 0.0;
        summary["critical_bus"] = nullptr;
        summary["note"] = "starting point does not converge";
    }
    (csv_path.empty() || csv_path == "-" ? std::cerr : std::cout) << summary.dump(2) << '\n';
    return 0;
}

int cmd_vsi(const CaseArgs& a) {
    const auto l = load_at(a);
    const auto st = solve_or_throw(l.model);
    const auto est = exact_estimate(l.model, st);
    const auto rep = assess_with_list(l.model, est, l.dir, {}, {});
    Json j = report_summary(rep);
    j["case"] = l.base.name();
    j["k"] = a.k;
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_vsi_ramp(const CaseArgs& a, double kmax, double step, const std::string& out_path) {
    const auto base = load_case_file(a.path);
    const auto dir0 = LoadDirection::pq_loads(base);
    Output out(out_path);
    auto& os = out.get();
    os << "k,critical_bus,max_vsi";
    for (const auto& b : base.buses()) os << ",VSI" << b.id;
    os << '\n';
    OperatingState prev;
    bool have = false;
    for (std::size_t i = 0;; ++i) {
        const double k = a.k + static_cast<double>(i) * step;
        if (k > kmax + 1e-9) break;
        const auto m = scale_loading(base, k, dir0);
        auto st = solve_power_flow(m, {}, have ? &prev : nullptr);
        if (!st.converged) break;
        const auto prof = hybrid_vsi(m, exact_estimate(m, st), LoadDirection::pq_loads(m));
        os << num(k) << ',' << (prof.argmax() ? std::to_string(m.buses()[*prof.argmax()].id) : "") << ',' << num(prof.max());
        for (const auto& b : prof.buses) os << ',' << (b.status == VsiStatus::Ok ? num(b.vsi) : "");
        os << '\n';
        prev = std::move(st);
        have = true;
    }
    return 0;
}

ScenarioConfig stream_config(const std::string& case_path, const std::string& stream, std::size_t window) {
    ScenarioConfig c;
    c.case_path = case_path;
    c.stream_path = stream;
    c.window = window;
    return c;
}

int cmd_wvsi(const std::string& case_path, const std::string& stream, std::size_t window) {
    const auto r = run_scenario(stream_config(case_path, stream, window));
    Json arr = Json::array();
    for (const auto& s : r.snapshots) {
        Json j = s.report;
        j["snapshot"] = s.id;
        arr.push_back(std::move(j));
    }
    std::cout << arr.dump(2) << '\n';
    return 0;
}

int cmd_qcr(const std::string& case_path, const std::string& stream, std::size_t window) {
    const auto r = run_scenario(stream_config(case_path, stream, window));
    std::cout << "t,gen,bus,q_total,rpr,q_cr,listed\n";
    for (const auto& s : r.snapshots)
        for (const auto& m : s.report.rpr_models) {
            bool listed = false;
            for (const auto& c : s.report.critical.items) listed = listed || c.gen == m.gen;
            std::cout << num(s.report.timestamp) << ',' << m.gen << ',' << m.bus_id << ',' << num(m.latest_q_total) << ','
                      << num(m.latest_rpr) << ',' << (m.q_cr ? num(*m.q_cr) : "") << ',' << (listed ? 1 : 0) << '\n';
        }
    return 0;
}

int cmd_synth(const CaseArgs& a, double kmax, double step, std::uint64_t seed, double sigma, const std::string& out_path) {
    const auto base = load_case_file(a.path);
    const auto dir = LoadDirection::pq_loads(base);
    const NoiseSpec noise{sigma, sigma};
    std::vector<PmuSnapshot> snaps;
    OperatingState prev;
    bool have = false;
    for (std::size_t i = 0;; ++i) {
        const double k = a.k + static_cast<double>(i) * step;
        if (k > kmax + 1e-9) break;
        const auto m = scale_loading(base, k, dir);
        auto st = solve_power_flow(m, {}, have ? &prev : nullptr);
        if (!st.converged) break;
        snaps.push_back(synthesize_pmu(m, st, noise, seed + i, static_cast<double>(i)));
        prev = std::move(st);
        have = true;
    }
    Output out(out_path);
    write_stream(out.get(), snaps);
    std::cerr << snaps.size() << " snapshots\n";
    return 0;
}

int cmd_security(const CaseArgs& a, const std::string& contingencies, std::optional<double> threshold,
                 const std::string& csv_path) {
    const auto l = load_at(a);
    const auto st = solve_or_throw(l.model);
    std::vector<std::string> labels;
    if (contingencies == "all-n1" || contingencies == "all") {
        labels = {"all"};
    } else {
        std::ifstream in(contingencies);
        if (!in) throw ValidationError("cannot open contingency list " + contingencies);
        for (std::string line; std::getline(in, line);) {
            const auto b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos || line[b] == '#') continue;
            labels.push_back(line.substr(b, line.find_last_not_of(" \t\r") - b + 1));
        }
    }
    ScreeningOptions so;
    so.threshold = threshold.value_or(default_screening_threshold(l.model));
    const auto branches = resolve_contingencies(l.model, labels);
    const auto ranked = rank_contingencies(screen_contingencies(l.model, st, branches, l.dir, so));
    Json arr = Json::array();
    for (const auto& v : ranked) arr.push_back(verdict_json(v, so.threshold));
    std::cout << arr.dump(2) << '\n';
    if (!csv_path.empty()) {
        Output out(csv_path);
        out.get() << "rank,label,outcome,max_wvsi,critical\n";
        for (const auto& v : ranked)
            out.get() << v.rank << ',' << v.label << ',' << to_string(v.outcome) << ',' << num(v.max_wvsi) << ','
                      << (v.critical ? "C" : "NC") << '\n';
    }
    return 0;
}

int cmd_evaluate(const std::string& case_path, const std::vector<double>& ks, std::optional<double> wvsi_th,
                 std::optional<double> margin_th, std::size_t top) {
    const auto base = load_case_file(case_path);
    Json runs = Json::array();
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (double k : ks) {
        const auto m = scale_loading(base, k, LoadDirection::pq_loads(base));
        const auto st = solve_or_throw(m);
        EvaluationOptions eo;
        eo.screening.threshold = wvsi_th.value_or(default_screening_threshold(m));
        eo.margin_threshold = margin_th.value_or(default_margin_threshold(m));
        const auto verdicts = evaluate_contingencies(m, st, all_branches(m), LoadDirection::pq_loads(m), eo);
        long c[4] = {};
        for (const auto& v : verdicts) {
            const bool p = v.critical, t = *v.actual_critical;
            ++c[p && t ? 0 : p ? 1 : t ? 2 : 3];
        }
        const auto cm = confusion_from_counts(c[0], c[1], c[2], c[3]);
        tp += cm.tp;
        fp += cm.fp;
        fn += cm.fn;
        tn += cm.tn;
        const auto rc = compare_rankings(verdicts, top);
        Json ranking = Json::array();
        for (std::size_t i = 0; i < rc.branches.size(); ++i)
            ranking.push_back(Json{{"branch", m.branch_label(rc.branches[i])},
                                   {"oracle_rank", rc.oracle_rank[i]},
                                   {"index_rank", rc.index_rank[i]}});
        Json vj = Json::array();
        for (const auto& v : verdicts) vj.push_back(verdict_json(v, eo.screening.threshold));
        runs.push_back(Json{{"k", k},
                            {"wvsi_threshold", eo.screening.threshold},
                            {"margin_threshold", eo.margin_threshold},
                            {"confusion", cm},
                            {"ranking", ranking},
                            {"wilcoxon", rc.test},
                            {"verdicts", vj}});
    }
    std::cout << Json{{"case", base.name()}, {"runs", runs}, {"pooled", confusion_from_counts(tp, fp, fn, tn)}}.dump(2)
              << '\n';
    return 0;
}

int cmd_run(const std::string& config_path) {
    const auto cfg = ScenarioConfig::load(config_path);
    const auto r = run_scenario(cfg);
    std::size_t errors = 0;
    for (const auto& e : r.log.entries()) errors += e.kind == "error";
    std::cerr << r.snapshots.size() << " snapshots, " << r.verdicts.size() << " verdicts, " << errors << " errors";
    if (!cfg.output_dir.empty()) std::cerr << ", written to " << cfg.output_dir;
    std::cerr << '\n';
    if (cfg.output_dir.empty()) std::cout << r.log.serialize();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Voltage stability assessment engine"};
    app.require_subcommand(1);

    CaseArgs ca;
    double kmax = 2.0, step = 0.01;
    std::string out_path, outage, config_path, stream, contingencies = "all-n1";
    std::size_t window = 30, top = 10;
    std::uint64_t seed = 1;
    double sigma = 0.001;
    int port = 8080;
    std::optional<double> threshold, margin_th;
    std::vector<std::string> ks{"1.0", "1.3"};

    auto* pf = app.add_subcommand("pf", "solve the AC power flow");
    add_case(pf, ca);
    pf->add_flag("--no-qlim", ca.no_qlim, "ignore generator reactive limits");

    auto* ramp = app.add_subcommand("ramp", "repeated power flow along the load ramp (CSV)");
    add_case(ramp, ca);
    ramp->add_option("--kmax", kmax, "last multiplier");
    ramp->add_option("--step", step, "multiplier step")->check(CLI::PositiveNumber);
    ramp->add_option("-o,--out", out_path, "CSV output (stdout by default)");

    auto* cpf = app.add_subcommand("cpf", "PV curve to the nose; CSV plus JSON summary");
    add_case(cpf, ca);
    cpf->add_option("--outage", outage, "branch label to remove first, e.g. 5-6");
    cpf->add_option("-o,--out", out_path, "CSV output (stdout by default; the summary then goes to stderr)");

    auto* vsi = app.add_subcommand("vsi", "hybrid perturbation VSI per bus (JSON)");
    add_case(vsi, ca);

    auto* vsi_ramp = app.add_subcommand("vsi-ramp", "VSI per bus along the load ramp (CSV)");
    add_case(vsi_ramp, ca);
    vsi_ramp->add_option("--kmax", kmax, "last multiplier");
    vsi_ramp->add_option("--step", step, "multiplier step")->check(CLI::PositiveNumber);
    vsi_ramp->add_option("-o,--out", out_path, "CSV output (stdout by default)");

    auto* synth = app.add_subcommand("synth", "synthesize a PMU stream along the load ramp");
    add_case(synth, ca);
    synth->add_option("--kmax", kmax, "last multiplier");
    synth->add_option("--step", step, "multiplier step")->check(CLI::PositiveNumber);
    synth->add_option("--seed", seed, "noise seed");
    synth->add_option("--sigma", sigma, "relative magnitude and angle noise")->check(CLI::NonNegativeNumber);
    synth->add_option("-o,--out", out_path, "stream output (stdout by default)");

    auto* wvsi = app.add_subcommand("wvsi", "StabilityReport series from a PMU stream (JSON)");
    auto* qcr = app.add_subcommand("qcr", "reserve fits and predicted Q_cr from a PMU stream (CSV)");
    for (auto* c : {wvsi, qcr}) {
        add_case(c, ca, false);
        c->add_option("--stream", stream, "stream file")->required()->check(CLI::ExistingFile);
        c->add_option("--window", window, "window length")->check(CLI::Range(3, 100000));
    }

    auto* sec = app.add_subcommand("security", "N-1 screening and ranking (JSON, optional CSV)");
    add_case(sec, ca);
    sec->add_option("--contingencies", contingencies, "file with one branch label per line, or all-n1");
    sec->add_option("--threshold", threshold, "screening threshold");
    sec->add_option("--csv", out_path, "ranking CSV output");

    auto* ev = app.add_subcommand("evaluate", "confusion matrix and ranking test against the CPF oracle");
    add_case(ev, ca, false);
    ev->add_option("--k", ks, "loading multipliers")->expected(1, -1);
    ev->add_option("--threshold", threshold, "WVSI threshold");
    ev->add_option("--margin-threshold", margin_th, "oracle margin threshold");
    ev->add_option("--top", top, "ranking depth")->check(CLI::Range(2, 25));

    auto* run = app.add_subcommand("run", "run a scenario config");
    run->add_option("--config", config_path, "scenario JSON")->required()->check(CLI::ExistingFile);
    auto* replay = app.add_subcommand("replay", "alias of run");
    replay->add_option("--config", config_path, "scenario JSON")->required()->check(CLI::ExistingFile);

    auto* srv = app.add_subcommand("serve", "replay a scenario and serve the monitoring API");
    srv->add_option("--config", config_path, "scenario JSON")->required()->check(CLI::ExistingFile);
    srv->add_option("--port", port, "listen port (0 picks one)")->check(CLI::Range(0, 65535));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pf) return cmd_pf(ca);
        if (*ramp) return cmd_ramp(ca, kmax, step, out_path);
        if (*cpf) return cmd_cpf(ca, outage, out_path);
        if (*vsi) return cmd_vsi(ca);
        if (*vsi_ramp) return cmd_vsi_ramp(ca, kmax, step, out_path);
        if (*synth) return cmd_synth(ca, kmax, step, seed, sigma, out_path);
        if (*wvsi) return cmd_wvsi(ca.path, stream, window);
        if (*qcr) return cmd_qcr(ca.path, stream, window);
        if (*sec) return cmd_security(ca, contingencies, threshold, out_path);
        if (*ev) return cmd_evaluate(ca.path, parse_ks(ks), threshold, margin_th, top);
        if (*run || *replay) return cmd_run(config_path);
        if (*srv) {
            const auto cfg = ScenarioConfig::load(config_path);
            const int p = srv->count("--port") ? port : cfg.port;
            serve(cfg, p, [](int bound) { std::cerr << "listening on port " << bound << '\n'; });
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
