#include "vsa/serialize.hpp"

#include <cmath>

namespace vsa {

namespace {

Json num(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

Json opt(const std::optional<double>& x) { return x ? num(*x) : Json(nullptr); }

}  // namespace

Json state_json(const NetworkModel& model, const OperatingState& st) {
    static constexpr double kDeg = 180.0 / 3.14159265358979323846;
    Json buses = Json::array();
    for (std::size_t i = 0; i < model.bus_count(); ++i) {
        const char* lim = st.limits[i] == LimitState::AtMax ? "max" : st.limits[i] == LimitState::AtMin ? "min" : "none";
        buses.push_back(Json{{"bus", model.buses()[i].id},
                             {"vm", st.vm[i]},
                             {"va_deg", st.va[i] * kDeg},
                             {"p", st.p[i]},
                             {"q", st.q[i]},
                             {"role", std::string(to_string(st.roles[i]))},
                             {"limit", lim}});
    }
    Json gens = Json::array();
    for (std::size_t g = 0; g < model.generators().size(); ++g)
        gens.push_back(Json{{"gen", g}, {"bus", model.generators()[g].bus}, {"pg", st.gen_p[g]}, {"qg", st.gen_q[g]}});
    return Json{{"converged", st.converged},
                {"iterations", st.iterations},
                {"max_mismatch", st.max_mismatch},
                {"switch_rounds", st.switch_rounds},
                {"buses", std::move(buses)},
                {"generators", std::move(gens)}};
}

void to_json(Json& j, const CriticalGenerator& g) {
    j = Json{{"gen", g.gen},
             {"bus", g.bus_id},
             {"q_cr", num(g.q_cr)},
             {"side", g.side == RootSide::Upper ? "upper" : "lower"}};
}

void to_json(Json& j, const CriticalGeneratorList& l) {
    j = Json{{"q_total", num(l.q_total)}, {"threshold", l.threshold}, {"items", l.items}};
}

void to_json(Json& j, const BusIndices& b) {
    j = Json{{"bus", b.bus_id},
             {"status", std::string(to_string(b.status))},
             {"vsi", num(b.vsi)},
             {"vsi_u", num(b.vsi_u)},
             {"wvsi", num(b.wvsi)}};
}

void to_json(Json& j, const RprModel& m) {
    j = Json{{"gen", m.gen},
             {"bus", m.bus_id},
             {"a", num(m.a())},
             {"b", num(m.b())},
             {"c", num(m.c())},
             {"residual", num(m.residual)},
             {"q_total", num(m.latest_q_total)},
             {"rpr", num(m.latest_rpr)},
             {"at_limit", m.at_limit},
             {"q_cr", opt(m.q_cr)}};
}

Json report_summary(const StabilityReport& r) {
    Json j{{"timestamp", r.timestamp},
           {"q_total", num(r.q_total)},
           {"w1", num(r.w1)},
           {"w2", num(r.w2)},
           {"max_wvsi", num(r.max_wvsi())},
           {"critical_bus", nullptr},
           {"buses", r.buses},
           {"critical", r.critical},
           {"warnings", r.warnings}};
    if (auto b = r.critical_bus()) j["critical_bus"] = r.buses[*b].bus_id;
    return j;
}

void to_json(Json& j, const StabilityReport& r) {
    j = report_summary(r);
    j["rpr_models"] = r.rpr_models;
}

void to_json(Json& j, const ContingencyVerdict& v) {
    j = Json{{"branch", v.branch},
             {"label", v.label},
             {"outcome", std::string(to_string(v.outcome))},
             {"max_wvsi", num(v.max_wvsi)},
             {"critical_bus", v.critical_bus ? Json(*v.critical_bus) : Json(nullptr)},
             {"critical", v.critical},
             {"rank", v.rank},
             {"w1", num(v.w1)},
             {"list", v.list},
             {"detail", v.detail},
             {"delta_lambda", opt(v.delta_lambda)},
             {"actual_critical", v.actual_critical ? Json(*v.actual_critical) : Json(nullptr)}};
}

Json verdict_json(const ContingencyVerdict& v, double threshold) {
    Json j = v;
    j["critical"] = v.outcome != VerdictOutcome::Assessed || v.max_wvsi > threshold;
    j["threshold"] = threshold;
    return j;
}

void to_json(Json& j, const ConfusionMetrics& m) {
    j = Json{{"tp", m.tp},
             {"fp", m.fp},
             {"fn", m.fn},
             {"tn", m.tn},
             {"accuracy", m.accuracy},
             {"precision", m.precision},
             {"recall", m.recall},
             {"f_score", m.f_score},
             {"precision_undefined", m.precision_undefined},
             {"recall_undefined", m.recall_undefined}};
}

void to_json(Json& j, const WilcoxonResult& w) {
    j = Json{{"n", w.n},
             {"w_plus", w.w_plus},
             {"w_minus", w.w_minus},
             {"p_value", w.p_value},
             {"ci_low", w.ci_low},
             {"ci_high", w.ci_high},
             {"confidence", w.confidence},
             {"degenerate", w.degenerate}};
}

}  // namespace vsa
