#include <doctest.h>

#include "support.hpp"
#include "vsa/cpf.hpp"

using namespace vsa;
using vsa::test::fixture;

TEST_CASE("two-bus unity power factor nose is E^2 / (2X)") {
    for (auto [name, x] : {std::pair{"twobus_x025.m", 0.25}, std::pair{"twobus_x01.m", 0.1}}) {
        const auto& m = fixture(name);
        const auto dir = LoadDirection::pq_loads(m);
        const auto trace = trace_pv_curve(m, dir);
        const double p_max = 1.0 / (2 * x);
        // Loads are 1 p.u. at lambda = 0; lambda is added in units of the base load.
        CHECK(std::abs(m.buses()[1].pd * (1.0 + trace.lambda_max) - p_max) / p_max < 0.01);
        CHECK(margin(trace) == doctest::Approx(p_max - 1.0).epsilon(0.01));
        CHECK_FALSE(trace.reached_cap);
    }
}

TEST_CASE("trace brackets the nose to the resolution") {
    const auto& m = fixture("case14.m");
    const auto dir = LoadDirection::pq_loads(m);
    CpfOptions o;
    const auto trace = trace_pv_curve(m, dir, o);
    REQUIRE(trace.points.size() > 3);
    CHECK(solve_power_flow(shift_loading(m, trace.lambda_max, dir), {}, &trace.points.back().state).converged);
    CHECK_FALSE(solve_power_flow(shift_loading(m, trace.lambda_max + o.resolution, dir), {}, &trace.points.back().state)
                    .converged);
    // Lambda stays on the resolution grid.
    for (const auto& p : trace.points) CHECK(std::abs(p.lambda / o.resolution - std::round(p.lambda / o.resolution)) < 1e-9);
}

TEST_CASE("lambda increases and load-bus voltages fall along the trace") {
    const auto& m = fixture("case14.m");
    const auto trace = trace_pv_curve(m, LoadDirection::pq_loads(m));
    for (std::size_t i = 1; i < trace.points.size(); ++i) CHECK(trace.points[i].lambda > trace.points[i - 1].lambda);
    const auto v9 = trace.voltage_profile(m.bus_index(9));
    for (std::size_t i = 1; i < v9.size(); ++i) CHECK(v9[i] < v9[i - 1] + 1e-9);
    const auto cb = critical_bus(m, trace);
    REQUIRE(cb);
    CHECK(m.generators_at(*cb).empty());
}

TEST_CASE("outages shrink the margin") {
    const auto& m = fixture("case14.m");
    const auto dir = LoadDirection::pq_loads(m);
    const double base = loadability_margin(m, dir);
    for (const char* br : {"2-3", "5-6", "4-7"}) {
        const double post = loadability_margin(apply_outage(m, *m.find_branch(br), 1.0), dir);
        CHECK(post < base);
        CHECK(post >= 0.0);
    }
    CHECK(loadability_margin(apply_outage(m, *m.find_branch("7-8"), 1.0), dir) == 0.0);
}

TEST_CASE("a diverging starting point has zero margin") {
    const auto& m = fixture("case14.m");
    const auto dir = LoadDirection::pq_loads(m);
    const auto far = shift_loading(m, 5.0, dir);
    CHECK_THROWS_AS(trace_pv_curve(far, dir), BaseCaseDivergenceError);
    CHECK(loadability_margin(far, dir) == 0.0);
}

TEST_CASE("invalid step settings are rejected") {
    const auto& m = fixture("case14.m");
    CpfOptions o;
    o.resolution = 0.0;
    CHECK_THROWS_AS(trace_pv_curve(m, LoadDirection::pq_loads(m), o), ValidationError);
    o.resolution = 0.1;
    o.initial_step = 0.01;
    CHECK_THROWS_AS(trace_pv_curve(m, LoadDirection::pq_loads(m), o), ValidationError);
}

TEST_CASE("two-bus purely reactive nose is E^2 / (4X)") {
    const auto& m = fixture("twobus_q025.m");
    const auto trace = trace_pv_curve(m, LoadDirection::pq_loads(m));
    const double q_max = 1.0 / (4 * 0.25);
    CHECK(std::abs(m.buses()[1].qd * (1.0 + trace.lambda_max) - q_max) / q_max < 0.01);
}
