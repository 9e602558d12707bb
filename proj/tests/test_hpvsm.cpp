#include <doctest.h>

#include "support.hpp"
#include "vsa/cpf.hpp"

using namespace vsa;
using vsa::test::fixture;

namespace {

VsiProfile vsi_at(const NetworkModel& m, const OperatingState& st, std::optional<double> alpha = std::nullopt) {
    return hybrid_vsi(m, exact_estimate(m, st), LoadDirection::pq_loads(m), alpha);
}

/// Last convergent point of a ramp in steps of `dk`.
std::pair<NetworkModel, OperatingState> last_ramp_point(const NetworkModel& base, double dk) {
    const auto dir = LoadDirection::pq_loads(base);
    NetworkModel last_m = base;
    OperatingState prev;
    bool have = false;
    for (int i = 0;; ++i) {
        const auto mk = scale_loading(base, 1.0 + dk * i, dir);
        auto st = solve_power_flow(mk, {}, have ? &prev : nullptr);
        if (!st.converged) break;
        prev = std::move(st);
        last_m = mk;
        have = true;
    }
    return {last_m, prev};
}

}  // namespace

TEST_CASE("perturbation Thevenin impedance of a single line is the line impedance") {
    for (auto [name, x] : {std::pair{"twobus_x025.m", 0.25}, std::pair{"twobus_x01.m", 0.1}}) {
        const auto& m = fixture(name);
        const auto prof = vsi_at(m, solve_power_flow(m));
        const auto& b = prof.buses[1];
        REQUIRE(b.status == VsiStatus::Ok);
        CHECK(std::abs(b.z_th - Complex(0.0, x)) / x < 0.01);
        CHECK(prof.buses[0].status == VsiStatus::NotApplicable);
    }
}

TEST_CASE("two-bus index reaches 1 at the nose") {
    const auto& m = fixture("twobus_x025.m");
    const auto dir = LoadDirection::pq_loads(m);
    const auto trace = trace_pv_curve(m, dir);
    const auto at_nose = shift_loading(m, trace.lambda_max, dir);
    const auto prof = vsi_at(at_nose, trace.points.back().state);
    CHECK(prof.buses[1].vsi == doctest::Approx(1.0).epsilon(0.02));
    // Far from the nose the index is well below 1 and grows with load.
    const double v0 = vsi_at(m, solve_power_flow(m)).buses[1].vsi;
    CHECK(v0 < 0.6);
    CHECK(v0 < prof.buses[1].vsi);
}

TEST_CASE("index converges as the perturbation shrinks") {
    const auto& m = fixture("case14.m");
    const auto loaded = scale_loading(m, 1.4, LoadDirection::pq_loads(m));
    const auto st = solve_power_flow(loaded);
    const auto est = exact_estimate(loaded, st);
    const double a0 = default_alpha(est, LoadDirection::pq_loads(loaded));
    const auto b9 = loaded.bus_index(9);
    const double v1 = vsi_at(loaded, st, a0).buses[b9].vsi;
    const double v2 = vsi_at(loaded, st, a0 / 4).buses[b9].vsi;
    const double v3 = vsi_at(loaded, st, a0 / 16).buses[b9].vsi;
    CHECK(std::abs(v2 - v3) < std::abs(v1 - v2));
    CHECK(std::abs(v1 - v3) < 0.02);
}

TEST_CASE("index is reported only at load buses") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m);
    const auto est = exact_estimate(m, st);
    const auto prof = hybrid_vsi(m, est, LoadDirection::pq_loads(m));
    for (std::size_t i = 0; i < m.bus_count(); ++i) {
        if (is_load_bus(m, est, i)) {
            CHECK(prof.buses[i].status == VsiStatus::Ok);
            CHECK(prof.buses[i].vsi > 0.0);
            CHECK(prof.buses[i].vsi < 1.0);
        } else {
            CHECK(prof.buses[i].status == VsiStatus::NotApplicable);
        }
    }
    CHECK_THROWS_AS(hybrid_vsi(m, est, LoadDirection::pq_loads(m), -1.0), ValidationError);
}

TEST_CASE("IEEE 14 critical bus at the last convergent ramp point is bus 9") {
    const auto& m = fixture("case14.m");
    const auto [mk, st] = last_ramp_point(m, 0.01);
    const auto prof = vsi_at(mk, st);
    REQUIRE(prof.argmax());
    CHECK(mk.buses()[*prof.argmax()].id == 9);
    CHECK(prof.max() >= 0.9);
}

TEST_CASE("windowed Thevenin fit recovers a single line exactly") {
    const auto& m = fixture("twobus_x025.m");
    const auto dir = LoadDirection::pq_loads(m);
    MeasurementWindow w(10);
    for (int i = 0; i < 10; ++i) {
        const auto mk = scale_loading(m, 1.0 + 0.05 * i, dir);
        w.append(exact_estimate(mk, solve_power_flow(mk), i));
    }
    const auto th = thevenin_baseline(w, m, 2);
    CHECK(std::abs(th.z_th - Complex(0.0, 0.25)) < 1e-6);
    CHECK(std::abs(th.e_th - Complex(1.0, 0.0)) < 1e-6);
    CHECK_FALSE(th.ill_conditioned);
}

TEST_CASE("windowed Thevenin fit flags a constant window") {
    const auto& m = fixture("twobus_x025.m");
    const auto st = solve_power_flow(m);
    MeasurementWindow w(5);
    for (int i = 0; i < 5; ++i) w.append(exact_estimate(m, st, i));
    CHECK(thevenin_baseline(w, m, 2).ill_conditioned);
}
