#include <doctest.h>

#include <sstream>

#include "support.hpp"

using namespace vsa;
using vsa::test::fixture;

TEST_CASE("noise-free estimate reproduces the power flow state") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m);
    const auto est = estimate_state(synthesize_pmu(m, st, NoiseSpec::none(), 7, 0.0), m);
    const auto vv = st.voltages();
    for (std::size_t i = 0; i < m.bus_count(); ++i) CHECK(std::abs(est.voltage[i] - vv[i]) < 1e-9);
    double qt = 0.0;
    for (const auto& b : m.buses()) qt += b.qd;
    CHECK(est.q_total == doctest::Approx(qt));
    const auto ex = exact_estimate(m, st);
    for (std::size_t g = 0; g < m.generators().size(); ++g) CHECK(est.gen_q[g] == doctest::Approx(ex.gen_q[g]));
}

TEST_CASE("estimator filters Gaussian phasor noise") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m);
    const auto vv = st.voltages();
    const NoiseSpec noise{0.005, 0.005};
    double sq = 0.0, bias = 0.0;
    int n = 0;
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        const auto est = estimate_state(synthesize_pmu(m, st, noise, seed, 0.0), m);
        for (std::size_t i = 0; i < m.bus_count(); ++i) {
            const double e = std::abs(est.voltage[i]) - std::abs(vv[i]);
            sq += e * e;
            bias += e;
            ++n;
        }
    }
    const double rms = std::sqrt(sq / n);
    // Redundant current channels make the estimate tighter than a raw voltage channel.
    CHECK(rms < noise.sigma_mag);
    CHECK(std::abs(bias / n) < 3 * rms / std::sqrt(static_cast<double>(n)) + 1e-4);
}

TEST_CASE("synthetic snapshots are reproducible per seed") {
    const auto& m = fixture("case9.m");
    const auto st = solve_power_flow(m);
    const auto a = synthesize_pmu(m, st, {}, 42, 1.0);
    const auto b = synthesize_pmu(m, st, {}, 42, 1.0);
    const auto c = synthesize_pmu(m, st, {}, 43, 1.0);
    REQUIRE(a.phasors.size() == b.phasors.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.phasors.size(); ++i) {
        CHECK(a.phasors[i].value == b.phasors[i].value);
        differs = differs || a.phasors[i].value != c.phasors[i].value;
    }
    CHECK(differs);
}

TEST_CASE("stream files round-trip") {
    const auto& m = fixture("case9.m");
    const auto st = solve_power_flow(m);
    std::vector<PmuSnapshot> snaps{synthesize_pmu(m, st, {}, 1, 0.0), synthesize_pmu(m, st, {}, 2, 1.0)};
    std::stringstream io;
    write_stream(io, snaps);
    const auto back = read_stream(io, m);
    REQUIRE(back.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
        CHECK(back[s].timestamp == snaps[s].timestamp);
        REQUIRE(back[s].phasors.size() == snaps[s].phasors.size());
        for (std::size_t i = 0; i < snaps[s].phasors.size(); ++i)
            CHECK(std::abs(back[s].phasors[i].value - snaps[s].phasors[i].value) < 1e-12);
        for (std::size_t g = 0; g < snaps[s].gen_q.size(); ++g)
            CHECK(back[s].gen_q[g] == doctest::Approx(snaps[s].gen_q[g]).epsilon(1e-12));
    }
}

TEST_CASE("missing phasors make the network unobservable") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m);
    MeasurementPlacement none{false, false, false};
    CHECK_THROWS_AS(estimate_state(synthesize_pmu(m, st, {}, 1, 0.0, none), m), UnobservableError);
}

TEST_CASE("measurement window evicts the oldest entry and rejects stale data") {
    const auto& m = fixture("case9.m");
    const auto st = solve_power_flow(m);
    MeasurementWindow w(3);
    for (int t = 0; t < 5; ++t) w.append(exact_estimate(m, st, t));
    CHECK(w.size() == 3);
    CHECK(w[0].timestamp == 2.0);
    CHECK(w.latest().timestamp == 4.0);
    CHECK_THROWS_AS(w.append(exact_estimate(m, st, 4.0)), ValidationError);
    CHECK_THROWS_AS(MeasurementWindow(0), ValidationError);
}

TEST_CASE("shared window snapshots are stable copies") {
    const auto& m = fixture("case9.m");
    const auto st = solve_power_flow(m);
    SharedWindow sw(4);
    sw.append(exact_estimate(m, st, 0.0));
    const auto snap = sw.snapshot();
    sw.append(exact_estimate(m, st, 1.0));
    CHECK(snap.size() == 1);
    CHECK(sw.snapshot().size() == 2);
}
