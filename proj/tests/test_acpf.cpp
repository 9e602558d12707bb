#include <doctest.h>

#include <fstream>
#include <numbers>

#include "support.hpp"
#include "vsa/serialize.hpp"

using namespace vsa;
using vsa::test::fixture;

TEST_CASE("analytic Jacobian matches finite differences of the mismatch") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(scale_loading(m, 1.2, LoadDirection::pq_loads(m)));
    REQUIRE(st.converged);
    // Perturb away from the solution so the check is not at a special point.
    auto vm = st.vm;
    auto va = st.va;
    for (std::size_t i = 0; i < vm.size(); ++i) {
        vm[i] *= 1.0 + 0.01 * std::sin(1.0 + static_cast<double>(i));
        va[i] += 0.02 * std::cos(2.0 + static_cast<double>(i));
    }
    const auto ybus = build_ybus(m);
    const auto roles = st.roles;
    const auto spec = specified_injections(m, roles, st.limits);
    const auto make_v = [&] {
        std::vector<Complex> v(vm.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::polar(vm[i], va[i]);
        return v;
    };
    const auto jac = build_jacobian(ybus, make_v(), roles);
    const auto& ab = jac.angle_buses;
    const auto& mb = jac.magnitude_buses;
    const double h = 1e-7;
    double worst = 0.0;
    for (Eigen::Index c = 0; c < jac.size(); ++c) {
        double& x = c < static_cast<Eigen::Index>(ab.size()) ? va[ab[static_cast<std::size_t>(c)]]
                                                             : vm[mb[static_cast<std::size_t>(c) - ab.size()]];
        const double x0 = x;
        x = x0 + h;
        const auto fp = mismatch_vector(ybus, make_v(), spec, ab, mb);
        x = x0 - h;
        const auto fm = mismatch_vector(ybus, make_v(), spec, ab, mb);
        x = x0;
        const Eigen::VectorXd col = (fp - fm) / (2 * h);
        worst = std::max(worst, (col - jac.m.col(c)).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("converged solutions balance power at every bus") {
    for (const char* name : {"case9.m", "case14.m", "case57.m", "case118.m"}) {
        const auto& m = fixture(name);
        const auto st = solve_power_flow(m);
        REQUIRE(st.converged);
        CHECK(st.iterations <= 30);
        const auto y = build_ybus(m).y;
        const auto vv = st.voltages();
        const Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(vv.data(), static_cast<Eigen::Index>(vv.size()));
        const Eigen::VectorXcd s = bus_injections(y, v);
        double worst = 0.0;
        for (std::size_t i = 0; i < m.bus_count(); ++i) {
            double pg = 0.0, qg = 0.0;
            for (auto g : m.generators_at(i)) {
                pg += st.gen_p[g];
                qg += st.gen_q[g];
            }
            const auto& b = m.buses()[i];
            worst = std::max(worst, std::abs(s(static_cast<Eigen::Index>(i)).real() - (pg - b.pd)));
            worst = std::max(worst, std::abs(s(static_cast<Eigen::Index>(i)).imag() - (qg - b.qd)));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("generator reactive limits are enforced by PV to PQ switching") {
    const auto& m = fixture("case14.m");
    const auto loaded = scale_loading(m, 1.3, LoadDirection::pq_loads(m));
    const auto free_st = solve_power_flow(loaded, {.enforce_q_limits = false});
    const auto st = solve_power_flow(loaded);
    REQUIRE(st.converged);
    REQUIRE(free_st.converged);

    bool violated = false;
    for (std::size_t g = 0; g < m.generators().size(); ++g)
        violated = violated || free_st.gen_q[g] > m.generators()[g].qmax + 1e-6;
    CHECK(violated);

    int switched = 0;
    for (std::size_t i = 0; i < m.bus_count(); ++i) {
        if (i == m.slack_index() || m.generators_at(i).empty()) continue;
        const auto lim = bus_q_limits(m, i);
        double qg = 0.0;
        for (auto g : m.generators_at(i)) qg += st.gen_q[g];
        CHECK(qg <= lim.qmax + 1e-6);
        CHECK(qg >= lim.qmin - 1e-6);
        if (st.roles[i] == BusRole::PQ) {
            ++switched;
            CHECK(st.limits[i] != LimitState::None);
            const double at = st.limits[i] == LimitState::AtMax ? lim.qmax : lim.qmin;
            CHECK(qg == doctest::Approx(at).epsilon(1e-9));
        } else {
            CHECK(st.vm[i] == doctest::Approx(m.generators()[m.generators_at(i).front()].vsetpoint));
        }
    }
    CHECK(switched > 0);
}

TEST_CASE("voltage magnitudes fall monotonically along the load ramp") {
    const auto& m = fixture("case14.m");
    const auto dir = LoadDirection::pq_loads(m);
    OperatingState prev;
    bool have = false;
    std::vector<double> last;
    for (double k = 1.0; k <= 1.6 + 1e-9; k += 0.05) {
        auto st = solve_power_flow(scale_loading(m, k, dir), {}, have ? &prev : nullptr);
        REQUIRE(st.converged);
        if (!last.empty())
            for (std::size_t i = 0; i < m.bus_count(); ++i)
                if (st.roles[i] == BusRole::PQ && prev.roles[i] == BusRole::PQ) CHECK(st.vm[i] <= last[i] + 1e-9);
        last = st.vm;
        prev = std::move(st);
        have = true;
    }
}

TEST_CASE("IEEE 57 collapses between k = 1.6 and 1.85") {
    const auto& m = fixture("case57.m");
    const auto dir = LoadDirection::pq_loads(m);
    OperatingState prev;
    bool have = false;
    double last_ok = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double k = 1.0 + 0.01 * i;
        auto st = solve_power_flow(scale_loading(m, k, dir), {}, have ? &prev : nullptr);
        if (!st.converged) break;
        last_ok = k;
        prev = std::move(st);
        have = true;
    }
    CHECK(last_ok >= 1.6);
    CHECK(last_ok <= 1.85);
}

TEST_CASE("scale_loading is the identity at k = 1 and linear in k") {
    const auto& m = fixture("case14.m");
    const auto dir = LoadDirection::pq_loads(m);
    CHECK(scale_loading(m, 1.0, dir) == m);
    const auto a = scale_loading(m, 1.5, dir);
    const auto b = shift_loading(m, 0.5, dir);
    CHECK(a == b);
    for (std::size_t i = 0; i < m.bus_count(); ++i) {
        const auto& b0 = m.buses()[i];
        if (!m.generators_at(i).empty() || i == m.slack_index()) continue;
        CHECK(a.buses()[i].pd == doctest::Approx(1.5 * b0.pd));
        CHECK(a.buses()[i].qd == doctest::Approx(1.5 * b0.qd));
    }
    LoadDirection bad = dir;
    bad.dp.pop_back();
    CHECK_THROWS_AS(bad.validate(m), ValidationError);
}

TEST_CASE("warm start converges in fewer iterations") {
    const auto& m = fixture("case57.m");
    const auto dir = LoadDirection::pq_loads(m);
    const auto a = solve_power_flow(scale_loading(m, 1.3, dir));
    const auto b = solve_power_flow(scale_loading(m, 1.31, dir), {}, &a);
    const auto c = solve_power_flow(scale_loading(m, 1.31, dir));
    REQUIRE(b.converged);
    REQUIRE(c.converged);
    CHECK(b.iterations <= c.iterations);
    for (std::size_t i = 0; i < m.bus_count(); ++i) CHECK(b.vm[i] == doctest::Approx(c.vm[i]).epsilon(1e-6));
}

TEST_CASE("IEEE 14 solution matches the published bus voltages") {
    std::ifstream in(std::string(VSA_DATA_DIR) + "/reference/case14_solution.json");
    REQUIRE(in);
    const auto ref = Json::parse(in);
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m, {.enforce_q_limits = false});
    REQUIRE(st.converged);
    for (std::size_t i = 0; i < m.bus_count(); ++i) {
        CHECK(std::abs(st.vm[i] - ref["vm"][i].get<double>()) <= 1e-3);
        CHECK(std::abs(st.va[i] * 180.0 / std::numbers::pi - ref["va_deg"][i].get<double>()) <= 0.02);
    }
}
