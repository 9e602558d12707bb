#include <doctest.h>

#include "support.hpp"

using namespace vsa;
using vsa::test::fixture;

namespace {

const char* kThreeBus = R"(function mpc = threebus
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1.02	0	230	1	1.1	0.9;
	2	2	20	5	0	0	1	1	0	230	1	1.1	0.9;
	3	1	50	20	0	10	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1.02	100	1	200	0;
	2	40	0	30	-30	1.01	100	1	100	0;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;
	2	3	0.02	0.2	0	0	0	0	0.95	0	1	-360	360;
	1	3	0.0	0.25	0	0	0	0	0	0	1	-360	360;
];
)";

}  // namespace

TEST_CASE("admittance matrix matches hand-computed entries") {
    const auto m = load_case(kThreeBus, "threebus");
    const auto y = build_ybus(m).y;
    const Complex y12 = 1.0 / Complex(0.01, 0.1);
    const Complex y23 = 1.0 / Complex(0.02, 0.2);
    const Complex y13 = 1.0 / Complex(0.0, 0.25);
    const double t = 0.95;
    const Complex j(0.0, 1.0);

    CHECK(std::abs(y(0, 0) - (y12 + j * 0.01 + y13)) < 1e-12);
    CHECK(std::abs(y(0, 1) + y12) < 1e-12);
    CHECK(std::abs(y(0, 2) + y13) < 1e-12);
    // Tap on the from side of 2-3: y/t^2 at the from bus and -y/t off-diagonal.
    CHECK(std::abs(y(1, 1) - (y12 + j * 0.01 + y23 / (t * t))) < 1e-12);
    CHECK(std::abs(y(1, 2) + y23 / t) < 1e-12);
    CHECK(std::abs(y(2, 1) + y23 / t) < 1e-12);
    // Bus shunt of 10 MVAr at 1 p.u.
    CHECK(std::abs(y(2, 2) - (y23 + y13 + j * 0.1)) < 1e-12);
}

TEST_CASE("two-bus fixture admittance is the line susceptance") {
    const auto y = build_ybus(fixture("twobus_x025.m")).y;
    CHECK(std::abs(y(0, 0) - Complex(0, -4)) < 1e-12);
    CHECK(std::abs(y(0, 1) - Complex(0, 4)) < 1e-12);
    CHECK(std::abs(y(1, 1) - Complex(0, -4)) < 1e-12);
}

TEST_CASE("admittance matrix is symmetric without phase shifters") {
    for (const char* name : {"case14.m", "case57.m", "case118.m"}) {
        const auto& m = fixture(name);
        bool shifters = false;
        for (const auto& b : m.branches()) shifters = shifters || b.shift_deg != 0.0;
        if (shifters) continue;
        const auto y = build_ybus(m).y;
        CHECK((y - y.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("partial and full outages scale the branch stamp") {
    const auto& m = fixture("case14.m");
    const auto b = *m.find_branch("5-6");
    const auto y0 = build_ybus(m).y;
    const auto st = branch_stamp(m, b);

    SUBCASE("severity 0 is the identity") { CHECK(apply_outage(m, b, 0.0) == m); }
    SUBCASE("severity 0.5 removes half the stamp") {
        const auto y = build_ybus(apply_outage(m, b, 0.5)).y;
        const auto f = static_cast<Eigen::Index>(st.from), t = static_cast<Eigen::Index>(st.to);
        CHECK(std::abs(y(f, f) - (y0(f, f) - 0.5 * st.yff)) < 1e-12);
        CHECK(std::abs(y(f, t) - (y0(f, t) - 0.5 * st.yft)) < 1e-12);
        CHECK(std::abs(y(t, t) - (y0(t, t) - 0.5 * st.ytt)) < 1e-12);
    }
    SUBCASE("severity 1 opens the branch") {
        const auto post = apply_outage(m, b, 1.0);
        CHECK_FALSE(post.branches()[b].in_service);
        CHECK_THROWS_AS(apply_outage(post, b, 1.0), ValidationError);
    }
    CHECK_THROWS_AS(apply_outage(m, b, 1.5), ValidationError);
    CHECK_THROWS_AS(apply_outage(m, 999, 1.0), ValidationError);
}

TEST_CASE("radial outage islands the far bus") {
    const auto& m = fixture("case14.m");
    const auto post = apply_outage(m, *m.find_branch("7-8"), 1.0);
    const auto isl = islanded_buses(post);
    REQUIRE(isl.size() == 1);
    CHECK(post.buses()[isl[0]].id == 8);
    CHECK(islanded_buses(m).empty());
    CHECK_THROWS_AS(solve_power_flow(post), IslandingError);
}

TEST_CASE("JSON mirror round-trips every fixture") {
    for (const char* name : {"case9.m", "case14.m", "case57.m", "case118.m", "twobus_x01.m"}) {
        const auto& m = fixture(name);
        CHECK(load_case(to_json_text(m)) == m);
    }
}

TEST_CASE("branch labels resolve back to their branch") {
    const auto& m = fixture("case118.m");
    bool parallel = false;
    for (BranchId b = 0; b < m.branches().size(); ++b) {
        const auto label = m.branch_label(b);
        parallel = parallel || label.find('#') != std::string::npos;
        CHECK(m.find_branch(label) == b);
    }
    CHECK(parallel);
    CHECK_FALSE(m.find_branch("1-999"));
    CHECK_FALSE(m.find_branch("garbage"));
}

TEST_CASE("malformed case text reports the line") {
    const std::string bad = std::string(kThreeBus).replace(std::string(kThreeBus).find("0.25"), 4, "x.25");
    try {
        load_case(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 15);
    }
    CHECK_THROWS_AS(load_case("mpc.baseMVA = 100;\n"), ParseError);
    CHECK_THROWS_AS(load_case("mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 1 1 1.1 0.9;\n"), ParseError);
}

TEST_CASE("model validation rejects inconsistent tables") {
    const auto& m = fixture("case14.m");
    auto branches = m.branches();
    branches[0].to = 999;
    CHECK_THROWS_AS(m.with_branches(branches), ValidationError);
    auto buses = m.buses();
    buses[1].id = buses[0].id;
    CHECK_THROWS_AS(m.with_buses(buses), ValidationError);
}
