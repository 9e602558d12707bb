#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "support.hpp"
#include "vsa/security.hpp"

using namespace vsa;
using vsa::test::fixture;

namespace {

double max_vm_error(const OperatingState& a, const OperatingState& b) {
    double w = 0.0;
    for (std::size_t i = 0; i < a.vm.size(); ++i) w = std::max(w, std::abs(a.vm[i] - b.vm[i]));
    return w;
}

/// Two-sided exact p-value by enumerating every sign assignment.
double brute_force_p(const std::vector<double>& d) {
    std::vector<double> nz;
    for (double x : d)
        if (x != 0.0) nz.push_back(x);
    const auto n = nz.size();
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n; ++i) {
        double less = 0, eq = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(nz[j]) < std::abs(nz[i])) ++less;
            if (std::abs(nz[j]) == std::abs(nz[i])) ++eq;
        }
        ranks[i] = less + (eq + 1) / 2;
    }
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (nz[i] > 0) w += ranks[i];
    long ge = 0, le = 0;
    const long total = 1L << n;
    for (long mask = 0; mask < total; ++mask) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1L << i)) s += ranks[i];
        if (s >= w - 1e-9) ++ge;
        if (s <= w + 1e-9) ++le;
    }
    return std::min(1.0, 2.0 * static_cast<double>(std::min(ge, le)) / static_cast<double>(total));
}

ContingencyVerdict verdict(BranchId id, VerdictOutcome o, double wvsi) {
    ContingencyVerdict v;
    v.branch = id;
    v.label = std::to_string(id);
    v.outcome = o;
    v.max_wvsi = o == VerdictOutcome::Assessed ? wvsi : std::numeric_limits<double>::infinity();
    return v;
}

}  // namespace

TEST_CASE("zero severity leaves the pre-contingency state unchanged") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m);
    PiecewiseOptions o;
    o.severity = 0.0;
    const auto tr = piecewise_post_contingency(m, st, *m.find_branch("5-6"), o);
    CHECK(tr.steps.empty());
    CHECK(max_vm_error(tr.final_state, st) == 0.0);
    CHECK(tr.k_reached == 0.0);
}

TEST_CASE("a small outage step without events is a single tangent segment") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m);
    const auto br = *m.find_branch("4-9");
    for (double sev : {0.02, 0.01}) {
        PiecewiseOptions o;
        o.severity = sev;
        o.correct_final = false;
        const auto tr = piecewise_post_contingency(m, st, br, o);
        REQUIRE(tr.steps.size() == 1);
        CHECK(tr.steps[0].events.empty());
        CHECK(tr.steps[0].dk == doctest::Approx(sev));
        const auto exact = solve_power_flow(apply_outage(m, br, sev), {}, &st);
        // First-order prediction: the error shrinks quadratically with the step.
        CHECK(max_vm_error(tr.predicted_state, exact) < 0.5 * sev * sev + 1e-6);
    }
}

TEST_CASE("each segment ends at the nearest limit event") {
    const auto& m = fixture("case14.m");
    const auto loaded = scale_loading(m, 1.3, LoadDirection::pq_loads(m));
    const auto st = solve_power_flow(loaded);
    int with_events = 0;
    for (auto br : all_branches(loaded)) {
        PiecewiseTrace tr;
        try {
            tr = piecewise_post_contingency(loaded, st, br, {.correct_final = false});
        } catch (const IslandingError&) {
            continue;
        } catch (const TraceDivergenceError&) {
            continue;
        }
        PiecewiseOptions o;
        double k = 0.0;
        for (const auto& s : tr.steps) {
            CHECK(s.k == doctest::Approx(k).epsilon(1e-12));
            double nearest = o.severity - s.k;
            for (const auto& e : s.active) {
                CHECK(e.ratio >= 0.0);
                nearest = std::min(nearest, e.ratio);
            }
            CHECK(s.dk == doctest::Approx(std::min(std::max(nearest, o.min_step), o.severity - s.k)).epsilon(1e-12));
            for (const auto& ev : s.events) {
                const auto it = std::find_if(s.active.begin(), s.active.end(),
                                             [&](const ActiveEntry& e) { return e.bus == ev.bus; });
                REQUIRE(it != s.active.end());
                CHECK(it->ratio <= s.dk + o.min_step + 1e-9);
            }
            with_events += !s.events.empty();
            k += s.dk;
        }
        CHECK(tr.k_reached == doctest::Approx(1.0));
    }
    CHECK(with_events > 0);
}

TEST_CASE("linear post-contingency voltages agree with the AC solution") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m);
    int total = 0, close = 0;
    for (auto br : all_branches(m)) {
        const auto post = apply_outage(m, br, 1.0);
        if (!islanded_buses(post).empty()) continue;
        const auto exact = solve_power_flow(post, {}, &st);
        if (!exact.converged) continue;
        PiecewiseTrace tr;
        try {
            tr = piecewise_post_contingency(m, st, br, {.correct_final = false});
        } catch (const TraceDivergenceError&) {
            total += static_cast<int>(m.bus_count());
            continue;
        }
        for (std::size_t i = 0; i < m.bus_count(); ++i) {
            ++total;
            close += std::abs(tr.predicted_state.vm[i] - exact.vm[i]) <= 0.02;
        }
    }
    REQUIRE(total > 0);
    CHECK(static_cast<double>(close) / total >= 0.9);
}

TEST_CASE("outage tracking rejects islanding and bad input") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m);
    CHECK_THROWS_AS(piecewise_post_contingency(m, st, *m.find_branch("7-8"), {}), IslandingError);
    CHECK_THROWS_AS(piecewise_post_contingency(m, st, 999, {}), ValidationError);
    CHECK_THROWS_AS(piecewise_post_contingency(m, st, 0, {.severity = 1.5}), ValidationError);
    const auto v = assess_contingency(m, st, *m.find_branch("7-8"), LoadDirection::pq_loads(m));
    CHECK(v.outcome == VerdictOutcome::Islanding);
    CHECK(v.critical);
}

TEST_CASE("tracked critical list marks the heading side") {
    const auto& m = fixture("case14.m");
    const auto loaded = scale_loading(m, 1.2, LoadDirection::pq_loads(m));
    const auto st = solve_power_flow(loaded);
    const auto tr = piecewise_post_contingency(loaded, st, *loaded.find_branch("5-6"));
    const auto list = tracked_critical_list(loaded, tr);
    CHECK(list.size() >= tr.final_p_q.size() + tr.final_n_q.size());
    for (const auto& it : list.items) {
        CHECK(std::isnan(it.q_cr));
        const auto b = loaded.bus_index(it.bus_id);
        CHECK(tr.final_state.limits[b] == LimitState::None);
    }
}

TEST_CASE("confusion metrics arithmetic") {
    const auto c = confusion_from_counts(65, 13, 4, 446);
    CHECK(c.accuracy == doctest::Approx(0.9678).epsilon(1e-3));
    CHECK(c.precision == doctest::Approx(0.8333).epsilon(1e-3));
    CHECK(c.recall == doctest::Approx(0.9420).epsilon(1e-3));
    CHECK(c.f_score == doctest::Approx(0.8844).epsilon(1e-3));

    const std::vector<bool> p{true, false, true, false}, a{true, false, true, false};
    std::vector<char> pc(p.begin(), p.end()), ac(a.begin(), a.end());
    const auto agree = confusion_metrics(std::span<const bool>(reinterpret_cast<const bool*>(pc.data()), pc.size()),
                                         std::span<const bool>(reinterpret_cast<const bool*>(ac.data()), ac.size()));
    CHECK(agree.accuracy == 1.0);
    CHECK(agree.f_score == 1.0);

    const auto none = confusion_from_counts(0, 0, 5, 20);
    CHECK(none.precision == 0.0);
    CHECK(none.precision_undefined);
    CHECK(none.f_score == 0.0);
    CHECK_THROWS_AS(confusion_from_counts(-1, 0, 0, 0), ValidationError);
}

TEST_CASE("signed-rank test on a small hand example") {
    const std::vector<double> a{1.0, 0.0, 3.0}, b{0.0, 2.0, 0.0};
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(r.n == 3);
    CHECK(r.w_plus == 4.0);
    CHECK(r.w_minus == 2.0);
    CHECK(r.p_value == doctest::Approx(0.75));
}

TEST_CASE("signed-rank p-value matches full enumeration, ties included") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> u(-4, 4);
    for (int trial = 0; trial < 40; ++trial) {
        const auto n = static_cast<std::size_t>(3 + trial % 10);
        std::vector<double> a(n), b(n, 0.0), d(n);
        for (std::size_t i = 0; i < n; ++i) a[i] = d[i] = u(rng);
        if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) continue;
        const auto r = wilcoxon_signed_rank(a, b);
        CHECK(r.p_value == doctest::Approx(brute_force_p(d)).epsilon(1e-12));
        CHECK(r.w_plus + r.w_minus == doctest::Approx(r.n * (r.n + 1) / 2.0));
        CHECK(r.ci_low <= r.ci_high);
    }
}

TEST_CASE("signed-rank test symmetry and degenerate input") {
    const std::vector<double> a{1, 2, 3, 4, 5, 6, 7, 8}, b{2, 1, 5, 3, 4, 8, 6, 7};
    const auto ab = wilcoxon_signed_rank(a, b);
    const auto ba = wilcoxon_signed_rank(b, a);
    CHECK(ab.p_value == doctest::Approx(ba.p_value));
    CHECK(ab.w_plus == ba.w_minus);
    CHECK(ab.ci_low == doctest::Approx(-ba.ci_high));

    const auto same = wilcoxon_signed_rank(a, a);
    CHECK(same.degenerate);
    CHECK(same.p_value == 1.0);
    const std::vector<double> shorter{1, 2};
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, shorter), ValidationError);
}

TEST_CASE("ranking puts divergence and islanding first then descending index") {
    std::vector<ContingencyVerdict> v{verdict(4, VerdictOutcome::Assessed, 0.3), verdict(2, VerdictOutcome::Assessed, 0.8),
                                      verdict(7, VerdictOutcome::Islanding, 0), verdict(1, VerdictOutcome::Assessed, 0.8),
                                      verdict(3, VerdictOutcome::Diverged, 0)};
    const auto r = rank_contingencies(v);
    REQUIRE(r.size() == 5);
    std::vector<BranchId> order;
    for (const auto& x : r) order.push_back(x.branch);
    CHECK(order == std::vector<BranchId>{3, 7, 1, 2, 4});
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i].rank == static_cast<int>(i + 1));
    CHECK(rank_contingencies({}).empty());

    // Ranking order is a permutation and is independent of input order.
    std::reverse(v.begin(), v.end());
    const auto r2 = rank_contingencies(v);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r2[i].branch == r[i].branch);
}

TEST_CASE("raising the threshold never adds critical contingencies") {
    const auto& m = fixture("case14.m");
    const auto st = solve_power_flow(m);
    const auto br = all_branches(m);
    std::vector<BranchId> some(br.begin() + 2, br.begin() + 8);
    auto low = screen_contingencies(m, st, some, LoadDirection::pq_loads(m), {.threshold = 0.3});
    auto high = screen_contingencies(m, st, some, LoadDirection::pq_loads(m), {.threshold = 0.6});
    REQUIRE(low.size() == high.size());
    for (std::size_t i = 0; i < low.size(); ++i) {
        CHECK(low[i].max_wvsi == high[i].max_wvsi);
        if (high[i].critical) CHECK(low[i].critical);
    }
}

TEST_CASE("ranking comparison orders by oracle margin") {
    std::vector<ContingencyVerdict> v;
    for (BranchId i = 0; i < 6; ++i) {
        auto x = verdict(i, VerdictOutcome::Assessed, 0.1 * static_cast<double>(i));
        x.delta_lambda = 1.0 - 0.1 * static_cast<double>(i);
        v.push_back(x);
    }
    const auto c = compare_rankings(v, 4);
    REQUIRE(c.branches.size() == 4);
    CHECK(c.branches.front() == 5);
    CHECK(c.oracle_rank == c.index_rank);
    CHECK(c.test.degenerate);
    v[0].delta_lambda.reset();
    CHECK_THROWS_AS(compare_rankings(v, 4), ValidationError);
}
