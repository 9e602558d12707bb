#pragma once

#include <map>
#include <string>

#include "vsa/qlimits.hpp"

namespace vsa::test {

inline std::string case_path(const std::string& name) { return std::string(VSA_DATA_DIR) + "/cases/" + name; }

/// Parsed case, cached for the lifetime of the test binary.
inline const NetworkModel& fixture(const std::string& name) {
    static std::map<std::string, NetworkModel> cache;
    auto it = cache.find(name);
    if (it == cache.end()) it = cache.emplace(name, load_case_file(case_path(name))).first;
    return it->second;
}

struct RampPoint {
    NetworkModel model;
    OperatingState state;
    LoadDirection dir;
    MeasurementWindow window;
};

/// Noise-free window of `w` snapshots spaced `dk` apart, ending at multiplier `k_end`.
inline RampPoint ramp_window(const NetworkModel& base, double k_end, double dk = 0.002, std::size_t w = 30) {
    const auto dir0 = LoadDirection::pq_loads(base);
    const double k0 = k_end - static_cast<double>(w - 1) * dk;
    OperatingState prev;
    bool have = false;
    for (double k = 1.0; k < k0 - 1e-12; k += 0.01) {
        prev = solve_power_flow(scale_loading(base, k, dir0), {}, have ? &prev : nullptr);
        have = true;
    }
    RampPoint r{base, {}, dir0, MeasurementWindow(w)};
    for (std::size_t i = 0; i < w; ++i) {
        const double k = k0 + static_cast<double>(i) * dk;
        auto m = scale_loading(base, k, dir0);
        auto st = solve_power_flow(m, {}, have ? &prev : nullptr);
        if (!st.converged) throw Error("ramp diverged at k = " + std::to_string(k));
        prev = st;
        have = true;
        r.window.append(exact_estimate(m, st, static_cast<double>(i)));
        if (i + 1 == w) {
            r.model = m;
            r.state = st;
            r.dir = LoadDirection::pq_loads(m);
        }
    }
    return r;
}

}  // namespace vsa::test
