#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mgrid/common.hpp"
#include "mgrid/params.hpp"
#include "mgrid/rng.hpp"

namespace mgrid {

enum class LoadProfile { residential, industrial };

inline LoadProfile load_profile_from_string(const std::string& s) {
    if (s == "residential") return LoadProfile::residential;
    if (s == "industrial") return LoadProfile::industrial;
    throw ConfigError("unknown load profile '" + s + "' (expected residential or industrial)");
}

inline const char* to_string(LoadProfile p) {
    return p == LoadProfile::residential ? "residential" : "industrial";
}

namespace detail {

// Fixed daily shapes on a 96-point (15-minute) grid, normalized to peak 1.
// Residential: morning and evening humps over a night base. Industrial:
// working-hours plateau.
inline const std::vector<double>& profile_shape(LoadProfile p) {
    static const std::vector<double> residential = [] {
        std::vector<double> s(96);
        for (int t = 0; t < 96; ++t) {
            double morning = 0.28 * std::exp(-0.5 * std::pow((t - 30.0) / 9.0, 2));
            double evening = 0.45 * std::exp(-0.5 * std::pow((t - 78.0) / 10.0, 2));
            s[static_cast<size_t>(t)] = 0.35 + morning + evening;
        }
        double peak = *std::max_element(s.begin(), s.end());
        for (double& v : s) v /= peak;
        return s;
    }();
    static const std::vector<double> industrial = [] {
        std::vector<double> s(96);
        for (int t = 0; t < 96; ++t) {
            double up = 1.0 / (1.0 + std::exp(-(t - 30.0) / 3.0));
            double down = 1.0 / (1.0 + std::exp((t - 72.0) / 3.0));
            s[static_cast<size_t>(t)] = 0.30 + 0.65 * up * down;
        }
        double peak = *std::max_element(s.begin(), s.end());
        for (double& v : s) v /= peak;
        return s;
    }();
    return p == LoadProfile::residential ? residential : industrial;
}

}  // namespace detail

// Forecast follows the daily shape scaled to the peak; the realization adds
// uniform noise within the error bound, clamped to nonnegative loads (which
// keeps the realization inside the bound since forecasts are nonnegative).
inline LoadTrace generate_loads(LoadProfile profile, double peak, double d_max, int steps,
                                std::mt19937_64& rng) {
    if (peak <= 0) throw ConfigError("load peak must be positive");
    if (steps <= 0) throw ConfigError("step count must be positive");
    const auto& shape = detail::profile_shape(profile);
    LoadTrace trace;
    trace.forecast.resize(static_cast<size_t>(steps));
    trace.actual.resize(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        double f = shape[static_cast<size_t>(k % 96)] * peak;
        trace.forecast[static_cast<size_t>(k)] = f;
        trace.actual[static_cast<size_t>(k)] = std::max(0.0, f + uniform(rng, -d_max, d_max));
    }
    trace.validate(d_max);
    return trace;
}

}  // namespace mgrid
