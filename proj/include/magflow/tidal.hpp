#pragma once

#include <cstdint>
#include <string>

namespace magflow {

/// Grid city with a residential west half and a commercial east half.
/// Each user performs one eastbound run per day starting in the morning
/// window and one westbound run in the evening window. A commute step moves
/// with the drift direction with probability (1 + asymmetry) / 2, so
/// strength 1 gives deterministic tidal flow and strength 0 a symmetric
/// walk. Lateral wander adds balanced north/south traffic, which yields
/// both strongly symmetric and strongly asymmetric edges in one corpus.
/// Walkers at a border that would step outside simply stay (no check-in).
struct TidalConfig {
    int grid_side = 8;          // POIs = grid_side^2
    int n_users = 40;
    double asymmetry = 1.0;     // in [0, 1]
    std::uint64_t seed = 1;
    int days = 28;
    double spacing_km = 0.35;   // grid pitch
    double wander_prob = 0.2;   // lateral step probability
    int steps_per_run = 0;      // 0 = grid_side + 2
    int morning_lo = 0, morning_hi = 11;   // start-hour window, eastbound
    int evening_lo = 12, evening_hi = 23;  // start-hour window, westbound
    double base_lat = 40.0;
    double base_lon = -74.5;
};

/// Emits the standard check-in CSV. Deterministic for a fixed config.
void generate_tidal(const TidalConfig& cfg, const std::string& csv_path);

}  // namespace magflow
