#include "magflow/tidal.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <vector>

#include "magflow/common.hpp"
#include "magflow/geo.hpp"

namespace magflow {

namespace {
constexpr std::int64_t kBaseMonday = 1704067200;  // 2024-01-01 00:00 UTC
}

void generate_tidal(const TidalConfig& cfg, const std::string& csv_path) {
    if (cfg.grid_side < 2 || cfg.n_users < 1 || cfg.asymmetry < 0.0 || cfg.asymmetry > 1.0)
        throw ValidationError("generate_tidal: bad config");
    if (cfg.morning_lo > cfg.morning_hi || cfg.evening_lo > cfg.evening_hi ||
        cfg.morning_lo < 0 || cfg.evening_hi > 23)
        throw ValidationError("generate_tidal: bad start-hour windows");

    const int side = cfg.grid_side;
    const int steps = cfg.steps_per_run > 0 ? cfg.steps_per_run : side + 2;
    const double km_per_deg_lat = M_PI * kEarthRadiusKm / 180.0;
    const double dlat = cfg.spacing_km / km_per_deg_lat;
    const double dlon = cfg.spacing_km / (km_per_deg_lat * std::cos(cfg.base_lat * M_PI / 180.0));

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> start_col_dist(0, side - 1);
    std::uniform_int_distribution<int> morning_dist(cfg.morning_lo, cfg.morning_hi);
    std::uniform_int_distribution<int> evening_dist(cfg.evening_lo, cfg.evening_hi);
    std::uniform_int_distribution<int> jitter_dist(0, 599);
    std::uniform_int_distribution<int> step_gap_dist(240, 420);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write check-in file: " + csv_path);
    out << "user_id,poi_id,timestamp,lat,lon,category\n";

    char buf[256];
    auto emit = [&](int user, int row, int col, std::int64_t ts) {
        const double lat = cfg.base_lat + row * dlat;
        const double lon = cfg.base_lon + col * dlon;
        std::snprintf(buf, sizeof(buf), "u%d,p%d_%d,%lld,%.6f,%.6f,%s\n", user, row, col,
                      static_cast<long long>(ts), lat, lon, col < side / 2 ? "res" : "com");
        out << buf;
    };

    const double p_with = 0.5 * (1.0 + cfg.asymmetry);
    for (int u = 0; u < cfg.n_users; ++u) {
        const int home_row = u % side;
        const int home_col = start_col_dist(rng);
        int row = home_row;
        int col = home_col;

        for (int day = 0; day < cfg.days; ++day) {
            // Each day starts back home so wander cannot slowly detach a
            // commuter from their row.
            row = home_row;
            col = home_col;
            for (int run = 0; run < 2; ++run) {
                const int start_hour = run == 0 ? morning_dist(rng) : evening_dist(rng);
                const int drift = run == 0 ? 1 : -1;  // east in the morning, west after
                std::int64_t ts = kBaseMonday + static_cast<std::int64_t>(day) * 86400 +
                                  static_cast<std::int64_t>(start_hour) * 3600 + jitter_dist(rng);
                emit(u, row, col, ts);
                for (int step = 0; step < steps; ++step) {
                    ts += step_gap_dist(rng);
                    if (unit(rng) < cfg.wander_prob) {
                        const int nr = row + (unit(rng) < 0.5 ? 1 : -1);
                        if (nr < 0 || nr >= side) continue;  // stay, no check-in
                        row = nr;
                    } else {
                        const int dir = unit(rng) < p_with ? drift : -drift;
                        const int nc = col + dir;
                        if (nc < 0 || nc >= side) continue;  // stay, no check-in
                        col = nc;
                    }
                    emit(u, row, col, ts);
                }
            }
        }
    }
    if (!out) throw IoError("failed writing check-in file: " + csv_path);
}

}  // namespace magflow
