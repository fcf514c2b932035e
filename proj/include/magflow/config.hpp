#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace magflow {

enum class Ablation { none, no_phase, no_tc, real_mamba };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

/// Flat `key = value` run configuration; unknown keys are rejected.
struct RunConfig {
    // paths
    std::string checkins;
    std::string workdir = ".";

    // model
    int D = 96;
    int time_emb = 32;
    int cat_emb = 32;
    int layers = 2;
    int k = 16;

    // graph + direction field
    double radius_km = 1.5;
    double sigma_geo_km = 1.0;
    double alpha = 1.0;
    double kappa = 1.0;
    int n_bins = 168;
    int R = 12;
    double q = 0.20;

    // data filtering
    int min_poi_visits = 5;
    int min_len = 3;
    int max_len = 101;

    // optimization
    double lr = 1e-3;
    double wd = 1e-3;
    int batch = 128;
    int epochs = 50;
    int max_steps = 0;
    std::uint64_t seed = 42;

    // run behavior
    Ablation ablation = Ablation::none;
    int threads = 1;

    // benchmark protocol
    int bench_batch = 128;
    int bench_warmup = 20;
    int bench_iters = 200;

    // synthetic generator
    int gen_grid = 8;
    int gen_users = 40;
    double gen_asym = 1.0;
    int gen_days = 14;
    double gen_wander = 0.25;
    double gen_spacing_km = 0.35;

    void validate() const;

    /// Canonical serialized form (fixed key order); also what gets written
    /// as the effective config.
    std::string canonical_text() const;

    /// Hash gating checkpoint compatibility: data identity, filtering, and
    /// architecture-relevant keys. Feature-side ablations (no_phase, no_tc)
    /// do not change the trained parameter shapes and are excluded;
    /// real_mamba changes layer dynamics and is included.
    std::uint64_t model_config_hash(std::uint64_t data_hash) const;
};

RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
void apply_override(RunConfig& cfg, const std::string& key_eq_value);
void write_effective_config(const std::string& path, const RunConfig& cfg);

}  // namespace magflow
