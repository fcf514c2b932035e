#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace magflow {

/// Offline artifact consumed by the online feature path: per-basis
/// unit-modulus tokens stored as angles (modulus is exact by construction),
/// plus the time-bin mixing coefficients Pi.
struct PhaseTokenBank {
    std::size_t n_pois = 0;
    int n_bases = 0;  // R
    int k = 0;        // tokens per POI per basis
    double q = 0.0;
    std::uint64_t graph_hash = 0;
    std::vector<Eigen::MatrixXd> angles;  // R matrices, each |P| x k
    Eigen::MatrixXd Pi;                   // N_b x R
};

/// "w/o TC" ablation: every Pi row replaced by the bin-mean row, which
/// removes the time dependence of the basis mixture.
PhaseTokenBank with_mean_time_mixing(const PhaseTokenBank& bank);

// Bank cache, magic MGU1. Loading verifies the expected graph hash.
void write_bank_cache(const std::string& path, const PhaseTokenBank& bank);
PhaseTokenBank read_bank_cache(const std::string& path,
                               const std::uint64_t* expected_graph_hash = nullptr);

}  // namespace magflow
