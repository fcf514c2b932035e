#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "magflow/checkin.hpp"
#include "magflow/geo.hpp"

namespace magflow {

/// Directed transition tallies per time bin, restricted to graph edges.
/// Key layout: (bin * |E| + edge) * 2 + dir, dir 0 = low->high endpoint.
struct TransitionCounts {
    std::size_t n_bins = 0;
    std::size_t n_edges = 0;
    std::unordered_map<std::uint64_t, std::int64_t> counts;
    std::size_t skipped_non_edges = 0;
    std::size_t skipped_self = 0;

    std::uint64_t key(int bin, std::size_t edge, int dir) const {
        return (static_cast<std::uint64_t>(bin) * n_edges + edge) * 2 + dir;
    }
    std::int64_t get(int bin, std::size_t edge, int dir) const {
        auto it = counts.find(key(bin, edge, dir));
        return it == counts.end() ? 0 : it->second;
    }
};

/// N_b x |E| signal matrix, every entry in [-1, 1].
struct SignalMatrix {
    Eigen::MatrixXd S;
};

/// Rank-R factorization S ~= Pi * Psi with singular values folded into Pi.
struct LowRankBasis {
    Eigen::MatrixXd Pi;    // N_b x R
    Eigen::MatrixXd Psi;   // R x |E|, orthonormal rows
    int rank = 0;
    int effective_rank = 0;  // components with nonzero singular value
};

/// Tallies consecutive pairs (p_{t-1} -> p_t) that lie on a graph edge,
/// binned by the destination timestamp. Self-transitions are skipped.
TransitionCounts count_transitions(const std::vector<Trajectory>& trajectories,
                                   const GeoGraph& graph, const TimeBinner& binner);

/// S[b,e] = tanh((log(N_fwd + alpha) - log(N_bwd + alpha)) / kappa).
SignalMatrix edge_signal(const TransitionCounts& counts, double alpha = 1.0, double kappa = 1.0);

/// Truncated SVD of S via the Gram matrix of the smaller side. Deterministic
/// sign convention: the largest-|.| entry of each Psi row is positive.
/// Ranks past the matrix rank are zero-padded (warning on stderr).
LowRankBasis factorize(const Eigen::MatrixXd& S, int rank = 12);

// Basis cache, magic MGB1.
void write_basis_cache(const std::string& path, const LowRankBasis& basis, std::uint64_t input_hash);
LowRankBasis read_basis_cache(const std::string& path, std::uint64_t* input_hash_out = nullptr);

}  // namespace magflow
