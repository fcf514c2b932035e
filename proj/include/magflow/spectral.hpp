#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <vector>

#include "magflow/bank.hpp"
#include "magflow/dirfield.hpp"
#include "magflow/geo.hpp"
#include "magflow/lanczos.hpp"

namespace magflow {

/// Antisymmetric per-pair direction values lifted from one Psi row:
/// A(i,j) = +psi_e for i < j on an edge, -psi_e for i > j, 0 otherwise.
struct DirectionMatrix {
    const GeoGraph* graph = nullptr;
    std::vector<double> edge_values;  // aligned with graph->edges

    double entry(std::uint32_t i, std::uint32_t j) const {
        if (i == j || !graph) return 0.0;
        const std::int64_t e = graph->edge_id(i, j);
        if (e < 0) return 0.0;
        return i < j ? edge_values[static_cast<std::size_t>(e)]
                     : -edge_values[static_cast<std::size_t>(e)];
    }
};

DirectionMatrix lift_antisymmetric(const Eigen::VectorXd& psi_row, const GeoGraph& graph);

/// L = I - D^{-1/2} H D^{-1/2} with H_ij = W_ij exp(i 2 pi q A_ij).
/// Hermitian by storage: one complex value per edge (i < j), the (j, i)
/// entry is derived as its conjugate. Isolated nodes keep L_ii = 1 with a
/// zero row/column in the normalized term.
struct MagneticLaplacian {
    std::size_t n = 0;
    double q = 0.0;
    const GeoGraph* graph = nullptr;
    std::vector<std::complex<double>> off_diag;  // -(W e^{i phi}) / sqrt(d_i d_j), per edge
    std::vector<double> phi;                     // 2 pi q A_ij for i < j, per edge

    void apply(const Eigen::VectorXcd& x, Eigen::VectorXcd& y) const;
    Eigen::MatrixXcd to_dense() const;
};

MagneticLaplacian build_hermitian_laplacian(const GeoGraph& graph, const DirectionMatrix& A,
                                            double q);

struct SpectralOptions {
    double tol = 1e-10;
    std::uint64_t seed = 0x5eed;
    Eigen::Index dense_threshold = 512;  // at or below: dense eigendecomposition
    bool force_lanczos = false;
    double degeneracy_gap = 1e-10;       // adjacent-eigenvalue warning threshold
};

/// Smallest-k eigenpairs, Lanczos above the dense threshold. Emits a stderr
/// warning when adjacent eigenvalues are closer than degeneracy_gap.
EigsResult smallest_k_eigs(const MagneticLaplacian& L, int k, const SpectralOptions& opts = {});

/// Elementwise eigenvector phases; entries with |V| < 1e-12 map to angle 0.
Eigen::MatrixXd phase_tokens(const Eigen::MatrixXcd& V);

struct BankBuildReport {
    std::vector<double> per_basis_seconds;
};

/// Full offline pipeline: for each basis r, lift -> Laplacian -> eigenpairs
/// -> angle tokens. Bases are independent and run in parallel when
/// threads > 1. Pi is carried into the bank for online mixing.
PhaseTokenBank precompute_bank(const GeoGraph& graph, const LowRankBasis& basis, double q, int k,
                               const SpectralOptions& opts = {}, int threads = 1,
                               BankBuildReport* report = nullptr);

}  // namespace magflow
