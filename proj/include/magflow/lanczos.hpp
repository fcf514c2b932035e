#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>

namespace magflow {

using HermitianMatVec = std::function<void(const Eigen::VectorXcd&, Eigen::VectorXcd&)>;

struct EigsOptions {
    double tol = 1e-10;          // Ritz residual threshold
    int max_cycles = 200;        // restart budget before giving up
    std::uint64_t seed = 0x5eed; // start-vector generator
};

struct EigsResult {
    Eigen::VectorXd eigenvalues;   // ascending, length k
    Eigen::MatrixXcd eigenvectors; // n x k, orthonormal columns
    int matvecs = 0;
};

/// Smallest-k eigenpairs of a Hermitian operator by explicitly restarted
/// Lanczos with full reorthogonalization. Converged Ritz vectors are locked
/// and deflated across restarts, which also recovers multiple copies of
/// degenerate eigenvalues. Each cycle runs at most 10*k steps.
/// Throws NumericalError with the final residual on non-convergence.
EigsResult smallest_k_eigs_lanczos(Eigen::Index n, const HermitianMatVec& apply, int k,
                                   const EigsOptions& opts = {});

/// Dense Hermitian route (also the test oracle for the Lanczos path).
EigsResult smallest_k_eigs_dense(const Eigen::MatrixXcd& L, int k);

}  // namespace magflow
