#include "magflow/lanczos.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "magflow/common.hpp"

namespace magflow {

namespace {

Eigen::VectorXcd random_unit_vector(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXcd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = std::complex<double>(normal(rng), normal(rng));
    v.normalize();
    return v;
}

void orthogonalize_against(Eigen::VectorXcd& w, const std::vector<Eigen::VectorXcd>& basis) {
    // Two classical Gram-Schmidt sweeps keep orthogonality to working precision.
    for (int sweep = 0; sweep < 2; ++sweep)
        for (const auto& u : basis) w -= u.dot(w) * u;
}

struct CycleOutcome {
    std::vector<double> values;            // converged ascending prefix
    std::vector<Eigen::VectorXcd> vectors;
    Eigen::VectorXcd next_start;           // best unconverged Ritz vector, may be empty
    double residual = 0.0;                 // residual of first unconverged pair
    int matvecs = 0;
};

/// One explicitly-restarted Lanczos cycle, deflated against `locked`.
/// Locks at most `want` pairs, and only an ascending-converged prefix so a
/// larger eigenvalue can never displace a missed smaller one.
CycleOutcome run_cycle(Eigen::Index n, const HermitianMatVec& apply, int want,
                       const std::vector<Eigen::VectorXcd>& locked, Eigen::VectorXcd v,
                       int max_steps, double tol) {
    CycleOutcome out;
    orthogonalize_against(v, locked);
    if (v.norm() < 1e-12) return out;  // start lies inside the locked span
    v.normalize();

    std::vector<Eigen::VectorXcd> basis{v};
    std::vector<double> alpha, beta;
    Eigen::VectorXcd w(n);
    bool breakdown = false;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
    for (int j = 0; j < max_steps; ++j) {
        apply(basis.back(), w);
        ++out.matvecs;
        if (j > 0) w -= beta.back() * basis[j - 1];
        const double a = std::real(basis[j].dot(w));
        alpha.push_back(a);
        w -= a * basis[j];
        orthogonalize_against(w, basis);
        orthogonalize_against(w, locked);
        const double b = w.norm();
        if (b < 1e-13) {
            breakdown = true;  // Krylov space closed: Ritz pairs are exact
            break;
        }
        beta.push_back(b);
        basis.push_back(w / b);

        const auto m = static_cast<Eigen::Index>(alpha.size());
        if (m < want) continue;
        Eigen::VectorXd ad = Eigen::Map<const Eigen::VectorXd>(alpha.data(), m);
        Eigen::VectorXd bd = Eigen::Map<const Eigen::VectorXd>(beta.data(), m - 1);
        tri.computeFromTridiagonal(ad, bd);
        bool done = true;
        for (int i = 0; i < want; ++i)
            if (std::abs(beta.back() * tri.eigenvectors()(m - 1, i)) > tol) {
                done = false;
                break;
            }
        if (done) break;
    }
    if (alpha.empty()) return out;

    const auto m = static_cast<Eigen::Index>(alpha.size());
    Eigen::VectorXd ad = Eigen::Map<const Eigen::VectorXd>(alpha.data(), m);
    Eigen::VectorXd bd =
        Eigen::Map<const Eigen::VectorXd>(beta.data(), std::max<Eigen::Index>(0, m - 1));
    tri.computeFromTridiagonal(ad, bd);
    const double tail =
        (!breakdown && beta.size() == static_cast<std::size_t>(m)) ? beta[m - 1] : 0.0;

    for (Eigen::Index i = 0; i < m; ++i) {
        const double res = breakdown ? 0.0 : std::abs(tail * tri.eigenvectors()(m - 1, i));
        Eigen::VectorXcd x = Eigen::VectorXcd::Zero(n);
        for (Eigen::Index r = 0; r < m; ++r) x += tri.eigenvectors()(r, i) * basis[r];
        if (res > tol || static_cast<int>(out.values.size()) >= want) {
            out.next_start = std::move(x);
            out.residual = res;
            break;
        }
        orthogonalize_against(x, locked);
        const double nx = x.norm();
        if (nx < 1e-8) continue;  // numerically inside the locked span
        out.values.push_back(tri.eigenvalues()(i));
        out.vectors.push_back(x / nx);
    }
    return out;
}

}  // namespace

EigsResult smallest_k_eigs_dense(const Eigen::MatrixXcd& L, int k) {
    if (k < 1 || k >= L.rows())
        throw ValidationError("smallest_k_eigs: k must lie in [1, n)");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(L);
    if (es.info() != Eigen::Success)
        throw NumericalError("dense Hermitian eigendecomposition failed");
    EigsResult out;
    out.eigenvalues = es.eigenvalues().head(k);
    out.eigenvectors = es.eigenvectors().leftCols(k);
    return out;
}

EigsResult smallest_k_eigs_lanczos(Eigen::Index n, const HermitianMatVec& apply, int k,
                                   const EigsOptions& opts) {
    if (k < 1 || k >= n) throw ValidationError("smallest_k_eigs: k must lie in [1, n)");

    std::mt19937_64 rng(opts.seed);
    std::vector<Eigen::VectorXcd> locked;
    std::vector<double> locked_values;
    int matvecs = 0;
    double last_residual = std::numeric_limits<double>::infinity();
    const int steps_per_cycle = static_cast<int>(std::min<Eigen::Index>(n, 10LL * k));
    Eigen::VectorXcd start;

    auto kth_value = [&] {
        std::vector<double> v = locked_values;
        std::sort(v.begin(), v.end());
        return v[k - 1];
    };

    for (int cycle = 0; cycle < opts.max_cycles; ++cycle) {
        const bool have_k = static_cast<int>(locked.size()) >= k;
        if (have_k && static_cast<int>(locked.size()) >= n) break;
        // After k pairs are locked, one more deflated pair verifies that no
        // smaller eigenvalue copy (degenerate case) was skipped over.
        const int want = have_k ? 1 : k - static_cast<int>(locked.size());

        Eigen::VectorXcd v = start.size() == n ? start : random_unit_vector(n, rng);
        start.resize(0);
        auto cyc = run_cycle(n, apply, want, locked, std::move(v), steps_per_cycle, opts.tol);
        matvecs += cyc.matvecs;
        if (cyc.residual > 0.0) last_residual = cyc.residual;
        if (cyc.next_start.size() == n) start = std::move(cyc.next_start);

        if (cyc.values.empty() && cyc.next_start.size() != n) continue;  // fresh random next

        if (!have_k) {
            for (std::size_t i = 0; i < cyc.values.size(); ++i) {
                locked.push_back(std::move(cyc.vectors[i]));
                locked_values.push_back(cyc.values[i]);
            }
        } else {
            if (cyc.values.empty()) continue;
            if (cyc.values.front() < kth_value() - 10 * opts.tol) {
                locked.push_back(std::move(cyc.vectors.front()));
                locked_values.push_back(cyc.values.front());
            } else {
                break;  // verified: nothing smaller remains
            }
        }
        if (static_cast<int>(locked.size()) >= n) break;
    }

    if (static_cast<int>(locked.size()) < k)
        throw NumericalError("Lanczos failed to converge " + std::to_string(k) + " eigenpairs (got " +
                             std::to_string(locked.size()) + ", last residual " +
                             std::to_string(last_residual) + ")");

    std::vector<int> order(locked.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return locked_values[a] < locked_values[b]; });

    EigsResult out;
    out.eigenvalues.resize(k);
    out.eigenvectors.resize(n, k);
    for (int i = 0; i < k; ++i) {
        out.eigenvalues(i) = locked_values[order[i]];
        out.eigenvectors.col(i) = locked[order[i]];
    }
    out.matvecs = matvecs;
    return out;
}

}  // namespace magflow
