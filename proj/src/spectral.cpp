#include "magflow/spectral.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include "magflow/common.hpp"

namespace magflow {

DirectionMatrix lift_antisymmetric(const Eigen::VectorXd& psi_row, const GeoGraph& graph) {
    if (psi_row.size() != static_cast<Eigen::Index>(graph.n_edges()))
        throw ValidationError("lift_antisymmetric: psi row length must equal |E|");
    DirectionMatrix A;
    A.graph = &graph;
    A.edge_values.assign(psi_row.data(), psi_row.data() + psi_row.size());
    return A;
}

MagneticLaplacian build_hermitian_laplacian(const GeoGraph& graph, const DirectionMatrix& A,
                                            double q) {
    if (q < 0.0) throw ValidationError("magnetic charge q must be >= 0");
    MagneticLaplacian L;
    L.n = graph.n_pois;
    L.q = q;
    L.graph = &graph;
    L.off_diag.resize(graph.n_edges());
    L.phi.resize(graph.n_edges());
    for (std::size_t e = 0; e < graph.n_edges(); ++e) {
        const auto& edge = graph.edges[e];
        const double di = graph.degrees[edge.i];
        const double dj = graph.degrees[edge.j];
        // Edge endpoints have positive degree by construction; the isolated
        // node rule (zero row, unit diagonal) needs no stored entries.
        const double phi = 2.0 * M_PI * q * A.edge_values[e];
        L.phi[e] = phi;
        L.off_diag[e] = -(edge.weight / std::sqrt(di * dj)) *
                        std::complex<double>(std::cos(phi), std::sin(phi));
    }
    return L;
}

void MagneticLaplacian::apply(const Eigen::VectorXcd& x, Eigen::VectorXcd& y) const {
    y = x;  // unit diagonal
    for (std::size_t e = 0; e < off_diag.size(); ++e) {
        const auto& edge = graph->edges[e];
        y(edge.i) += off_diag[e] * x(edge.j);
        y(edge.j) += std::conj(off_diag[e]) * x(edge.i);
    }
}

Eigen::MatrixXcd MagneticLaplacian::to_dense() const {
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Identity(static_cast<Eigen::Index>(n),
                                                    static_cast<Eigen::Index>(n));
    for (std::size_t e = 0; e < off_diag.size(); ++e) {
        const auto& edge = graph->edges[e];
        M(edge.i, edge.j) = off_diag[e];
        M(edge.j, edge.i) = std::conj(off_diag[e]);
    }
    return M;
}

EigsResult smallest_k_eigs(const MagneticLaplacian& L, int k, const SpectralOptions& opts) {
    const auto n = static_cast<Eigen::Index>(L.n);
    EigsResult result;
    if (!opts.force_lanczos && n <= opts.dense_threshold) {
        result = smallest_k_eigs_dense(L.to_dense(), k);
    } else {
        EigsOptions eo;
        eo.tol = opts.tol;
        eo.seed = opts.seed;
        result = smallest_k_eigs_lanczos(
            n, [&L](const Eigen::VectorXcd& x, Eigen::VectorXcd& y) { L.apply(x, y); }, k, eo);
    }
    for (int i = 0; i + 1 < k; ++i)
        if (result.eigenvalues(i + 1) - result.eigenvalues(i) < opts.degeneracy_gap) {
            std::cerr << "[magflow] near-degenerate eigenvalues " << result.eigenvalues(i)
                      << ", " << result.eigenvalues(i + 1)
                      << "; relying on deterministic solver ordering\n";
            break;
        }
    return result;
}

Eigen::MatrixXd phase_tokens(const Eigen::MatrixXcd& V) {
    Eigen::MatrixXd angles(V.rows(), V.cols());
    for (Eigen::Index i = 0; i < V.rows(); ++i)
        for (Eigen::Index m = 0; m < V.cols(); ++m) {
            const std::complex<double> v = V(i, m);
            angles(i, m) = std::abs(v) < 1e-12 ? 0.0 : std::atan2(v.imag(), v.real());
        }
    return angles;
}

PhaseTokenBank precompute_bank(const GeoGraph& graph, const LowRankBasis& basis, double q, int k,
                               const SpectralOptions& opts, int threads, BankBuildReport* report) {
    const int R = basis.rank;
    if (basis.Psi.cols() != static_cast<Eigen::Index>(graph.n_edges()))
        throw ValidationError("basis |E| does not match graph");
    if (k >= static_cast<int>(graph.n_pois))
        throw ValidationError("phase dimension k must be < |P|");

    PhaseTokenBank bank;
    bank.n_pois = graph.n_pois;
    bank.n_bases = R;
    bank.k = k;
    bank.q = q;
    bank.graph_hash = graph.content_hash();
    bank.Pi = basis.Pi;
    bank.angles.assign(R, Eigen::MatrixXd());

    std::vector<double> seconds(R, 0.0);
    std::vector<std::string> errors(R);

    parallel_for_chunks(static_cast<std::size_t>(R), threads,
                        [&](std::size_t lo, std::size_t hi, int) {
        for (std::size_t r = lo; r < hi; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            try {
                SpectralOptions per = opts;
                per.seed = opts.seed + r;  // independent deterministic streams
                const DirectionMatrix A = lift_antisymmetric(basis.Psi.row(r), graph);
                const MagneticLaplacian L = build_hermitian_laplacian(graph, A, q);
                const EigsResult eigs = smallest_k_eigs(L, k, per);
                bank.angles[r] = phase_tokens(eigs.eigenvectors);
            } catch (const std::exception& e) {
                errors[r] = "basis " + std::to_string(r) + ": " + e.what();
            }
            seconds[r] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    });

    for (const auto& err : errors)
        if (!err.empty()) throw NumericalError("precompute_bank: " + err);
    if (report) report->per_basis_seconds = seconds;
    return bank;
}

PhaseTokenBank with_mean_time_mixing(const PhaseTokenBank& bank) {
    PhaseTokenBank out = bank;
    const Eigen::RowVectorXd mean = bank.Pi.colwise().mean();
    for (Eigen::Index b = 0; b < out.Pi.rows(); ++b) out.Pi.row(b) = mean;
    return out;
}

namespace {
constexpr char kBankMagic[4] = {'M', 'G', 'U', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated bank cache: " + path);
}
}  // namespace

void write_bank_cache(const std::string& path, const PhaseTokenBank& bank) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write bank cache: " + path);
    out.write(kBankMagic, 4);
    put(out, static_cast<std::uint64_t>(bank.n_pois));
    put(out, static_cast<std::uint64_t>(bank.n_bases));
    put(out, static_cast<std::uint64_t>(bank.k));
    put(out, static_cast<std::uint64_t>(bank.Pi.rows()));
    put(out, bank.q);
    put(out, bank.graph_hash);
    for (const auto& A : bank.angles)
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            for (Eigen::Index m = 0; m < A.cols(); ++m) put(out, A(i, m));
    for (Eigen::Index b = 0; b < bank.Pi.rows(); ++b)
        for (Eigen::Index r = 0; r < bank.Pi.cols(); ++r) put(out, bank.Pi(b, r));
    if (!out) throw IoError("failed writing bank cache: " + path);
}

PhaseTokenBank read_bank_cache(const std::string& path, const std::uint64_t* expected_graph_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bank cache: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kBankMagic, 4) != 0)
        throw IoError("bad bank cache magic: " + path);
    std::uint64_t n_pois = 0, n_bases = 0, k = 0, n_bins = 0;
    PhaseTokenBank bank;
    get(in, n_pois, path);
    get(in, n_bases, path);
    get(in, k, path);
    get(in, n_bins, path);
    get(in, bank.q, path);
    get(in, bank.graph_hash, path);
    bank.n_pois = n_pois;
    bank.n_bases = static_cast<int>(n_bases);
    bank.k = static_cast<int>(k);
    if (expected_graph_hash && *expected_graph_hash != bank.graph_hash)
        throw ValidationError("bank cache graph hash mismatch: expected " +
                              std::to_string(*expected_graph_hash) + ", file has " +
                              std::to_string(bank.graph_hash));
    bank.angles.assign(bank.n_bases, Eigen::MatrixXd(n_pois, k));
    for (auto& A : bank.angles)
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            for (Eigen::Index m = 0; m < A.cols(); ++m) get(in, A(i, m), path);
    bank.Pi.resize(static_cast<Eigen::Index>(n_bins), static_cast<Eigen::Index>(n_bases));
    for (Eigen::Index b = 0; b < bank.Pi.rows(); ++b)
        for (Eigen::Index r = 0; r < bank.Pi.cols(); ++r) get(in, bank.Pi(b, r), path);
    return bank;
}

}  // namespace magflow
