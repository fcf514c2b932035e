#include "magflow/dirfield.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include "magflow/common.hpp"

namespace magflow {

TransitionCounts count_transitions(const std::vector<Trajectory>& trajectories,
                                   const GeoGraph& graph, const TimeBinner& binner) {
    TransitionCounts tc;
    tc.n_bins = static_cast<std::size_t>(binner.n_bins);
    tc.n_edges = graph.n_edges();
    for (const auto& traj : trajectories) {
        for (std::size_t t = 1; t < traj.steps.size(); ++t) {
            const auto src = static_cast<std::uint32_t>(traj.steps[t - 1].poi_id);
            const auto dst = static_cast<std::uint32_t>(traj.steps[t].poi_id);
            if (src == dst) {
                tc.skipped_self++;
                continue;
            }
            const std::int64_t e = graph.edge_id(src, dst);
            if (e < 0) {
                tc.skipped_non_edges++;
                continue;
            }
            const int b = binner.bin(traj.steps[t].timestamp);
            const int dir = src < dst ? 0 : 1;
            tc.counts[tc.key(b, static_cast<std::size_t>(e), dir)]++;
        }
    }
    return tc;
}

SignalMatrix edge_signal(const TransitionCounts& counts, double alpha, double kappa) {
    if (alpha <= 0.0 || kappa <= 0.0)
        throw ValidationError("edge_signal requires alpha > 0 and kappa > 0");
    SignalMatrix sm;
    sm.S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(counts.n_bins),
                                 static_cast<Eigen::Index>(counts.n_edges));
    // Unobserved pairs stay exactly 0 = tanh(0); only touched keys are filled.
    for (const auto& [key, cnt] : counts.counts) {
        (void)cnt;
        const std::uint64_t pair = key / 2;
        const auto e = static_cast<Eigen::Index>(pair % counts.n_edges);
        const auto b = static_cast<Eigen::Index>(pair / counts.n_edges);
        if (sm.S(b, e) != 0.0) continue;  // both directions handled on first visit
        const double fwd = static_cast<double>(counts.get(static_cast<int>(b), e, 0));
        const double bwd = static_cast<double>(counts.get(static_cast<int>(b), e, 1));
        sm.S(b, e) = std::tanh((std::log(fwd + alpha) - std::log(bwd + alpha)) / kappa);
    }
    return sm;
}

LowRankBasis factorize(const Eigen::MatrixXd& S, int rank) {
    const Eigen::Index nb = S.rows(), ne = S.cols();
    if (rank < 1 || rank > std::min(nb, ne))
        throw ValidationError("factorize rank must lie in [1, min(N_b, |E|)]");

    LowRankBasis out;
    out.rank = rank;
    out.Pi = Eigen::MatrixXd::Zero(nb, rank);
    out.Psi = Eigen::MatrixXd::Zero(rank, ne);

    // Eigen-decompose the Gram matrix of the smaller side; singular pairs of
    // S follow from it exactly at this scale (N_b = 168 typical).
    const bool rows_small = nb <= ne;
    const Eigen::MatrixXd gram = rows_small ? Eigen::MatrixXd(S * S.transpose())
                                            : Eigen::MatrixXd(S.transpose() * S);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw NumericalError("Gram eigendecomposition failed");

    const Eigen::Index g = gram.rows();
    const double lam_max = std::max(0.0, es.eigenvalues()(g - 1));
    const double tol = lam_max * 1e-12 + 1e-300;

    int kept = 0;
    for (int r = 0; r < rank; ++r) {
        const Eigen::Index idx = g - 1 - r;  // eigenvalues come back ascending
        if (idx < 0) break;
        const double lam = es.eigenvalues()(idx);
        if (lam <= tol) break;
        const double sigma = std::sqrt(lam);
        Eigen::VectorXd u, v;
        if (rows_small) {
            u = es.eigenvectors().col(idx);
            v = S.transpose() * u / sigma;
        } else {
            v = es.eigenvectors().col(idx);
            u = S * v / sigma;
        }
        // Sign convention: largest-|.| entry of the Psi row made positive.
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0.0) {
            v = -v;
            u = -u;
        }
        out.Pi.col(r) = u * sigma;
        out.Psi.row(r) = v.transpose();
        ++kept;
    }
    out.effective_rank = kept;
    if (kept < rank)
        std::cerr << "[magflow] factorize: rank " << rank << " exceeds matrix rank " << kept
                  << ", zero-padding remaining components\n";
    return out;
}

namespace {
constexpr char kBasisMagic[4] = {'M', 'G', 'B', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated basis cache: " + path);
}

void put_matrix(std::ofstream& out, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put(out, m(r, c));
}
void get_matrix(std::ifstream& in, Eigen::MatrixXd& m, const std::string& path) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) get(in, m(r, c), path);
}
}  // namespace

void write_basis_cache(const std::string& path, const LowRankBasis& basis, std::uint64_t input_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write basis cache: " + path);
    out.write(kBasisMagic, 4);
    put(out, input_hash);
    put(out, static_cast<std::uint64_t>(basis.Pi.rows()));
    put(out, static_cast<std::uint64_t>(basis.Psi.cols()));
    put(out, static_cast<std::uint64_t>(basis.rank));
    put(out, static_cast<std::uint64_t>(basis.effective_rank));
    put_matrix(out, basis.Pi);
    put_matrix(out, basis.Psi);
    if (!out) throw IoError("failed writing basis cache: " + path);
}

LowRankBasis read_basis_cache(const std::string& path, std::uint64_t* input_hash_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open basis cache: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kBasisMagic, 4) != 0)
        throw IoError("bad basis cache magic: " + path);
    std::uint64_t input_hash = 0, nb = 0, ne = 0, rank = 0, eff = 0;
    get(in, input_hash, path);
    get(in, nb, path);
    get(in, ne, path);
    get(in, rank, path);
    get(in, eff, path);
    LowRankBasis basis;
    basis.rank = static_cast<int>(rank);
    basis.effective_rank = static_cast<int>(eff);
    basis.Pi.resize(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(rank));
    basis.Psi.resize(static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(ne));
    get_matrix(in, basis.Pi, path);
    get_matrix(in, basis.Psi, path);
    if (input_hash_out) *input_hash_out = input_hash;
    return basis;
}

}  // namespace magflow
