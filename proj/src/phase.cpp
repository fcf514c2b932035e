#include "magflow/phase.hpp"

#include <cmath>

#include "magflow/common.hpp"

namespace magflow {

std::int32_t source_poi(const Trajectory& traj, std::size_t t) {
    if (t < 1 || t > traj.steps.size())
        throw ValidationError("source_poi: step index out of range");
    return t == 1 ? traj.steps[0].poi_id : traj.steps[t - 2].poi_id;
}

StepPhaseFeature step_phase_feature(const PhaseTokenBank& bank, std::int32_t poi,
                                    std::int32_t source, int bin) {
    const auto n = static_cast<std::int64_t>(bank.n_pois);
    if (poi < 0 || poi >= n || source < 0 || source >= n)
        throw ValidationError("step_phase_feature: unknown POI id");
    if (bin < 0 || bin >= bank.Pi.rows())
        throw ValidationError("step_phase_feature: bin out of range");

    const int k = bank.k;
    Eigen::VectorXd re = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd im = Eigen::VectorXd::Zero(k);
    for (int r = 0; r < bank.n_bases; ++r) {
        const double pi_br = bank.Pi(bin, r);
        const auto& A = bank.angles[r];
        for (int j = 0; j < k; ++j) {
            const double d = A(poi, j) - A(source, j);
            re(j) += pi_br * std::cos(d);
            im(j) += pi_br * std::sin(d);
        }
    }

    StepPhaseFeature f;
    f.m.resize(2 * k);
    f.m.head(k) = re;
    f.m.tail(k) = im;
    f.mix_magnitudes = (re.array().square() + im.array().square()).sqrt();
    return f;
}

std::vector<StepPhaseFeature> featurize_trajectory(const PhaseTokenBank& bank,
                                                   const Trajectory& traj) {
    std::vector<StepPhaseFeature> out;
    out.reserve(traj.steps.size());
    for (std::size_t t = 1; t <= traj.steps.size(); ++t)
        out.push_back(step_phase_feature(bank, traj.steps[t - 1].poi_id, source_poi(traj, t),
                                         time_bin(traj.steps[t - 1].timestamp)));
    return out;
}

}  // namespace magflow
