#pragma once

#include <Eigen/Dense>
#include <vector>

#include "magflow/bank.hpp"
#include "magflow/checkin.hpp"

namespace magflow {

/// Per-step gauge-invariant feature: m = [Re(mix), Im(mix)], length 2k.
struct StepPhaseFeature {
    Eigen::VectorXd m;
    Eigen::VectorXd mix_magnitudes;  // |mix_j| per entry, diagnostics only
};

/// p_1 for t = 1, p_{t-1} otherwise (1-based step index).
std::int32_t source_poi(const Trajectory& traj, std::size_t t);

/// Pure table lookups and elementwise trigonometry: per basis the token
/// difference is an angle subtraction (unit modulus exact), mixed across
/// bases with the bin's Pi row. The mixture is intentionally unnormalized.
StepPhaseFeature step_phase_feature(const PhaseTokenBank& bank, std::int32_t poi,
                                    std::int32_t source, int bin);

/// All steps of one trajectory; O(L * R * k), no graph-sized work.
std::vector<StepPhaseFeature> featurize_trajectory(const PhaseTokenBank& bank,
                                                   const Trajectory& traj);

}  // namespace magflow
