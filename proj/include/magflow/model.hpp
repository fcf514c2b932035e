#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "magflow/checkin.hpp"
#include "magflow/phase.hpp"

namespace magflow {

struct ModelConfig {
    int n_pois = 0;
    int n_users = 0;
    int n_categories = 0;
    int hidden = 96;      // D, must be even
    int time_emb = 32;    // hour/dow/gap feature width
    int cat_emb = 32;
    int phase_k = 16;     // m_t has length 2*phase_k
    int rank_r = 12;      // recorded in checkpoints for cache compatibility
    int n_layers = 2;
    bool zero_rotation = false;  // real_mamba ablation: rotation angles forced to 0

    int concat_dim() const { return 2 * hidden + cat_emb + 3 * time_emb; }
};

struct EmbeddingParams {
    Eigen::MatrixXd poi_table;       // |P| x D (also the tied scoring table)
    Eigen::MatrixXd category_table;  // |C| x D_c
    Eigen::MatrixXd user_table;      // |U| x D
    Eigen::MatrixXd hour_table;      // 24 x D_t
    Eigen::MatrixXd dow_table;       // 7 x D_t
    Eigen::VectorXd gap_w, gap_b;    // scalar log-gap -> D_t
    Eigen::MatrixXd fuse_w, gate_w;  // D x concat_dim
    Eigen::VectorXd fuse_b, gate_b;  // D
};

struct LayerParams {
    Eigen::MatrixXd in_w;     // 3D x D -> (u, B, C)
    Eigen::VectorXd in_b;     // 3D
    Eigen::MatrixXd theta_x;  // D/2 x D
    Eigen::MatrixXd theta_m;  // D/2 x 2k
    Eigen::VectorXd delta_w, delta_b;  // D/2 each, scalar log-gap input
    Eigen::VectorXd rho;      // D, decay log-parameter; A = -exp(rho)
    Eigen::MatrixXd lambda_w; // D x D
    Eigen::MatrixXd out_w;    // D x D
    Eigen::VectorXd out_b;    // D
    Eigen::VectorXd norm_scale;  // D
};

struct ModelParams {
    ModelConfig cfg;
    EmbeddingParams emb;
    std::vector<LayerParams> layers;

    std::size_t parameter_count() const;
};

enum class ParamKind { table, dense, norm };

struct ParamRef {
    std::string name;
    double* data;
    std::size_t size;
    ParamKind kind;
};

/// Every learnable block in the documented fixed order (embeddings first,
/// then each layer's blocks). The same order drives Adam state, checkpoints
/// and the finite-difference harness.
std::vector<ParamRef> param_refs(ModelParams& p);

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);
ModelParams zero_like(const ModelParams& p);
void accumulate(ModelParams& into, const ModelParams& from);

// ---- forward pieces ----------------------------------------------------

/// Gated fusion of [poi, category, user, hour, dow, log-gap] context.
Eigen::VectorXd embed_step(const EmbeddingParams& emb, const ModelConfig& cfg, const CheckIn& c,
                           std::int64_t gap_seconds);

struct ProjTriple {
    Eigen::VectorXd u, B, C;
};
ProjTriple input_proj(const LayerParams& layer, const Eigen::VectorXd& x);

struct StepCoefficients {
    Eigen::VectorXd theta;       // D/2
    Eigen::VectorXd delta_half;  // D/2
    Eigen::VectorXd delta;       // D, pairwise replication of delta_half
    Eigen::VectorXd alpha;       // D, in (0,1) for delta > 0
    Eigen::VectorXd lambda;      // D
    Eigen::VectorXd beta, gamma; // D
    Eigen::VectorXd phi;         // D/2 rotation angles
};
StepCoefficients step_coefficients(const LayerParams& layer, const Eigen::VectorXd& u,
                                   const Eigen::VectorXd& m, std::int64_t gap_seconds);

/// Rotates interleaved pairs (v[2d], v[2d+1]) by phi[d].
Eigen::VectorXd rotate_pairs(const Eigen::VectorXd& v, const Eigen::VectorXd& phi);

/// Per-step tensors for the recurrence, one column per step.
struct ScanInputs {
    Eigen::MatrixXd alpha, beta, gamma;  // D x L
    Eigen::MatrixXd phi;                 // D/2 x L
    Eigen::MatrixXd u, B, C;             // D x L
};
struct ScanOutputs {
    Eigen::MatrixXd h, y;  // D x L
};

/// h_t = a_t*R_t(h_{t-1}) + b_t*R_t(B_{t-1}u_{t-1}) + g_t*(B_t u_t), y_t = C_t h_t,
/// with h_0 = u_0 = B_0 = 0. Throws NumericalError naming the step on
/// non-finite state.
ScanOutputs scan(const ScanInputs& in);

// ---- whole-trajectory forward/backward ----------------------------------

struct LayerCache {
    Eigen::MatrixXd x;                      // layer input, D x L
    Eigen::MatrixXd u, B, C, c;             // D x L  (c = B .* u)
    Eigen::MatrixXd theta, pre_delta, delta_half, phi;  // D/2 x L
    Eigen::MatrixXd delta, alpha, lambda, beta, gamma;  // D x L
    Eigen::MatrixXd rh, rc, h, y;           // D x L
    Eigen::MatrixXd a, res;                 // D x L
    Eigen::VectorXd rms;                    // L
    Eigen::MatrixXd z;                      // D x L
};

struct ForwardCache {
    Eigen::MatrixXd concat;            // concat_dim x L
    Eigen::MatrixXd fuse_lin, gate;    // D x L
    Eigen::MatrixXd x0;                // D x L
    Eigen::MatrixXd m;                 // 2k x L
    Eigen::VectorXd log_gaps;          // L
    std::vector<LayerCache> layers;
    Eigen::MatrixXd logits;            // |P| x (L-1)
    double ce_sum = 0.0;               // summed cross-entropy over positions
    int positions = 0;                 // L-1
};

/// Full forward: embedding, stacked layers (each layer sees the same m
/// sequence), tied-table scoring at positions t = 1..L-1 with target
/// p_{t+1}. Returns summed cross-entropy; cache holds everything the
/// backward pass needs.
double forward_loss(const ModelParams& p, const Trajectory& traj,
                    const std::vector<StepPhaseFeature>& feats, ForwardCache& cache);

/// Z of the last layer only (evaluation path, no loss).
Eigen::MatrixXd forward_representation(const ModelParams& p, const Trajectory& traj,
                                       const std::vector<StepPhaseFeature>& feats,
                                       ForwardCache& cache);

/// Scores Z against the POI table and returns the summed softmax
/// cross-entropy over positions 1..L-1. Throws for L < 2.
double score_and_loss(const ModelParams& p, const Eigen::MatrixXd& z, const Trajectory& traj,
                      Eigen::MatrixXd& logits_out);

/// Exact reverse-mode gradients of (loss_scale * summed cross-entropy),
/// hand-derived per operation. Accumulates into grads.
void backward_loss(const ModelParams& p, const Trajectory& traj, const ForwardCache& cache,
                   double loss_scale, ModelParams& grads);

// Checkpoints, magic MGM1.
void write_checkpoint(const std::string& path, const ModelParams& p, std::uint64_t config_hash);
ModelParams read_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const std::uint64_t* expected_config_hash = nullptr);

}  // namespace magflow
