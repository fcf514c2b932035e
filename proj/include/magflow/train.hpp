#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "magflow/bank.hpp"
#include "magflow/checkin.hpp"
#include "magflow/dirfield.hpp"
#include "magflow/model.hpp"

namespace magflow {

// ---- optimizer -----------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double wd = 1e-3;  // decoupled, applied to dense blocks only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    Adam(ModelParams& params, AdamConfig cfg);
    void update(ModelParams& params, ModelParams& grads);
    long long steps() const { return step_count_; }

  private:
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long long step_count_ = 0;
};

// ---- metrics ---------------------------------------------------------------

/// Single-relevant-item convention; rank is 1-based with ties broken by
/// ascending POI id.
double ndcg_at_k(int rank, int k);
double mrr_term(int rank);
int rank_of_target(const Eigen::VectorXd& scores, int target);

struct EvalReport {
    double ndcg1 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0, mrr = 0.0;
    std::size_t samples = 0;
};

EvalReport evaluate(const ModelParams& params, const std::vector<Trajectory>& set,
                    const PhaseTokenBank& bank, int threads = 1);

// ---- training ---------------------------------------------------------------

struct TrainConfig {
    int epochs = 50;
    int batch = 128;
    std::uint64_t seed = 42;
    AdamConfig adam;
    int threads = 1;
    int max_steps = 0;  // 0 = no cap; otherwise stop after this many optimizer steps
    bool verbose = false;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;  // position-mean cross-entropy over the epoch
    double val_mrr = 0.0;
};

struct TrainResult {
    ModelParams best;               // highest validation MRR (final params if no val set)
    std::vector<EpochStats> epochs;
    std::vector<double> step_losses;  // per optimizer step, batch-mean CE
    int steps_run = 0;
    double best_val_mrr = 0.0;
};

TrainResult train(const ModelParams& init, const std::vector<Trajectory>& train_set,
                  const std::vector<Trajectory>& val_set, const PhaseTokenBank& bank,
                  const TrainConfig& cfg);

// ---- asymmetry-stratified evaluation ---------------------------------------

struct AsymmetryIndex {
    std::unordered_map<std::uint64_t, double> asy;  // key (i<<32)|j with i<j
    std::int64_t t_min = 20;
    std::size_t n_bins = 0;

    static std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) {
        if (a > b) std::swap(a, b);
        return (static_cast<std::uint64_t>(a) << 32) | b;
    }
    /// Asy for an unordered pair, or -1 when below threshold / never counted.
    double lookup(std::uint32_t a, std::uint32_t b) const {
        auto it = asy.find(pair_key(a, b));
        return it == asy.end() ? -1.0 : it->second;
    }
};

/// Asy(i,j) = mean_b |P(j|i,b) - P(i|j,b)| with bin-wise count normalization
/// (zero-count rows contribute probability 0). Pairs whose total
/// bidirectional count is <= t_min are omitted.
AsymmetryIndex asymmetry_index(const TransitionCounts& counts, const GeoGraph& graph,
                               std::int64_t t_min = 20);

struct StratifiedReport {
    EvalReport overall;             // all prediction positions
    EvalReport low, mid, high;      // tertiles of included positions by Asy
    std::size_t excluded = 0;       // positions without an Asy value
    double bounds[2] = {0.0, 0.0};  // Asy at the tertile cuts
    bool degenerate = false;        // all included Asy values identical
};

/// Prediction position t (predicting p_{t+1}) is assigned the Asy of the
/// transition pair {p_t, p_{t+1}}; tertiles are taken over positions.
StratifiedReport asymmetry_stratified_eval(const ModelParams& params,
                                           const std::vector<Trajectory>& test_set,
                                           const PhaseTokenBank& bank, const AsymmetryIndex& asy,
                                           int threads = 1);

// ---- benchmark ---------------------------------------------------------------

struct BenchRow {
    int L = 0;
    int batch = 0;
    double mean_ms = 0.0, p50_ms = 0.0, p95_ms = 0.0, p99_ms = 0.0;
    double traj_per_s = 0.0, steps_per_s = 0.0;
};

/// Timed end-to-end inference (featurize + forward + candidate scoring) on
/// synthetic random inputs, per sequence length.
std::vector<BenchRow> bench(const ModelParams& params, const PhaseTokenBank& bank,
                            const std::vector<int>& lengths = {25, 50, 75, 100}, int batch = 128,
                            int warmup = 20, int iters = 200, std::uint64_t seed = 7);

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);

// ---- reports -----------------------------------------------------------------

/// Flat-key JSON ("ndcg@1", "mrr", "subgroup.asym_high.mrr", ...).
void write_eval_report(const std::string& path, const EvalReport& overall,
                       const StratifiedReport* stratified = nullptr);

}  // namespace magflow
