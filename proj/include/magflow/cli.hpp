#pragma once

#include <string>

#include "magflow/bank.hpp"
#include "magflow/config.hpp"
#include "magflow/dirfield.hpp"
#include "magflow/geo.hpp"
#include "magflow/ingest.hpp"
#include "magflow/model.hpp"

namespace magflow {

/// Everything the pipeline stages share, reconstructed from the work
/// directory caches (or built fresh by cmd_precompute).
struct PipelineState {
    Dataset dataset;
    DatasetSplit split;
    GeoGraph graph;
    LowRankBasis basis;
    PhaseTokenBank bank;
    std::uint64_t data_hash = 0;
};

// Work-directory artifact names.
std::string graph_cache_path(const RunConfig& cfg);
std::string basis_cache_path(const RunConfig& cfg);
std::string bank_cache_path(const RunConfig& cfg);
std::string checkpoint_path(const RunConfig& cfg);
std::string split_manifest_path(const RunConfig& cfg);

/// ingest -> graph -> direction field -> spectral bank, with per-stage wall
/// times and byte-stable caches. Stages whose cache matches the input hash
/// report a cache hit instead of recomputing.
int cmd_precompute(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_bench(const RunConfig& cfg);
int cmd_generate(const RunConfig& cfg);

/// Loads dataset + caches for train/eval/bench; validates every hash.
PipelineState load_pipeline(const RunConfig& cfg, bool need_bank = true);

/// Applies the configured ablation to the feature side. no_phase rebuilds
/// the bank with zero phases (q = 0); no_tc replaces Pi with its bin mean.
PhaseTokenBank ablated_bank(const RunConfig& cfg, const PipelineState& state);

ModelConfig model_config_from(const RunConfig& cfg, const Dataset& ds);

}  // namespace magflow
