#include "magflow/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "magflow/common.hpp"
#include "magflow/phase.hpp"
#include "magflow/spectral.hpp"
#include "magflow/tidal.hpp"
#include "magflow/train.hpp"

namespace magflow {

namespace {

namespace fs = std::filesystem;

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t graph_input_hash(const RunConfig& cfg, std::uint64_t data_hash) {
    std::string s = std::to_string(cfg.radius_km) + "|" + std::to_string(cfg.sigma_geo_km) + "|" +
                    std::to_string(cfg.min_poi_visits) + "|" + std::to_string(cfg.min_len) + "|" +
                    std::to_string(cfg.max_len);
    return fnv1a64(s, fnv1a64(&data_hash, sizeof(data_hash)));
}

std::uint64_t basis_input_hash(const RunConfig& cfg, std::uint64_t graph_hash) {
    std::string s = std::to_string(cfg.alpha) + "|" + std::to_string(cfg.kappa) + "|" +
                    std::to_string(cfg.n_bins) + "|" + std::to_string(cfg.R) + "|" +
                    std::to_string(cfg.seed);
    return fnv1a64(s, fnv1a64(&graph_hash, sizeof(graph_hash)));
}

std::vector<Trajectory> pick(const std::vector<Trajectory>& all, const std::vector<std::size_t>& ids) {
    std::vector<Trajectory> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(all[id]);
    return out;
}

Dataset ingest_stage(const RunConfig& cfg, std::uint64_t* data_hash) {
    if (cfg.checkins.empty()) throw ValidationError("config: checkins path is required");
    *data_hash = hash_file_contents(cfg.checkins);
    const RawCorpus corpus = load_checkins(cfg.checkins);
    Dataset ds = filter_and_segment(corpus, cfg.min_poi_visits, cfg.min_len, cfg.max_len);
    std::cout << "  ingest: " << corpus.checkins.size() << " check-ins -> "
              << ds.trajectories.size() << " trajectories, " << ds.n_pois << " POIs, "
              << ds.n_users << " users, " << ds.n_categories << " categories ("
              << ds.report.pois_removed << " POIs filtered, " << ds.report.users_dropped
              << " users dropped)\n";
    return ds;
}

}  // namespace

std::string graph_cache_path(const RunConfig& cfg) { return cfg.workdir + "/graph.mgf"; }
std::string basis_cache_path(const RunConfig& cfg) { return cfg.workdir + "/basis.mgb"; }
std::string bank_cache_path(const RunConfig& cfg) { return cfg.workdir + "/bank.mgu"; }
std::string checkpoint_path(const RunConfig& cfg) { return cfg.workdir + "/model.mgm"; }
std::string split_manifest_path(const RunConfig& cfg) { return cfg.workdir + "/split.txt"; }

ModelConfig model_config_from(const RunConfig& cfg, const Dataset& ds) {
    ModelConfig mc;
    mc.n_pois = static_cast<int>(ds.n_pois);
    mc.n_users = static_cast<int>(ds.n_users);
    mc.n_categories = static_cast<int>(ds.n_categories);
    mc.hidden = cfg.D;
    mc.time_emb = cfg.time_emb;
    mc.cat_emb = cfg.cat_emb;
    mc.phase_k = cfg.k;
    mc.rank_r = cfg.R;
    mc.n_layers = cfg.layers;
    mc.zero_rotation = cfg.ablation == Ablation::real_mamba;
    return mc;
}

int cmd_precompute(const RunConfig& cfg) {
    fs::create_directories(cfg.workdir);
    auto t0 = std::chrono::steady_clock::now();
    std::uint64_t data_hash = 0;
    Dataset ds = ingest_stage(cfg, &data_hash);
    DatasetSplit split = split_8_1_1(ds.trajectories.size(), cfg.seed);
    write_split_manifest(split_manifest_path(cfg), split);
    std::cout << "  ingest done in " << seconds_since(t0) << " s\n";

    // Graph stage.
    t0 = std::chrono::steady_clock::now();
    const std::uint64_t ghash = graph_input_hash(cfg, data_hash);
    GeoGraph graph;
    bool hit = false;
    if (fs::exists(graph_cache_path(cfg))) {
        std::uint64_t stored = 0;
        try {
            GeoGraph cached = read_graph_cache(graph_cache_path(cfg), &stored);
            if (stored == ghash) {
                graph = std::move(cached);
                hit = true;
            }
        } catch (const IoError&) { /* rebuild below */ }
    }
    if (!hit) {
        graph = build_radius_graph(ds.poi_lat, ds.poi_lon, cfg.radius_km, cfg.sigma_geo_km);
        write_graph_cache(graph_cache_path(cfg), graph, ghash);
    }
    std::cout << "  graph: " << (hit ? "cache hit, " : "") << graph.n_edges() << " edges, "
              << graph.isolated_nodes << " isolated nodes, " << seconds_since(t0) << " s\n";

    // Direction-field stage (training split only).
    t0 = std::chrono::steady_clock::now();
    const std::uint64_t bhash = basis_input_hash(cfg, ghash);
    LowRankBasis basis;
    hit = false;
    if (fs::exists(basis_cache_path(cfg))) {
        std::uint64_t stored = 0;
        try {
            LowRankBasis cached = read_basis_cache(basis_cache_path(cfg), &stored);
            if (stored == bhash) {
                basis = std::move(cached);
                hit = true;
            }
        } catch (const IoError&) { /* rebuild below */ }
    }
    if (!hit) {
        const auto train_trajs = pick(ds.trajectories, split.train);
        TimeBinner binner{cfg.n_bins};
        const TransitionCounts counts = count_transitions(train_trajs, graph, binner);
        const SignalMatrix signal = edge_signal(counts, cfg.alpha, cfg.kappa);
        basis = factorize(signal.S, cfg.R);
        write_basis_cache(basis_cache_path(cfg), basis, bhash);
        std::cout << "  direction field: " << counts.counts.size() << " active (bin,edge,dir) keys, "
                  << counts.skipped_non_edges << " off-graph pairs skipped\n";
    }
    std::cout << "  basis: " << (hit ? "cache hit, " : "") << "rank " << basis.rank
              << " (effective " << basis.effective_rank << "), " << seconds_since(t0) << " s\n";

    // Spectral bank stage.
    t0 = std::chrono::steady_clock::now();
    hit = false;
    const std::uint64_t graph_content = graph.content_hash();
    if (fs::exists(bank_cache_path(cfg))) {
        try {
            PhaseTokenBank cached = read_bank_cache(bank_cache_path(cfg), &graph_content);
            if (cached.q == cfg.q && cached.k == cfg.k && cached.n_bases == cfg.R &&
                cached.n_pois == graph.n_pois)
                hit = true;
        } catch (const std::exception&) { /* rebuild below */ }
    }
    if (!hit) {
        SpectralOptions opts;
        opts.seed = cfg.seed;
        BankBuildReport report;
        PhaseTokenBank bank = precompute_bank(graph, basis, cfg.q, cfg.k, opts, cfg.threads, &report);
        write_bank_cache(bank_cache_path(cfg), bank);
        std::cout << "  bank: per-basis seconds [";
        for (std::size_t r = 0; r < report.per_basis_seconds.size(); ++r)
            std::cout << (r ? " " : "") << report.per_basis_seconds[r];
        std::cout << "]\n";
    }
    std::cout << "  bank: " << (hit ? "cache hit, " : "") << seconds_since(t0) << " s\n";

    write_effective_config(cfg.workdir + "/effective.cfg", cfg);
    return 0;
}

PipelineState load_pipeline(const RunConfig& cfg, bool need_bank) {
    PipelineState st;
    st.dataset = ingest_stage(cfg, &st.data_hash);
    if (fs::exists(split_manifest_path(cfg)))
        st.split = read_split_manifest(split_manifest_path(cfg));
    else
        st.split = split_8_1_1(st.dataset.trajectories.size(), cfg.seed);

    std::uint64_t stored = 0;
    st.graph = read_graph_cache(graph_cache_path(cfg), &stored);
    const std::uint64_t ghash = graph_input_hash(cfg, st.data_hash);
    if (stored != ghash)
        throw ValidationError("graph cache input hash mismatch: expected " + std::to_string(ghash) +
                              ", file has " + std::to_string(stored) + "; rerun precompute");

    st.basis = read_basis_cache(basis_cache_path(cfg), &stored);
    const std::uint64_t bhash = basis_input_hash(cfg, ghash);
    if (stored != bhash)
        throw ValidationError("basis cache input hash mismatch: expected " + std::to_string(bhash) +
                              ", file has " + std::to_string(stored) + "; rerun precompute");

    if (need_bank) {
        const std::uint64_t graph_content = st.graph.content_hash();
        st.bank = read_bank_cache(bank_cache_path(cfg), &graph_content);
        if (st.bank.q != cfg.q || st.bank.k != cfg.k || st.bank.n_bases != cfg.R)
            throw ValidationError("bank cache does not match config (q/k/R); rerun precompute");
    }
    return st;
}

PhaseTokenBank ablated_bank(const RunConfig& cfg, const PipelineState& state) {
    switch (cfg.ablation) {
        case Ablation::no_phase: {
            // Zero phases == magnetic charge 0; recomputed from the cached
            // graph and basis so the artifact on disk stays untouched.
            SpectralOptions opts;
            opts.seed = cfg.seed;
            return precompute_bank(state.graph, state.basis, 0.0, cfg.k, opts, cfg.threads);
        }
        case Ablation::no_tc:
            return with_mean_time_mixing(state.bank);
        case Ablation::none:
        case Ablation::real_mamba:
            return state.bank;
    }
    return state.bank;
}

int cmd_train(const RunConfig& cfg) {
    PipelineState st = load_pipeline(cfg);
    const PhaseTokenBank bank = ablated_bank(cfg, st);
    const ModelConfig mc = model_config_from(cfg, st.dataset);
    ModelParams params = init_model(mc, cfg.seed);
    std::cout << "  model: " << params.parameter_count() << " parameters\n";

    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch = cfg.batch;
    tc.seed = cfg.seed;
    tc.threads = cfg.threads;
    tc.max_steps = cfg.max_steps;
    tc.adam.lr = cfg.lr;
    tc.adam.wd = cfg.wd;
    tc.verbose = true;

    const auto train_set = pick(st.dataset.trajectories, st.split.train);
    const auto val_set = pick(st.dataset.trajectories, st.split.val);
    const TrainResult result = train(params, train_set, val_set, bank, tc);

    write_checkpoint(checkpoint_path(cfg), result.best, cfg.model_config_hash(st.data_hash));
    std::ofstream epochs_out(cfg.workdir + "/epochs.csv");
    epochs_out << "epoch,train_loss,val_mrr\n";
    for (const auto& e : result.epochs)
        epochs_out << e.epoch << "," << e.train_loss << "," << e.val_mrr << "\n";
    std::cout << "  best val MRR " << result.best_val_mrr << " after " << result.steps_run
              << " steps\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    PipelineState st = load_pipeline(cfg);
    const PhaseTokenBank bank = ablated_bank(cfg, st);
    const ModelConfig mc = model_config_from(cfg, st.dataset);
    const std::uint64_t expected = cfg.model_config_hash(st.data_hash);
    const ModelParams params = read_checkpoint(checkpoint_path(cfg), mc, &expected);

    const auto test_set = pick(st.dataset.trajectories, st.split.test);
    const auto train_set = pick(st.dataset.trajectories, st.split.train);
    const EvalReport overall = evaluate(params, test_set, bank, cfg.threads);

    TimeBinner binner{cfg.n_bins};
    const TransitionCounts counts = count_transitions(train_set, st.graph, binner);
    const AsymmetryIndex asy = asymmetry_index(counts, st.graph);
    const StratifiedReport stratified =
        asymmetry_stratified_eval(params, test_set, bank, asy, cfg.threads);

    const std::string report_path = cfg.workdir + "/eval.json";
    write_eval_report(report_path, overall, &stratified);
    std::cout << "  eval (" << to_string(cfg.ablation) << "): ndcg@1 " << overall.ndcg1
              << " ndcg@5 " << overall.ndcg5 << " ndcg@10 " << overall.ndcg10 << " mrr "
              << overall.mrr << " over " << overall.samples << " positions -> " << report_path
              << "\n";
    return 0;
}

int cmd_bench(const RunConfig& cfg) {
    PipelineState st = load_pipeline(cfg);
    const PhaseTokenBank bank = ablated_bank(cfg, st);
    const ModelConfig mc = model_config_from(cfg, st.dataset);

    ModelParams params = [&] {
        if (fs::exists(checkpoint_path(cfg))) {
            const std::uint64_t expected = cfg.model_config_hash(st.data_hash);
            return read_checkpoint(checkpoint_path(cfg), mc, &expected);
        }
        std::cout << "  bench: no checkpoint, using random initialization\n";
        return init_model(mc, cfg.seed);
    }();

    const auto rows = bench(params, bank, {25, 50, 75, 100}, cfg.bench_batch, cfg.bench_warmup,
                            cfg.bench_iters, cfg.seed);
    const std::string csv = cfg.workdir + "/bench.csv";
    write_bench_csv(csv, rows);
    for (const auto& r : rows)
        std::cout << "  L=" << r.L << " mean " << r.mean_ms << " ms, p99 " << r.p99_ms
                  << " ms, " << r.steps_per_s << " steps/s\n";
    std::cout << "  wrote " << csv << "\n";
    return 0;
}

int cmd_generate(const RunConfig& cfg) {
    if (cfg.checkins.empty()) throw ValidationError("config: checkins path is required");
    if (const auto dir = fs::path(cfg.checkins).parent_path(); !dir.empty())
        fs::create_directories(dir);
    TidalConfig tc;
    tc.grid_side = cfg.gen_grid;
    tc.n_users = cfg.gen_users;
    tc.asymmetry = cfg.gen_asym;
    tc.seed = cfg.seed;
    tc.days = cfg.gen_days;
    tc.wander_prob = cfg.gen_wander;
    tc.spacing_km = cfg.gen_spacing_km;
    generate_tidal(tc, cfg.checkins);
    std::cout << "  wrote synthetic corpus to " << cfg.checkins << "\n";
    return 0;
}

}  // namespace magflow
