#include "magflow/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "magflow/common.hpp"
#include "magflow/phase.hpp"

namespace magflow {

// ---- optimizer -----------------------------------------------------------

Adam::Adam(ModelParams& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& ref : param_refs(params)) {
        m_.emplace_back(ref.size, 0.0);
        v_.emplace_back(ref.size, 0.0);
    }
}

void Adam::update(ModelParams& params, ModelParams& grads) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    auto prefs = param_refs(params);
    auto grefs = param_refs(grads);
    for (std::size_t b = 0; b < prefs.size(); ++b) {
        double* p = prefs[b].data;
        const double* g = grefs[b].data;
        auto& m = m_[b];
        auto& v = v_[b];
        for (std::size_t i = 0; i < prefs[b].size; ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            p[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
        if (prefs[b].kind == ParamKind::dense && cfg_.wd != 0.0)
            for (std::size_t i = 0; i < prefs[b].size; ++i) p[i] -= cfg_.lr * cfg_.wd * p[i];
    }
}

// ---- metrics ---------------------------------------------------------------

double ndcg_at_k(int rank, int k) {
    if (rank < 1) throw ValidationError("ndcg_at_k: rank must be >= 1");
    return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

double mrr_term(int rank) {
    if (rank < 1) throw ValidationError("mrr_term: rank must be >= 1");
    return 1.0 / static_cast<double>(rank);
}

int rank_of_target(const Eigen::VectorXd& scores, int target) {
    const double st = scores(target);
    int rank = 1;
    for (Eigen::Index p = 0; p < scores.size(); ++p) {
        if (scores(p) > st) ++rank;
        else if (scores(p) == st && p < target) ++rank;  // ties: ascending id first
    }
    return rank;
}

namespace {

struct MetricSums {
    double n1 = 0, n5 = 0, n10 = 0, rr = 0;
    std::size_t n = 0;
    void add(int rank) {
        n1 += ndcg_at_k(rank, 1);
        n5 += ndcg_at_k(rank, 5);
        n10 += ndcg_at_k(rank, 10);
        rr += mrr_term(rank);
        ++n;
    }
    void merge(const MetricSums& o) {
        n1 += o.n1;
        n5 += o.n5;
        n10 += o.n10;
        rr += o.rr;
        n += o.n;
    }
    EvalReport report() const {
        EvalReport r;
        r.samples = n;
        if (n == 0) return r;
        r.ndcg1 = n1 / n;
        r.ndcg5 = n5 / n;
        r.ndcg10 = n10 / n;
        r.mrr = rr / n;
        return r;
    }
};

}  // namespace

EvalReport evaluate(const ModelParams& params, const std::vector<Trajectory>& set,
                    const PhaseTokenBank& bank, int threads) {
    std::vector<MetricSums> partial(std::max(1, threads));
    parallel_for_chunks(set.size(), threads, [&](std::size_t lo, std::size_t hi, int w) {
        ForwardCache cache;
        for (std::size_t i = lo; i < hi; ++i) {
            const Trajectory& traj = set[i];
            if (traj.steps.size() < 2) continue;
            const auto feats = featurize_trajectory(bank, traj);
            const Eigen::MatrixXd z = forward_representation(params, traj, feats, cache);
            for (std::size_t t = 0; t + 1 < traj.steps.size(); ++t) {
                const Eigen::VectorXd scores = params.emb.poi_table * z.col(t);
                partial[w].add(rank_of_target(scores, traj.steps[t + 1].poi_id));
            }
        }
    });
    MetricSums total;
    for (const auto& p : partial) total.merge(p);
    return total.report();
}

// ---- training ---------------------------------------------------------------

TrainResult train(const ModelParams& init, const std::vector<Trajectory>& train_set,
                  const std::vector<Trajectory>& val_set, const PhaseTokenBank& bank,
                  const TrainConfig& cfg) {
    if (train_set.empty()) throw ValidationError("train: empty training set");

    ModelParams params = init;
    Adam opt(params, cfg.adam);
    TrainResult result;
    result.best = params;
    result.best_val_mrr = -1.0;

    // Features depend only on the frozen bank; compute once.
    std::vector<std::vector<StepPhaseFeature>> feats(train_set.size());
    parallel_for_chunks(train_set.size(), cfg.threads, [&](std::size_t lo, std::size_t hi, int) {
        for (std::size_t i = lo; i < hi; ++i) feats[i] = featurize_trajectory(bank, train_set[i]);
    });

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    bool stop = false;
    for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_ce = 0.0;
        std::int64_t epoch_pos = 0;

        for (std::size_t ofs = 0; ofs < order.size() && !stop; ofs += cfg.batch) {
            const std::size_t bend = std::min(order.size(), ofs + cfg.batch);
            const std::size_t bsize = bend - ofs;

            const int nw = std::max(1, std::min<int>(cfg.threads, static_cast<int>(bsize)));
            std::vector<ModelParams> grads;
            grads.reserve(nw);
            for (int w = 0; w < nw; ++w) grads.push_back(zero_like(params));
            std::vector<double> ce(nw, 0.0);
            std::vector<std::string> errors(nw);

            // First pass counts positions so the batch-mean scale is known
            // before backward runs.
            std::int64_t batch_positions = 0;
            for (std::size_t i = ofs; i < bend; ++i)
                batch_positions += static_cast<std::int64_t>(train_set[order[i]].steps.size()) - 1;
            if (batch_positions <= 0) continue;
            const double scale = 1.0 / static_cast<double>(batch_positions);

            parallel_for_chunks(bsize, nw, [&](std::size_t lo, std::size_t hi, int w) {
                try {
                    ForwardCache cache;
                    for (std::size_t bi = lo; bi < hi; ++bi) {
                        const std::size_t idx = order[ofs + bi];
                        const Trajectory& traj = train_set[idx];
                        const double s = forward_loss(params, traj, feats[idx], cache);
                        ce[w] += s;
                        backward_loss(params, traj, cache, scale, grads[w]);
                    }
                } catch (const std::exception& e) {
                    errors[w] = e.what();
                }
            });
            for (const auto& err : errors)
                if (!err.empty()) throw NumericalError("train: " + err);

            for (int w = 1; w < nw; ++w) accumulate(grads[0], grads[w]);
            const double batch_ce = std::accumulate(ce.begin(), ce.end(), 0.0);
            const double batch_loss = batch_ce * scale;
            if (!std::isfinite(batch_loss)) {
                std::string diag = "train: non-finite loss at optimizer step " +
                                   std::to_string(opt.steps() + 1);
                ForwardCache probe;
                const std::size_t idx = order[ofs];
                forward_representation(params, train_set[idx], feats[idx], probe);
                for (std::size_t l = 0; l < probe.layers.size(); ++l)
                    diag += "; layer " + std::to_string(l) + " max|h| = " +
                            std::to_string(probe.layers[l].h.cwiseAbs().maxCoeff());
                throw NumericalError(diag);
            }

            opt.update(params, grads[0]);
            result.step_losses.push_back(batch_loss);
            result.steps_run = static_cast<int>(opt.steps());
            epoch_ce += batch_ce;
            epoch_pos += batch_positions;
            if (cfg.max_steps > 0 && opt.steps() >= cfg.max_steps) stop = true;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_pos > 0 ? epoch_ce / static_cast<double>(epoch_pos) : 0.0;
        if (!val_set.empty()) {
            stats.val_mrr = evaluate(params, val_set, bank, cfg.threads).mrr;
            if (stats.val_mrr > result.best_val_mrr) {
                result.best_val_mrr = stats.val_mrr;
                result.best = params;
            }
        } else {
            result.best = params;
        }
        result.epochs.push_back(stats);
        if (cfg.verbose)
            std::cerr << "[magflow] epoch " << epoch << " loss " << stats.train_loss << " val_mrr "
                      << stats.val_mrr << "\n";
    }
    if (val_set.empty()) result.best = params;
    return result;
}

// ---- asymmetry-stratified evaluation ---------------------------------------

AsymmetryIndex asymmetry_index(const TransitionCounts& counts, const GeoGraph& graph,
                               std::int64_t t_min) {
    AsymmetryIndex index;
    index.t_min = t_min;
    index.n_bins = counts.n_bins;

    // Row sums per (source node, bin) over the edge-restricted counts.
    std::unordered_map<std::uint64_t, double> out_sum;
    auto node_bin_key = [&](std::uint32_t node, int b) {
        return static_cast<std::uint64_t>(node) * counts.n_bins + static_cast<std::uint64_t>(b);
    };
    for (const auto& [key, cnt] : counts.counts) {
        const int dir = static_cast<int>(key % 2);
        const std::uint64_t pair = key / 2;
        const auto e = static_cast<std::size_t>(pair % counts.n_edges);
        const int b = static_cast<int>(pair / counts.n_edges);
        const auto& edge = graph.edges[e];
        const std::uint32_t src = dir == 0 ? edge.i : edge.j;
        out_sum[node_bin_key(src, b)] += static_cast<double>(cnt);
    }

    // Total bidirectional count per edge decides inclusion.
    std::vector<std::int64_t> edge_total(counts.n_edges, 0);
    for (const auto& [key, cnt] : counts.counts)
        edge_total[static_cast<std::size_t>((key / 2) % counts.n_edges)] += cnt;

    for (std::size_t e = 0; e < counts.n_edges; ++e) {
        if (edge_total[e] <= t_min) continue;
        const auto& edge = graph.edges[e];
        double acc = 0.0;
        for (int b = 0; b < static_cast<int>(counts.n_bins); ++b) {
            const double fwd = static_cast<double>(counts.get(b, e, 0));
            const double bwd = static_cast<double>(counts.get(b, e, 1));
            double pij = 0.0, pji = 0.0;
            if (fwd > 0.0) pij = fwd / out_sum[node_bin_key(edge.i, b)];
            if (bwd > 0.0) pji = bwd / out_sum[node_bin_key(edge.j, b)];
            acc += std::abs(pij - pji);
        }
        index.asy.emplace(AsymmetryIndex::pair_key(edge.i, edge.j),
                          acc / static_cast<double>(counts.n_bins));
    }
    return index;
}

StratifiedReport asymmetry_stratified_eval(const ModelParams& params,
                                           const std::vector<Trajectory>& test_set,
                                           const PhaseTokenBank& bank, const AsymmetryIndex& asy,
                                           int threads) {
    struct Position {
        double asy = 0.0;
        int rank = 0;
        bool included = false;
    };
    std::vector<std::vector<Position>> partial(test_set.size());

    parallel_for_chunks(test_set.size(), threads, [&](std::size_t lo, std::size_t hi, int) {
        ForwardCache cache;
        for (std::size_t i = lo; i < hi; ++i) {
            const Trajectory& traj = test_set[i];
            if (traj.steps.size() < 2) continue;
            const auto feats = featurize_trajectory(bank, traj);
            const Eigen::MatrixXd z = forward_representation(params, traj, feats, cache);
            auto& out = partial[i];
            out.resize(traj.steps.size() - 1);
            for (std::size_t t = 0; t + 1 < traj.steps.size(); ++t) {
                const Eigen::VectorXd scores = params.emb.poi_table * z.col(t);
                out[t].rank = rank_of_target(scores, traj.steps[t + 1].poi_id);
                const double a = asy.lookup(static_cast<std::uint32_t>(traj.steps[t].poi_id),
                                            static_cast<std::uint32_t>(traj.steps[t + 1].poi_id));
                out[t].asy = a;
                out[t].included = a >= 0.0;
            }
        }
    });

    StratifiedReport report;
    MetricSums overall;
    std::vector<std::pair<double, int>> included;  // (asy, rank)
    for (const auto& vec : partial)
        for (const auto& pos : vec) {
            overall.add(pos.rank);
            if (pos.included) included.emplace_back(pos.asy, pos.rank);
        }
    report.overall = overall.report();
    report.excluded = overall.n - included.size();

    if (included.empty()) return report;

    std::stable_sort(included.begin(), included.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    report.degenerate = included.front().first == included.back().first;

    const std::size_t n = included.size();
    const std::size_t c1 = n / 3, c2 = 2 * n / 3;
    report.bounds[0] = included[std::min(c1, n - 1)].first;
    report.bounds[1] = included[std::min(c2, n - 1)].first;

    MetricSums low, mid, high;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < c1) low.add(included[i].second);
        else if (i < c2) mid.add(included[i].second);
        else high.add(included[i].second);
    }
    report.low = low.report();
    report.mid = mid.report();
    report.high = high.report();
    return report;
}

// ---- benchmark ---------------------------------------------------------------

std::vector<BenchRow> bench(const ModelParams& params, const PhaseTokenBank& bank,
                            const std::vector<int>& lengths, int batch, int warmup, int iters,
                            std::uint64_t seed) {
    std::vector<BenchRow> rows;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> poi_dist(0, params.cfg.n_pois - 1);
    std::uniform_int_distribution<int> user_dist(0, params.cfg.n_users - 1);
    std::uniform_int_distribution<int> cat_dist(0, params.cfg.n_categories - 1);
    std::uniform_int_distribution<std::int64_t> gap_dist(60, 7200);

    for (const int L : lengths) {
        std::vector<Trajectory> batch_trajs(batch);
        for (auto& traj : batch_trajs) {
            traj.user_id = user_dist(rng);
            traj.steps.resize(L);
            traj.gaps.resize(L);
            std::int64_t ts = 1704067200 + gap_dist(rng);
            for (int t = 0; t < L; ++t) {
                const std::int64_t gap = t == 0 ? 0 : gap_dist(rng);
                ts += gap;
                traj.steps[t].user_id = traj.user_id;
                traj.steps[t].poi_id = poi_dist(rng);
                traj.steps[t].category_id = cat_dist(rng);
                traj.steps[t].timestamp = ts;
                traj.gaps[t] = gap;
            }
        }

        double sink = 0.0;  // keeps the timed work observable
        std::vector<double> ms(iters);
        ForwardCache cache;
        for (int it = -warmup; it < iters; ++it) {
            const auto t0 = std::chrono::steady_clock::now();
            for (const auto& traj : batch_trajs) {
                const auto feats = featurize_trajectory(bank, traj);
                const Eigen::MatrixXd z = forward_representation(params, traj, feats, cache);
                const Eigen::MatrixXd scores = params.emb.poi_table * z;
                sink += scores(0, scores.cols() - 1);
            }
            const double elapsed =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            if (it >= 0) ms[it] = elapsed;
        }
        if (!std::isfinite(sink)) throw NumericalError("bench: non-finite forward output");

        std::sort(ms.begin(), ms.end());
        auto pct = [&ms](double p) {
            const auto idx = static_cast<std::size_t>(
                std::min<double>(static_cast<double>(ms.size()) - 1.0,
                                 std::ceil(p * static_cast<double>(ms.size())) - 1.0));
            return ms[idx];
        };
        BenchRow row;
        row.L = L;
        row.batch = batch;
        row.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
        row.p50_ms = pct(0.50);
        row.p95_ms = pct(0.95);
        row.p99_ms = pct(0.99);
        row.traj_per_s = 1000.0 * batch / row.mean_ms;
        row.steps_per_s = row.traj_per_s * L;
        rows.push_back(row);
    }
    return rows;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write benchmark csv: " + path);
    out << "L,batch,mean_ms,p50_ms,p95_ms,p99_ms,traj_per_s,steps_per_s\n";
    for (const auto& r : rows)
        out << r.L << "," << r.batch << "," << r.mean_ms << "," << r.p50_ms << "," << r.p95_ms
            << "," << r.p99_ms << "," << r.traj_per_s << "," << r.steps_per_s << "\n";
}

// ---- reports -----------------------------------------------------------------

void write_eval_report(const std::string& path, const EvalReport& overall,
                       const StratifiedReport* stratified) {
    nlohmann::ordered_json j;
    j["ndcg@1"] = overall.ndcg1;
    j["ndcg@5"] = overall.ndcg5;
    j["ndcg@10"] = overall.ndcg10;
    j["mrr"] = overall.mrr;
    j["samples"] = overall.samples;
    if (stratified) {
        auto sub = [&j](const std::string& name, const EvalReport& r) {
            j["subgroup." + name + ".ndcg@1"] = r.ndcg1;
            j["subgroup." + name + ".ndcg@5"] = r.ndcg5;
            j["subgroup." + name + ".ndcg@10"] = r.ndcg10;
            j["subgroup." + name + ".mrr"] = r.mrr;
            j["subgroup." + name + ".samples"] = r.samples;
        };
        sub("asym_low", stratified->low);
        sub("asym_mid", stratified->mid);
        sub("asym_high", stratified->high);
        j["stratified.excluded"] = stratified->excluded;
        j["stratified.bound_low"] = stratified->bounds[0];
        j["stratified.bound_high"] = stratified->bounds[1];
        j["stratified.degenerate"] = stratified->degenerate;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write eval report: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace magflow
