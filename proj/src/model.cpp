#include "magflow/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "magflow/common.hpp"

namespace magflow {

namespace {

constexpr double kRmsEps = 1e-12;

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::MatrixXd cw_sigmoid(const Eigen::MatrixXd& m) {
    return m.unaryExpr([](double v) { return sigmoid(v); });
}

// delta (D x L) from delta_half (D/2 x L): both pair coordinates share a step.
Eigen::MatrixXd replicate_pairs(const Eigen::MatrixXd& half) {
    Eigen::MatrixXd full(half.rows() * 2, half.cols());
    for (Eigen::Index d = 0; d < half.rows(); ++d) {
        full.row(2 * d) = half.row(d);
        full.row(2 * d + 1) = half.row(d);
    }
    return full;
}

Eigen::MatrixXd fold_pairs(const Eigen::MatrixXd& full) {
    Eigen::MatrixXd half(full.rows() / 2, full.cols());
    for (Eigen::Index d = 0; d < half.rows(); ++d)
        half.row(d) = full.row(2 * d) + full.row(2 * d + 1);
    return half;
}

void rotate_into(const Eigen::VectorXd& v, const Eigen::VectorXd& phi, Eigen::VectorXd& out) {
    for (Eigen::Index d = 0; d < phi.size(); ++d) {
        const double c = std::cos(phi(d)), s = std::sin(phi(d));
        const double a = v(2 * d), b = v(2 * d + 1);
        out(2 * d) = c * a - s * b;
        out(2 * d + 1) = s * a + c * b;
    }
}

}  // namespace

std::size_t ModelParams::parameter_count() const {
    std::size_t total = 0;
    for (const auto& ref : param_refs(const_cast<ModelParams&>(*this))) total += ref.size;
    return total;
}

std::vector<ParamRef> param_refs(ModelParams& p) {
    std::vector<ParamRef> refs;
    auto add = [&refs](const std::string& name, Eigen::MatrixXd& m, ParamKind kind) {
        refs.push_back({name, m.data(), static_cast<std::size_t>(m.size()), kind});
    };
    auto addv = [&refs](const std::string& name, Eigen::VectorXd& v, ParamKind kind) {
        refs.push_back({name, v.data(), static_cast<std::size_t>(v.size()), kind});
    };
    add("emb.poi_table", p.emb.poi_table, ParamKind::table);
    add("emb.category_table", p.emb.category_table, ParamKind::table);
    add("emb.user_table", p.emb.user_table, ParamKind::table);
    add("emb.hour_table", p.emb.hour_table, ParamKind::table);
    add("emb.dow_table", p.emb.dow_table, ParamKind::table);
    addv("emb.gap_w", p.emb.gap_w, ParamKind::dense);
    addv("emb.gap_b", p.emb.gap_b, ParamKind::dense);
    add("emb.fuse_w", p.emb.fuse_w, ParamKind::dense);
    addv("emb.fuse_b", p.emb.fuse_b, ParamKind::dense);
    add("emb.gate_w", p.emb.gate_w, ParamKind::dense);
    addv("emb.gate_b", p.emb.gate_b, ParamKind::dense);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        auto& lp = p.layers[l];
        add(pre + "in_w", lp.in_w, ParamKind::dense);
        addv(pre + "in_b", lp.in_b, ParamKind::dense);
        add(pre + "theta_x", lp.theta_x, ParamKind::dense);
        add(pre + "theta_m", lp.theta_m, ParamKind::dense);
        addv(pre + "delta_w", lp.delta_w, ParamKind::dense);
        addv(pre + "delta_b", lp.delta_b, ParamKind::dense);
        addv(pre + "rho", lp.rho, ParamKind::dense);
        add(pre + "lambda_w", lp.lambda_w, ParamKind::dense);
        add(pre + "out_w", lp.out_w, ParamKind::dense);
        addv(pre + "out_b", lp.out_b, ParamKind::dense);
        addv(pre + "norm_scale", lp.norm_scale, ParamKind::norm);
    }
    return refs;
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.hidden % 2 != 0) throw ValidationError("hidden size D must be even");
    if (cfg.n_pois < 1 || cfg.n_users < 1 || cfg.n_categories < 1)
        throw ValidationError("model vocabularies must be non-empty");

    ModelParams p;
    p.cfg = cfg;
    const int D = cfg.hidden, Dt = cfg.time_emb, Dc = cfg.cat_emb, cc = cfg.concat_dim();

    p.emb.poi_table.resize(cfg.n_pois, D);
    p.emb.category_table.resize(cfg.n_categories, Dc);
    p.emb.user_table.resize(cfg.n_users, D);
    p.emb.hour_table.resize(24, Dt);
    p.emb.dow_table.resize(7, Dt);
    p.emb.gap_w.resize(Dt);
    p.emb.gap_b = Eigen::VectorXd::Zero(Dt);
    p.emb.fuse_w.resize(D, cc);
    p.emb.fuse_b = Eigen::VectorXd::Zero(D);
    p.emb.gate_w.resize(D, cc);
    p.emb.gate_b = Eigen::VectorXd::Zero(D);

    p.layers.resize(cfg.n_layers);
    for (auto& lp : p.layers) {
        lp.in_w.resize(3 * D, D);
        lp.in_b = Eigen::VectorXd::Zero(3 * D);
        lp.theta_x.resize(D / 2, D);
        lp.theta_m.resize(D / 2, 2 * cfg.phase_k);
        lp.delta_w.resize(D / 2);
        lp.delta_b = Eigen::VectorXd::Zero(D / 2);
        lp.rho.resize(D);
        lp.lambda_w.resize(D, D);
        lp.out_w.resize(D, D);
        lp.out_b = Eigen::VectorXd::Zero(D);
        lp.norm_scale = Eigen::VectorXd::Ones(D);
    }

    std::mt19937_64 rng(seed);
    auto fill_uniform = [&rng](double* data, std::size_t n, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < n; ++i) data[i] = dist(rng);
    };
    const double tb = 1.0 / std::sqrt(static_cast<double>(D));

    fill_uniform(p.emb.poi_table.data(), p.emb.poi_table.size(), tb);
    fill_uniform(p.emb.category_table.data(), p.emb.category_table.size(), tb);
    fill_uniform(p.emb.user_table.data(), p.emb.user_table.size(), tb);
    fill_uniform(p.emb.hour_table.data(), p.emb.hour_table.size(), tb);
    fill_uniform(p.emb.dow_table.data(), p.emb.dow_table.size(), tb);
    fill_uniform(p.emb.gap_w.data(), p.emb.gap_w.size(), 1.0);
    fill_uniform(p.emb.fuse_w.data(), p.emb.fuse_w.size(), 1.0 / std::sqrt(double(cc)));
    fill_uniform(p.emb.gate_w.data(), p.emb.gate_w.size(), 1.0 / std::sqrt(double(cc)));

    // Decay timescales exp(rho) and initial step sizes softplus(b_delta)
    // start log-uniform over a slow-to-fast band; small initial deltas keep
    // early rotation angles gentle and the memory long.
    std::uniform_real_distribution<double> rho_dist(std::log(0.001), std::log(0.1));
    std::uniform_real_distribution<double> dt_dist(std::log(0.05), std::log(0.5));
    for (auto& lp : p.layers) {
        fill_uniform(lp.in_w.data(), lp.in_w.size(), 1.0 / std::sqrt(double(D)));
        fill_uniform(lp.theta_x.data(), lp.theta_x.size(), 1.0 / std::sqrt(double(D)));
        fill_uniform(lp.theta_m.data(), lp.theta_m.size(), 1.0 / std::sqrt(double(2 * cfg.phase_k)));
        fill_uniform(lp.delta_w.data(), lp.delta_w.size(), 0.1);
        for (Eigen::Index i = 0; i < lp.delta_b.size(); ++i)
            lp.delta_b(i) = std::log(std::expm1(std::exp(dt_dist(rng))));
        for (Eigen::Index i = 0; i < lp.rho.size(); ++i) lp.rho(i) = rho_dist(rng);
        fill_uniform(lp.lambda_w.data(), lp.lambda_w.size(), 1.0 / std::sqrt(double(D)));
        fill_uniform(lp.out_w.data(), lp.out_w.size(), 1.0 / std::sqrt(double(D)));
    }
    return p;
}

ModelParams zero_like(const ModelParams& p) {
    ModelParams z = p;
    for (auto& ref : param_refs(z)) std::memset(ref.data, 0, ref.size * sizeof(double));
    return z;
}

void accumulate(ModelParams& into, const ModelParams& from) {
    auto dst = param_refs(into);
    auto src = param_refs(const_cast<ModelParams&>(from));
    for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t j = 0; j < dst[i].size; ++j) dst[i].data[j] += src[i].data[j];
}

// ---- forward pieces ------------------------------------------------------

Eigen::VectorXd embed_step(const EmbeddingParams& emb, const ModelConfig& cfg, const CheckIn& c,
                           std::int64_t gap_seconds) {
    if (c.poi_id < 0 || c.poi_id >= cfg.n_pois || c.user_id < 0 || c.user_id >= cfg.n_users ||
        c.category_id < 0 || c.category_id >= cfg.n_categories)
        throw ValidationError("embed_step: id outside vocabulary");
    const int D = cfg.hidden, Dt = cfg.time_emb, Dc = cfg.cat_emb;
    Eigen::VectorXd cc(cfg.concat_dim());
    const double lg = std::log1p(static_cast<double>(gap_seconds));
    cc.segment(0, D) = emb.poi_table.row(c.poi_id);
    cc.segment(D, Dc) = emb.category_table.row(c.category_id);
    cc.segment(D + Dc, D) = emb.user_table.row(c.user_id);
    cc.segment(2 * D + Dc, Dt) = emb.hour_table.row(hour_of_day(c.timestamp));
    cc.segment(2 * D + Dc + Dt, Dt) = emb.dow_table.row(day_of_week(c.timestamp));
    cc.segment(2 * D + Dc + 2 * Dt, Dt) = emb.gap_w * lg + emb.gap_b;
    const Eigen::VectorXd z = emb.fuse_w * cc + emb.fuse_b;
    const Eigen::VectorXd g = (emb.gate_w * cc + emb.gate_b).unaryExpr([](double v) { return sigmoid(v); });
    return z.cwiseProduct(g);
}

ProjTriple input_proj(const LayerParams& layer, const Eigen::VectorXd& x) {
    const auto D = static_cast<Eigen::Index>(x.size());
    const Eigen::VectorXd pvec = layer.in_w * x + layer.in_b;
    return {pvec.segment(0, D), pvec.segment(D, D), pvec.segment(2 * D, D)};
}

StepCoefficients step_coefficients(const LayerParams& layer, const Eigen::VectorXd& u,
                                   const Eigen::VectorXd& m, std::int64_t gap_seconds) {
    if (gap_seconds < 0) throw ValidationError("step_coefficients: negative time gap");
    StepCoefficients sc;
    const double lg = std::log1p(static_cast<double>(gap_seconds));
    sc.theta = layer.theta_x * u + layer.theta_m * m;
    sc.delta_half = (layer.delta_w * lg + layer.delta_b).unaryExpr([](double v) { return softplus(v); });
    sc.delta = replicate_pairs(sc.delta_half);
    const Eigen::VectorXd A = -layer.rho.array().exp().matrix();
    sc.alpha = (sc.delta.array() * A.array()).exp();
    sc.lambda = (layer.lambda_w * u).unaryExpr([](double v) { return sigmoid(v); });
    sc.beta = (1.0 - sc.lambda.array()) * sc.delta.array() * sc.alpha.array();
    sc.gamma = sc.lambda.cwiseProduct(sc.delta);
    sc.phi = sc.delta_half.cwiseProduct(sc.theta);
    return sc;
}

Eigen::VectorXd rotate_pairs(const Eigen::VectorXd& v, const Eigen::VectorXd& phi) {
    if (v.size() != 2 * phi.size()) throw ValidationError("rotate_pairs: size mismatch");
    Eigen::VectorXd out(v.size());
    rotate_into(v, phi, out);
    return out;
}

namespace {

/// Shared recurrence core; optionally records the rotated intermediates.
void scan_core(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& beta,
               const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& phi, const Eigen::MatrixXd& c,
               const Eigen::MatrixXd& C, Eigen::MatrixXd& h, Eigen::MatrixXd& y,
               Eigen::MatrixXd* rh_out, Eigen::MatrixXd* rc_out) {
    const Eigen::Index D = alpha.rows(), L = alpha.cols();
    h.resize(D, L);
    y.resize(D, L);
    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(D);
    Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(D);
    Eigen::VectorXd rh(D), rc(D);
    for (Eigen::Index t = 0; t < L; ++t) {
        rotate_into(h_prev, phi.col(t), rh);
        rotate_into(c_prev, phi.col(t), rc);
        h.col(t) = alpha.col(t).cwiseProduct(rh) + beta.col(t).cwiseProduct(rc) +
                   gamma.col(t).cwiseProduct(c.col(t));
        if (!h.col(t).allFinite())
            throw NumericalError("scan: non-finite state at step " + std::to_string(t + 1));
        y.col(t) = C.col(t).cwiseProduct(h.col(t));
        if (rh_out) rh_out->col(t) = rh;
        if (rc_out) rc_out->col(t) = rc;
        h_prev = h.col(t);
        c_prev = c.col(t);
    }
}

}  // namespace

ScanOutputs scan(const ScanInputs& in) {
    const Eigen::MatrixXd c = in.B.cwiseProduct(in.u);
    ScanOutputs out;
    scan_core(in.alpha, in.beta, in.gamma, in.phi, c, in.C, out.h, out.y, nullptr, nullptr);
    return out;
}

namespace {

Eigen::MatrixXd layer_forward_cached(const LayerParams& lp, const ModelConfig& cfg,
                                     const Eigen::MatrixXd& x, const Eigen::MatrixXd& m,
                                     const Eigen::VectorXd& log_gaps, LayerCache& cache) {
    const Eigen::Index D = cfg.hidden, L = x.cols();
    cache.x = x;

    Eigen::MatrixXd pvec = (lp.in_w * x).colwise() + lp.in_b;
    cache.u = pvec.topRows(D);
    cache.B = pvec.middleRows(D, D);
    cache.C = pvec.bottomRows(D);

    cache.theta = lp.theta_x * cache.u + lp.theta_m * m;
    cache.pre_delta = (lp.delta_w * log_gaps.transpose()).colwise() + lp.delta_b;
    cache.delta_half = cache.pre_delta.unaryExpr([](double v) { return softplus(v); });
    cache.delta = replicate_pairs(cache.delta_half);

    const Eigen::VectorXd A = -lp.rho.array().exp().matrix();
    cache.alpha = (cache.delta.array().colwise() * A.array()).exp();
    cache.lambda = cw_sigmoid(lp.lambda_w * cache.u);
    cache.beta = (1.0 - cache.lambda.array()) * cache.delta.array() * cache.alpha.array();
    cache.gamma = cache.lambda.cwiseProduct(cache.delta);
    cache.phi = cfg.zero_rotation ? Eigen::MatrixXd::Zero(D / 2, L)
                                  : Eigen::MatrixXd(cache.delta_half.cwiseProduct(cache.theta));
    cache.c = cache.B.cwiseProduct(cache.u);

    cache.rh.resize(D, L);
    cache.rc.resize(D, L);
    scan_core(cache.alpha, cache.beta, cache.gamma, cache.phi, cache.c, cache.C, cache.h, cache.y,
              &cache.rh, &cache.rc);

    cache.a = cache.y.array() * cache.y.unaryExpr([](double v) { return sigmoid(v); }).array();
    cache.res = ((lp.out_w * cache.a).colwise() + lp.out_b) + x;
    cache.rms.resize(L);
    cache.z.resize(D, L);
    for (Eigen::Index t = 0; t < L; ++t) {
        cache.rms(t) = std::sqrt(cache.res.col(t).squaredNorm() / static_cast<double>(D) + kRmsEps);
        cache.z.col(t) = (cache.res.col(t) / cache.rms(t)).cwiseProduct(lp.norm_scale);
    }
    return cache.z;
}

void full_forward(const ModelParams& p, const Trajectory& traj,
                  const std::vector<StepPhaseFeature>& feats, ForwardCache& cache) {
    const auto L = static_cast<Eigen::Index>(traj.steps.size());
    if (L == 0) throw ValidationError("forward: empty trajectory");
    if (feats.size() != traj.steps.size())
        throw ValidationError("forward: phase features do not match trajectory length");
    const ModelConfig& cfg = p.cfg;
    const int D = cfg.hidden, Dt = cfg.time_emb, Dc = cfg.cat_emb;

    cache.m.resize(2 * cfg.phase_k, L);
    for (Eigen::Index t = 0; t < L; ++t) {
        if (feats[t].m.size() != 2 * cfg.phase_k)
            throw ValidationError("forward: phase feature width mismatch");
        cache.m.col(t) = feats[t].m;
    }
    cache.log_gaps.resize(L);
    for (Eigen::Index t = 0; t < L; ++t)
        cache.log_gaps(t) = std::log1p(static_cast<double>(traj.gaps[t]));

    cache.concat.resize(cfg.concat_dim(), L);
    for (Eigen::Index t = 0; t < L; ++t) {
        const CheckIn& c = traj.steps[t];
        if (c.poi_id < 0 || c.poi_id >= cfg.n_pois || c.user_id < 0 || c.user_id >= cfg.n_users ||
            c.category_id < 0 || c.category_id >= cfg.n_categories)
            throw ValidationError("forward: id outside vocabulary at step " + std::to_string(t + 1));
        auto col = cache.concat.col(t);
        col.segment(0, D) = p.emb.poi_table.row(c.poi_id);
        col.segment(D, Dc) = p.emb.category_table.row(c.category_id);
        col.segment(D + Dc, D) = p.emb.user_table.row(c.user_id);
        col.segment(2 * D + Dc, Dt) = p.emb.hour_table.row(hour_of_day(c.timestamp));
        col.segment(2 * D + Dc + Dt, Dt) = p.emb.dow_table.row(day_of_week(c.timestamp));
        col.segment(2 * D + Dc + 2 * Dt, Dt) = p.emb.gap_w * cache.log_gaps(t) + p.emb.gap_b;
    }
    cache.fuse_lin = (p.emb.fuse_w * cache.concat).colwise() + p.emb.fuse_b;
    cache.gate = cw_sigmoid((p.emb.gate_w * cache.concat).colwise() + p.emb.gate_b);
    cache.x0 = cache.fuse_lin.cwiseProduct(cache.gate);

    cache.layers.resize(p.layers.size());
    Eigen::MatrixXd x = cache.x0;
    for (std::size_t l = 0; l < p.layers.size(); ++l)
        x = layer_forward_cached(p.layers[l], cfg, x, cache.m, cache.log_gaps, cache.layers[l]);
}

}  // namespace

Eigen::MatrixXd forward_representation(const ModelParams& p, const Trajectory& traj,
                                       const std::vector<StepPhaseFeature>& feats,
                                       ForwardCache& cache) {
    full_forward(p, traj, feats, cache);
    return cache.layers.empty() ? cache.x0 : cache.layers.back().z;
}

double score_and_loss(const ModelParams& p, const Eigen::MatrixXd& z, const Trajectory& traj,
                      Eigen::MatrixXd& logits_out) {
    const auto L = static_cast<Eigen::Index>(traj.steps.size());
    if (L < 2) throw ValidationError("score_and_loss: trajectory shorter than 2 steps");
    logits_out.resize(p.cfg.n_pois, L - 1);
    double ce_sum = 0.0;
    for (Eigen::Index t = 0; t + 1 < L; ++t) {
        logits_out.col(t) = p.emb.poi_table * z.col(t);
        const double mx = logits_out.col(t).maxCoeff();
        const double lse = mx + std::log((logits_out.col(t).array() - mx).exp().sum());
        ce_sum += lse - logits_out(traj.steps[t + 1].poi_id, t);
    }
    return ce_sum;
}

double forward_loss(const ModelParams& p, const Trajectory& traj,
                    const std::vector<StepPhaseFeature>& feats, ForwardCache& cache) {
    const Eigen::MatrixXd z = forward_representation(p, traj, feats, cache);
    cache.ce_sum = score_and_loss(p, z, traj, cache.logits);
    cache.positions = static_cast<int>(traj.steps.size()) - 1;
    return cache.ce_sum;
}

// ---- backward ------------------------------------------------------------

namespace {

/// dz -> dx for one layer, accumulating parameter gradients.
Eigen::MatrixXd layer_backward(const LayerParams& lp, LayerParams& g, const ModelConfig& cfg,
                               const LayerCache& cache, const Eigen::MatrixXd& m,
                               const Eigen::VectorXd& log_gaps, const Eigen::MatrixXd& dz) {
    const Eigen::Index D = cfg.hidden, L = dz.cols(), Dh = D / 2;

    // RMS norm + scale.
    Eigen::MatrixXd dres(D, L);
    for (Eigen::Index t = 0; t < L; ++t) {
        const double rms = cache.rms(t);
        g.norm_scale += dz.col(t).cwiseProduct(cache.res.col(t) / rms);
        const Eigen::VectorXd dn = dz.col(t).cwiseProduct(lp.norm_scale);
        const double dot = dn.dot(cache.res.col(t));
        dres.col(t) = dn / rms -
                      cache.res.col(t) * (dot / (static_cast<double>(D) * rms * rms * rms));
    }

    // Residual branch plus output projection.
    Eigen::MatrixXd dx = dres;
    g.out_w += dres * cache.a.transpose();
    g.out_b += dres.rowwise().sum();
    const Eigen::MatrixXd da = lp.out_w.transpose() * dres;

    // SiLU.
    const Eigen::MatrixXd sig_y = cw_sigmoid(cache.y);
    const Eigen::MatrixXd dy =
        da.array() * sig_y.array() * (1.0 + cache.y.array() * (1.0 - sig_y.array()));

    // Scan, reverse order.
    Eigen::MatrixXd dalpha(D, L), dbeta(D, L), dgamma(D, L), dc(D, L), dC(D, L), dphi(Dh, L);
    Eigen::VectorXd carry_h = Eigen::VectorXd::Zero(D);
    Eigen::VectorXd carry_c = Eigen::VectorXd::Zero(D);
    Eigen::VectorXd w1(D), w2(D);
    for (Eigen::Index t = L - 1; t >= 0; --t) {
        dC.col(t) = dy.col(t).cwiseProduct(cache.h.col(t));
        const Eigen::VectorXd gh = dy.col(t).cwiseProduct(cache.C.col(t)) + carry_h;
        dalpha.col(t) = gh.cwiseProduct(cache.rh.col(t));
        dbeta.col(t) = gh.cwiseProduct(cache.rc.col(t));
        dgamma.col(t) = gh.cwiseProduct(cache.c.col(t));
        dc.col(t) = gh.cwiseProduct(cache.gamma.col(t)) + carry_c;
        w1 = gh.cwiseProduct(cache.alpha.col(t));
        w2 = gh.cwiseProduct(cache.beta.col(t));
        for (Eigen::Index d = 0; d < Dh; ++d) {
            dphi(d, t) = w1(2 * d + 1) * cache.rh(2 * d, t) - w1(2 * d) * cache.rh(2 * d + 1, t) +
                         w2(2 * d + 1) * cache.rc(2 * d, t) - w2(2 * d) * cache.rc(2 * d + 1, t);
        }
        rotate_into(w1, -cache.phi.col(t), carry_h);
        rotate_into(w2, -cache.phi.col(t), carry_c);
    }

    // Coefficient chain.
    const Eigen::VectorXd A = -lp.rho.array().exp().matrix();
    const Eigen::MatrixXd dlambda =
        (dgamma.array() * cache.delta.array() -
         dbeta.array() * cache.delta.array() * cache.alpha.array()).matrix();
    Eigen::MatrixXd ddelta =
        (dgamma.array() * cache.lambda.array() +
         dbeta.array() * (1.0 - cache.lambda.array()) * cache.alpha.array()).matrix();
    const Eigen::MatrixXd dalpha_total =
        (dalpha.array() + dbeta.array() * (1.0 - cache.lambda.array()) * cache.delta.array())
            .matrix();
    ddelta.array() += (dalpha_total.array() * cache.alpha.array()).colwise() * A.array();
    const Eigen::VectorXd dA =
        (dalpha_total.array() * cache.alpha.array() * cache.delta.array()).rowwise().sum().matrix();
    g.rho += dA.cwiseProduct(A);  // A = -exp(rho) => drho = dA * A

    const Eigen::MatrixXd dpre_lambda =
        (dlambda.array() * cache.lambda.array() * (1.0 - cache.lambda.array())).matrix();
    g.lambda_w += dpre_lambda * cache.u.transpose();
    Eigen::MatrixXd du = lp.lambda_w.transpose() * dpre_lambda;

    Eigen::MatrixXd ddelta_half = fold_pairs(ddelta);
    Eigen::MatrixXd dtheta = Eigen::MatrixXd::Zero(Dh, L);
    if (!cfg.zero_rotation) {
        // phi = delta_half .* theta; under the ablation phi is a constant 0.
        ddelta_half += dphi.cwiseProduct(cache.theta);
        dtheta = dphi.cwiseProduct(cache.delta_half);
    }

    const Eigen::MatrixXd dpre_delta =
        (ddelta_half.array() *
         cache.pre_delta.unaryExpr([](double v) { return sigmoid(v); }).array())
            .matrix();
    g.delta_w += dpre_delta * log_gaps;
    g.delta_b += dpre_delta.rowwise().sum();

    g.theta_x += dtheta * cache.u.transpose();
    g.theta_m += dtheta * m.transpose();
    du += lp.theta_x.transpose() * dtheta;

    du += dc.cwiseProduct(cache.B);
    const Eigen::MatrixXd dB = dc.cwiseProduct(cache.u);

    Eigen::MatrixXd dpvec(3 * D, L);
    dpvec.topRows(D) = du;
    dpvec.middleRows(D, D) = dB;
    dpvec.bottomRows(D) = dC;
    g.in_w += dpvec * cache.x.transpose();
    g.in_b += dpvec.rowwise().sum();
    dx += lp.in_w.transpose() * dpvec;
    return dx;
}

}  // namespace

void backward_loss(const ModelParams& p, const Trajectory& traj, const ForwardCache& cache,
                   double loss_scale, ModelParams& grads) {
    const auto L = static_cast<Eigen::Index>(traj.steps.size());
    if (cache.logits.cols() != L - 1)
        throw ValidationError("backward_loss: forward cache missing (run forward_loss first)");
    const ModelConfig& cfg = p.cfg;
    const int D = cfg.hidden, Dt = cfg.time_emb, Dc = cfg.cat_emb;
    const Eigen::MatrixXd& z = cache.layers.empty() ? cache.x0 : cache.layers.back().z;

    // Softmax cross-entropy and the tied scoring table.
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(D, L);
    for (Eigen::Index t = 0; t + 1 < L; ++t) {
        const double mx = cache.logits.col(t).maxCoeff();
        Eigen::VectorXd soft = (cache.logits.col(t).array() - mx).exp();
        soft /= soft.sum();
        soft(traj.steps[t + 1].poi_id) -= 1.0;
        soft *= loss_scale;
        grads.emb.poi_table += soft * z.col(t).transpose();
        dz.col(t) += p.emb.poi_table.transpose() * soft;
    }

    for (auto l = static_cast<std::int64_t>(p.layers.size()) - 1; l >= 0; --l)
        dz = layer_backward(p.layers[l], grads.layers[l], cfg, cache.layers[l], cache.m,
                            cache.log_gaps, dz);

    // Gated fusion.
    const Eigen::MatrixXd dfuse = dz.cwiseProduct(cache.gate);
    const Eigen::MatrixXd dpre_gate = dz.array() * cache.fuse_lin.array() * cache.gate.array() *
                                      (1.0 - cache.gate.array());
    grads.emb.fuse_w += dfuse * cache.concat.transpose();
    grads.emb.fuse_b += dfuse.rowwise().sum();
    grads.emb.gate_w += dpre_gate * cache.concat.transpose();
    grads.emb.gate_b += dpre_gate.rowwise().sum();
    const Eigen::MatrixXd dconcat =
        p.emb.fuse_w.transpose() * dfuse + p.emb.gate_w.transpose() * dpre_gate;

    for (Eigen::Index t = 0; t < L; ++t) {
        const CheckIn& c = traj.steps[t];
        const auto col = dconcat.col(t);
        grads.emb.poi_table.row(c.poi_id) += col.segment(0, D).transpose();
        grads.emb.category_table.row(c.category_id) += col.segment(D, Dc).transpose();
        grads.emb.user_table.row(c.user_id) += col.segment(D + Dc, D).transpose();
        grads.emb.hour_table.row(hour_of_day(c.timestamp)) +=
            col.segment(2 * D + Dc, Dt).transpose();
        grads.emb.dow_table.row(day_of_week(c.timestamp)) +=
            col.segment(2 * D + Dc + Dt, Dt).transpose();
        grads.emb.gap_w += col.segment(2 * D + Dc + 2 * Dt, Dt) * cache.log_gaps(t);
        grads.emb.gap_b += col.segment(2 * D + Dc + 2 * Dt, Dt);
    }
}

// ---- checkpoints ----------------------------------------------------------

namespace {
constexpr char kModelMagic[4] = {'M', 'G', 'M', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated checkpoint: " + path);
}
}  // namespace

void write_checkpoint(const std::string& path, const ModelParams& p, std::uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kModelMagic, 4);
    put(out, static_cast<std::uint64_t>(p.cfg.hidden));
    put(out, static_cast<std::uint64_t>(p.cfg.phase_k));
    put(out, static_cast<std::uint64_t>(p.cfg.rank_r));
    put(out, static_cast<std::uint64_t>(p.cfg.n_layers));
    put(out, static_cast<std::uint64_t>(p.cfg.n_pois));
    put(out, static_cast<std::uint64_t>(p.cfg.n_users));
    put(out, static_cast<std::uint64_t>(p.cfg.n_categories));
    put(out, config_hash);
    for (const auto& ref : param_refs(const_cast<ModelParams&>(p)))
        out.write(reinterpret_cast<const char*>(ref.data),
                  static_cast<std::streamsize>(ref.size * sizeof(double)));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

ModelParams read_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const std::uint64_t* expected_config_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
        throw IoError("bad checkpoint magic: " + path);
    std::uint64_t vals[7];
    for (auto& v : vals) get(in, v, path);
    std::uint64_t config_hash = 0;
    get(in, config_hash, path);
    const std::uint64_t expect[7] = {
        static_cast<std::uint64_t>(cfg.hidden),   static_cast<std::uint64_t>(cfg.phase_k),
        static_cast<std::uint64_t>(cfg.rank_r),   static_cast<std::uint64_t>(cfg.n_layers),
        static_cast<std::uint64_t>(cfg.n_pois),   static_cast<std::uint64_t>(cfg.n_users),
        static_cast<std::uint64_t>(cfg.n_categories)};
    for (int i = 0; i < 7; ++i)
        if (vals[i] != expect[i])
            throw ValidationError("checkpoint header mismatch at field " + std::to_string(i) +
                                  ": file has " + std::to_string(vals[i]) + ", config wants " +
                                  std::to_string(expect[i]));
    if (expected_config_hash && *expected_config_hash != config_hash)
        throw ValidationError("checkpoint config hash mismatch: expected " +
                              std::to_string(*expected_config_hash) + ", file has " +
                              std::to_string(config_hash));
    ModelParams p = init_model(cfg, 0);
    for (auto& ref : param_refs(p)) {
        in.read(reinterpret_cast<char*>(ref.data),
                static_cast<std::streamsize>(ref.size * sizeof(double)));
        if (!in) throw IoError("truncated checkpoint payload: " + path);
    }
    return p;
}

}  // namespace magflow
