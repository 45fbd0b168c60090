// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/fit.hpp"

#include "fleg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace fleg {

namespace {

double scene_diagonal(const Scene& scene) {
    if (scene.geo.empty())
        return 1.0;
    Vec3 lo = scene.geo[0].mu, hi = scene.geo[0].mu;
    for (const Gaussian3D& g : scene.geo) {
        lo = lo.cwiseMin(g.mu);
        hi = hi.cwiseMax(g.mu);
    }
    const double diag = (hi - lo).norm();
    return diag > 0.0 ? diag : 1.0;
}

double logit(double p) {
    const double q = std::clamp(p, 1e-6, 1.0 - 1e-6);
    return std::log(q / (1.0 - q));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Params {
    int n = 0, n_sh = 0, feat_dim = 0;
    bool with_feat = false;
    std::vector<double> mu, log_scale, rot, logit_op, sh, feat;
    // transform snap-back: exp(log(x)) is off by an ulp, which would make an
    // exact-optimum start drift under sign-based losses; untouched params map
    // back to their original raw values
    std::vector<double> init_log_scale, init_scale, init_logit_op, init_op;

    static Params from_scene(const Scene& scene, bool with_feat) {
        Params p;
        p.n = int(scene.geo.size());
        p.n_sh = scene.sh_coeff_count();
        p.feat_dim = scene.feat_dim;
        p.with_feat = with_feat;
        p.mu.resize(size_t(p.n) * 3);
        p.log_scale.resize(size_t(p.n) * 3);
        p.rot.resize(size_t(p.n) * 4);
        p.logit_op.resize(p.n);
        p.sh.resize(size_t(p.n) * p.n_sh * 3);
        if (with_feat)
            p.feat.resize(size_t(p.n) * p.feat_dim);
        p.init_scale.resize(size_t(p.n) * 3);
        p.init_op.resize(p.n);
        for (int i = 0; i < p.n; ++i) {
            const Gaussian3D& g = scene.geo[i];
            for (int k = 0; k < 3; ++k) {
                p.mu[size_t(i) * 3 + k] = g.mu[k];
                p.log_scale[size_t(i) * 3 + k] = std::log(g.scale[k]);
                p.init_scale[size_t(i) * 3 + k] = g.scale[k];
            }
            const Vec4 q = canonical_quat(g.rot);
            for (int k = 0; k < 4; ++k)
                p.rot[size_t(i) * 4 + k] = q[k];
            p.logit_op[i] = logit(g.opacity);
            p.init_op[i] = g.opacity;
            for (int b = 0; b < p.n_sh; ++b)
                for (int c = 0; c < 3; ++c)
                    p.sh[(size_t(i) * p.n_sh + b) * 3 + c] = g.sh[b][c];
            if (with_feat)
                for (int k = 0; k < p.feat_dim; ++k)
                    p.feat[size_t(i) * p.feat_dim + k] = g.feat.empty() ? 0.0 : g.feat[k];
        }
        p.init_log_scale = p.log_scale;
        p.init_logit_op = p.logit_op;
        return p;
    }

    void to_scene(Scene& scene) const {
        for (int i = 0; i < n; ++i) {
            Gaussian3D& g = scene.geo[i];
            for (int k = 0; k < 3; ++k) {
                const size_t idx = size_t(i) * 3 + k;
                g.mu[k] = mu[idx];
                g.scale[k] =
                    log_scale[idx] == init_log_scale[idx] ? init_scale[idx] : std::exp(log_scale[idx]);
            }
            for (int k = 0; k < 4; ++k)
                g.rot[k] = rot[size_t(i) * 4 + k];
            g.opacity = logit_op[i] == init_logit_op[i] ? init_op[i] : sigmoid(logit_op[i]);
            for (int b = 0; b < n_sh; ++b)
                for (int c = 0; c < 3; ++c)
                    g.sh[b][c] = sh[(size_t(i) * n_sh + b) * 3 + c];
            if (with_feat) {
                g.feat.resize(feat_dim);
                for (int k = 0; k < feat_dim; ++k)
                    g.feat[k] = feat[size_t(i) * feat_dim + k];
            }
        }
    }

    void renormalize_rotations() {
        for (int i = 0; i < n; ++i) {
            double norm = 0.0;
            for (int k = 0; k < 4; ++k)
                norm += rot[size_t(i) * 4 + k] * rot[size_t(i) * 4 + k];
            norm = std::sqrt(norm);
            if (norm > 0.0)
                for (int k = 0; k < 4; ++k)
                    rot[size_t(i) * 4 + k] /= norm;
            else
                rot[size_t(i) * 4] = 1.0;
        }
    }
};

struct Grads {
    std::vector<double> mu, log_scale, rot, logit_op, sh, feat;

    void reset(const Params& p) {
        mu.assign(p.mu.size(), 0.0);
        log_scale.assign(p.log_scale.size(), 0.0);
        rot.assign(p.rot.size(), 0.0);
        logit_op.assign(p.logit_op.size(), 0.0);
        sh.assign(p.sh.size(), 0.0);
        feat.assign(p.feat.size(), 0.0);
    }

    // chain the renderer gradients into the optimization domains
    void accumulate(const RenderGrad& rg, const Params& p, const Scene& scene) {
        for (int i = 0; i < p.n; ++i) {
            for (int k = 0; k < 3; ++k) {
                mu[size_t(i) * 3 + k] += rg.d_mu[i][k];
                log_scale[size_t(i) * 3 + k] += rg.d_scale[i][k] * scene.geo[i].scale[k];
            }
            for (int k = 0; k < 4; ++k)
                rot[size_t(i) * 4 + k] += rg.d_rot[i][k];
            const double o = scene.geo[i].opacity;
            logit_op[i] += rg.d_opacity[i] * o * (1.0 - o);
            for (int b = 0; b < p.n_sh; ++b)
                for (int c = 0; c < 3; ++c)
                    sh[(size_t(i) * p.n_sh + b) * 3 + c] += rg.d_sh[i][b][c];
            if (p.with_feat && !rg.d_feat[i].empty())
                for (int k = 0; k < p.feat_dim; ++k)
                    feat[size_t(i) * p.feat_dim + k] += rg.d_feat[i][k];
        }
    }
};

struct AdamState {
    std::vector<double> m, v;
    void init(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

} // namespace

std::pair<Scene, FitTrace> fit_scene(const Scene& init, const std::vector<FitTarget>& targets,
                                     const FitConfig& cfg, const LossConfig& loss_cfg) {
    if (cfg.iterations < 1)
        throw DataError("fit_scene: iterations must be >= 1");
    if (targets.empty())
        throw DataError("fit_scene: at least one target required");
    {
        const auto violations = validate_scene(init);
        if (!violations.empty())
            throw DataError("fit_scene: invalid initial scene: " + violations[0].where + " " +
                            violations[0].message);
    }

    const bool any_feature_target = std::any_of(targets.begin(), targets.end(), [](const FitTarget& t) {
        return t.feature.has_value() || t.mask.has_value();
    });
    bool scene_has_feat = false;
    for (const Gaussian3D& g : init.geo)
        scene_has_feat = scene_has_feat || !g.feat.empty();
    const bool with_feat = any_feature_target && scene_has_feat;

    Scene scene = init;
    Params params = Params::from_scene(scene, with_feat);
    Grads grads;
    AdamState adam_mu, adam_scale, adam_rot, adam_op, adam_sh, adam_feat;
    adam_mu.init(params.mu.size());
    adam_scale.init(params.log_scale.size());
    adam_rot.init(params.rot.size());
    adam_op.init(params.logit_op.size());
    adam_sh.init(params.sh.size());
    adam_feat.init(params.feat.size());

    const double lr_mu = cfg.lr_mu > 0.0 ? cfg.lr_mu : 1e-3 * scene_diagonal(init);

    // per-term target counts for mean reduction
    int n_feat_targets = 0, n_depth_targets = 0, n_inst_targets = 0;
    for (const FitTarget& t : targets) {
        n_feat_targets += t.feature.has_value();
        n_depth_targets += t.depth.has_value();
        n_inst_targets += t.mask.has_value() && with_feat;
    }
    // fixed validity masks (target side), so the objective is stable across iterations
    std::vector<std::vector<uint8_t>> feat_valid(targets.size());
    for (size_t t = 0; t < targets.size(); ++t)
        if (targets[t].feature) {
            const FeatureMap& fm = *targets[t].feature;
            feat_valid[t].assign(size_t(fm.height) * fm.width, 0);
            for (size_t p = 0; p < feat_valid[t].size(); ++p)
                feat_valid[t][p] =
                    kernels::sumsq(fm.data.data() + p * fm.dim, fm.dim) > 0.0 ? 1 : 0;
        }

    FitTrace trace;
    trace.iterations.reserve(cfg.iterations);

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        params.to_scene(scene);
        grads.reset(params);

        double photo_sum = 0.0, feat_sum = 0.0, depth_sum = 0.0, inst_sum = 0.0;
        for (size_t t = 0; t < targets.size(); ++t) {
            const FitTarget& target = targets[t];
            RenderOptions opts;
            opts.color = true;
            opts.depth = target.depth.has_value();
            opts.feature = with_feat && (target.feature.has_value() || target.mask.has_value());
            opts.use_sem_features = false;  // the fit optimizes geometry attributes
            opts.threads = cfg.threads;

            const RenderOutput out = render(scene, target.cam, opts);
            PixelGrad pg;
            std::vector<double> d_color, d_feature_term, d_depth;

            const double photo = photometric_loss_grad(out.color, target.image, loss_cfg.eta, d_color);
            photo_sum += photo;
            const double photo_scale = 1.0 / double(targets.size());
            pg.d_color.assign(d_color.size(), 0.0);
            kernels::axpy(photo_scale, d_color.data(), pg.d_color.data(), d_color.size());

            if (opts.feature)
                pg.d_feature.assign(out.feature.data.size(), 0.0);
            if (target.feature) {
                const double fl = feature_cosine_loss_grad(out.feature, *target.feature, &feat_valid[t],
                                                           d_feature_term);
                feat_sum += fl;
                kernels::axpy(1.0 / double(n_feat_targets), d_feature_term.data(), pg.d_feature.data(),
                              d_feature_term.size());
            }
            if (target.mask && with_feat) {
                const double il =
                    instance_contrastive_loss_grad(out.feature, *target.mask, loss_cfg.alpha, d_feature_term);
                inst_sum += il;
                kernels::axpy(loss_cfg.lambda_inst / double(n_inst_targets), d_feature_term.data(),
                              pg.d_feature.data(), d_feature_term.size());
            }
            if (target.depth) {
                const double dl = depth_distill_loss_grad(out.depth, *target.depth, target.depth_valid, d_depth);
                depth_sum += dl;
                pg.d_depth.assign(d_depth.size(), 0.0);
                kernels::axpy(loss_cfg.lambda_depth / double(n_depth_targets), d_depth.data(),
                              pg.d_depth.data(), d_depth.size());
            }

            const auto [out2, rg] = render_with_grad(scene, target.cam, opts, pg);
            grads.accumulate(rg, params, scene);
        }

        const double photo = photo_sum / double(targets.size());
        const double feat = n_feat_targets ? feat_sum / n_feat_targets : 0.0;
        const double depth = n_depth_targets ? depth_sum / n_depth_targets : 0.0;
        const double inst = n_inst_targets ? inst_sum / n_inst_targets : 0.0;
        const LossReport report = total_loss(photo, feat, depth, 0.0, inst, loss_cfg);
        if (!std::isfinite(report.total))
            throw DataError("fit_scene: loss diverged (NaN) at iteration " + std::to_string(iter));
        trace.iterations.push_back(report);
        if (cfg.log_every > 0 && iter % cfg.log_every == 0)
            std::fprintf(stderr, "fleg: fit iter %d total %.6g photo %.6g\n", iter, report.total, report.photo);

        const double b1 = 1.0 - std::pow(cfg.beta1, iter);
        const double b2 = 1.0 - std::pow(cfg.beta2, iter);
        kernels::adam_update(params.mu.data(), adam_mu.m.data(), adam_mu.v.data(), grads.mu.data(),
                             params.mu.size(), lr_mu, cfg.beta1, cfg.beta2, cfg.adam_eps, b1, b2);
        kernels::adam_update(params.log_scale.data(), adam_scale.m.data(), adam_scale.v.data(),
                             grads.log_scale.data(), params.log_scale.size(), cfg.lr_log_scale, cfg.beta1,
                             cfg.beta2, cfg.adam_eps, b1, b2);
        kernels::adam_update(params.rot.data(), adam_rot.m.data(), adam_rot.v.data(), grads.rot.data(),
                             params.rot.size(), cfg.lr_rot, cfg.beta1, cfg.beta2, cfg.adam_eps, b1, b2);
        kernels::adam_update(params.logit_op.data(), adam_op.m.data(), adam_op.v.data(), grads.logit_op.data(),
                             params.logit_op.size(), cfg.lr_logit_opacity, cfg.beta1, cfg.beta2, cfg.adam_eps,
                             b1, b2);
        kernels::adam_update(params.sh.data(), adam_sh.m.data(), adam_sh.v.data(), grads.sh.data(),
                             params.sh.size(), cfg.lr_sh, cfg.beta1, cfg.beta2, cfg.adam_eps, b1, b2);
        if (!params.feat.empty())
            kernels::adam_update(params.feat.data(), adam_feat.m.data(), adam_feat.v.data(), grads.feat.data(),
                                 params.feat.size(), cfg.lr_feat, cfg.beta1, cfg.beta2, cfg.adam_eps, b1, b2);
        params.renormalize_rotations();
    }

    params.to_scene(scene);
    for (Gaussian3D& g : scene.geo)
        g.rot = canonical_quat(g.rot);

    // soft progress check: the total should not meaningfully increase across
    // any 100-iteration window (logged, never fatal); sub-noise fluctuation
    // around the convergence floor does not count
    int window_violations = 0;
    const double noise_floor = 1e-3 * trace.iterations.front().total + 1e-12;
    for (size_t i = 0; i + 100 < trace.iterations.size(); ++i)
        window_violations += trace.iterations[i + 100].total > trace.iterations[i].total + noise_floor;
    if (window_violations > 0)
        std::fprintf(stderr, "fleg: fit: total loss increased over %d of %zu 100-iteration windows\n",
                     window_violations, trace.iterations.size() - 100);

    for (const FitTarget& target : targets) {
        RenderOptions opts;
        opts.threads = cfg.threads;
        const RenderOutput out = render(scene, target.cam, opts);
        double mse = kernels::sq_diff_sum(out.color.data.data(), target.image.data.data(),
                                          out.color.data.size()) /
                     double(out.color.data.size());
        trace.final_psnr.push_back(mse == 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse)));
    }
    return {std::move(scene), std::move(trace)};
}

// ---------------------------------------------------------------------------
// gradcheck

namespace {

constexpr double kFdStep = 1e-4;
constexpr double kGradTol = 1e-3;

enum class Group { Mu, Scale, Rot, Opacity, Sh, Feat, SemMu, SemScale, SemOpacity, SemFeat };

const char* group_name(Group g) {
    switch (g) {
    case Group::Mu: return "mu";
    case Group::Scale: return "scale";
    case Group::Rot: return "rot";
    case Group::Opacity: return "opacity";
    case Group::Sh: return "sh";
    case Group::Feat: return "feat";
    case Group::SemMu: return "sem_mu";
    case Group::SemScale: return "sem_scale_iso";
    case Group::SemOpacity: return "sem_opacity";
    case Group::SemFeat: return "sem_feat";
    }
    return "?";
}

struct AttrRef {
    Group group;
    int gauss = 0, comp = 0;
};

void apply_delta(Scene& scene, const AttrRef& ref, double delta) {
    switch (ref.group) {
    case Group::Mu: scene.geo[ref.gauss].mu[ref.comp] += delta; break;
    case Group::Scale: scene.geo[ref.gauss].scale[ref.comp] += delta; break;
    case Group::Rot: scene.geo[ref.gauss].rot[ref.comp] += delta; break;
    case Group::Opacity: scene.geo[ref.gauss].opacity += delta; break;
    case Group::Sh: scene.geo[ref.gauss].sh[ref.comp / 3][ref.comp % 3] += delta; break;
    case Group::Feat: scene.geo[ref.gauss].feat[ref.comp] += delta; break;
    case Group::SemMu: (*scene.sem)[ref.gauss].mu[ref.comp] += delta; break;
    case Group::SemScale: (*scene.sem)[ref.gauss].scale_iso += delta; break;
    case Group::SemOpacity: (*scene.sem)[ref.gauss].opacity += delta; break;
    case Group::SemFeat: (*scene.sem)[ref.gauss].feat[ref.comp] += delta; break;
    }
}

double read_analytic(const RenderGrad& rg, const AttrRef& ref) {
    switch (ref.group) {
    case Group::Mu: return rg.d_mu[ref.gauss][ref.comp];
    case Group::Scale: return rg.d_scale[ref.gauss][ref.comp];
    case Group::Rot: return rg.d_rot[ref.gauss][ref.comp];
    case Group::Opacity: return rg.d_opacity[ref.gauss];
    case Group::Sh: return rg.d_sh[ref.gauss][ref.comp / 3][ref.comp % 3];
    case Group::Feat: return rg.d_feat[ref.gauss][ref.comp];
    case Group::SemMu: return rg.sem_d_mu[ref.gauss][ref.comp];
    case Group::SemScale: return rg.sem_d_scale_iso[ref.gauss];
    case Group::SemOpacity: return rg.sem_d_opacity[ref.gauss];
    case Group::SemFeat: return rg.sem_d_feat[ref.gauss][ref.comp];
    }
    return 0.0;
}

} // namespace

int GradcheckReport::samples() const {
    int n = 0;
    for (const GradcheckGroup& g : groups)
        n += g.samples;
    return n;
}

int GradcheckReport::failures() const {
    int n = 0;
    for (const GradcheckGroup& g : groups)
        n += g.failures;
    return n;
}

int GradcheckReport::fd_invalid() const {
    int n = 0;
    for (const GradcheckGroup& g : groups)
        n += g.fd_invalid;
    return n;
}

double GradcheckReport::max_rel_err() const {
    double m = 0.0;
    for (const GradcheckGroup& g : groups)
        m = std::max(m, g.max_rel_err);
    return m;
}

GradcheckReport gradcheck(const Scene& scene, const Camera& cam, GradcheckLoss loss, int trials,
                          uint64_t seed) {
    if (scene.geo.size() > 10)
        throw DataError("gradcheck: scene too large for finite differences (max 10 gaussians)");
    std::mt19937_64 rng(seed);
    const LossConfig loss_cfg;
    const bool sem_source = scene.sem.has_value() && loss == GradcheckLoss::FeatureCosine;

    // deterministic pseudo-targets rendered from a jittered clone
    Scene jittered = scene;
    {
        const double diag = scene_diagonal(scene);
        std::uniform_real_distribution<double> jit(-0.06, 0.06);
        for (Gaussian3D& g : jittered.geo) {
            for (int k = 0; k < 3; ++k)
                g.mu[k] += jit(rng) * diag;
            if (!g.sh.empty())
                for (int c = 0; c < 3; ++c)
                    g.sh[0][c] += 2.0 * jit(rng);
        }
        if (jittered.sem)
            for (SemanticGaussian& s : *jittered.sem) {
                for (int k = 0; k < 3; ++k)
                    s.mu[k] += jit(rng) * diag;
                for (double& f : s.feat)
                    f += jit(rng);
            }
    }

    RenderOptions opts;
    opts.color = loss == GradcheckLoss::Photometric || loss == GradcheckLoss::Constant;
    opts.depth = loss == GradcheckLoss::Depth;
    opts.feature = loss == GradcheckLoss::FeatureCosine;
    opts.use_sem_features = sem_source;
    opts.threads = 1;

    Image target_image;
    DepthMap target_depth;
    FeatureMap target_fmap;
    std::vector<uint8_t> valid;
    {
        RenderOptions t_opts = opts;
        const RenderOutput t_out = render(jittered, cam, t_opts);
        const RenderOutput base_out = render(scene, cam, t_opts);
        if (loss == GradcheckLoss::Photometric || loss == GradcheckLoss::Constant)
            target_image = t_out.color;
        if (loss == GradcheckLoss::Depth) {
            target_depth = t_out.depth;
            // thresholds relative to each render's peak coverage, so sparse
            // low-opacity scenes still keep a usable (and fixed) pixel set
            double max_base = 0.0, max_t = 0.0;
            for (size_t p = 0; p < base_out.alpha.data.size(); ++p) {
                max_base = std::max(max_base, base_out.alpha.data[p]);
                max_t = std::max(max_t, t_out.alpha.data[p]);
            }
            valid.assign(t_out.alpha.data.size(), 0);
            for (size_t p = 0; p < valid.size(); ++p)
                valid[p] =
                    base_out.alpha.data[p] > 0.5 * max_base && t_out.alpha.data[p] > 0.25 * max_t ? 1 : 0;
        }
        if (loss == GradcheckLoss::FeatureCosine) {
            target_fmap = t_out.feature;
            valid.assign(size_t(cam.height) * cam.width, 0);
            const int d = target_fmap.dim;
            double max_bn = 0.0, max_tn = 0.0;
            for (size_t p = 0; p < valid.size(); ++p) {
                max_bn = std::max(max_bn, kernels::sumsq(base_out.feature.data.data() + p * d, d));
                max_tn = std::max(max_tn, kernels::sumsq(target_fmap.data.data() + p * d, d));
            }
            for (size_t p = 0; p < valid.size(); ++p) {
                const double tn = kernels::sumsq(target_fmap.data.data() + p * d, d);
                const double bn = kernels::sumsq(base_out.feature.data.data() + p * d, d);
                valid[p] = bn > 0.25 * max_bn && tn > 0.06 * max_tn ? 1 : 0;
            }
        }
    }

    auto eval = [&](const Scene& s) -> double {
        switch (loss) {
        case GradcheckLoss::Constant:
            return 0.0;
        case GradcheckLoss::Photometric:
            return photometric_loss(render(s, cam, opts).color, target_image, loss_cfg.eta);
        case GradcheckLoss::Depth:
            return depth_distill_loss(render(s, cam, opts).depth, target_depth, valid);
        case GradcheckLoss::FeatureCosine:
            return feature_cosine_loss(render(s, cam, opts).feature, target_fmap, &valid);
        }
        return 0.0;
    };

    // analytic gradient once, at the unperturbed scene
    RenderGrad analytic;
    {
        PixelGrad pg;
        const RenderOutput out = render(scene, cam, opts);
        std::vector<double> tmp;
        switch (loss) {
        case GradcheckLoss::Constant:
            pg.d_color.assign(size_t(cam.height) * cam.width * 3, 0.0);
            break;
        case GradcheckLoss::Photometric:
            photometric_loss_grad(out.color, target_image, loss_cfg.eta, tmp);
            pg.d_color = tmp;
            break;
        case GradcheckLoss::Depth:
            depth_distill_loss_grad(out.depth, target_depth, valid, tmp);
            pg.d_depth = tmp;
            break;
        case GradcheckLoss::FeatureCosine:
            feature_cosine_loss_grad(out.feature, target_fmap, &valid, tmp);
            pg.d_feature = tmp;
            break;
        }
        analytic = render_with_grad(scene, cam, opts, pg).second;
    }

    // sampleable attribute groups for this loss
    std::vector<Group> pool;
    if (sem_source) {
        pool = {Group::SemMu, Group::SemScale, Group::SemOpacity, Group::SemFeat};
    } else {
        pool = {Group::Mu, Group::Scale, Group::Rot, Group::Opacity};
        if (loss == GradcheckLoss::Photometric || loss == GradcheckLoss::Constant)
            pool.push_back(Group::Sh);
        if (loss == GradcheckLoss::FeatureCosine && !scene.geo.empty() && !scene.geo[0].feat.empty())
            pool.push_back(Group::Feat);
    }

    GradcheckReport report;
    for (Group g : pool)
        report.groups.push_back({group_name(g), 0, 0, 0, 0.0});

    const double f0 = eval(scene);  // unperturbed loss, shared by the kink detector
    const int n_sh = scene.sh_coeff_count();
    for (int trial = 0; trial < trials; ++trial) {
        const size_t gi = rng() % pool.size();
        const Group group = pool[gi];
        AttrRef ref;
        ref.group = group;
        const int n_geo = int(scene.geo.size());
        const int n_sem = scene.sem ? int(scene.sem->size()) : 0;
        ref.gauss = int(rng() % size_t(sem_source ? n_sem : n_geo));
        switch (group) {
        case Group::Mu:
        case Group::Scale:
        case Group::SemMu: ref.comp = int(rng() % 3); break;
        case Group::Rot: ref.comp = int(rng() % 4); break;
        case Group::Sh: ref.comp = int(rng() % size_t(n_sh * 3)); break;
        case Group::Feat:
        case Group::SemFeat: ref.comp = int(rng() % size_t(scene.feat_dim)); break;
        default: ref.comp = 0; break;
        }

        auto eval_at = [&](double h) -> double {
            Scene probe = scene;
            apply_delta(probe, ref, h);
            return eval(probe);
        };
        const double f_p = eval_at(kFdStep), f_m = eval_at(-kFdStep);
        const double f_p2 = eval_at(kFdStep / 2.0), f_m2 = eval_at(-kFdStep / 2.0);
        const double d_h = (f_p - f_m) / (2.0 * kFdStep);
        const double d_h2 = (f_p2 - f_m2) / kFdStep;

        GradcheckGroup& stats = report.groups[gi];
        // FD oracle validity, from forward evaluations only.
        //  - Jump discontinuity inside [h/2, h]: the two step sizes disagree.
        //  - Kink at the evaluation point: both central differences agree on
        //    the *averaged* one-sided slopes, so compare second differences at
        //    two scales instead; a kink scales linearly in h while smooth
        //    curvature scales quadratically, which isolates the slope gap.
        const double fd_scale = std::max(std::fabs(d_h), std::fabs(d_h2)) + 1e-6;
        const double c2_h = f_p - 2.0 * f0 + f_m;
        const double c2_h2 = f_p2 - 2.0 * f0 + f_m2;
        const double slope_gap = std::fabs(4.0 * c2_h2 - c2_h) / kFdStep;  // |a - b| at a kink
        // thresholds sit far above smooth truncation noise (typically below
        // 1e-6 relative here) and well below the acceptance tolerance
        if (std::fabs(d_h - d_h2) > 5e-5 * fd_scale || slope_gap / 2.0 > 2e-4 * (std::fabs(d_h) + 1e-6)) {
            stats.fd_invalid += 1;
            continue;
        }
        const double a = read_analytic(analytic, ref);
        const double rel = std::fabs(a - d_h) / (std::fabs(d_h) + 1e-6);
        stats.samples += 1;
        stats.max_rel_err = std::max(stats.max_rel_err, rel);
        if (rel > kGradTol)
            stats.failures += 1;
    }
    return report;
}

} // namespace fleg
