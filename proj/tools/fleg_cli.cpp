// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

// Batch CLI over the library: every subcommand is a thin shell around one
// library operation. Exit codes: 0 success, 1 usage error, 2 data error.

#include "fleg/aggregate.hpp"
#include "fleg/fit.hpp"
#include "fleg/geometry.hpp"
#include "fleg/io.hpp"
#include "fleg/losses.hpp"
#include "fleg/query.hpp"
#include "fleg/rasterizer.hpp"
#include "fleg/sparsify.hpp"
#include "fleg/synth.hpp"
#include "fleg/types.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fleg;

namespace {

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void emit(const json& report, bool as_json) {
    if (as_json) {
        std::cout << report.dump(2) << "\n";
        return;
    }
    for (const auto& [key, value] : report.items()) {
        if (value.is_number_float())
            std::cout << key << " " << fmt6(value.get<double>()) << "\n";
        else
            std::cout << key << " " << value.dump() << "\n";
    }
}

Scene load_scene(const std::string& geo, const std::string& sem) {
    return read_scene(geo, sem.empty() ? std::nullopt : std::optional<fs::path>(sem));
}

json loss_report_json(const LossReport& r) {
    return json{{"photo", r.photo},
                {"feat", r.feat},
                {"depth_distill", r.depth_distill},
                {"pose_distill", r.pose_distill},
                {"inst", r.inst},
                {"lambda_depth", r.lambda_depth},
                {"lambda_pose", r.lambda_pose},
                {"lambda_inst", r.lambda_inst},
                {"total", r.total}};
}

std::vector<uint8_t> positive_mask(const ScalarMap& map) {
    std::vector<uint8_t> v(map.data.size());
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = map.data[i] > 0.0 ? 1 : 0;
    return v;
}

// ---- subcommand payloads --------------------------------------------------

struct SynthArgs {
    std::string preset = "lattice";
    uint64_t seed = 0;
    std::string out;
};

int run_synth(const SynthArgs& args, bool as_json) {
    const SynthScene synth = make_preset(args.preset, args.seed);
    write_synth_dir(synth, args.out);
    json report{{"preset", synth.preset},
                {"seed", synth.seed},
                {"gaussians", synth.scene.geo.size()},
                {"views", synth.cameras.size()},
                {"feat_dim", synth.scene.feat_dim},
                {"out", args.out}};
    if (synth.lattice_pitch > 0.0)
        report["lattice_pitch"] = synth.lattice_pitch;
    emit(report, as_json);
    return 0;
}

struct SparsifyArgs {
    std::string in, sem_in, out_geo, out_sem;
    double eps_geo = 0.0, eps_sem = 0.0;  // 0 = derive from the scene extent
};

int run_sparsify(const SparsifyArgs& args, bool as_json) {
    const Scene scene = load_scene(args.in, args.sem_in);
    double eps_geo = args.eps_geo, eps_sem = args.eps_sem;
    if (eps_geo <= 0.0) {
        // default: 1% of the bounding-box diagonal, semantic grid 4x coarser
        Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();
        if (!scene.geo.empty()) {
            lo = hi = scene.geo[0].mu;
            for (const Gaussian3D& g : scene.geo) {
                lo = lo.cwiseMin(g.mu);
                hi = hi.cwiseMax(g.mu);
            }
        }
        const double diag = (hi - lo).norm();
        eps_geo = diag > 0.0 ? 0.01 * diag : 0.01;
    }
    if (eps_sem <= 0.0)
        eps_sem = 4.0 * eps_geo;
    const Scene out = hierarchical_sparsify(scene, eps_geo, eps_sem);
    write_scene(out, args.out_geo, args.out_sem.empty() ? std::nullopt : std::optional<fs::path>(args.out_sem));
    emit(json{{"geo_in", scene.geo.size()},
              {"geo_out", out.geo.size()},
              {"sem_out", out.sem ? out.sem->size() : 0},
              {"eps_geo", eps_geo},
              {"eps_sem", eps_sem}},
         as_json);
    return 0;
}

struct RenderArgs {
    std::string in, sem_in, cams, mode = "color", out, feature_vec;
    int view = 0;
    std::vector<double> background{0.0, 0.0, 0.0};
};

int run_render(const RenderArgs& args, bool as_json) {
    const Scene scene = load_scene(args.in, args.sem_in);
    const std::vector<Camera> cams = read_cameras(args.cams);
    if (args.view < 0 || size_t(args.view) >= cams.size())
        throw DataError("render: view index out of range");
    const Camera& cam = cams[args.view];

    RenderOptions opts;
    opts.background = Vec3(args.background[0], args.background[1], args.background[2]);
    json report{{"mode", args.mode}, {"view", args.view}, {"out", args.out}};
    if (args.mode == "color") {
        write_png_rgb8(render(scene, cam, opts).color, args.out);
    } else if (args.mode == "depth") {
        opts.depth = true;
        const RenderOutput out = render(scene, cam, opts);
        double max_depth = 0.0;
        for (double d : out.depth.data)
            max_depth = std::max(max_depth, d);
        const double scale = max_depth > 0.0 ? 60000.0 / max_depth : 1.0;
        write_png_gray16(out.depth, args.out, scale);
        report["depth_scale"] = scale;
    } else if (args.mode == "feature") {
        opts.color = false;
        opts.feature = true;
        const RenderOutput out = render(scene, cam, opts);
        write_fmap(out.feature, args.out);
        report["feature_from_sem"] = out.feature_from_sem;
    } else if (args.mode == "relevance") {
        if (args.feature_vec.empty())
            throw DataError("render: --feature required for relevance mode");
        const std::vector<double> qvec = read_vec(args.feature_vec);
        const QueryResult q = query_scene(scene, qvec, -1.0, &cam);
        // relevance lives in [-1, 1]
        write_png_gray16(*q.rendered, args.out, 32767.0, -1.0);
        report["relevance_scale"] = 32767.0;
        report["relevance_offset"] = -1.0;
    } else {
        throw CLI::ValidationError("mode", "expected color|depth|feature|relevance");
    }
    emit(report, as_json);
    return 0;
}

struct SelectArgs {
    std::string cams;
    std::vector<std::string> points;
    std::vector<int> context;
    double tau = 0.7;
};

int run_select_views(const SelectArgs& args, bool as_json) {
    const std::vector<Camera> cams = read_cameras(args.cams);
    if (args.points.size() != cams.size())
        throw DataError("select-views: need one point map per camera (" + std::to_string(cams.size()) +
                        " cameras, " + std::to_string(args.points.size()) + " maps)");
    std::vector<PointMap> pointmaps;
    for (const std::string& p : args.points)
        pointmaps.push_back(read_pmap(p));
    LossConfig cfg;
    cfg.tau = args.tau;
    const SelectionResult sel = select_target_views(pointmaps, cams, args.context, cfg);
    emit(json{{"tau", args.tau}, {"coverage", sel.coverage}, {"selected", sel.selected}}, as_json);
    return 0;
}

struct AggregateArgs {
    std::vector<std::string> points, features, masks;
    double eps = 0.05;
    int rounds = 1;
    std::string out_prefix;
};

int run_aggregate(const AggregateArgs& args, bool as_json) {
    std::vector<PointMap> pointmaps;
    std::vector<FeatureMap> features;
    std::vector<InstanceMask> masks;
    for (const std::string& p : args.points)
        pointmaps.push_back(read_pmap(p));
    for (const std::string& p : args.features)
        features.push_back(read_fmap(p));
    for (const std::string& p : args.masks)
        masks.push_back(read_imsk(p));
    const auto out = aggregate_features(pointmaps, features, masks, {args.eps, args.rounds});
    json written = json::array();
    for (size_t v = 0; v < out.size(); ++v) {
        const std::string path = args.out_prefix + std::to_string(v) + ".fmap";
        write_fmap(out[v], path);
        written.push_back(path);
    }
    emit(json{{"views", out.size()}, {"eps", args.eps}, {"rounds", args.rounds}, {"written", written}},
         as_json);
    return 0;
}

struct LossArgs {
    std::string config;
    std::string render_png, target_png;
    std::string render_depth, target_depth;
    std::string render_features, target_features;
    std::string mask;
};

int run_loss(const LossArgs& args, bool as_json) {
    const LossConfig cfg = args.config.empty() ? LossConfig{} : read_loss_config(args.config);
    const Image rendered = read_png_rgb8(args.render_png);
    const Image target = read_png_rgb8(args.target_png);
    const double photo = photometric_loss(rendered, target, cfg.eta);

    double feat = 0.0, depth = 0.0, inst = 0.0;
    if (!args.render_features.empty()) {
        const FeatureMap pred = read_fmap(args.render_features);
        if (!args.target_features.empty()) {
            const FeatureMap tgt = read_fmap(args.target_features);
            const std::vector<uint8_t> valid = [&] {
                std::vector<uint8_t> v(size_t(tgt.height) * tgt.width);
                for (size_t i = 0; i < v.size(); ++i) {
                    double n = 0.0;
                    for (int k = 0; k < tgt.dim; ++k)
                        n += tgt.data[i * tgt.dim + k] * tgt.data[i * tgt.dim + k];
                    v[i] = n > 0.0;
                }
                return v;
            }();
            feat = feature_cosine_loss(pred, tgt, &valid);
        }
        if (!args.mask.empty())
            inst = instance_contrastive_loss(pred, read_imsk(args.mask), cfg.alpha);
    }
    if (!args.render_depth.empty() && !args.target_depth.empty()) {
        const ScalarMap rd = read_png_gray16(args.render_depth);
        const ScalarMap td = read_png_gray16(args.target_depth);
        depth = depth_distill_loss(rd, td, positive_mask(td));
    }
    const LossReport report = total_loss(photo, feat, depth, 0.0, inst, cfg);
    emit(loss_report_json(report), as_json);
    return 0;
}

struct FitArgs {
    std::string in, sem_in, cams, out, trace, config, fit_config;
    std::vector<std::string> images, depths, features, masks;
    int iters = -1;
    uint64_t seed = 0;
    bool seed_given = false;
    int threads = 0;
};

int run_fit(const FitArgs& args, bool as_json) {
    const Scene init = load_scene(args.in, args.sem_in);
    const std::vector<Camera> cams = read_cameras(args.cams);
    if (args.images.size() != cams.size())
        throw DataError("fit: need one target image per camera");
    if (!args.depths.empty() && args.depths.size() != cams.size())
        throw DataError("fit: --depths must match the camera count");
    if (!args.features.empty() && args.features.size() != cams.size())
        throw DataError("fit: --features must match the camera count");
    if (!args.masks.empty() && args.masks.size() != cams.size())
        throw DataError("fit: --masks must match the camera count");

    std::vector<FitTarget> targets;
    for (size_t v = 0; v < cams.size(); ++v) {
        FitTarget t;
        t.cam = cams[v];
        t.image = read_png_rgb8(args.images[v]);
        if (!args.depths.empty()) {
            t.depth = read_png_gray16(args.depths[v]);
            t.depth_valid = positive_mask(*t.depth);
        }
        if (!args.features.empty())
            t.feature = read_fmap(args.features[v]);
        if (!args.masks.empty())
            t.mask = read_imsk(args.masks[v]);
        targets.push_back(std::move(t));
    }

    FitConfig cfg = args.fit_config.empty() ? FitConfig{} : read_fit_config(args.fit_config);
    if (args.iters > 0)
        cfg.iterations = args.iters;
    if (args.seed_given)
        cfg.seed = args.seed;
    if (args.threads > 0)
        cfg.threads = args.threads;
    const LossConfig loss_cfg = args.config.empty() ? LossConfig{} : read_loss_config(args.config);
    const auto [fitted, trace] = fit_scene(init, targets, cfg, loss_cfg);
    write_scene(fitted, args.out);

    if (!args.trace.empty()) {
        atomic_write(args.trace, [&](const fs::path& tmp) {
            std::ofstream csv(tmp);
            csv << "iteration,photo,feat,depth_distill,pose_distill,inst,total\n";
            for (size_t i = 0; i < trace.iterations.size(); ++i) {
                const LossReport& r = trace.iterations[i];
                csv << i + 1 << "," << fmt6(r.photo) << "," << fmt6(r.feat) << "," << fmt6(r.depth_distill)
                    << "," << fmt6(r.pose_distill) << "," << fmt6(r.inst) << "," << fmt6(r.total) << "\n";
            }
        });
    }
    double mean_psnr = 0.0;
    for (double p : trace.final_psnr)
        mean_psnr += p;
    mean_psnr /= double(trace.final_psnr.size());
    json report = loss_report_json(trace.iterations.back());
    report["iterations"] = cfg.iterations;
    report["final_psnr"] = trace.final_psnr;
    report["mean_psnr"] = mean_psnr;
    report["out"] = args.out;
    emit(report, as_json);
    return 0;
}

struct QueryArgs {
    std::string in, sem_in, feature_vec, cams, out;
    double threshold = 0.5;
    int render_view = -1;
};

int run_query(const QueryArgs& args, bool as_json) {
    const Scene scene = load_scene(args.in, args.sem_in);
    const std::vector<double> qvec = read_vec(args.feature_vec);
    const Camera* cam = nullptr;
    std::vector<Camera> cams;
    if (args.render_view >= 0) {
        if (args.cams.empty())
            throw DataError("query: --cams required with --render-view");
        cams = read_cameras(args.cams);
        if (size_t(args.render_view) >= cams.size())
            throw DataError("query: view index out of range");
        cam = &cams[args.render_view];
    }
    const QueryResult q = query_scene(scene, qvec, args.threshold, cam);
    if (q.rendered && !args.out.empty())
        write_png_gray16(*q.rendered, args.out, 32767.0, -1.0);
    double max_rel = -1.0, mean_rel = 0.0;
    for (double r : q.relevance) {
        max_rel = std::max(max_rel, r);
        mean_rel += r;
    }
    mean_rel = q.relevance.empty() ? 0.0 : mean_rel / double(q.relevance.size());
    emit(json{{"threshold", args.threshold},
              {"over_sem", q.over_sem},
              {"queried", q.relevance.size()},
              {"selected", q.selected.size()},
              {"selected_indices", q.selected},
              {"max_relevance", max_rel},
              {"mean_relevance", mean_rel}},
         as_json);
    return 0;
}

struct EditArgs {
    std::string in, sem_in, feature_vec, op = "delete", out_geo, out_sem;
    double threshold = 0.5;
};

int run_edit(const EditArgs& args, bool as_json) {
    const Scene scene = load_scene(args.in, args.sem_in);
    const std::vector<double> qvec = read_vec(args.feature_vec);
    const EditOp op = args.op == "extract" ? EditOp::Extract : EditOp::Delete;
    const Scene out = edit_scene(scene, qvec, args.threshold, op);
    std::optional<fs::path> sem_out;
    if (!args.out_sem.empty() && out.sem)
        sem_out = args.out_sem;
    write_scene(out, args.out_geo, sem_out);
    emit(json{{"op", args.op},
              {"threshold", args.threshold},
              {"geo_in", scene.geo.size()},
              {"geo_out", out.geo.size()},
              {"sem_out", out.sem ? out.sem->size() : 0}},
         as_json);
    return 0;
}

struct EvalArgs {
    std::vector<std::string> metrics;
    std::string a, b, pred, gt;
};

int run_eval(const EvalArgs& args, bool as_json) {
    json report;
    std::optional<SegMetrics> seg;
    for (const std::string& metric : args.metrics) {
        if (metric == "psnr" || metric == "ssim") {
            if (args.a.empty() || args.b.empty())
                throw DataError("eval: --a and --b images required for " + metric);
            const Image a = read_png_rgb8(args.a);
            const Image b = read_png_rgb8(args.b);
            report[metric] = metric == "psnr" ? psnr(a, b) : ssim(a, b);
        } else if (metric == "miou" || metric == "macc") {
            if (args.pred.empty() || args.gt.empty())
                throw DataError("eval: --pred and --gt masks required for " + metric);
            if (!seg)
                seg = segmentation_metrics(read_imsk(args.pred), read_imsk(args.gt));
            report[metric] = metric == "miou" ? seg->miou : seg->macc;
        } else {
            throw CLI::ValidationError("metrics", "unknown metric '" + metric + "'");
        }
    }
    emit(report, as_json);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"language-embedded gaussian splatting toolbench"};
    app.require_subcommand(1);
    app.fallthrough();
    bool as_json = false;
    app.add_flag("--json", as_json, "machine-readable report");

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic fixture directory");
    synth->add_option("--preset", synth_args.preset, "lattice | two-objects | textured-room");
    synth->add_option("--seed", synth_args.seed, "generator seed");
    synth->add_option("--out", synth_args.out, "output directory")->required();

    SparsifyArgs sparsify_args;
    CLI::App* sparsify = app.add_subcommand("sparsify", "hierarchical geometry/semantic sparsification");
    sparsify->add_option("--in", sparsify_args.in, "geometry PLY")->required();
    sparsify->add_option("--sem", sparsify_args.sem_in, "semantic PLY (optional input)");
    sparsify->add_option("--eps-geo", sparsify_args.eps_geo, "geometry voxel size (default: 1% of bbox diagonal)");
    sparsify->add_option("--eps-sem", sparsify_args.eps_sem, "semantic voxel size (default: 4x eps-geo)");
    sparsify->add_option("--out-geo", sparsify_args.out_geo, "output geometry PLY")->required();
    sparsify->add_option("--out-sem", sparsify_args.out_sem, "output semantic PLY");

    RenderArgs render_args;
    CLI::App* render_cmd = app.add_subcommand("render", "splat a scene into an image or map");
    render_cmd->add_option("--in", render_args.in, "geometry PLY")->required();
    render_cmd->add_option("--sem", render_args.sem_in, "semantic PLY");
    render_cmd->add_option("--cams", render_args.cams, "camera JSON")->required();
    render_cmd->add_option("--view", render_args.view, "camera index");
    render_cmd->add_option("--mode", render_args.mode, "color|depth|feature|relevance");
    render_cmd->add_option("--feature", render_args.feature_vec, "query vector (relevance mode)");
    render_cmd->add_option("--background", render_args.background, "background color r g b")->expected(3);
    render_cmd->add_option("--out", render_args.out, "output path")->required();

    SelectArgs select_args;
    CLI::App* select = app.add_subcommand("select-views", "coverage-based target-view selection");
    select->add_option("--cams", select_args.cams, "camera JSON")->required();
    select->add_option("--points", select_args.points, "point maps, one per camera")->required();
    select->add_option("--context", select_args.context, "context view indices")->required();
    select->add_option("--tau", select_args.tau, "coverage threshold");

    AggregateArgs aggregate_args;
    CLI::App* aggregate = app.add_subcommand("aggregate", "multi-view feature aggregation");
    aggregate->add_option("--points", aggregate_args.points, "point maps")->required();
    aggregate->add_option("--features", aggregate_args.features, "feature maps")->required();
    aggregate->add_option("--masks", aggregate_args.masks, "instance masks")->required();
    aggregate->add_option("--eps", aggregate_args.eps, "voxel size");
    aggregate->add_option("--rounds", aggregate_args.rounds, "aggregation passes");
    aggregate->add_option("--out-prefix", aggregate_args.out_prefix, "output prefix")->required();

    LossArgs loss_args;
    CLI::App* loss = app.add_subcommand("loss", "evaluate the training objective on files");
    loss->add_option("--config", loss_args.config, "loss config JSON");
    loss->add_option("--render", loss_args.render_png, "rendered image")->required();
    loss->add_option("--target", loss_args.target_png, "target image")->required();
    loss->add_option("--render-depth", loss_args.render_depth, "rendered depth (16-bit PNG)");
    loss->add_option("--target-depth", loss_args.target_depth, "pseudo-label depth");
    loss->add_option("--render-features", loss_args.render_features, "rendered feature map");
    loss->add_option("--target-features", loss_args.target_features, "target feature map");
    loss->add_option("--mask", loss_args.mask, "instance mask (contrastive term)");

    FitArgs fit_args;
    CLI::App* fit = app.add_subcommand("fit", "optimize gaussian attributes against targets");
    fit->add_option("--in", fit_args.in, "initial geometry PLY")->required();
    fit->add_option("--sem", fit_args.sem_in, "semantic PLY");
    fit->add_option("--cams", fit_args.cams, "camera JSON")->required();
    fit->add_option("--images", fit_args.images, "target images, one per camera")->required();
    fit->add_option("--depths", fit_args.depths, "target depths");
    fit->add_option("--features", fit_args.features, "target feature maps");
    fit->add_option("--masks", fit_args.masks, "instance masks");
    fit->add_option("--iters", fit_args.iters, "iterations");
    CLI::Option* seed_opt = fit->add_option("--seed", fit_args.seed, "seed");
    fit->add_option("--threads", fit_args.threads, "worker threads (0 = auto)");
    fit->add_option("--config", fit_args.config, "loss config JSON");
    fit->add_option("--fit-config", fit_args.fit_config, "optimizer config JSON");
    fit->add_option("--out", fit_args.out, "fitted geometry PLY")->required();
    fit->add_option("--trace", fit_args.trace, "per-iteration loss CSV");

    QueryArgs query_args;
    CLI::App* query = app.add_subcommand("query", "open-vocabulary query over a scene");
    query->add_option("--in", query_args.in, "geometry PLY")->required();
    query->add_option("--sem", query_args.sem_in, "semantic PLY");
    query->add_option("--feature", query_args.feature_vec, "query vector file")->required();
    query->add_option("--threshold", query_args.threshold, "relevance threshold");
    query->add_option("--render-view", query_args.render_view, "render relevance for this view");
    query->add_option("--cams", query_args.cams, "camera JSON (with --render-view)");
    query->add_option("--out", query_args.out, "relevance PNG (with --render-view)");

    EditArgs edit_args;
    CLI::App* edit = app.add_subcommand("edit", "query-driven scene editing");
    edit->add_option("--in", edit_args.in, "geometry PLY")->required();
    edit->add_option("--sem", edit_args.sem_in, "semantic PLY");
    edit->add_option("--feature", edit_args.feature_vec, "query vector file")->required();
    edit->add_option("--threshold", edit_args.threshold, "relevance threshold");
    edit->add_option("--op", edit_args.op, "delete | extract")
        ->check(CLI::IsMember({"delete", "extract"}));
    edit->add_option("--out-geo", edit_args.out_geo, "output geometry PLY")->required();
    edit->add_option("--out-sem", edit_args.out_sem, "output semantic PLY");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "reconstruction and segmentation metrics");
    eval->add_option("--metrics", eval_args.metrics, "psnr ssim miou macc")->required()->delimiter(',');
    eval->add_option("--a", eval_args.a, "first image");
    eval->add_option("--b", eval_args.b, "second image");
    eval->add_option("--pred", eval_args.pred, "predicted mask");
    eval->add_option("--gt", eval_args.gt, "ground-truth mask");

    for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
        sub->fallthrough();  // accept --json after the subcommand name

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    fit_args.seed_given = seed_opt->count() > 0;

    try {
        if (synth->parsed())
            return run_synth(synth_args, as_json);
        if (sparsify->parsed())
            return run_sparsify(sparsify_args, as_json);
        if (render_cmd->parsed())
            return run_render(render_args, as_json);
        if (select->parsed())
            return run_select_views(select_args, as_json);
        if (aggregate->parsed())
            return run_aggregate(aggregate_args, as_json);
        if (loss->parsed())
            return run_loss(loss_args, as_json);
        if (fit->parsed())
            return run_fit(fit_args, as_json);
        if (query->parsed())
            return run_query(query_args, as_json);
        if (edit->parsed())
            return run_edit(edit_args, as_json);
        if (eval->parsed())
            return run_eval(eval_args, as_json);
    } catch (const CLI::Error& e) {
        std::cerr << "fleg: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "fleg: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
