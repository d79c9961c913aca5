#include "ma3e/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "ma3e/checkpoint.hpp"
#include "ma3e/error.hpp"
#include "ma3e/geometry.hpp"
#include "ma3e/gradcheck.hpp"
#include "ma3e/imageio.hpp"
#include "ma3e/patching.hpp"
#include "ma3e/trainer.hpp"
#include "ma3e/transport.hpp"

namespace ma3e::cli {

namespace {

namespace fs = std::filesystem;

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string fmt(double v, const char* spec = "%.17g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw RuntimeFailure("unwritable path: " + dir.string() + ": " + ec.message());
}

Matrix read_cost_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("unreadable file: cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        std::string tok;
        while (ls >> tok) {
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size()) throw ValidationError("cost file: invalid number '" + tok + "'");
            row.push_back(v);
        }
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ValidationError("cost file is empty");
    Matrix cost(rows.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.size()) throw ValidationError("cost matrix must be square");
        for (std::size_t j = 0; j < rows.size(); ++j) cost(i, j) = rows[i][j];
    }
    return cost;
}

struct SynthArgs {
    int count = 256;
    int size = 96;
    int channels = 3;
    std::uint64_t seed = 7;
    std::string shape = "oriented_bar";
    std::string out_dir;
};

struct ComposeArgs {
    std::string in;
    std::string out;
    int a = 32;
    int p = 8;
    double theta_min = -45.0;
    double theta_max = 45.0;
    std::uint64_t seed = 0;
    bool baseline = false;
};

struct PretrainArgs {
    std::string config;
    std::string out_dir;
};

struct ImageArgs {
    std::string ckpt;
    std::string image;
    std::uint64_t seed = 0;
    std::string out;
};

struct GradcheckArgs {
    std::string config;
    std::size_t samples = 200;
};

struct OtSolveArgs {
    std::string cost;
    double epsilon_rel = 0.1;
    int max_iters = 10000;
    double tol = 1e-6;
};

int do_synth(const SynthArgs& a, std::ostream& out) {
    out << "seed: " << a.seed << '\n';
    DatasetSpec spec;
    spec.count = a.count;
    spec.size = a.size;
    spec.channels = a.channels;
    spec.seed = a.seed;
    spec.shape_kind = parse_shape_kind(a.shape);
    write_dataset(spec, a.out_dir);
    out << "wrote " << spec.count << " images to " << a.out_dir << '\n';
    return kOk;
}

int do_compose(const ComposeArgs& a, std::ostream& out) {
    out << "seed: " << a.seed << '\n';
    if (a.theta_max < a.theta_min) throw ValidationError("theta-max must be >= theta-min");
    if (!fs::is_directory(a.in)) throw RuntimeFailure("unreadable file: not a directory: " + a.in);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.in)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    ensure_dir(a.out);
    const AngleRange range{a.theta_min * kDegToRad, a.theta_max * kDegToRad};
    for (std::size_t k = 0; k < files.size(); ++k) {
        const Image img = load_image(files[k]);
        Rng rng = split_rng(a.seed, k);
        const RotatedCropSpec spec = sample_crop_spec(img.height, img.width, a.p, a.a, range, rng, !a.baseline);
        const CompositeSample sample = a.baseline ? random_rotation_baseline(img, spec) : composite(img, spec);
        save_image(sample.composite, fs::path(a.out) / files[k].filename());
        std::ofstream side(fs::path(a.out) / files[k].filename().replace_extension(".txt"));
        if (!side) throw RuntimeFailure("unwritable path: " + a.out);
        side << spec.row0 << ' ' << spec.col0 << ' ' << spec.a << ' ' << fmt(spec.theta) << '\n';
    }
    out << "composed " << files.size() << " images into " << a.out << '\n';
    return kOk;
}

int do_pretrain(const PretrainArgs& a, std::ostream& out) {
    const TrainConfig config = a.config.empty() ? TrainConfig{} : load_config(a.config);
    out << "seed: " << config.seed << '\n';
    const FitResult result = fit(config, a.out_dir);
    if (!result.log.empty()) {
        const auto& last = result.log.back();
        out << "final step " << last.step << ": l_mse=" << fmt(last.l_mse, "%.6g") << " l_ot=" << fmt(last.l_ot, "%.6g")
            << " l_rec=" << fmt(last.l_rec, "%.6g") << '\n';
    }
    out << "checkpoint: " << result.final_checkpoint.string() << '\n';
    return kOk;
}

int do_reconstruct(const ImageArgs& a, std::ostream& out) {
    out << "seed: " << a.seed << '\n';
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Image img = load_image(a.image);
    const Panel panel = reconstruct_panel(ckpt.config, ckpt.params, img, a.seed);
    save_image(panel.raster, a.out);
    fs::path mask_path = a.out;
    mask_path.replace_extension(".mask.txt");
    write_mask_layout(panel.prepared.layout, mask_path);
    out << "panel: " << a.out << " (" << panel.raster.width << "x" << panel.raster.height << ")\n";
    return kOk;
}

int do_plan(const ImageArgs& a, std::ostream& out) {
    out << "seed: " << a.seed << '\n';
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Image img = load_image(a.image);
    const Panel panel = reconstruct_panel(ckpt.config, ckpt.params, img, a.seed);
    const auto& layout = panel.prepared.layout;
    if (layout.crop_indices.empty()) throw ValidationError("no crop patches to transport");

    Matrix targets = patchify(panel.prepared.sample.original, ckpt.config.p).patches;
    if (ckpt.config.normalize_targets) targets = normalize_patches(targets);
    Matrix crop_t(layout.crop_indices.size(), targets.cols());
    Matrix crop_p(layout.crop_indices.size(), targets.cols());
    for (std::size_t k = 0; k < layout.crop_indices.size(); ++k) {
        const auto t = targets.row(layout.crop_indices[k]);
        const auto p = panel.output.predictions.row(layout.crop_indices[k]);
        std::copy(t.begin(), t.end(), crop_t.row(k).begin());
        std::copy(p.begin(), p.end(), crop_p.row(k).begin());
    }
    const Matrix cost = cost_matrix(crop_t, crop_p);
    const TransportPlan plan = sinkhorn_solve(make_uniform_problem(
        cost, ckpt.config.epsilon_rule, ckpt.config.sinkhorn_max_iters, ckpt.config.sinkhorn_tol));

    const std::size_t n = cost.rows();
    const double scale = 0.5 * static_cast<double>(n * n);
    Image heat(static_cast<int>(n), static_cast<int>(n), 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            heat.at(static_cast<int>(i), static_cast<int>(j), 0) = std::clamp(plan.plan(i, j) * scale, 0.0, 1.0);
    save_image(heat, a.out);

    fs::path dump = a.out;
    dump.replace_extension(".txt");
    std::ofstream txt(dump);
    if (!txt) throw RuntimeFailure("unwritable path: " + dump.string());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            txt << (j ? " " : "") << fmt(plan.plan(i, j));
            total += plan.plan(i, j);
        }
        txt << '\n';
    }
    out << "plan: " << n << "x" << n << " iterations=" << plan.iterations << " converged=" << (plan.converged ? 1 : 0)
        << " marginal_error=" << fmt(plan.marginal_error, "%.3g") << " total=" << fmt(total, "%.12g") << '\n';
    out << "l_ot: " << fmt(ot_loss(cost, plan), "%.9g") << '\n';
    return kOk;
}

int do_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    const TrainConfig config = a.config.empty() ? TrainConfig{} : load_config(a.config);
    out << "seed: " << config.seed << '\n';
    const GradcheckResult r = gradcheck_training_loss(config, a.samples);
    out << "checked " << r.checked << " parameters across " << r.groups << " tensors\n"
        << "max relative error: " << fmt(r.max_rel_error, "%.3e") << " at " << r.worst << '\n';
    if (r.max_rel_error > 1e-4) {
        out << "gradcheck FAILED (tolerance 1e-4)\n";
        return kRuntimeFailure;
    }
    out << "gradcheck passed (tolerance 1e-4)\n";
    return kOk;
}

int do_ot_solve(const OtSolveArgs& a, std::ostream& out) {
    out << "seed: none (deterministic)\n";
    Matrix cost = read_cost_file(a.cost);
    const TransportProblem problem = make_uniform_problem(cost, a.epsilon_rel, a.max_iters, a.tol);
    const TransportPlan plan = sinkhorn_solve(problem);
    out << "n: " << cost.rows() << '\n'
        << "epsilon: " << fmt(problem.epsilon, "%.9g") << '\n'
        << "iterations: " << plan.iterations << '\n'
        << "converged: " << (plan.converged ? "true" : "false") << '\n'
        << "marginal_error: " << fmt(plan.marginal_error, "%.3e") << '\n'
        << "plan:\n";
    for (std::size_t i = 0; i < plan.plan.rows(); ++i) {
        for (std::size_t j = 0; j < plan.plan.cols(); ++j) out << (j ? " " : "") << fmt(plan.plan(i, j), "%.9e");
        out << '\n';
    }
    out << "value: " << fmt(ot_loss(cost, plan), "%.12g") << '\n';
    if (cost.rows() <= 8) out << "exact: " << fmt(exact_ot_oracle(cost), "%.12g") << '\n';
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Angle-aware masked autoencoding toolkit", "ma3e"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a deterministic synthetic dataset");
    s->add_option("--count", synth.count, "Number of images")->capture_default_str();
    s->add_option("--size", synth.size, "Square image side in pixels")->capture_default_str();
    s->add_option("--channels", synth.channels, "Channels (1 or 3)")->capture_default_str();
    s->add_option("--seed", synth.seed, "Dataset seed")->capture_default_str();
    s->add_option("--shape", synth.shape, "oriented_bar | oriented_ellipse | checker")->capture_default_str();
    s->add_option("--out-dir", synth.out_dir, "Output directory")->required();

    ComposeArgs compose;
    auto* c = app.add_subcommand("compose", "Replace a random crop of every image by its rotated version");
    c->add_option("--in", compose.in, "Input directory of .ppm/.pgm images")->required();
    c->add_option("--out", compose.out, "Output directory")->required();
    c->add_option("--a", compose.a, "Crop side length in pixels")->capture_default_str();
    c->add_option("--p", compose.p, "Patch size in pixels")->capture_default_str();
    c->add_option("--theta-min", compose.theta_min, "Minimum rotation in degrees")->capture_default_str();
    c->add_option("--theta-max", compose.theta_max, "Maximum rotation in degrees")->capture_default_str();
    c->add_option("--seed", compose.seed, "Seed")->capture_default_str();
    c->add_flag("--baseline-random-rotation", compose.baseline,
                "Rotate the crop in place with zero fill instead of the scaling center crop");

    PretrainArgs pretrain;
    auto* pt = app.add_subcommand("pretrain", "Pretrain the encoder-decoder");
    pt->add_option("--config", pretrain.config, "Config file of 'key = value' lines (defaults: micro config)");
    pt->add_option("--out-dir", pretrain.out_dir, "Output directory for metrics and checkpoints")->required();

    ImageArgs recon;
    auto* rc = app.add_subcommand("reconstruct", "Write an original|composite|masked|reconstruction panel");
    rc->add_option("--ckpt", recon.ckpt, "Checkpoint file")->required();
    rc->add_option("--image", recon.image, "Input image (.ppm/.pgm)")->required();
    rc->add_option("--seed", recon.seed, "Seed for crop and mask")->capture_default_str();
    rc->add_option("--out", recon.out, "Output panel path")->required();

    ImageArgs plan;
    auto* pl = app.add_subcommand("plan", "Write the transport plan heatmap and matrix dump for one image");
    pl->add_option("--ckpt", plan.ckpt, "Checkpoint file")->required();
    pl->add_option("--image", plan.image, "Input image (.ppm/.pgm)")->required();
    pl->add_option("--seed", plan.seed, "Seed for crop and mask")->capture_default_str();
    pl->add_option("--out", plan.out, "Output heatmap path (.pgm); the matrix goes next to it as .txt")->required();

    GradcheckArgs gc;
    auto* g = app.add_subcommand("gradcheck", "Check analytic gradients against central differences");
    g->add_option("--config", gc.config, "Config file (defaults: micro config)");
    g->add_option("--samples", gc.samples, "Number of scalar parameters to check")->capture_default_str();

    OtSolveArgs ot;
    auto* o = app.add_subcommand("ot-solve", "Solve an entropic OT problem with uniform marginals");
    o->add_option("--cost", ot.cost, "Whitespace-separated square cost matrix, one row per line")->required();
    o->add_option("--epsilon-rel", ot.epsilon_rel, "Regularization relative to mean cost")->capture_default_str();
    o->add_option("--max-iters", ot.max_iters, "Iteration budget")->capture_default_str();
    o->add_option("--tol", ot.tol, "Marginal violation tolerance")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        // Help for the subcommand that asked for it, or the top level.
        const CLI::App* target = &app;
        for (const auto* sub : app.get_subcommands()) target = sub;
        out << target->help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kValidationError;
    }

    try {
        if (s->parsed()) return do_synth(synth, out);
        if (c->parsed()) return do_compose(compose, out);
        if (pt->parsed()) return do_pretrain(pretrain, out);
        if (rc->parsed()) return do_reconstruct(recon, out);
        if (pl->parsed()) return do_plan(plan, out);
        if (g->parsed()) return do_gradcheck(gc, out);
        if (o->parsed()) return do_ot_solve(ot, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kValidationError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    }
    return kValidationError;
}

}  // namespace ma3e::cli
