#include "ma3e/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ma3e/checkpoint.hpp"
#include "ma3e/error.hpp"
#include "ma3e/imageio.hpp"

namespace ma3e {

LossOptions loss_options(const TrainConfig& config) {
    LossOptions o;
    o.use_ot_loss = config.toggles.use_ot_loss;
    o.normalize_targets = config.normalize_targets;
    o.epsilon_rule = config.epsilon_rule;
    o.sinkhorn_max_iters = config.sinkhorn_max_iters;
    o.sinkhorn_tol = config.sinkhorn_tol;
    return o;
}

namespace {

Matrix gather(const Matrix& m, const std::vector<int>& idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto src = m.row(idx[k]);
        std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return out;
}

// Sum of squared differences over the listed rows; adds scale * 2 (pred - target) to grad.
double squared_error(const Matrix& targets, const Matrix& predictions, const std::vector<int>& rows, double scale,
                     Matrix& grad) {
    double s = 0.0;
    for (int k : rows) {
        const auto t = targets.row(k);
        const auto p = predictions.row(k);
        auto g = grad.row(k);
        for (std::size_t j = 0; j < t.size(); ++j) {
            const double diff = p[j] - t[j];
            s += diff * diff;
            g[j] += scale * 2.0 * diff;
        }
    }
    return s;
}

}  // namespace

LossEvaluation evaluate_loss(const CompositeSample& sample, const MaskLayout& layout, const ForwardOutput& output,
                             int p, const LossOptions& options, const TransportPlan* frozen_plan) {
    const PatchSet original = patchify(sample.original, p);
    const Matrix targets = options.normalize_targets ? normalize_patches(original.patches) : original.patches;
    const Matrix& preds = output.predictions;
    if (preds.rows() != targets.rows() || preds.cols() != targets.cols())
        throw ValidationError("total_loss: predictions do not match the image patch grid");
    if (std::any_of(preds.data().begin(), preds.data().end(), [](double v) { return !std::isfinite(v); })) {
        // Diverged model: report a non-finite loss and let the caller abort.
        LossEvaluation bad;
        bad.report.l_mse = bad.report.l_ot = bad.report.l_rec = std::numeric_limits<double>::quiet_NaN();
        bad.d_predictions = Matrix(preds.rows(), preds.cols());
        return bad;
    }
    if (layout.total() != static_cast<int>(targets.rows()))
        throw ValidationError("total_loss: mask layout does not match the image patch grid");

    const auto d = static_cast<double>(targets.cols());
    LossEvaluation eval;
    eval.d_predictions = Matrix(preds.rows(), preds.cols());

    if (options.use_ot_loss) {
        const double bg_denom = layout.bg_masked.size() * d;
        if (!layout.bg_masked.empty())
            eval.report.l_mse = squared_error(targets, preds, layout.bg_masked, 1.0 / bg_denom, eval.d_predictions) / bg_denom;
        if (!layout.crop_indices.empty()) {
            const Matrix crop_targets = gather(targets, layout.crop_indices);
            const Matrix crop_preds = gather(preds, layout.crop_indices);
            const Matrix cost = cost_matrix(crop_targets, crop_preds);
            if (frozen_plan) {
                eval.plan = *frozen_plan;
            } else {
                eval.plan = sinkhorn_solve(make_uniform_problem(cost, options.epsilon_rule, options.sinkhorn_max_iters,
                                                                options.sinkhorn_tol));
            }
            eval.report.l_ot = ot_loss(cost, eval.plan);
            const Matrix g = ot_loss_grad(crop_targets, crop_preds, eval.plan);
            for (std::size_t k = 0; k < layout.crop_indices.size(); ++k) {
                auto dst = eval.d_predictions.row(layout.crop_indices[k]);
                const auto src = g.row(k);
                for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
            }
        }
    } else {
        const double denom = (layout.bg_masked.size() + layout.crop_masked.size()) * d;
        if (denom > 0.0) {
            eval.report.l_mse = squared_error(targets, preds, layout.bg_masked, 1.0 / denom, eval.d_predictions) / denom;
            eval.report.l_ot = squared_error(targets, preds, layout.crop_masked, 1.0 / denom, eval.d_predictions) / denom;
        }
    }
    eval.report.l_rec = eval.report.l_mse + eval.report.l_ot;
    return eval;
}

LossReport total_loss(const CompositeSample& sample, const MaskLayout& layout, const ForwardOutput& output, int p,
                      const LossOptions& options) {
    return evaluate_loss(sample, layout, output, p, options).report;
}

PreparedSample prepare_sample(const Image& img, const TrainConfig& config, Rng& rng) {
    if (img.height != config.image_size || img.width != config.image_size || img.channels != config.channels)
        throw ValidationError("image size does not match the config");
    RotatedCropSpec spec =
        sample_crop_spec(img.height, img.width, config.p, config.a, config.theta_range(), rng);
    PreparedSample out;
    if (config.toggles.use_scaling_center_crop) {
        out.sample = composite(img, spec);
    } else {
        spec.theta = 0.0;
        out.sample = CompositeSample{img, img, spec};
    }
    const auto split = split_indices(spec, img.height / config.p, img.width / config.p, config.p);
    out.layout = config.toggles.use_split_masking
                     ? sample_mask(split.crop, split.background, config.ratio_crop, config.ratio_bg, rng)
                     : sample_joint_mask(split.crop, split.background, config.ratio_bg, rng);
    return out;
}

double learning_rate(int step, int steps, int warmup_steps, double peak) {
    if (step < warmup_steps) return peak * static_cast<double>(step) / warmup_steps;
    const int decay = steps - warmup_steps;
    if (decay <= 0) return peak;
    const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / decay);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimizerState init_optimizer(const ModelParams& params) { return {zeros_like(params), zeros_like(params), 0}; }

BatchGradient batch_gradient(const ModelParams& params, const std::vector<PreparedSample>& batch,
                             const TrainConfig& config) {
    if (batch.empty()) throw ValidationError("empty batch");
    const ModelConfig mc = config.model_config();
    const LossOptions options = loss_options(config);
    BatchGradient out{zeros_like(params), {}};
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& item : batch) {
        ForwardCache cache;
        const ForwardOutput fwd = forward(patchify(item.sample.composite, config.p), item.layout, params, mc, &cache);
        LossEvaluation eval = evaluate_loss(item.sample, item.layout, fwd, config.p, options);
        for (double& g : eval.d_predictions.data()) g *= inv;
        backward(cache, eval.d_predictions, item.layout, params, mc, out.grads);
        out.report.l_mse += eval.report.l_mse * inv;
        out.report.l_ot += eval.report.l_ot * inv;
    }
    out.report.l_rec = out.report.l_mse + out.report.l_ot;
    return out;
}

LossReport train_step(ModelParams& params, const std::vector<PreparedSample>& batch, const TrainConfig& config,
                      OptimizerState& state, int step) {
    BatchGradient bg = batch_gradient(params, batch, config);
    bg.report.step = step;
    if (!std::isfinite(bg.report.l_rec)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (l_mse=" << bg.report.l_mse << ", l_ot=" << bg.report.l_ot
            << ")";
        throw RuntimeFailure(msg.str());
    }
    const double lr = learning_rate(step, config.steps, config.warmup_steps, config.peak_lr());
    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    auto p = learnable_params(params);
    auto g = learnable_params(bg.grads);
    auto m = learnable_params(state.m);
    auto v = learnable_params(state.v);
    for (std::size_t k = 0; k < p.size(); ++k) {
        const bool decay = p[k].name.ends_with(".weight");
        auto& pv = p[k].value->data();
        const auto& gv = g[k].value->data();
        auto& mv = m[k].value->data();
        auto& vv = v[k].value->data();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            mv[i] = config.beta1 * mv[i] + (1.0 - config.beta1) * gv[i];
            vv[i] = config.beta2 * vv[i] + (1.0 - config.beta2) * gv[i] * gv[i];
            const double update = (mv[i] / bc1) / (std::sqrt(vv[i] / bc2) + 1e-8);
            if (decay) pv[i] -= lr * config.weight_decay * pv[i];
            pv[i] -= lr * update;
        }
    }
    return bg.report;
}

std::vector<Image> load_dataset(const TrainConfig& config) {
    std::vector<Image> images;
    if (config.dataset == "synthetic") {
        images = generate_synthetic(config.dataset_spec());
    } else {
        images = load_directory(config.dataset);
        if (images.empty()) throw RuntimeFailure("dataset directory holds no images: " + config.dataset);
    }
    for (const auto& img : images)
        if (img.height != config.image_size || img.width != config.image_size || img.channels != config.channels)
            throw ValidationError("dataset image size does not match image_size/channels");
    return images;
}

namespace {

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, int step) {
    char name[40];
    std::snprintf(name, sizeof(name), "model_step%06d.ckpt", step);
    return dir / name;
}

// Dataset index for the k-th draw of the run: a fresh permutation every epoch.
class BatchSampler {
   public:
    BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

    std::size_t index(std::uint64_t draw) {
        const std::uint64_t epoch = draw / n_;
        if (epoch != epoch_ || order_.empty()) {
            order_.resize(n_);
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            Rng rng = split_rng(seed_, 0x5eed0000ULL, epoch);
            for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng, i)]);
            epoch_ = epoch;
        }
        return order_[draw % n_];
    }

   private:
    std::size_t n_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<std::size_t> order_;
};

}  // namespace

FitResult fit(const TrainConfig& config, const std::filesystem::path& out_dir,
              const std::function<void(const LossReport&)>& on_step) {
    validate(config);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw RuntimeFailure("unwritable path: " + out_dir.string() + ": " + ec.message());

    const std::vector<Image> images = load_dataset(config);
    ModelParams params = init_params(config.model_config());
    OptimizerState state = init_optimizer(params);

    FitResult result;
    result.final_checkpoint = checkpoint_name(out_dir, 0);
    save_checkpoint(result.final_checkpoint, config, params);

    std::ofstream metrics(out_dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw RuntimeFailure("unwritable path: " + (out_dir / "metrics.csv").string());
    metrics << "step,l_mse,l_ot,l_rec,lr,seconds\n";

    BatchSampler sampler(images.size(), config.seed);
    const auto start = std::chrono::steady_clock::now();
    for (int step = 0; step < config.steps; ++step) {
        std::vector<PreparedSample> batch;
        batch.reserve(config.batch_size);
        for (int b = 0; b < config.batch_size; ++b) {
            const auto draw = static_cast<std::uint64_t>(step) * config.batch_size + b;
            Rng rng = split_rng(config.seed, 0xc0de0000ULL + static_cast<std::uint64_t>(step), b);
            batch.push_back(prepare_sample(images[sampler.index(draw)], config, rng));
        }
        const double lr = learning_rate(step, config.steps, config.warmup_steps, config.peak_lr());
        const LossReport report = train_step(params, batch, config, state, step);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        char row[256];
        std::snprintf(row, sizeof(row), "%d,%.10g,%.10g,%.10g,%.10g,%.3f\n", step, report.l_mse, report.l_ot,
                      report.l_rec, lr, seconds);
        metrics << row;
        metrics.flush();
        result.log.push_back(report);
        if (on_step) on_step(report);

        const int done = step + 1;
        if (done % config.checkpoint_every == 0 || done == config.steps) {
            result.final_checkpoint = checkpoint_name(out_dir, done);
            save_checkpoint(result.final_checkpoint, config, params);
        }
    }
    if (!metrics) throw RuntimeFailure("unwritable path: failed writing metrics.csv");
    return result;
}

Panel reconstruct_panel(const TrainConfig& config, const ModelParams& params, const Image& image, std::uint64_t seed) {
    if (image.height != config.image_size || image.width != config.image_size || image.channels != config.channels)
        throw ValidationError("size mismatch: image is " + std::to_string(image.height) + "x" +
                              std::to_string(image.width) + "x" + std::to_string(image.channels) +
                              ", checkpoint expects " + std::to_string(config.image_size) + "x" +
                              std::to_string(config.image_size) + "x" + std::to_string(config.channels));
    Rng rng(seed);
    Panel panel;
    panel.prepared = prepare_sample(image, config, rng);
    const ModelConfig mc = config.model_config();
    const PatchSet input = patchify(panel.prepared.sample.composite, config.p);
    panel.output = forward(input, panel.prepared.layout, params, mc);

    // Masked view: masked patches mid-gray.
    PatchSet masked = input;
    for (const auto* set : {&panel.prepared.layout.crop_masked, &panel.prepared.layout.bg_masked})
        for (int k : *set) std::fill(masked.patches.row(k).begin(), masked.patches.row(k).end(), 0.5);

    PatchSet recon = input;
    recon.patches = panel.output.predictions;
    if (config.normalize_targets) {
        // Undo per-patch standardization with the original image's statistics.
        const Matrix orig = patchify(panel.prepared.sample.original, config.p).patches;
        for (std::size_t i = 0; i < orig.rows(); ++i) {
            const auto o = orig.row(i);
            const double mean = std::accumulate(o.begin(), o.end(), 0.0) / static_cast<double>(o.size());
            double var = 0.0;
            for (double x : o) var += (x - mean) * (x - mean);
            const double sd = std::sqrt(var / static_cast<double>(o.size()) + 1e-6);
            for (double& x : recon.patches.row(i)) x = x * sd + mean;
        }
    }
    for (double& x : recon.patches.data()) x = std::clamp(x, 0.0, 1.0);

    const Image views[4] = {panel.prepared.sample.original, panel.prepared.sample.composite, unpatchify(masked),
                            unpatchify(recon)};
    const int w = image.width;
    panel.raster = Image(image.height, 4 * w + 3, image.channels, 1.0);
    for (int v = 0; v < 4; ++v) {
        const int off = v * (w + 1);
        for (int r = 0; r < image.height; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < image.channels; ++ch) panel.raster.at(r, off + c, ch) = views[v].at(r, c, ch);
    }
    return panel;
}

}  // namespace ma3e
