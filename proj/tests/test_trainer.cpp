#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ma3e/checkpoint.hpp"
#include "ma3e/config.hpp"
#include "ma3e/error.hpp"
#include "ma3e/trainer.hpp"
#include "ma3e/transport.hpp"
#include "oracles.hpp"

using namespace ma3e;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
    TrainConfig c;
    c.synth_count = 8;
    c.image_size = 32;
    c.p = 8;
    c.a = 16;
    c.enc_dim = 16;
    c.enc_depth = 1;
    c.enc_heads = 2;
    c.dec_dim = 8;
    c.dec_depth = 1;
    c.dec_heads = 2;
    c.batch_size = 2;
    c.steps = 4;
    c.warmup_steps = 1;
    c.checkpoint_every = 2;
    c.seed = 5;
    return c;
}

Image noise_image(int size, std::uint64_t seed) {
    Rng rng(seed);
    Image img(size, size, 3);
    for (double& v : img.data) v = uniform01(rng);
    return img;
}

ForwardOutput random_output(const TrainConfig& c, Rng& rng) {
    ForwardOutput out;
    out.predictions = Matrix(c.model_config().num_patches(), c.model_config().patch_dim());
    for (double& v : out.predictions.data()) v = uniform01(rng);
    return out;
}

double patch_sq_error(const PatchSet& t, const Matrix& pred, int idx) {
    double s = 0.0;
    for (int k = 0; k < t.dim(); ++k) s += (t.patches(idx, k) - pred(idx, k)) * (t.patches(idx, k) - pred(idx, k));
    return s;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string strip_seconds(const std::string& csv) {
    std::stringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("loss terms against loop oracles") {
    const TrainConfig c = tiny_config();
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const PreparedSample ps = prepare_sample(noise_image(32, 100 + trial), c, rng);
        const ForwardOutput out = random_output(c, rng);
        const LossEvaluation ev = evaluate_loss(ps.sample, ps.layout, out, c.p, loss_options(c));
        const PatchSet orig = patchify(ps.sample.original, c.p);

        double s = 0.0;
        for (int idx : ps.layout.bg_masked) s += patch_sq_error(orig, out.predictions, idx);
        const double l_mse = s / (ps.layout.bg_masked.size() * orig.dim());
        CHECK(std::abs(ev.report.l_mse - l_mse) <= 1e-10);

        const auto& crop = ps.layout.crop_indices;
        Matrix targets(crop.size(), orig.dim()), preds(crop.size(), orig.dim());
        for (std::size_t i = 0; i < crop.size(); ++i)
            for (int k = 0; k < orig.dim(); ++k) {
                targets(i, k) = orig.patches(crop[i], k);
                preds(i, k) = out.predictions(crop[i], k);
            }
        const Matrix cost = oracle::loop_cost(targets, preds);
        const TransportPlan plan = sinkhorn_solve(make_uniform_problem(cost, c.epsilon_rule));
        CHECK(ev.report.l_ot == doctest::Approx(ot_loss(cost, plan)).epsilon(1e-12));
        CHECK(ev.report.l_rec == ev.report.l_mse + ev.report.l_ot);
        CHECK(std::abs(ev.report.l_rec - (l_mse + ot_loss(cost, plan))) <= 1e-9);
        CHECK(ev.report.l_mse >= 0.0);
        CHECK(ev.report.l_ot >= 0.0);
    }
}

TEST_CASE("perfect prediction at zero rotation") {
    TrainConfig c = tiny_config();
    c.theta_min_deg = c.theta_max_deg = 0.0;
    Rng rng(2);
    const PreparedSample ps = prepare_sample(noise_image(32, 3), c, rng);
    CHECK(ps.sample.spec.theta == 0.0);
    ForwardOutput out;
    out.predictions = patchify(ps.sample.original, c.p).patches;
    const LossReport r = total_loss(ps.sample, ps.layout, out, c.p, loss_options(c));
    CHECK(r.l_mse == 0.0);
    // Diagonal is zero; the entropic plan leaks little mass off it.
    CHECK(r.l_ot >= 0.0);
    CHECK(r.l_ot <= 0.1 * c.epsilon_rule);
}

TEST_CASE("no target leakage into the background term") {
    const TrainConfig c = tiny_config();
    Rng rng(3);
    PreparedSample ps = prepare_sample(noise_image(32, 4), c, rng);
    const ForwardOutput out = random_output(c, rng);
    const LossReport before = total_loss(ps.sample, ps.layout, out, c.p, loss_options(c));
    // Garbage in visible background and crop targets leaves l_mse unchanged.
    const int grid = c.image_size / c.p;
    std::vector<int> touched = ps.layout.bg_visible;
    touched.insert(touched.end(), ps.layout.crop_indices.begin(), ps.layout.crop_indices.end());
    for (int idx : touched)
        for (int y = 0; y < c.p; ++y)
            for (int x = 0; x < c.p; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    ps.sample.original.at((idx / grid) * c.p + y, (idx % grid) * c.p + x, ch) = uniform01(rng);
    const LossReport after = total_loss(ps.sample, ps.layout, out, c.p, loss_options(c));
    CHECK(after.l_mse == before.l_mse);
    CHECK(after.l_ot != before.l_ot);
}

TEST_CASE("OT toggle off replaces the crop term with same-position MSE") {
    TrainConfig c = tiny_config();
    c.toggles.use_ot_loss = false;
    Rng rng(4);
    const PreparedSample ps = prepare_sample(noise_image(32, 5), c, rng);
    const ForwardOutput out = random_output(c, rng);
    const LossEvaluation ev = evaluate_loss(ps.sample, ps.layout, out, c.p, loss_options(c));
    const PatchSet orig = patchify(ps.sample.original, c.p);
    const double denom = (ps.layout.bg_masked.size() + ps.layout.crop_masked.size()) * orig.dim();
    double bg = 0.0, crop = 0.0;
    for (int idx : ps.layout.bg_masked) bg += patch_sq_error(orig, out.predictions, idx);
    for (int idx : ps.layout.crop_masked) crop += patch_sq_error(orig, out.predictions, idx);
    CHECK(ev.report.l_mse == doctest::Approx(bg / denom).epsilon(1e-12));
    CHECK(ev.report.l_ot == doctest::Approx(crop / denom).epsilon(1e-12));
    CHECK(ev.plan.plan.empty());
}

TEST_CASE("all toggles off is plain masked-autoencoder training") {
    TrainConfig c = tiny_config();
    c.toggles = Toggles{false, false, false, false};
    const ModelParams params = init_params(c.model_config());
    Rng rng(6);
    std::vector<PreparedSample> batch;
    for (int b = 0; b < 3; ++b) batch.push_back(prepare_sample(noise_image(32, 50 + b), c, rng));

    double direct = 0.0;
    for (const PreparedSample& ps : batch) {
        CHECK(ps.sample.composite == ps.sample.original);
        const auto& m = ps.layout;
        CHECK(static_cast<long>(m.crop_visible.size() + m.bg_visible.size()) == std::lround(16 * (1 - c.ratio_bg)));
        // Baseline: the image's patches, masked jointly, MSE over every masked patch.
        const PatchSet patches = patchify(ps.sample.original, c.p);
        const ForwardOutput out = forward(patches, m, params, c.model_config());
        std::vector<int> masked = m.crop_masked;
        masked.insert(masked.end(), m.bg_masked.begin(), m.bg_masked.end());
        double s = 0.0;
        for (int idx : masked) s += patch_sq_error(patches, out.predictions, idx);
        direct += s / (masked.size() * patches.dim());

        const LossEvaluation ev = evaluate_loss(ps.sample, m, out, c.p, loss_options(c));
        for (int n = 0; n < 16; ++n) {
            const bool is_masked = std::find(masked.begin(), masked.end(), n) != masked.end();
            for (int k = 0; k < patches.dim(); ++k) {
                const double g = is_masked ? 2 * (out.predictions(n, k) - patches.patches(n, k)) / (masked.size() * patches.dim()) : 0.0;
                CHECK(ev.d_predictions(n, k) == doctest::Approx(g).epsilon(1e-12));
            }
        }
    }
    direct /= batch.size();
    const BatchGradient bg = batch_gradient(params, batch, c);
    CHECK(std::abs(bg.report.l_rec - direct) <= 1e-9);
}

TEST_CASE("toggles shape the prepared sample") {
    TrainConfig c = tiny_config();
    Rng rng(7);
    const Image img = noise_image(32, 9);
    const PreparedSample full = prepare_sample(img, c, rng);
    CHECK(full.layout.crop_indices.size() == 4);
    CHECK(full.layout.crop_visible.size() == 1);
    CHECK(full.layout.bg_visible.size() == 3);
    CHECK(full.sample.original == img);

    c.toggles.use_scaling_center_crop = false;
    const PreparedSample plain = prepare_sample(img, c, rng);
    CHECK(plain.sample.composite == img);
    CHECK(plain.sample.spec.theta == 0.0);
    CHECK(plain.layout.crop_indices.size() == 4);
}

TEST_CASE("learning rate schedule") {
    const double peak = 1.5e-3 * 16 / 256;
    TrainConfig c;
    CHECK(c.peak_lr() == doctest::Approx(peak));
    CHECK(learning_rate(0, 300, 30, peak) == 0.0);
    CHECK(learning_rate(15, 300, 30, peak) == doctest::Approx(peak / 2));
    CHECK(learning_rate(30, 300, 30, peak) == doctest::Approx(peak));
    CHECK(learning_rate(299, 300, 30, peak) <= 0.01 * peak);
    const double expected = peak * 0.5 * (1 + std::cos(std::numbers::pi * 135 / 270));
    CHECK(learning_rate(165, 300, 30, peak) == doctest::Approx(expected));
    double prev = learning_rate(30, 300, 30, peak);
    for (int s = 31; s < 300; ++s) {
        const double lr = learning_rate(s, 300, 30, peak);
        CHECK(lr <= prev);
        CHECK(std::abs(lr - prev) <= peak * 0.02);
        prev = lr;
    }
    for (int s = 0; s < 30; ++s) CHECK(learning_rate(s, 300, 30, peak) < learning_rate(s + 1, 300, 30, peak));
    CHECK(learning_rate(0, 10, 0, peak) == doctest::Approx(peak));
}

TEST_CASE("train step updates parameters and decays only weights") {
    TrainConfig c = tiny_config();
    c.base_lr = 256.0;  // peak 2 at batch 2
    c.warmup_steps = 0;
    ModelParams params = init_params(c.model_config());
    const ModelParams before = params;
    OptimizerState state = init_optimizer(params);
    Rng rng(8);
    std::vector<PreparedSample> batch;
    for (int b = 0; b < 2; ++b) batch.push_back(prepare_sample(noise_image(32, 70 + b), c, rng));
    const BatchGradient g = batch_gradient(params, batch, c);
    const LossReport r = train_step(params, batch, c, state, 0);
    CHECK(r.l_rec == doctest::Approx(g.report.l_rec));
    CHECK(state.t == 1);
    // First AdamW step: p - lr * (g / (|g| + eps) + wd * p) for weights, no decay elsewhere.
    const double lr = learning_rate(0, c.steps, 0, c.peak_lr());
    const auto p0 = learnable_params(before);
    const auto p1 = learnable_params(params);
    const auto gr = learnable_params(g.grads);
    for (std::size_t i = 0; i < p0.size(); ++i) {
        const bool decays = p0[i].name.size() >= 7 && p0[i].name.substr(p0[i].name.size() - 7) == ".weight";
        for (std::size_t k = 0; k < p0[i].value->size(); k += 7) {
            const double w = p0[i].value->data()[k];
            const double gk = gr[i].value->data()[k];
            const double expected = w - lr * (gk / (std::abs(gk) + 1e-8) + (decays ? c.weight_decay * w : 0.0));
            CHECK(p1[i].value->data()[k] == doctest::Approx(expected).epsilon(1e-9));
        }
    }
}

TEST_CASE("fit with zero steps writes only the initial checkpoint") {
    TrainConfig c = tiny_config();
    c.steps = 0;
    c.warmup_steps = 0;
    const fs::path dir = fresh_dir("ma3e_fit0");
    const FitResult r = fit(c, dir);
    CHECK(r.log.empty());
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    CHECK(files == std::vector<std::string>{"metrics.csv", "model_step000000.ckpt"});
    CHECK(read_file(dir / "metrics.csv") == "step,l_mse,l_ot,l_rec,lr,seconds\n");
    CHECK(r.final_checkpoint == dir / "model_step000000.ckpt");
    const Checkpoint ck = load_checkpoint(r.final_checkpoint);
    CHECK(ck.config == c);
    fs::remove_all(dir);
}

TEST_CASE("fit is deterministic and checkpoints on schedule") {
    const TrainConfig c = tiny_config();
    const fs::path d1 = fresh_dir("ma3e_fit_a"), d2 = fresh_dir("ma3e_fit_b");
    int calls = 0;
    const FitResult r1 = fit(c, d1, [&](const LossReport&) { ++calls; });
    const FitResult r2 = fit(c, d2);
    CHECK(calls == 4);
    REQUIRE(r1.log.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(r1.log[i].step == static_cast<int>(i));
        CHECK(r1.log[i].l_rec == r2.log[i].l_rec);
        CHECK(std::abs(r1.log[i].l_rec - r1.log[i].l_mse - r1.log[i].l_ot) <= 1e-9);
    }
    const std::string m1 = read_file(d1 / "metrics.csv");
    CHECK(strip_seconds(m1) == strip_seconds(read_file(d2 / "metrics.csv")));
    CHECK(std::count(m1.begin(), m1.end(), '\n') == 5);
    for (const char* name : {"model_step000000.ckpt", "model_step000002.ckpt", "model_step000004.ckpt"})
        CHECK(fs::exists(d1 / name));
    CHECK(r1.final_checkpoint == d1 / "model_step000004.ckpt");

    TrainConfig other = c;
    other.seed = 6;
    const FitResult r3 = fit(other, fresh_dir("ma3e_fit_c"));
    CHECK(r3.log[0].l_rec != r1.log[0].l_rec);
    for (const auto& d : {d1, d2, fs::temp_directory_path() / "ma3e_fit_c"}) fs::remove_all(d);
}

TEST_CASE("divergence aborts the step") {
    TrainConfig c = tiny_config();
    ModelParams params = init_params(c.model_config());
    params.pred_head.bias(0, 0) = NAN;
    OptimizerState state = init_optimizer(params);
    Rng rng(9);
    std::vector<PreparedSample> batch{prepare_sample(noise_image(32, 1), c, rng)};
    CHECK_THROWS_WITH_AS(train_step(params, batch, c, state, 0), doctest::Contains("non-finite loss"), RuntimeFailure);
}

TEST_CASE("reconstruction panel layout") {
    const TrainConfig c = tiny_config();
    ModelParams params = init_params(c.model_config());
    const Image img = noise_image(32, 11);
    const Panel panel = reconstruct_panel(c, params, img, 3);
    CHECK(panel.raster.width == 4 * 32 + 3);
    CHECK(panel.raster.height == 32);
    for (int r = 0; r < 32; ++r)
        for (int k = 1; k <= 3; ++k) CHECK(panel.raster.at(r, k * 33 - 1, 0) == 1.0);
    for (int r = 0; r < 32; ++r)
        for (int x = 0; x < 32; ++x) CHECK(panel.raster.at(r, x, 1) == img.at(r, x, 1));

    const auto& m = panel.prepared.layout;
    int gray = 0;
    for (int idx = 0; idx < 16; ++idx) {
        bool all = true;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                for (int ch = 0; ch < 3; ++ch) all = all && panel.raster.at((idx / 4) * 8 + y, 66 + (idx % 4) * 8 + x, ch) == 0.5;
        gray += all;
    }
    CHECK(gray == static_cast<int>(m.crop_masked.size() + m.bg_masked.size()));
    CHECK(reconstruct_panel(c, params, img, 3).raster == panel.raster);

    // A zeroed head reconstructs its clamped bias everywhere.
    params.pred_head.weight.fill(0.0);
    for (std::size_t k = 0; k < params.pred_head.bias.cols(); ++k) params.pred_head.bias(0, k) = 0.25 + 0.5 * (k % 2);
    const Panel flat = reconstruct_panel(c, params, img, 3);
    double s = 0.0, s2 = 0.0;
    for (int r = 0; r < 32; ++r)
        for (int x = 0; x < 32; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = flat.raster.at(r, 99 + x, ch);
                CHECK(v == params.pred_head.bias(0, ((r % 8) * 8 + x % 8) * 3 + ch));
                s += v;
                s2 += v * v;
            }
    CHECK(s2 / 3072 - (s / 3072) * (s / 3072) <= 0.0626);

    CHECK_THROWS_AS(reconstruct_panel(c, params, noise_image(48, 1), 3), ValidationError);
}

TEST_CASE("config text round trip and rejection") {
    TrainConfig c = tiny_config();
    c.theta_min_deg = -30;
    c.theta_max_deg = 60;
    c.base_lr = 1.0 / 3.0;
    c.toggles.use_split_masking = false;
    c.synth_shape = ShapeKind::checker;
    const std::string text = serialize_config(c);
    CHECK(parse_config(text) == c);
    CHECK(text.find("theta_range = -30, 60") != std::string::npos);
    CHECK(text.find("betas = 0.90000000000000002, 0.94999999999999996") != std::string::npos);

    const TrainConfig parsed = parse_config("# comment\nsteps = 10\nwarmup_steps = 2\ntheta_range = -90, 90\n\n");
    CHECK(parsed.steps == 10);
    CHECK(parsed.theta_range().lo == doctest::Approx(-std::numbers::pi / 2));
    CHECK(parsed.batch_size == 16);

    CHECK_THROWS_WITH_AS(parse_config("stepz = 3"), doctest::Contains("unknown config key"), ValidationError);
    CHECK_THROWS_AS(parse_config("steps = ten"), ValidationError);
    CHECK_THROWS_AS(parse_config("steps"), ValidationError);
    CHECK_THROWS_AS(parse_config("use_ot_loss = maybe"), ValidationError);
    CHECK_THROWS_AS(parse_config("steps = 5\nwarmup_steps = 6"), ValidationError);
    CHECK_THROWS_AS(parse_config("batch_size = 0"), ValidationError);
    CHECK_THROWS_AS(load_config("/nonexistent/ma3e.cfg"), RuntimeFailure);
}
