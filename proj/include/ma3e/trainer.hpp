#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ma3e/config.hpp"
#include "ma3e/geometry.hpp"
#include "ma3e/model.hpp"
#include "ma3e/patching.hpp"
#include "ma3e/transport.hpp"

namespace ma3e {

struct LossReport {
    double l_mse = 0.0;
    double l_ot = 0.0;
    double l_rec = 0.0;
    int step = 0;
};

struct LossOptions {
    bool use_ot_loss = true;
    bool normalize_targets = false;
    double epsilon_rule = 0.1;
    int sinkhorn_max_iters = 10000;
    double sinkhorn_tol = 1e-6;
};

LossOptions loss_options(const TrainConfig& config);

struct LossEvaluation {
    LossReport report;
    Matrix d_predictions;  // dL_rec / dpredictions, N x p^2 C
    TransportPlan plan;    // empty when the OT term is off
};

/// Reconstruction objective for one sample.
///   l_mse: mean squared error over masked background patches and their elements,
///          against the original image.
///   l_ot:  sum_ij c_ij w_ij over all N_r crop positions, targets taken from the
///          original image, the plan solved by Sinkhorn and held constant.
/// With use_ot_loss off, l_ot becomes the squared error of the masked crop
/// patches against the same positions, and both terms share the pooled
/// denominator so that l_rec is the plain masked-autoencoder loss.
/// `frozen_plan`, when given, replaces the Sinkhorn solve.
LossEvaluation evaluate_loss(const CompositeSample& sample, const MaskLayout& layout, const ForwardOutput& output,
                             int p, const LossOptions& options, const TransportPlan* frozen_plan = nullptr);

LossReport total_loss(const CompositeSample& sample, const MaskLayout& layout, const ForwardOutput& output, int p,
                      const LossOptions& options = {});

struct PreparedSample {
    CompositeSample sample;
    MaskLayout layout;
};

/// Rotated crop + composite + mask for one image, following the toggles:
/// without the scaling center crop the input is the unmodified image (the crop
/// region still defines the split); without split masking one joint mask at
/// ratio_bg covers the whole grid.
PreparedSample prepare_sample(const Image& img, const TrainConfig& config, Rng& rng);

/// Linear warmup from 0 to peak over warmup_steps, then cosine decay to 0 at `steps`.
double learning_rate(int step, int steps, int warmup_steps, double peak);

struct OptimizerState {
    ModelParams m;
    ModelParams v;
    long t = 0;
};

OptimizerState init_optimizer(const ModelParams& params);

struct BatchGradient {
    ModelParams grads;
    LossReport report;
};

// Mean loss and mean gradient over the batch.
BatchGradient batch_gradient(const ModelParams& params, const std::vector<PreparedSample>& batch,
                             const TrainConfig& config);

/// One AdamW step (decoupled weight decay on linear weights only) at the
/// scheduled learning rate. Throws RuntimeFailure on a non-finite loss.
LossReport train_step(ModelParams& params, const std::vector<PreparedSample>& batch, const TrainConfig& config,
                      OptimizerState& state, int step);

std::vector<Image> load_dataset(const TrainConfig& config);

struct FitResult {
    std::filesystem::path final_checkpoint;
    std::vector<LossReport> log;
};

/// Full pretraining run. Writes metrics.csv (step,l_mse,l_ot,l_rec,lr,seconds),
/// model_step000000.ckpt before the first step, then a checkpoint every
/// checkpoint_every steps and after the last one.
FitResult fit(const TrainConfig& config, const std::filesystem::path& out_dir,
              const std::function<void(const LossReport&)>& on_step = {});

/// original | composite | masked (masked patches mid-gray) | reconstruction,
/// separated by one-pixel white columns. Reconstruction shows the model output
/// at every position, clamped to [0, 1].
struct Panel {
    Image raster;
    PreparedSample prepared;
    ForwardOutput output;
};

Panel reconstruct_panel(const TrainConfig& config, const ModelParams& params, const Image& image, std::uint64_t seed);

}  // namespace ma3e
