#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ma3e/geometry.hpp"
#include "ma3e/imageio.hpp"
#include "ma3e/model.hpp"

namespace ma3e {

struct Toggles {
    bool use_angle_embedding = true;
    bool use_scaling_center_crop = true;
    bool use_split_masking = true;
    bool use_ot_loss = true;

    friend bool operator==(const Toggles&, const Toggles&) = default;
};

/// Everything a pretraining run needs. Field names double as the keys of the
/// `key = value` config file format.
struct TrainConfig {
    // "synthetic" or a directory of .ppm/.pgm files sized image_size.
    std::string dataset = "synthetic";
    int synth_count = 256;
    std::uint64_t synth_seed = 7;
    ShapeKind synth_shape = ShapeKind::oriented_bar;

    // Model (micro desk-scale default).
    int image_size = 96;
    int p = 8;
    int channels = 3;
    int enc_dim = 64;
    int enc_depth = 2;
    int enc_heads = 4;
    int dec_dim = 32;
    int dec_depth = 1;
    int dec_heads = 4;
    int mlp_ratio = 4;

    // Optimization.
    int batch_size = 16;
    int steps = 300;
    double base_lr = 1.5e-3;  // 10x the full-scale value; 300 steps need the larger rate
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.05;
    int warmup_steps = 30;

    // Rotated crop and masking.
    double ratio_crop = 0.75;
    double ratio_bg = 0.75;
    int a = 32;
    double theta_min_deg = -45.0;
    double theta_max_deg = 45.0;

    // Transport.
    double epsilon_rule = 0.1;
    int sinkhorn_max_iters = 10000;
    double sinkhorn_tol = 1e-6;

    std::uint64_t seed = 0;
    Toggles toggles;
    bool normalize_targets = false;
    int checkpoint_every = 100;

    AngleRange theta_range() const;
    // Effective peak learning rate: base_lr * batch_size / 256.
    double peak_lr() const;
    ModelConfig model_config() const;
    DatasetSpec dataset_spec() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& config);

/// Parses `key = value` lines; '#' starts a comment. Unknown keys and
/// malformed values raise ValidationError. Missing keys keep their defaults.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

// Inverse of parse_config; every key is written, doubles with 17 significant digits.
std::string serialize_config(const TrainConfig& config);

}  // namespace ma3e
