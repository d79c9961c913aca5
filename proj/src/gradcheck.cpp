#include "ma3e/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ma3e/error.hpp"
#include "ma3e/trainer.hpp"

namespace ma3e {

GradcheckResult gradcheck(const std::function<double(const ModelParams&)>& loss, const ModelParams& params,
                          const ModelParams& analytic, std::size_t samples, double step, Rng& rng) {
    ModelParams probe = params;
    auto probe_named = learnable_params(probe);
    const auto grad_named = learnable_params(analytic);

    std::vector<std::pair<std::size_t, std::size_t>> picks;  // (tensor, entry)
    std::set<std::pair<std::size_t, std::size_t>> seen;
    std::size_t total = 0;
    for (std::size_t t = 0; t < probe_named.size(); ++t) {
        const std::size_t n = probe_named[t].value->size();
        total += n;
        const std::pair<std::size_t, std::size_t> pick{t, uniform_index(rng, n)};
        picks.push_back(pick);
        seen.insert(pick);
    }
    samples = std::min(samples, total);
    while (picks.size() < samples) {
        std::size_t flat = uniform_index(rng, total);
        std::size_t t = 0;
        while (flat >= probe_named[t].value->size()) flat -= probe_named[t++].value->size();
        if (seen.insert({t, flat}).second) picks.emplace_back(t, flat);
    }

    GradcheckResult result;
    result.groups = probe_named.size();
    for (const auto& [t, i] : picks) {
        double& x = probe_named[t].value->data()[i];
        const double saved = x;
        x = saved + step;
        const double up = loss(probe);
        x = saved - step;
        const double down = loss(probe);
        x = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) throw RuntimeFailure("gradcheck: non-finite loss");
        const double numeric = (up - down) / (2.0 * step);
        const double a = grad_named[t].value->data()[i];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
        if (rel >= result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst = probe_named[t].name + "[" + std::to_string(i) + "]";
        }
        ++result.checked;
    }
    return result;
}

GradcheckResult gradcheck_training_loss(const TrainConfig& config, std::size_t samples, double step) {
    validate(config);
    const ModelConfig mc = config.model_config();
    const ModelParams params = init_params(mc);
    TrainConfig one = config;
    one.synth_count = 1;
    const Image img = load_dataset(one).front();
    Rng sample_rng = split_rng(config.seed, 0x9c4ec0ULL);
    const PreparedSample prepared = prepare_sample(img, config, sample_rng);
    const LossOptions options = loss_options(config);
    const PatchSet input = patchify(prepared.sample.composite, config.p);

    ForwardCache cache;
    const ForwardOutput fwd = forward(input, prepared.layout, params, mc, &cache);
    const LossEvaluation eval = evaluate_loss(prepared.sample, prepared.layout, fwd, config.p, options);
    if (!std::isfinite(eval.report.l_rec)) throw RuntimeFailure("gradcheck: non-finite loss");
    ModelParams grads = zeros_like(params);
    backward(cache, eval.d_predictions, prepared.layout, params, mc, grads);

    const TransportPlan plan = eval.plan;
    const bool frozen = options.use_ot_loss && !prepared.layout.crop_indices.empty();
    const auto loss = [&](const ModelParams& p) {
        const ForwardOutput out = forward(input, prepared.layout, p, mc);
        return evaluate_loss(prepared.sample, prepared.layout, out, config.p, options, frozen ? &plan : nullptr)
            .report.l_rec;
    };
    Rng pick_rng = split_rng(config.seed, 0x9c4ec1ULL);
    return gradcheck(loss, params, grads, samples, step, pick_rng);
}

}  // namespace ma3e
