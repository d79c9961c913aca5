#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "ma3e/config.hpp"
#include "ma3e/model.hpp"
#include "ma3e/rng.hpp"

namespace ma3e {

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t groups = 0;  // distinct parameter tensors touched
    std::string worst;       // "name[index]" of the worst entry
};

/// Compares `analytic` against central differences of `loss` on `samples`
/// scalar parameters: one random entry from every learnable tensor first, the
/// rest uniform over all entries. Relative error is
/// |a - n| / max(|a|, |n|, 1e-6).
GradcheckResult gradcheck(const std::function<double(const ModelParams&)>& loss, const ModelParams& params,
                          const ModelParams& analytic, std::size_t samples, double step, Rng& rng);

/// Gradcheck of the full reconstruction loss on one prepared sample drawn from
/// the config's dataset, with the transport plan frozen at its solved value.
GradcheckResult gradcheck_training_loss(const TrainConfig& config, std::size_t samples, double step = 1e-5);

}  // namespace ma3e
