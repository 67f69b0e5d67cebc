#pragma once

#include <vector>

#include "sida/metrics.hpp"
#include "sida/trainer.hpp"

namespace sida {

struct EvalOptions {
    int threads = 1;
    // Bypass the model and echo ground truth; validates metric plumbing.
    bool oracle_stub = false;
};

// Runs the model over the samples and aggregates detection metrics over all
// of them plus localization metrics over the ground-truth tampered subset.
// A tampered sample for which the model emits no mask scores as an all-zero
// prediction. AUC is averaged per image (images whose ground truth has a
// single class are excluded from the AUC mean).
EvalReport evaluate_model(const SidaModel& model, const std::vector<Sample>& samples,
                          const EvalOptions& opts = {});

}  // namespace sida
