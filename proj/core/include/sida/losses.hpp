#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sida/tensor.hpp"

namespace sida {

// Weighting of detection / mask / text loss terms. Two presets ship: the
// balanced one ("sec5": bce = dice = 1.0) and the tuned one ("sec56":
// bce = 2.0, dice = 0.5, the default).
struct LossWeights {
    double lambda_det = 1.0;
    double lambda_mask = 1.0;
    double lambda_txt = 1.0;
    double lambda_bce = 2.0;
    double lambda_dice = 0.5;

    static LossWeights preset(const std::string& name);  // "sec5" | "sec56"
    void validate() const;                               // finite and >= 0
};

struct LossBreakdown {
    double det = 0.0;
    double bce = 0.0;
    double dice = 0.0;
    double mask = 0.0;  // lambda_bce*bce + lambda_dice*dice
    std::optional<double> txt;
    double total = 0.0;
};

struct LossParts {
    double det = 0.0;
    std::optional<double> bce;
    std::optional<double> dice;  // present together with bce or not at all
    std::optional<double> txt;
};

// Stage 1: total = l_det*det + l_mask*(l_bce*bce + l_dice*dice).
// Stage 2 adds l_txt*txt (txt is required then). Samples without a mask
// contribute zero mask terms.
LossBreakdown total_loss(const LossParts& parts, const LossWeights& w, int stage);

// Differentiable loss terms. Each returns a 1-element tensor on the tape.

// -log softmax(logits)[label]; logits is a vector of class scores.
Tensor ce_det(Tape& t, const Tensor& logits, int label);

// Mean over pixels of -[g*ln p + (1-g)*ln(1-p)], p clamped to
// [1e-7, 1-1e-7]. pred and gt must have identical shapes.
Tensor bce_mask(Tape& t, const Tensor& pred, const Tensor& gt);

// 1 - (2*sum(p*g) + eps) / (sum p + sum g + eps), eps = 1e-6.
Tensor dice_mask(Tape& t, const Tensor& pred, const Tensor& gt);

// Teacher-forced mean cross-entropy over non-pad positions. logits is
// [seq x vocab]; targets[i] is the token scored by row i (pad_id excluded).
Tensor text_ce(Tape& t, const Tensor& logits, const std::vector<int>& targets, int pad_id);

// Tensor-level weighted combination mirroring total_loss. Absent optional
// parts contribute nothing; stage 2 requires txt.
Tensor total_loss_tensor(Tape& t, const Tensor& det, const std::optional<Tensor>& bce,
                         const std::optional<Tensor>& dice, const std::optional<Tensor>& txt,
                         const LossWeights& w, int stage);

}  // namespace sida
