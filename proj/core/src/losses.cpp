#include "sida/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace sida {

LossWeights LossWeights::preset(const std::string& name) {
    LossWeights w;
    if (name == "sec5") {
        w.lambda_bce = 1.0;
        w.lambda_dice = 1.0;
    } else if (name == "sec56") {
        w.lambda_bce = 2.0;
        w.lambda_dice = 0.5;
    } else {
        throw std::invalid_argument("unknown loss preset '" + name + "' (want sec5 or sec56)");
    }
    return w;
}

void LossWeights::validate() const {
    for (double v : {lambda_det, lambda_mask, lambda_txt, lambda_bce, lambda_dice}) {
        if (!std::isfinite(v) || v < 0.0) {
            throw std::invalid_argument("loss weights must be finite and non-negative");
        }
    }
}

LossBreakdown total_loss(const LossParts& parts, const LossWeights& w, int stage) {
    if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
    if (parts.bce.has_value() != parts.dice.has_value()) {
        throw std::invalid_argument("bce and dice parts must be given together");
    }
    if (stage == 2 && !parts.txt.has_value()) {
        throw std::invalid_argument("stage 2 requires a text loss part");
    }
    LossBreakdown out;
    out.det = parts.det;
    if (parts.bce) {
        out.bce = *parts.bce;
        out.dice = *parts.dice;
        out.mask = w.lambda_bce * out.bce + w.lambda_dice * out.dice;
    }
    out.total = w.lambda_det * out.det + w.lambda_mask * out.mask;
    if (stage == 2) {
        out.txt = *parts.txt;
        out.total += w.lambda_txt * *out.txt;
    }
    return out;
}

Tensor ce_det(Tape& t, const Tensor& logits, int label) {
    const int n = logits.numel();
    if (label < 0 || label >= n) {
        throw std::invalid_argument("ce_det: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(n) + " classes");
    }
    Tensor row = t.reshape(logits, {1, n});
    Tensor lp = t.log_softmax(row, 1);
    Tensor picked = t.take_per_row(lp, {label});
    return t.neg(picked);
}

Tensor bce_mask(Tape& t, const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) {
        throw ShapeError("bce_mask: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
    }
    constexpr double kClamp = 1e-7;
    Tensor p = t.clamp(pred, kClamp, 1.0 - kClamp);
    Tensor pos = t.mul(gt, t.log(p));
    Tensor one_minus_g = t.add_scalar(t.neg(gt), 1.0);
    Tensor one_minus_p = t.add_scalar(t.neg(p), 1.0);
    Tensor neg_term = t.mul(one_minus_g, t.log(one_minus_p));
    return t.neg(t.mean(t.add(pos, neg_term)));
}

Tensor dice_mask(Tape& t, const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) {
        throw ShapeError("dice_mask: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
    }
    constexpr double kEps = 1e-6;
    Tensor inter = t.sum(t.mul(pred, gt));
    Tensor denom = t.add_scalar(t.add(t.sum(pred), t.sum(gt)), kEps);
    Tensor num = t.add_scalar(t.scale(inter, 2.0), kEps);
    return t.add_scalar(t.neg(t.div(num, denom)), 1.0);
}

Tensor text_ce(Tape& t, const Tensor& logits, const std::vector<int>& targets, int pad_id) {
    if (logits.ndim() != 2 || static_cast<int>(targets.size()) != logits.rows()) {
        throw ShapeError("text_ce: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
    }
    std::vector<int> cols(targets.size());
    std::vector<double> keep(targets.size());
    int n_valid = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] == pad_id) {
            cols[i] = 0;
            keep[i] = 0.0;
        } else {
            cols[i] = targets[i];
            keep[i] = 1.0;
            ++n_valid;
        }
    }
    if (n_valid == 0) throw std::invalid_argument("text_ce: all targets are padding");
    Tensor lp = t.log_softmax(logits, 1);
    Tensor picked = t.take_per_row(lp, cols);
    Tensor masked = t.mul(picked, Tensor::from({static_cast<int>(keep.size())}, keep));
    return t.scale(t.sum(masked), -1.0 / n_valid);
}

Tensor total_loss_tensor(Tape& t, const Tensor& det, const std::optional<Tensor>& bce,
                         const std::optional<Tensor>& dice, const std::optional<Tensor>& txt,
                         const LossWeights& w, int stage) {
    if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
    if (bce.has_value() != dice.has_value()) {
        throw std::invalid_argument("bce and dice parts must be given together");
    }
    if (stage == 2 && !txt.has_value()) {
        throw std::invalid_argument("stage 2 requires a text loss part");
    }
    Tensor total = t.scale(det, w.lambda_det);
    if (bce) {
        Tensor mask = t.add(t.scale(*bce, w.lambda_bce), t.scale(*dice, w.lambda_dice));
        total = t.add(total, t.scale(mask, w.lambda_mask));
    }
    if (stage == 2) total = t.add(total, t.scale(*txt, w.lambda_txt));
    return total;
}

}  // namespace sida
