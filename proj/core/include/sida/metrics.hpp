#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "sida/tensor.hpp"

#include <json.hpp>

namespace sida {

// predicted x actual counts over the three classes.
struct ConfusionMatrix3 {
    std::array<std::array<long, 3>, 3> counts{};

    void add(int pred, int actual);
    long total() const;
};

struct ClassMetrics {
    double acc = 0.0;  // per-class accuracy = recall on that class
    double f1 = 0.0;   // one-vs-rest
};

struct LocalizationMetrics {
    double auc = 0.0;
    double f1 = 0.0;
    double iou = 0.0;
};

// Per-class and overall detection metrics plus optional localization over
// the tampered subset. Overall values are the unweighted class means.
struct EvalReport {
    std::array<ClassMetrics, 3> per_class;  // real, synthetic, tampered
    ClassMetrics overall;
    std::optional<LocalizationMetrics> localization;

    // Percent-scale JSON mirroring the detection/localization table layout.
    nlohmann::ordered_json to_json() const;
    // Aligned text table, one row.
    std::string to_row(const std::string& name) const;
    static std::string table_header();
};

// The class-average rule: overall = mean of the three per-class values.
double overall_from_per_class(double a, double b, double c);

ConfusionMatrix3 confusion_matrix(const std::vector<int>& preds, const std::vector<int>& gts);
EvalReport detection_report(const std::vector<int>& preds, const std::vector<int>& gts);

// Binarize a probability map at the given threshold.
Tensor binarize(const Tensor& prob, double threshold = 0.5);

// |intersection| / |union| on binary maps; both-empty convention: 1.0.
double mask_iou(const Tensor& pred_bin, const Tensor& gt_bin);

// Pixel-level F1 = 2|inter| / (|pred| + |gt|); both-empty: 1.0.
double mask_f1(const Tensor& pred_bin, const Tensor& gt_bin);

// Mann-Whitney AUC with ties counted 1/2. gt must contain at least one
// positive and one negative pixel.
double pixel_auc(const Tensor& pred_prob, const Tensor& gt_bin);

}  // namespace sida
