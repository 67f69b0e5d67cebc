#include "sida/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace sida {

void ConfusionMatrix3::add(int pred, int actual) {
    if (pred < 0 || pred > 2 || actual < 0 || actual > 2) {
        throw std::invalid_argument("confusion matrix labels must be in {0,1,2}");
    }
    ++counts[pred][actual];
}

long ConfusionMatrix3::total() const {
    long n = 0;
    for (const auto& row : counts) {
        for (long c : row) n += c;
    }
    return n;
}

double overall_from_per_class(double a, double b, double c) { return (a + b + c) / 3.0; }

ConfusionMatrix3 confusion_matrix(const std::vector<int>& preds, const std::vector<int>& gts) {
    if (preds.size() != gts.size()) {
        throw std::invalid_argument("confusion_matrix: " + std::to_string(preds.size()) +
                                    " predictions vs " + std::to_string(gts.size()) + " labels");
    }
    ConfusionMatrix3 cm;
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], gts[i]);
    return cm;
}

EvalReport detection_report(const std::vector<int>& preds, const std::vector<int>& gts) {
    ConfusionMatrix3 cm = confusion_matrix(preds, gts);
    EvalReport rep;
    for (int c = 0; c < 3; ++c) {
        long tp = cm.counts[c][c];
        long actual = 0, predicted = 0;
        for (int k = 0; k < 3; ++k) {
            actual += cm.counts[k][c];
            predicted += cm.counts[c][k];
        }
        const double recall = actual > 0 ? static_cast<double>(tp) / actual : 0.0;
        const double precision = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
        rep.per_class[c].acc = recall;
        rep.per_class[c].f1 =
            (precision + recall) > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    rep.overall.acc = overall_from_per_class(rep.per_class[0].acc, rep.per_class[1].acc,
                                             rep.per_class[2].acc);
    rep.overall.f1 =
        overall_from_per_class(rep.per_class[0].f1, rep.per_class[1].f1, rep.per_class[2].f1);
    return rep;
}

Tensor binarize(const Tensor& prob, double threshold) {
    std::vector<double> v(prob.values().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = prob.values()[i] >= threshold ? 1.0 : 0.0;
    return Tensor::from(prob.shape(), std::move(v));
}

namespace {

void check_mask_pair(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

double mask_iou(const Tensor& pred_bin, const Tensor& gt_bin) {
    check_mask_pair("mask_iou", pred_bin, gt_bin);
    long inter = 0, uni = 0;
    for (int i = 0; i < pred_bin.numel(); ++i) {
        const bool p = pred_bin.at(i) != 0.0;
        const bool g = gt_bin.at(i) != 0.0;
        inter += p && g;
        uni += p || g;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double mask_f1(const Tensor& pred_bin, const Tensor& gt_bin) {
    check_mask_pair("mask_f1", pred_bin, gt_bin);
    long inter = 0, np = 0, ng = 0;
    for (int i = 0; i < pred_bin.numel(); ++i) {
        const bool p = pred_bin.at(i) != 0.0;
        const bool g = gt_bin.at(i) != 0.0;
        inter += p && g;
        np += p;
        ng += g;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

double pixel_auc(const Tensor& pred_prob, const Tensor& gt_bin) {
    check_mask_pair("pixel_auc", pred_prob, gt_bin);
    const int n = pred_prob.numel();
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return pred_prob.at(a) < pred_prob.at(b); });
    long n_pos = 0;
    for (int i = 0; i < n; ++i) n_pos += gt_bin.at(i) != 0.0;
    const long n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw std::invalid_argument("pixel_auc: ground truth must contain both classes");
    }
    // Rank-sum with average ranks over ties (Mann-Whitney U).
    double rank_sum_pos = 0.0;
    int i = 0;
    while (i < n) {
        int j = i;
        while (j < n && pred_prob.at(idx[j]) == pred_prob.at(idx[i])) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + j) / 2.0;  // 1-based
        for (int k = i; k < j; ++k) {
            if (gt_bin.at(idx[k]) != 0.0) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Report serialization

namespace {

double pct(double v) { return v * 100.0; }

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json j;
    const char* names[3] = {"real", "fully_synthetic", "tampered"};
    for (int c = 0; c < 3; ++c) {
        j[names[c]] = {{"acc", pct(per_class[c].acc)}, {"f1", pct(per_class[c].f1)}};
    }
    j["overall"] = {{"acc", pct(overall.acc)}, {"f1", pct(overall.f1)}};
    if (localization) {
        j["localization"] = {{"auc", pct(localization->auc)},
                             {"f1", pct(localization->f1)},
                             {"iou", pct(localization->iou)}};
    }
    return j;
}

std::string EvalReport::table_header() {
    return "                 |  Real          |  Synthetic     |  Tampered      |  Overall       |  Localization\n"
           "                 |  Acc     F1    |  Acc     F1    |  Acc     F1    |  Acc     F1    |  AUC    F1     IoU";
}

std::string EvalReport::to_row(const std::string& name) const {
    char buf[256];
    if (localization) {
        std::snprintf(buf, sizeof(buf),
                      "%-16s | %6.1f %6.1f | %6.1f %6.1f | %6.1f %6.1f | %6.1f %6.1f | %5.1f %6.1f %6.1f",
                      name.c_str(), pct(per_class[0].acc), pct(per_class[0].f1),
                      pct(per_class[1].acc), pct(per_class[1].f1), pct(per_class[2].acc),
                      pct(per_class[2].f1), pct(overall.acc), pct(overall.f1),
                      pct(localization->auc), pct(localization->f1), pct(localization->iou));
    } else {
        std::snprintf(buf, sizeof(buf),
                      "%-16s | %6.1f %6.1f | %6.1f %6.1f | %6.1f %6.1f | %6.1f %6.1f |     -      -      -",
                      name.c_str(), pct(per_class[0].acc), pct(per_class[0].f1),
                      pct(per_class[1].acc), pct(per_class[1].f1), pct(per_class[2].acc),
                      pct(per_class[2].f1), pct(overall.acc), pct(overall.f1));
    }
    return std::string(buf);
}

}  // namespace sida
