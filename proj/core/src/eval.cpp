#include "sida/eval.hpp"

#include "sida/util.hpp"

namespace sida {

namespace {

struct PerSample {
    int pred = 0;
    int gt = 0;
    bool gt_tampered = false;
    bool has_loc = false;
    double iou = 0.0, f1 = 0.0;
    bool has_auc = false;
    double auc = 0.0;
};

}  // namespace

EvalReport evaluate_model(const SidaModel& model, const std::vector<Sample>& samples,
                          const EvalOptions& opts) {
    if (samples.empty()) throw std::invalid_argument("evaluate_model: no samples");
    PromptEncoding prompt = model.encode_default_prompt();

    auto eval_one = [&](const Sample& s, std::size_t) -> PerSample {
        PerSample r;
        r.gt = static_cast<int>(s.label);
        r.gt_tampered = s.label == Label::tampered;
        Tensor prob;
        if (opts.oracle_stub) {
            r.pred = r.gt;
            if (r.gt_tampered) prob = *s.mask;
        } else {
            Tape tape(false);
            SidaOutput out = model.full_forward(tape, s.image, prompt);
            r.pred = static_cast<int>(out.label);
            if (r.gt_tampered) {
                prob = out.mask ? *out.mask
                                : Tensor::zeros({s.image.height, s.image.width});
            }
        }
        if (r.gt_tampered) {
            if (!s.mask) throw std::runtime_error("tampered sample '" + s.id + "' has no mask");
            r.has_loc = true;
            Tensor pred_bin = binarize(prob);
            r.iou = mask_iou(pred_bin, *s.mask);
            r.f1 = mask_f1(pred_bin, *s.mask);
            // Single-class ground truth cannot be ranked.
            long pos = 0;
            for (int i = 0; i < s.mask->numel(); ++i) pos += s.mask->at(i) != 0.0;
            if (pos > 0 && pos < s.mask->numel()) {
                r.has_auc = true;
                r.auc = pixel_auc(prob, *s.mask);
            }
        }
        return r;
    };

    std::vector<PerSample> results = parallel_map<PerSample>(samples, opts.threads, eval_one);

    std::vector<int> preds, gts;
    preds.reserve(results.size());
    gts.reserve(results.size());
    double iou_sum = 0.0, f1_sum = 0.0, auc_sum = 0.0;
    long n_loc = 0, n_auc = 0;
    for (const auto& r : results) {
        preds.push_back(r.pred);
        gts.push_back(r.gt);
        if (r.has_loc) {
            iou_sum += r.iou;
            f1_sum += r.f1;
            ++n_loc;
        }
        if (r.has_auc) {
            auc_sum += r.auc;
            ++n_auc;
        }
    }
    EvalReport rep = detection_report(preds, gts);
    if (n_loc > 0) {
        LocalizationMetrics loc;
        loc.iou = iou_sum / n_loc;
        loc.f1 = f1_sum / n_loc;
        loc.auc = n_auc > 0 ? auc_sum / n_auc : 0.0;
        rep.localization = loc;
    }
    return rep;
}

}  // namespace sida
