#include "sida/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "sida/losses.hpp"
#include "sida/model.hpp"
#include "sida/trainer.hpp"

namespace sida {

namespace {

using OpBuilder = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

// Random positive-weight readout so every output coordinate contributes.
double weighted_sum(Tape& t, const Tensor& out, const Tensor& w) {
    return t.sum(t.mul(out, w)).value();
}

GradCheckResult check_op(const std::string& name, const OpBuilder& build,
                         std::vector<Tensor> inputs, double eps, Rng& rng) {
    for (auto& x : inputs) x.set_requires_grad(true);

    Tensor weights;
    {
        Tape probe(false);
        std::vector<Tensor> detached;
        detached.reserve(inputs.size());
        for (const auto& x : inputs) detached.push_back(x.clone());
        Tensor out = build(probe, detached);
        weights = Tensor::randn(out.shape(), rng, 1.0);
    }

    auto eval = [&]() {
        Tape t(false);
        return weighted_sum(t, build(t, inputs), weights);
    };

    Tape t;
    Tensor out = build(t, inputs);
    Tensor loss = t.sum(t.mul(out, weights));
    t.backward(loss);

    GradCheckResult res;
    res.name = name;
    for (auto& x : inputs) {
        Tensor fd = finite_diff_grad(eval, x, eps);
        std::vector<double> analytic =
            x.has_grad() ? x.grad() : std::vector<double>(x.numel(), 0.0);
        res.max_rel_err = std::max(res.max_rel_err, max_rel_error(analytic, fd.values()));
        res.coords += x.numel();
        x.zero_grad();
    }
    return res;
}

std::vector<int> sample_coords(int numel, int budget, Rng& rng) {
    std::vector<int> coords;
    if (numel <= budget) {
        coords.resize(numel);
        for (int i = 0; i < numel; ++i) coords[i] = i;
        return coords;
    }
    // Distinct draws; budget << numel in practice.
    std::vector<bool> seen(numel, false);
    while (static_cast<int>(coords.size()) < budget) {
        int i = rng.uniform_int(numel);
        if (!seen[i]) {
            seen[i] = true;
            coords.push_back(i);
        }
    }
    return coords;
}

ImageF random_image(int size, Rng& rng) {
    ImageF img;
    img.height = size;
    img.width = size;
    img.data.resize(static_cast<std::size_t>(size) * size * 3);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

Tensor random_mask(int size, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(size) * size);
    for (auto& m : v) m = rng.uniform() < 0.3 ? 1.0 : 0.0;
    return Tensor::from({size, size}, std::move(v));
}

// Full stage losses through a tiny model, checked w.r.t. every parameter on
// a coordinate sample.
void check_full_model(GradCheckReport& report, double eps, Rng& rng, int stage) {
    SidaConfig cfg;
    cfg.vlm.d_model = 16;
    cfg.vlm.n_layers = 1;
    cfg.vlm.n_heads = 2;
    cfg.vlm.d_ff = 32;
    cfg.vlm.image_size = 16;
    cfg.vlm.patch_size = 8;
    cfg.vlm.max_seq_len = 64;
    cfg.prompt = "classify<DET><SEG>";
    Rng init = rng.fork(7);
    SidaModel model(cfg, init);

    ImageF image = random_image(16, rng);
    Tensor gt_mask = random_mask(16, rng);
    // Guarantee both mask classes.
    gt_mask.values()[0] = 1.0;
    gt_mask.values()[1] = 0.0;
    PromptEncoding prompt = model.encode_default_prompt();
    LossWeights weights;  // bce 2.0, dice 0.5
    std::vector<int> desc_ids = tokenize(model.vlm().vocab(), "edited sky");

    auto loss_value = [&]() {
        Tape t(false);
        FullForwardOptions opts;
        opts.force_mask = true;
        SidaOutput out = model.full_forward(t, image, prompt, opts);
        Tensor det = ce_det(t, out.det_logits, static_cast<int>(Label::tampered));
        Tensor bce = bce_mask(t, *out.mask, gt_mask);
        Tensor dice = dice_mask(t, *out.mask, gt_mask);
        std::optional<Tensor> txt;
        if (stage == 2) {
            Tensor logits = model.description_logits(t, image, prompt, desc_ids);
            txt = text_ce(t, logits, desc_ids, model.vlm().vocab().pad_id);
        }
        return total_loss_tensor(t, det, std::make_optional(bce), std::make_optional(dice), txt,
                                 weights, stage)
            .value();
    };

    auto params = model.params();
    for (auto& p : params) {
        const bool frozen = p.group == ParamGroup::encoder;
        p.tensor.set_requires_grad(!frozen);
        p.tensor.zero_grad();
    }

    // Analytic pass.
    {
        Tape t;
        FullForwardOptions opts;
        opts.force_mask = true;
        SidaOutput out = model.full_forward(t, image, prompt, opts);
        Tensor det = ce_det(t, out.det_logits, static_cast<int>(Label::tampered));
        Tensor bce = bce_mask(t, *out.mask, gt_mask);
        Tensor dice = dice_mask(t, *out.mask, gt_mask);
        std::optional<Tensor> txt;
        if (stage == 2) {
            Tensor logits = model.description_logits(t, image, prompt, desc_ids);
            txt = text_ce(t, logits, desc_ids, model.vlm().vocab().pad_id);
        }
        Tensor total = total_loss_tensor(t, det, std::make_optional(bce), std::make_optional(dice),
                                         txt, weights, stage);
        t.backward(total);
    }

    GradCheckResult res;
    res.name = stage == 1 ? "loss.stage1.full_model" : "loss.stage2.full_model";
    constexpr int kCoordBudget = 12;
    for (auto& p : params) {
        if (p.group == ParamGroup::encoder) continue;
        std::vector<int> coords = sample_coords(p.tensor.numel(), kCoordBudget, rng);
        std::vector<double> fd = finite_diff_grad_at(loss_value, p.tensor, eps, coords);
        std::vector<double> analytic(coords.size(), 0.0);
        if (p.tensor.has_grad()) {
            for (std::size_t i = 0; i < coords.size(); ++i) analytic[i] = p.tensor.grad()[coords[i]];
        }
        res.max_rel_err = std::max(res.max_rel_err, max_rel_error(analytic, fd));
        res.coords += static_cast<int>(coords.size());
        p.tensor.zero_grad();
    }
    report.results.push_back(res);
}

}  // namespace

GradCheckReport run_gradcheck(double eps, std::uint64_t seed, bool inject_fault,
                              bool include_full_model) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckReport report;
    report.eps = eps;
    report.fault_injected = inject_fault;
    Rng rng(seed);

    auto add = [&](const std::string& name, const OpBuilder& build, std::vector<Tensor> inputs) {
        report.results.push_back(check_op(name, build, std::move(inputs), eps, rng));
    };

    auto randn = [&](Shape s) { return Tensor::randn(s, rng); };
    auto uniform_in = [&](Shape s, double lo, double hi) {
        std::vector<double> v(shape_numel(s));
        for (auto& x : v) x = rng.uniform(lo, hi);
        return Tensor::from(s, std::move(v));
    };

    add("op.add", [](Tape& t, auto& in) { return t.add(in[0], in[1]); }, {randn({3, 4}), randn({3, 4})});
    add("op.add_scalar_operand", [](Tape& t, auto& in) { return t.add(in[0], in[1]); },
        {randn({3, 4}), randn({1})});
    add("op.sub", [](Tape& t, auto& in) { return t.sub(in[0], in[1]); }, {randn({3, 4}), randn({3, 4})});
    add("op.mul", [](Tape& t, auto& in) { return t.mul(in[0], in[1]); }, {randn({3, 4}), randn({3, 4})});
    add("op.div", [](Tape& t, auto& in) { return t.div(in[0], in[1]); },
        {randn({3, 3}), uniform_in({3, 3}, 0.5, 2.0)});
    add("op.scale", [](Tape& t, auto& in) { return t.scale(in[0], -1.7); }, {randn({2, 5})});
    add("op.add_scalar", [](Tape& t, auto& in) { return t.add_scalar(in[0], 0.37); }, {randn({7})});
    add("op.add_rowvec", [](Tape& t, auto& in) { return t.add_rowvec(in[0], in[1]); },
        {randn({4, 3}), randn({3})});
    add("op.matmul", [](Tape& t, auto& in) { return t.matmul(in[0], in[1]); },
        {randn({3, 3}), randn({3, 3})});
    add("op.transpose", [](Tape& t, auto& in) { return t.transpose(in[0]); }, {randn({3, 5})});
    add("op.reshape", [](Tape& t, auto& in) { return t.reshape(in[0], {6, 2}); }, {randn({3, 4})});
    add("op.softmax", [](Tape& t, auto& in) { return t.softmax(in[0], 1); }, {randn({4, 5})});
    add("op.softmax_axis0", [](Tape& t, auto& in) { return t.softmax(in[0], 0); }, {randn({4, 5})});
    add("op.log_softmax", [](Tape& t, auto& in) { return t.log_softmax(in[0], 1); }, {randn({4, 5})});
    add("op.sigmoid", [](Tape& t, auto& in) { return t.sigmoid(in[0]); }, {randn({3, 4})});
    add("op.gelu", [](Tape& t, auto& in) { return t.gelu(in[0]); }, {randn({3, 4})});
    add("op.log", [](Tape& t, auto& in) { return t.log(in[0]); }, {uniform_in({3, 4}, 0.2, 3.0)});
    add("op.clamp", [](Tape& t, auto& in) { return t.clamp(in[0], 0.1, 0.9); },
        {uniform_in({4, 4}, 0.3, 0.7)});
    add("op.layernorm", [](Tape& t, auto& in) { return t.layernorm(in[0], in[1], in[2]); },
        {randn({4, 6}), uniform_in({6}, 0.5, 1.5), randn({6})});
    add("op.mean", [](Tape& t, auto& in) { return t.mean(in[0]); }, {randn({3, 4})});
    add("op.sum", [](Tape& t, auto& in) { return t.sum(in[0]); }, {randn({3, 4})});
    add("op.embedding_lookup",
        [](Tape& t, auto& in) { return t.embedding_lookup(in[0], {2, 0, 2}); }, {randn({4, 3})});
    add("op.take_per_row", [](Tape& t, auto& in) { return t.take_per_row(in[0], {1, 0, 2}); },
        {randn({3, 4})});
    add("op.slice_cols", [](Tape& t, auto& in) { return t.slice_cols(in[0], 1, 2); }, {randn({3, 5})});
    add("op.concat_rows", [](Tape& t, auto& in) { return t.concat_rows(in[0], in[1]); },
        {randn({2, 3}), randn({4, 3})});
    add("op.concat_cols", [](Tape& t, auto& in) { return t.concat_cols(in[0], in[1]); },
        {randn({3, 2}), randn({3, 4})});

    // Loss terms.
    add("loss.ce_det", [](Tape& t, auto& in) { return ce_det(t, in[0], 2); }, {randn({3})});
    {
        Tensor gt = uniform_in({5, 5}, 0.0, 1.0);
        for (auto& v : gt.values()) v = v < 0.4 ? 1.0 : 0.0;
        add("loss.bce_mask", [gt](Tape& t, auto& in) { return bce_mask(t, in[0], gt); },
            {uniform_in({5, 5}, 0.05, 0.95)});
        add("loss.dice_mask", [gt](Tape& t, auto& in) { return dice_mask(t, in[0], gt); },
            {uniform_in({5, 5}, 0.05, 0.95)});
    }
    add("loss.text_ce",
        [](Tape& t, auto& in) { return text_ce(t, in[0], {1, 3, 0, 2}, 9); }, {randn({4, 5})});

    if (include_full_model) {
        check_full_model(report, eps, rng, 1);
        check_full_model(report, eps, rng, 2);
    }

    if (inject_fault && !report.results.empty()) {
        report.results.front().max_rel_err += 1.0;
    }
    for (const auto& r : report.results) report.worst = std::max(report.worst, r.max_rel_err);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace sida
