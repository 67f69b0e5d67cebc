#include "sida/model.hpp"

#include <cmath>
#include <stdexcept>

namespace sida {

const char* label_name(Label l) {
    switch (l) {
        case Label::real: return "real";
        case Label::synthetic: return "synthetic";
        case Label::tampered: return "tampered";
    }
    throw std::invalid_argument("bad label");
}

Label label_from_name(const std::string& name) {
    if (name == "real") return Label::real;
    if (name == "synthetic") return Label::synthetic;
    if (name == "tampered") return Label::tampered;
    throw std::invalid_argument("unknown label '" + name + "'");
}

FusionMode fusion_mode_from_name(const std::string& name) {
    if (name == "attention") return FusionMode::attention;
    if (name == "fc") return FusionMode::fc;
    if (name == "none") return FusionMode::none;
    throw std::invalid_argument("unknown fusion mode '" + name + "'");
}

const char* fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::attention: return "attention";
        case FusionMode::fc: return "fc";
        case FusionMode::none: return "none";
    }
    throw std::invalid_argument("bad fusion mode");
}

void SidaConfig::validate() const {
    vlm.validate();
    if (seg_sequence_len < 1) throw std::invalid_argument("seg_sequence_len must be >= 1");
    if (upsample != "bilinear" && upsample != "nearest") {
        throw std::invalid_argument("upsample must be bilinear or nearest");
    }
    if (d_feat < 0) throw std::invalid_argument("d_feat must be >= 0");
}

// ---------------------------------------------------------------------------

Tensor make_upsample_weights(int grid, int out_h, int out_w, const std::string& mode) {
    const int cells = grid * grid;
    std::vector<double> w(static_cast<std::size_t>(out_h) * out_w * cells, 0.0);
    const double sy = static_cast<double>(grid) / out_h;
    const double sx = static_cast<double>(grid) / out_w;
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const std::size_t row = (static_cast<std::size_t>(y) * out_w + x) * cells;
            if (mode == "nearest") {
                int gy = std::min(grid - 1, static_cast<int>((y + 0.5) * sy));
                int gx = std::min(grid - 1, static_cast<int>((x + 0.5) * sx));
                w[row + static_cast<std::size_t>(gy) * grid + gx] = 1.0;
                continue;
            }
            // Half-pixel-centered bilinear, clamped at the border.
            double fy = (y + 0.5) * sy - 0.5;
            double fx = (x + 0.5) * sx - 0.5;
            fy = std::min(std::max(fy, 0.0), static_cast<double>(grid - 1));
            fx = std::min(std::max(fx, 0.0), static_cast<double>(grid - 1));
            int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            int y1 = std::min(y0 + 1, grid - 1), x1 = std::min(x0 + 1, grid - 1);
            double wy = fy - y0, wx = fx - x0;
            w[row + static_cast<std::size_t>(y0) * grid + x0] += (1 - wy) * (1 - wx);
            w[row + static_cast<std::size_t>(y0) * grid + x1] += (1 - wy) * wx;
            w[row + static_cast<std::size_t>(y1) * grid + x0] += wy * (1 - wx);
            w[row + static_cast<std::size_t>(y1) * grid + x1] += wy * wx;
        }
    }
    return Tensor::from({out_h * out_w, cells}, std::move(w));
}

namespace {

Linear frozen_linear(int in, int out, Rng& rng, double scale) {
    Linear l;
    l.w = Tensor::randn({in, out}, rng, scale, false);
    l.b = Tensor::zeros({out}, false);
    return l;
}

Linear trainable_linear(int in, int out, Rng& rng, double scale) {
    Linear l;
    l.w = Tensor::randn({in, out}, rng, scale, true);
    l.b = Tensor::zeros({out}, true);
    return l;
}

}  // namespace

SidaModel::SidaModel(SidaConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)), vlm_(cfg_.vlm, Vocabulary{}, rng) {
    cfg_.validate();
    const int d = cfg_.vlm.d_model;
    const int df = cfg_.feat_dim();
    const int g = cfg_.vlm.patches_per_side();
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));

    det1_ = trainable_linear(d, d, rng, ws);
    det2_ = trainable_linear(d, 3, rng, ws);

    fuse_proj_ = trainable_linear(d, d, rng, ws);
    fuse_q_ = trainable_linear(d, d, rng, ws);
    fuse_k_ = trainable_linear(d, d, rng, ws);
    fuse_v_ = trainable_linear(d, d, rng, ws);
    fuse_o_ = trainable_linear(d, d, rng, ws);
    fuse_fc1_ = trainable_linear(2 * d, d, rng, 1.0 / std::sqrt(2.0 * d));
    fuse_fc2_ = trainable_linear(d, d, rng, ws);

    const int pd = cfg_.vlm.patch_size * cfg_.vlm.patch_size * 3;
    enc_proj_ = frozen_linear(pd, df, rng, 1.0 / std::sqrt(static_cast<double>(pd)));
    enc_pos_ = Tensor::randn({g * g, df}, rng, 0.01, false);

    dec_query_ = trainable_linear(d, df, rng, ws);
    dec_patch_scale_ = Tensor::full({g * g}, 1.0, true);
    upsample_ = make_upsample_weights(g, cfg_.vlm.image_size, cfg_.vlm.image_size, cfg_.upsample);
}

Tensor SidaModel::detect(Tape& t, const Tensor& h_det) const {
    const int d = cfg_.vlm.d_model;
    if (h_det.numel() != d) {
        throw ShapeError("detect: expected " + std::to_string(d) + " features, got " +
                         shape_str(h_det.shape()));
    }
    Tensor x = h_det.ndim() == 2 ? h_det : t.reshape(h_det, {1, d});
    Tensor h = t.gelu(t.add_rowvec(t.matmul(x, det1_.w), det1_.b));
    Tensor logits = t.add_rowvec(t.matmul(h, det2_.w), det2_.b);
    return t.reshape(logits, {3});
}

Label SidaModel::predict_label(const Tensor& det_logits) {
    if (det_logits.numel() != 3) {
        throw ShapeError("predict_label: need 3 logits, got " + shape_str(det_logits.shape()));
    }
    int best = 0;
    for (int i = 1; i < 3; ++i) {
        if (det_logits.at(i) > det_logits.at(best)) best = i;
    }
    return static_cast<Label>(best);
}

Tensor SidaModel::fuse(Tape& t, const Tensor& h_det, const Tensor& seg_states) const {
    const int d = cfg_.vlm.d_model;
    if (h_det.numel() != d) {
        throw ShapeError("fuse: h_det width " + shape_str(h_det.shape()) + " != " + std::to_string(d));
    }
    if (seg_states.ndim() != 2 || seg_states.cols() != d) {
        throw ShapeError("fuse: seg states " + shape_str(seg_states.shape()));
    }
    const int k = seg_states.rows();
    Tensor h_seg = t.embedding_lookup(seg_states, {k - 1});  // the <SEG> state, [1 x d]
    if (cfg_.fusion_mode == FusionMode::none) return h_seg;

    Tensor hd = h_det.ndim() == 2 ? h_det : t.reshape(h_det, {1, d});
    Tensor q_in = t.add_rowvec(t.matmul(hd, fuse_proj_.w), fuse_proj_.b);  // F(h_det)

    if (cfg_.fusion_mode == FusionMode::fc) {
        Tensor cat = t.concat_cols(q_in, h_seg);
        Tensor h = t.gelu(t.add_rowvec(t.matmul(cat, fuse_fc1_.w), fuse_fc1_.b));
        Tensor out = t.add_rowvec(t.matmul(h, fuse_fc2_.w), fuse_fc2_.b);
        return t.add(out, h_seg);
    }

    // Single-layer multihead attention: query from the detection state,
    // key/value from the seg states, residual onto the <SEG> state.
    const int heads = cfg_.vlm.n_heads;
    const int dh = d / heads;
    Tensor q = t.add_rowvec(t.matmul(q_in, fuse_q_.w), fuse_q_.b);
    Tensor ks = t.add_rowvec(t.matmul(seg_states, fuse_k_.w), fuse_k_.b);
    Tensor vs = t.add_rowvec(t.matmul(seg_states, fuse_v_.w), fuse_v_.b);
    Tensor ctx;
    for (int h = 0; h < heads; ++h) {
        Tensor qh = t.slice_cols(q, h * dh, dh);
        Tensor kh = t.slice_cols(ks, h * dh, dh);
        Tensor vh = t.slice_cols(vs, h * dh, dh);
        Tensor scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        Tensor attn = t.softmax(scores, 1);
        Tensor ctx_h = t.matmul(attn, vh);
        ctx = h == 0 ? ctx_h : t.concat_cols(ctx, ctx_h);
    }
    Tensor out = t.add_rowvec(t.matmul(ctx, fuse_o_.w), fuse_o_.b);
    return t.add(out, h_seg);
}

Tensor SidaModel::encode_image(Tape& t, const ImageF& image) const {
    if (image.height != cfg_.vlm.image_size || image.width != cfg_.vlm.image_size) {
        throw ShapeError("encode_image: image " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " but config wants " +
                         std::to_string(cfg_.vlm.image_size));
    }
    const int p = cfg_.vlm.patch_size;
    const int side = cfg_.vlm.patches_per_side();
    const int pd = p * p * 3;
    std::vector<double> flat(static_cast<std::size_t>(side) * side * pd);
    for (int gy = 0; gy < side; ++gy) {
        for (int gx = 0; gx < side; ++gx) {
            std::size_t kk = (static_cast<std::size_t>(gy) * side + gx) * pd;
            for (int y = 0; y < p; ++y) {
                for (int x = 0; x < p; ++x) {
                    for (int c = 0; c < 3; ++c) flat[kk++] = image.at(gy * p + y, gx * p + x, c);
                }
            }
        }
    }
    Tensor patches = Tensor::from({side * side, pd}, std::move(flat));
    Tensor proj = t.add_rowvec(t.matmul(patches, enc_proj_.w), enc_proj_.b);
    return t.add(proj, enc_pos_);
}

Tensor SidaModel::decode_mask(Tape& t, const Tensor& h_seg_fused, const Tensor& feats) const {
    const int d = cfg_.vlm.d_model;
    const int df = cfg_.feat_dim();
    const int g = cfg_.vlm.patches_per_side();
    if (h_seg_fused.numel() != d) {
        throw ShapeError("decode_mask: query " + shape_str(h_seg_fused.shape()));
    }
    if (feats.ndim() != 2 || feats.rows() != g * g || feats.cols() != df) {
        throw ShapeError("decode_mask: features " + shape_str(feats.shape()) + ", want [" +
                         std::to_string(g * g) + "x" + std::to_string(df) + "]");
    }
    Tensor hs = h_seg_fused.ndim() == 2 ? h_seg_fused : t.reshape(h_seg_fused, {1, d});
    Tensor q = t.add_rowvec(t.matmul(hs, dec_query_.w), dec_query_.b);  // [1 x df]
    Tensor logits = t.scale(t.matmul(feats, t.transpose(q)), 1.0 / std::sqrt(static_cast<double>(df)));
    logits = t.mul(logits, t.reshape(dec_patch_scale_, {g * g, 1}));
    Tensor up = t.matmul(upsample_, logits);  // [h*w x 1]
    const int hw = cfg_.vlm.image_size;
    return t.sigmoid(t.reshape(up, {hw, hw}));
}

Tensor SidaModel::seg_key_value_states(Tape& t, const HiddenStates& h,
                                       const PromptEncoding& prompt) const {
    const int k = std::min(cfg_.seg_sequence_len, prompt.text_len());
    std::vector<int> rows(k);
    for (int i = 0; i < k; ++i) rows[i] = prompt.seg_pos - (k - 1) + i;
    if (rows.front() < prompt.n_patches) {
        throw ShapeError("seg_sequence_len reaches into the patch prefix");
    }
    return t.embedding_lookup(h.h_hid, rows);
}

SidaOutput SidaModel::full_forward(Tape& t, const ImageF& image, const PromptEncoding& prompt,
                                   const FullForwardOptions& opts) const {
    HiddenStates h = vlm_.forward(t, image, prompt, opts.fwd);
    Tensor h_det = vlm_.extract_hidden(t, h, prompt.det_pos);
    SidaOutput out;
    out.det_logits = detect(t, h_det);
    out.label = predict_label(out.det_logits);
    if (out.label == Label::tampered || opts.force_mask) {
        Tensor seg_states = seg_key_value_states(t, h, prompt);
        Tensor fused = fuse(t, h_det, seg_states);
        Tensor feats = encode_image(t, image);
        out.mask = decode_mask(t, fused, feats);
    }
    if (opts.want_description) {
        std::vector<int> rows(prompt.text_len());
        for (int i = 0; i < prompt.text_len(); ++i) rows[i] = prompt.n_patches + i;
        out.description_logits = t.embedding_lookup(h.text_logits, rows);
    }
    return out;
}

Tensor SidaModel::description_logits(Tape& t, const ImageF& image, const PromptEncoding& prompt,
                                     const std::vector<int>& desc_ids,
                                     const ForwardOptions& opts) const {
    if (desc_ids.empty()) throw std::invalid_argument("description_logits: empty description");
    PromptEncoding ext = prompt;
    ext.token_ids.insert(ext.token_ids.end(), desc_ids.begin(), desc_ids.end());
    HiddenStates h = vlm_.forward(t, image, ext, opts);
    // Row for desc token i is the position immediately before it.
    const int base = prompt.n_patches + prompt.text_len();
    std::vector<int> rows(desc_ids.size());
    for (std::size_t i = 0; i < desc_ids.size(); ++i) rows[i] = base + static_cast<int>(i) - 1;
    return t.embedding_lookup(h.text_logits, rows);
}

PromptEncoding SidaModel::encode_default_prompt() const {
    return encode_prompt(vlm_.vocab(), cfg_.prompt, cfg_.vlm.n_patches());
}

std::vector<GroupedParam> SidaModel::params() {
    std::vector<GroupedParam> out;
    for (auto& p : vlm_.params()) out.push_back({p.name, p.tensor, ParamGroup::vlm});
    for (auto& p : vlm_.lora_params()) out.push_back({p.name, p.tensor, ParamGroup::vlm_lora});
    auto push = [&out](const std::string& name, Tensor tns, ParamGroup g) {
        out.push_back({name, std::move(tns), g});
    };
    push("det_head.fc1.w", det1_.w, ParamGroup::det_head);
    push("det_head.fc1.b", det1_.b, ParamGroup::det_head);
    push("det_head.fc2.w", det2_.w, ParamGroup::det_head);
    push("det_head.fc2.b", det2_.b, ParamGroup::det_head);
    push("fusion.proj.w", fuse_proj_.w, ParamGroup::fusion);
    push("fusion.proj.b", fuse_proj_.b, ParamGroup::fusion);
    push("fusion.wq.w", fuse_q_.w, ParamGroup::fusion);
    push("fusion.wq.b", fuse_q_.b, ParamGroup::fusion);
    push("fusion.wk.w", fuse_k_.w, ParamGroup::fusion);
    push("fusion.wk.b", fuse_k_.b, ParamGroup::fusion);
    push("fusion.wv.w", fuse_v_.w, ParamGroup::fusion);
    push("fusion.wv.b", fuse_v_.b, ParamGroup::fusion);
    push("fusion.wo.w", fuse_o_.w, ParamGroup::fusion);
    push("fusion.wo.b", fuse_o_.b, ParamGroup::fusion);
    push("fusion.fc1.w", fuse_fc1_.w, ParamGroup::fusion);
    push("fusion.fc1.b", fuse_fc1_.b, ParamGroup::fusion);
    push("fusion.fc2.w", fuse_fc2_.w, ParamGroup::fusion);
    push("fusion.fc2.b", fuse_fc2_.b, ParamGroup::fusion);
    push("encoder.proj.w", enc_proj_.w, ParamGroup::encoder);
    push("encoder.proj.b", enc_proj_.b, ParamGroup::encoder);
    push("encoder.pos", enc_pos_, ParamGroup::encoder);
    push("decoder.query.w", dec_query_.w, ParamGroup::decoder);
    push("decoder.query.b", dec_query_.b, ParamGroup::decoder);
    push("decoder.patch_scale", dec_patch_scale_, ParamGroup::decoder);
    return out;
}

}  // namespace sida
