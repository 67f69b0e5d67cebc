#include "sida/vlm.hpp"

#include <cmath>
#include <stdexcept>

namespace sida {

void Vocabulary::validate() const {
    if (base_size != 256) throw std::invalid_argument("vocabulary base_size must be 256");
    int ids[] = {pad_id, bos_id, det_id, seg_id};
    for (int i = 0; i < 4; ++i) {
        if (ids[i] < base_size) throw std::invalid_argument("special token id below base_size");
        for (int j = i + 1; j < 4; ++j) {
            if (ids[i] == ids[j]) throw std::invalid_argument("special token ids must be distinct");
        }
    }
}

void VlmConfig::validate() const {
    if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || d_ff <= 0) {
        throw std::invalid_argument("vlm config: non-positive dimension");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("vlm config: d_model must be divisible by n_heads");
    }
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
        throw std::invalid_argument("vlm config: image_size must be a multiple of patch_size");
    }
    if (max_seq_len < n_patches() + 4) {
        throw std::invalid_argument("vlm config: max_seq_len too small for the patch prefix");
    }
}

// ---------------------------------------------------------------------------
// Tokenizer

std::vector<int> tokenize(const Vocabulary& v, const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) {
        if (text.compare(i, 5, "<DET>") == 0) {
            ids.push_back(v.det_id);
            i += 5;
        } else if (text.compare(i, 5, "<SEG>") == 0) {
            ids.push_back(v.seg_id);
            i += 5;
        } else {
            ids.push_back(static_cast<unsigned char>(text[i]));
            ++i;
        }
    }
    return ids;
}

std::string detokenize(const Vocabulary& v, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        if (id == v.det_id) {
            out += "<DET>";
        } else if (id == v.seg_id) {
            out += "<SEG>";
        } else if (id == v.bos_id || id == v.pad_id) {
            // control tokens render as nothing
        } else if (id >= 0 && id < v.base_size) {
            out.push_back(static_cast<char>(id));
        } else {
            throw std::invalid_argument("detokenize: unknown token id " + std::to_string(id));
        }
    }
    return out;
}

PromptEncoding encode_prompt(const Vocabulary& v, const std::string& text, int n_patches) {
    PromptEncoding enc;
    enc.n_patches = n_patches;
    enc.token_ids.push_back(v.bos_id);
    auto body = tokenize(v, text);
    enc.token_ids.insert(enc.token_ids.end(), body.begin(), body.end());
    int det_count = 0, seg_count = 0;
    for (std::size_t i = 0; i < enc.token_ids.size(); ++i) {
        if (enc.token_ids[i] == v.det_id) {
            ++det_count;
            enc.det_pos = n_patches + static_cast<int>(i);
        }
        if (enc.token_ids[i] == v.seg_id) {
            ++seg_count;
            enc.seg_pos = n_patches + static_cast<int>(i);
        }
    }
    if (det_count != 1 || seg_count != 1) {
        throw std::invalid_argument("prompt must contain exactly one <DET> and one <SEG>, got " +
                                    std::to_string(det_count) + "/" + std::to_string(seg_count));
    }
    if (enc.det_pos >= enc.seg_pos) {
        throw std::invalid_argument("prompt must place <DET> before <SEG>");
    }
    return enc;
}

// ---------------------------------------------------------------------------
// Linear / LoRA

Tensor linear_forward(Tape& t, const Linear& lin, const Tensor& x, const ForwardOptions& opts) {
    Tensor y = t.add_rowvec(t.matmul(x, lin.w), lin.b);
    if (lin.lora) {
        const LoraAdapter& ad = *lin.lora;
        Tensor in = x;
        if (opts.train_mode && ad.dropout > 0.0 && opts.dropout_rng != nullptr) {
            const double keep = 1.0 - ad.dropout;
            std::vector<double> m(static_cast<std::size_t>(x.numel()));
            for (auto& mv : m) mv = opts.dropout_rng->uniform() < ad.dropout ? 0.0 : 1.0 / keep;
            in = t.mul(x, Tensor::from(x.shape(), std::move(m)));
        }
        Tensor low = t.matmul(in, t.transpose(ad.a));    // [m x r]
        Tensor up = t.matmul(low, t.transpose(ad.b));    // [m x out]
        y = t.add(y, t.scale(up, ad.alpha / ad.rank));
    }
    return y;
}

Tensor lora_effective_weight(const Linear& lin) {
    if (!lin.lora) return lin.w.clone();
    const LoraAdapter& ad = *lin.lora;
    const int r = ad.rank;
    const int in = lin.w.rows(), out = lin.w.cols();
    if (ad.a.rows() != r || ad.a.cols() != in || ad.b.rows() != out || ad.b.cols() != r) {
        throw ShapeError("lora adapter ranks do not match weight " + shape_str(lin.w.shape()));
    }
    Tensor eff = lin.w.clone();
    const double s = ad.alpha / r;
    // w_eff[i][o] += s * sum_k b[o][k] * a[k][i]
    for (int i = 0; i < in; ++i) {
        for (int o = 0; o < out; ++o) {
            double acc = 0.0;
            for (int k = 0; k < r; ++k) acc += ad.b.at(o, k) * ad.a.at(k, i);
            eff.at(i, o) += s * acc;
        }
    }
    return eff;
}

void lora_merge(Linear& lin) {
    if (!lin.lora) return;
    Tensor eff = lora_effective_weight(lin);
    lin.w.values() = eff.values();
    lin.lora.reset();
}

// ---------------------------------------------------------------------------
// ToyVlm

namespace {

Linear make_linear(int in, int out, Rng& rng, double scale) {
    Linear l;
    l.w = Tensor::randn({in, out}, rng, scale, true);
    l.b = Tensor::zeros({out}, true);
    return l;
}

}  // namespace

ToyVlm::ToyVlm(VlmConfig cfg, Vocabulary vocab, Rng& rng) : cfg_(cfg), vocab_(vocab) {
    cfg_.validate();
    vocab_.validate();
    const int d = cfg_.d_model;
    const double emb_scale = 0.02;
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(d));
    token_emb_ = Tensor::randn({vocab_.size(), d}, rng, emb_scale, true);
    pos_emb_ = Tensor::randn({cfg_.max_seq_len, d}, rng, emb_scale, true);
    patch_proj_ = make_linear(cfg_.patch_size * cfg_.patch_size * 3, d, rng,
                              1.0 / std::sqrt(static_cast<double>(cfg_.patch_size * cfg_.patch_size * 3)));
    layers_.resize(cfg_.n_layers);
    for (auto& layer : layers_) {
        layer.ln1_g = Tensor::full({d}, 1.0, true);
        layer.ln1_b = Tensor::zeros({d}, true);
        layer.wq = make_linear(d, d, rng, w_scale);
        layer.wk = make_linear(d, d, rng, w_scale);
        layer.wv = make_linear(d, d, rng, w_scale);
        layer.wo = make_linear(d, d, rng, w_scale);
        layer.ln2_g = Tensor::full({d}, 1.0, true);
        layer.ln2_b = Tensor::zeros({d}, true);
        layer.mlp1 = make_linear(d, cfg_.d_ff, rng, w_scale);
        layer.mlp2 = make_linear(cfg_.d_ff, d, rng, 1.0 / std::sqrt(static_cast<double>(cfg_.d_ff)));
    }
    lm_head_ = make_linear(d, vocab_.size(), rng, w_scale);
}

Tensor ToyVlm::embed_image_patches(Tape& t, const ImageF& image) const {
    if (image.height != cfg_.image_size || image.width != cfg_.image_size) {
        throw ShapeError("embed_image_patches: image " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " but config wants " +
                         std::to_string(cfg_.image_size));
    }
    const int p = cfg_.patch_size;
    const int side = cfg_.patches_per_side();
    const int np = cfg_.n_patches();
    const int pd = p * p * 3;
    std::vector<double> flat(static_cast<std::size_t>(np) * pd);
    for (int gy = 0; gy < side; ++gy) {
        for (int gx = 0; gx < side; ++gx) {
            const int patch = gy * side + gx;
            std::size_t k = static_cast<std::size_t>(patch) * pd;
            for (int y = 0; y < p; ++y) {
                for (int x = 0; x < p; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        flat[k++] = image.at(gy * p + y, gx * p + x, c);
                    }
                }
            }
        }
    }
    Tensor patches = Tensor::from({np, pd}, std::move(flat));
    Tensor proj = t.add_rowvec(t.matmul(patches, patch_proj_.w), patch_proj_.b);
    std::vector<int> pos_ids(np);
    for (int i = 0; i < np; ++i) pos_ids[i] = i;
    return t.add(proj, t.embedding_lookup(pos_emb_, pos_ids));
}

Tensor ToyVlm::attention_mask(int n_patches, int n_text) const {
    const int s = n_patches + n_text;
    std::vector<double> m(static_cast<std::size_t>(s) * s, -1e9);
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
            const bool allowed = i < n_patches ? (j < n_patches) : (j <= i);
            if (allowed) m[static_cast<std::size_t>(i) * s + j] = 0.0;
        }
    }
    return Tensor::from({s, s}, std::move(m));
}

Tensor ToyVlm::attention(Tape& t, const Tensor& x, const TransformerLayer& layer,
                         const Tensor& mask, const ForwardOptions& opts) const {
    const int dh = cfg_.d_model / cfg_.n_heads;
    Tensor q = linear_forward(t, layer.wq, x, opts);
    Tensor k = linear_forward(t, layer.wk, x, opts);
    Tensor v = linear_forward(t, layer.wv, x, opts);
    Tensor ctx;
    for (int h = 0; h < cfg_.n_heads; ++h) {
        Tensor qh = t.slice_cols(q, h * dh, dh);
        Tensor kh = t.slice_cols(k, h * dh, dh);
        Tensor vh = t.slice_cols(v, h * dh, dh);
        Tensor scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        Tensor attn = t.softmax(t.add(scores, mask), 1);
        Tensor ctx_h = t.matmul(attn, vh);
        ctx = h == 0 ? ctx_h : t.concat_cols(ctx, ctx_h);
    }
    return linear_forward(t, layer.wo, ctx, opts);
}

HiddenStates ToyVlm::forward(Tape& t, const ImageF& image, const PromptEncoding& prompt,
                             const ForwardOptions& opts) const {
    const int np = cfg_.n_patches();
    if (prompt.n_patches != np) {
        throw ShapeError("prompt encoded for " + std::to_string(prompt.n_patches) +
                         " patches, model has " + std::to_string(np));
    }
    const int nt = prompt.text_len();
    if (np + nt > cfg_.max_seq_len) {
        throw ShapeError("sequence length " + std::to_string(np + nt) + " exceeds max_seq_len " +
                         std::to_string(cfg_.max_seq_len));
    }
    Tensor patch_emb = embed_image_patches(t, image);
    std::vector<int> pos_ids(nt);
    for (int i = 0; i < nt; ++i) pos_ids[i] = np + i;
    Tensor text_emb = t.add(t.embedding_lookup(token_emb_, prompt.token_ids),
                            t.embedding_lookup(pos_emb_, pos_ids));
    Tensor x = t.concat_rows(patch_emb, text_emb);
    Tensor mask = attention_mask(np, nt);
    for (const auto& layer : layers_) {
        Tensor h = t.layernorm(x, layer.ln1_g, layer.ln1_b);
        x = t.add(x, attention(t, h, layer, mask, opts));
        Tensor h2 = t.layernorm(x, layer.ln2_g, layer.ln2_b);
        Tensor mlp = linear_forward(t, layer.mlp2, t.gelu(linear_forward(t, layer.mlp1, h2, opts)), opts);
        x = t.add(x, mlp);
    }
    HiddenStates out;
    out.h_hid = x;
    out.text_logits = linear_forward(t, lm_head_, x, opts);
    out.n_patches = np;
    return out;
}

Tensor ToyVlm::extract_hidden(Tape& t, const HiddenStates& h, int pos) const {
    if (pos < 0 || pos >= h.h_hid.rows()) {
        throw ShapeError("extract_hidden: position " + std::to_string(pos) +
                         " out of range for seq len " + std::to_string(h.h_hid.rows()));
    }
    return t.embedding_lookup(h.h_hid, {pos});
}

std::vector<NamedParam> ToyVlm::params() {
    std::vector<NamedParam> out;
    out.push_back({"vlm.token_emb", token_emb_});
    out.push_back({"vlm.pos_emb", pos_emb_});
    out.push_back({"vlm.patch_proj.w", patch_proj_.w});
    out.push_back({"vlm.patch_proj.b", patch_proj_.b});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        const std::string p = "vlm.layer" + std::to_string(i) + ".";
        out.push_back({p + "ln1_g", l.ln1_g});
        out.push_back({p + "ln1_b", l.ln1_b});
        out.push_back({p + "wq.w", l.wq.w});
        out.push_back({p + "wq.b", l.wq.b});
        out.push_back({p + "wk.w", l.wk.w});
        out.push_back({p + "wk.b", l.wk.b});
        out.push_back({p + "wv.w", l.wv.w});
        out.push_back({p + "wv.b", l.wv.b});
        out.push_back({p + "wo.w", l.wo.w});
        out.push_back({p + "wo.b", l.wo.b});
        out.push_back({p + "ln2_g", l.ln2_g});
        out.push_back({p + "ln2_b", l.ln2_b});
        out.push_back({p + "mlp1.w", l.mlp1.w});
        out.push_back({p + "mlp1.b", l.mlp1.b});
        out.push_back({p + "mlp2.w", l.mlp2.w});
        out.push_back({p + "mlp2.b", l.mlp2.b});
    }
    out.push_back({"vlm.lm_head.w", lm_head_.w});
    out.push_back({"vlm.lm_head.b", lm_head_.b});
    return out;
}

std::vector<NamedParam> ToyVlm::lora_params() {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        const std::string p = "vlm.layer" + std::to_string(i) + ".";
        Linear* lins[] = {&l.wq, &l.wk, &l.wv, &l.wo};
        const char* names[] = {"wq", "wk", "wv", "wo"};
        for (int j = 0; j < 4; ++j) {
            if (lins[j]->lora) {
                out.push_back({p + names[j] + ".lora_a", lins[j]->lora->a});
                out.push_back({p + names[j] + ".lora_b", lins[j]->lora->b});
            }
        }
    }
    return out;
}

void ToyVlm::attach_lora(int rank, double alpha, double dropout, Rng& rng) {
    if (rank <= 0) throw std::invalid_argument("lora rank must be positive");
    for (auto& l : layers_) {
        for (Linear* lin : {&l.wq, &l.wk, &l.wv, &l.wo}) {
            LoraAdapter ad;
            ad.rank = rank;
            ad.alpha = alpha;
            ad.dropout = dropout;
            ad.a = Tensor::randn({rank, lin->w.rows()}, rng, 0.01, true);
            ad.b = Tensor::zeros({lin->w.cols(), rank}, true);
            lin->lora = std::move(ad);
        }
    }
}

void ToyVlm::merge_lora() {
    for (auto& l : layers_) {
        for (Linear* lin : {&l.wq, &l.wk, &l.wv, &l.wo}) lora_merge(*lin);
    }
}

void ToyVlm::remove_lora() {
    for (auto& l : layers_) {
        for (Linear* lin : {&l.wq, &l.wk, &l.wv, &l.wo}) lin->lora.reset();
    }
}

bool ToyVlm::has_lora() const {
    return !layers_.empty() && layers_[0].wq.lora.has_value();
}

}  // namespace sida
