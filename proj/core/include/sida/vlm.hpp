#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sida/image.hpp"
#include "sida/rng.hpp"
#include "sida/tensor.hpp"

namespace sida {

// Byte-level vocabulary (ids 0..255) extended with control tokens and the
// <DET> / <SEG> markers the heads read from.
struct Vocabulary {
    int base_size = 256;
    int pad_id = 256;
    int bos_id = 257;
    int det_id = 258;
    int seg_id = 259;

    int size() const { return base_size + 4; }
    void validate() const;
};

struct VlmConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int image_size = 64;
    int patch_size = 8;
    int max_seq_len = 256;

    int patches_per_side() const { return image_size / patch_size; }
    int n_patches() const { return patches_per_side() * patches_per_side(); }
    void validate() const;
};

// Text token ids plus the positions of <DET> and <SEG> within the full
// patch-prefix + text sequence. Construction enforces exactly one of each,
// with <DET> preceding <SEG>.
struct PromptEncoding {
    std::vector<int> token_ids;
    int det_pos = -1;
    int seg_pos = -1;
    int n_patches = 0;

    int text_len() const { return static_cast<int>(token_ids.size()); }
    int seq_len() const { return n_patches + text_len(); }
};

// Byte-level encoding; the literal markers "<DET>" and "<SEG>" map to their
// special ids. Total on any UTF-8 input.
std::vector<int> tokenize(const Vocabulary& v, const std::string& text);
std::string detokenize(const Vocabulary& v, const std::vector<int>& ids);

// Prepends BOS and validates the DET/SEG placement.
PromptEncoding encode_prompt(const Vocabulary& v, const std::string& text, int n_patches);

struct HiddenStates {
    Tensor h_hid;        // [seq x d_model], last layer
    Tensor text_logits;  // [seq x vocab]
    int n_patches = 0;
};

// Low-rank adapter on a linear layer: w_eff = w + (alpha/r) * (b . a)^T
// with a: [r x in], b: [out x r], b zero-initialized.
struct LoraAdapter {
    Tensor a;
    Tensor b;
    double alpha = 16.0;
    int rank = 0;
    double dropout = 0.0;
};

struct Linear {
    Tensor w;  // [in x out]
    Tensor b;  // [out]
    std::optional<LoraAdapter> lora;
};

struct ForwardOptions {
    bool train_mode = false;  // enables adapter dropout
    Rng* dropout_rng = nullptr;
};

// x: [m x in] -> [m x out]; applies the adapter path when present.
Tensor linear_forward(Tape& t, const Linear& lin, const Tensor& x, const ForwardOptions& opts = {});

// Effective weight with the adapter folded in (pure function, no mutation).
Tensor lora_effective_weight(const Linear& lin);
// Folds the adapter into w and removes it.
void lora_merge(Linear& lin);

struct TransformerLayer {
    Tensor ln1_g, ln1_b;
    Linear wq, wk, wv, wo;
    Tensor ln2_g, ln2_b;
    Linear mlp1, mlp2;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Decoder-only multimodal transformer: image patches are projected and
// prefixed to the byte-token sequence; patches attend bidirectionally among
// themselves, text attends causally to everything earlier. The last hidden
// layer is exposed so the <DET>/<SEG> states can be read out.
class ToyVlm {
public:
    ToyVlm(VlmConfig cfg, Vocabulary vocab, Rng& rng);

    const VlmConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }

    // [n_patches x d_model]: per-patch linear projection plus positional rows.
    Tensor embed_image_patches(Tape& t, const ImageF& image) const;

    HiddenStates forward(Tape& t, const ImageF& image, const PromptEncoding& prompt,
                         const ForwardOptions& opts = {}) const;

    // Row `pos` of h_hid as [1 x d_model]; pure read, gradients flow back.
    Tensor extract_hidden(Tape& t, const HiddenStates& h, int pos) const;

    std::vector<NamedParam> params();             // base weights
    std::vector<NamedParam> lora_params();        // adapter weights (if attached)
    void attach_lora(int rank, double alpha, double dropout, Rng& rng);
    void merge_lora();
    void remove_lora();
    bool has_lora() const;

private:
    VlmConfig cfg_;
    Vocabulary vocab_;
    Tensor token_emb_;  // [vocab x d]
    Tensor pos_emb_;    // [max_seq x d]
    Linear patch_proj_;
    std::vector<TransformerLayer> layers_;
    Linear lm_head_;

    Tensor attention(Tape& t, const Tensor& x, const TransformerLayer& layer, const Tensor& mask,
                     const ForwardOptions& opts) const;
    Tensor attention_mask(int n_patches, int n_text) const;
};

}  // namespace sida
