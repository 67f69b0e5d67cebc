#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sida/vlm.hpp"

namespace sida {

enum class Label { real = 0, synthetic = 1, tampered = 2 };

const char* label_name(Label l);
Label label_from_name(const std::string& name);

enum class FusionMode { attention, fc, none };

FusionMode fusion_mode_from_name(const std::string& name);
const char* fusion_mode_name(FusionMode m);

// Question the model is asked; <DET> and <SEG> are appended so the heads
// read from fixed slots.
inline constexpr const char* kDefaultPrompt =
    "Can you identify if this image is real, fully synthetic, or tampered? "
    "Please mask the tampered object/part if it is tampered.<DET><SEG>";

struct SidaConfig {
    VlmConfig vlm;
    int d_feat = 0;  // 0 -> d_model
    FusionMode fusion_mode = FusionMode::attention;
    // Number of trailing text hidden states used as fusion key/value.
    // 1 = the <SEG> state alone (the literal reading).
    int seg_sequence_len = 1;
    std::string upsample = "bilinear";  // or "nearest"
    std::string prompt = kDefaultPrompt;

    int feat_dim() const { return d_feat > 0 ? d_feat : vlm.d_model; }
    void validate() const;
};

// Which optimizer group a parameter belongs to. The encoder group is never
// trainable; stage 2 narrows training to the vlm (or vlm_lora) group.
enum class ParamGroup { vlm, vlm_lora, det_head, fusion, decoder, encoder };

struct GroupedParam {
    std::string name;
    Tensor tensor;
    ParamGroup group;
};

struct SidaOutput {
    Tensor det_logits;  // [3]
    Label label = Label::real;
    std::optional<Tensor> mask;                // [h x w] probabilities
    std::optional<Tensor> description_logits;  // [text_len x vocab]
};

struct FullForwardOptions {
    bool force_mask = false;
    bool want_description = false;
    ForwardOptions fwd;
};

class SidaModel {
public:
    SidaModel(SidaConfig cfg, Rng& rng);

    const SidaConfig& config() const { return cfg_; }
    ToyVlm& vlm() { return vlm_; }
    const ToyVlm& vlm() const { return vlm_; }

    // Class logits from the <DET> hidden state ([1 x d] or [d]); returns [3].
    Tensor detect(Tape& t, const Tensor& h_det) const;

    // Predicted label: argmax with lowest-index tie-break.
    static Label predict_label(const Tensor& det_logits);

    // seg_states: [k x d] trailing text hidden states, last row = <SEG>.
    // Attention mode: query = F(h_det), key/value = seg_states, output
    // projected and added to the <SEG> state. fc replaces the attention with
    // a two-layer perceptron on concat(F(h_det), h_seg); none is the
    // identity on h_seg. Returns [1 x d].
    Tensor fuse(Tape& t, const Tensor& h_det, const Tensor& seg_states) const;

    // Frozen patch features, [g^2 x d_feat]. Never updated by training.
    Tensor encode_image(Tape& t, const ImageF& image) const;

    // Query-grid dot products -> [g x g] logits -> upsample -> sigmoid.
    // Returns an [h x w] probability map.
    Tensor decode_mask(Tape& t, const Tensor& h_seg_fused, const Tensor& feats) const;

    // Full gated pass: detection always; mask only when the predicted label
    // is tampered or force_mask is set.
    SidaOutput full_forward(Tape& t, const ImageF& image, const PromptEncoding& prompt,
                            const FullForwardOptions& opts = {}) const;

    // Teacher-forced description logits: rows align so row i scores
    // desc_ids[i]. Sequence is prompt tokens followed by desc_ids.
    Tensor description_logits(Tape& t, const ImageF& image, const PromptEncoding& prompt,
                              const std::vector<int>& desc_ids,
                              const ForwardOptions& opts = {}) const;

    PromptEncoding encode_default_prompt() const;

    std::vector<GroupedParam> params();

private:
    SidaConfig cfg_;
    ToyVlm vlm_;

    // Detection head: d -> d -> 3 with gelu.
    Linear det1_, det2_;

    // Fusion block.
    Linear fuse_proj_;                       // F
    Linear fuse_q_, fuse_k_, fuse_v_, fuse_o_;  // attention mode
    Linear fuse_fc1_, fuse_fc2_;             // fc mode

    // Frozen image encoder.
    Linear enc_proj_;
    Tensor enc_pos_;  // [g^2 x d_feat]

    // Mask decoder.
    Linear dec_query_;
    Tensor dec_patch_scale_;  // [g^2]
    Tensor upsample_;         // [h*w x g^2] constant interpolation weights

    Tensor seg_key_value_states(Tape& t, const HiddenStates& h, const PromptEncoding& prompt) const;
};

// Interpolation weights mapping a [g x g] grid to [out_h x out_w];
// mode is "bilinear" or "nearest".
Tensor make_upsample_weights(int grid, int out_h, int out_w, const std::string& mode);

}  // namespace sida
