#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sida/losses.hpp"
#include "sida/model.hpp"

namespace sida {

// One in-memory dataset record as the trainer and evaluator consume it.
struct Sample {
    std::string id;
    ImageF image;
    Label label = Label::real;
    std::optional<Tensor> mask;  // [h x w] of {0,1}; required when tampered
    std::optional<std::string> description;
};

struct LoraConfig {
    int rank = 4;
    double alpha = 16.0;
    double dropout = 0.05;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 2;
    int grad_accum_steps = 10;
    int max_steps_stage1 = 500;
    int max_steps_stage2 = 100;
    LossWeights weights;
    std::uint64_t seed = 0;
    std::optional<LoraConfig> lora;
    bool reset_optimizer_between_stages = false;

    void validate() const;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction, no weight decay. State is keyed by parameter
// name so it survives checkpoint round-trips.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(std::vector<GroupedParam>& params);
    void reset() { slots_.clear(); step_count_ = 0; }

    long step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

    struct Slot {
        std::vector<double> m, v;
    };
    const std::map<std::string, Slot>& slots() const { return slots_; }
    std::map<std::string, Slot>& slots() { return slots_; }
    void set_step_count(long n) { step_count_ = n; }

private:
    AdamConfig cfg_;
    std::map<std::string, Slot> slots_;
    long step_count_ = 0;
};

// Two-stage trainer. Stage 1 optimizes detection + mask losses with the
// image encoder frozen; stage 2 adds the text term and narrows training to
// the vlm parameter group (adapters only, when LoRA is configured).
class Trainer {
public:
    Trainer(SidaModel& model, TrainConfig cfg);

    // Configures parameter groups for the stage; attaches adapters on first
    // use when the config asks for them.
    void set_stage(int stage);

    // One micro-batch: forward with force_mask on tampered samples, loss,
    // backward with gradients scaled by 1/grad_accum_steps; the optimizer
    // fires every grad_accum_steps micro-steps.
    LossBreakdown train_step(const std::vector<Sample>& micro_batch, int stage);

    // Runs max_steps for the stage over seeded-shuffled batches; returns one
    // LossBreakdown per step.
    std::vector<LossBreakdown> run_stage(const std::vector<Sample>& data, int stage);

    Adam& optimizer() { return adam_; }
    const std::vector<GroupedParam>& trainable() const { return trainable_; }
    const TrainConfig& config() const { return cfg_; }

private:
    SidaModel& model_;
    TrainConfig cfg_;
    Adam adam_;
    std::vector<GroupedParam> trainable_;
    int micro_count_ = 0;
    int stage_ = 0;
    Rng dropout_rng_;
};

// Versioned binary checkpoint: named parameter arrays, optimizer state and
// the config hash. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, SidaModel& model, const Adam* opt,
                     std::uint64_t config_hash);
void load_checkpoint(const std::string& path, SidaModel& model, Adam* opt,
                     std::uint64_t* config_hash = nullptr);

struct CheckpointSummary {
    std::uint32_t version = 0;
    std::uint64_t config_hash = 0;
    std::vector<std::pair<std::string, Shape>> params;
    bool has_optimizer = false;
    long optimizer_steps = 0;
};
CheckpointSummary inspect_checkpoint(const std::string& path);

}  // namespace sida
