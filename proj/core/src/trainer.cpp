#include "sida/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace sida {

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
    if (grad_accum_steps < 1) throw std::invalid_argument("grad_accum_steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    weights.validate();
    if (lora && lora->rank <= 0) throw std::invalid_argument("lora rank must be > 0");
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(std::vector<GroupedParam>& params) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        auto& slot = slots_[p.name];
        const auto& g = p.tensor.grad();
        auto& val = p.tensor.values();
        if (slot.m.empty()) {
            slot.m.assign(val.size(), 0.0);
            slot.v.assign(val.size(), 0.0);
        }
        if (slot.m.size() != val.size()) {
            throw std::runtime_error("optimizer state shape mismatch for " + p.name);
        }
        for (std::size_t i = 0; i < val.size(); ++i) {
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(SidaModel& model, TrainConfig cfg)
    : model_(model),
      cfg_(std::move(cfg)),
      adam_(AdamConfig{cfg_.learning_rate, 0.9, 0.999, 1e-8}),
      dropout_rng_(Rng(cfg_.seed).fork(0xD709)) {
    cfg_.validate();
}

void Trainer::set_stage(int stage) {
    if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
    if (cfg_.lora && !model_.vlm().has_lora()) {
        Rng lora_rng = Rng(cfg_.seed).fork(0x10AA);
        model_.vlm().attach_lora(cfg_.lora->rank, cfg_.lora->alpha, cfg_.lora->dropout, lora_rng);
    }
    if (stage == 2 && stage_ == 1 && cfg_.reset_optimizer_between_stages) adam_.reset();
    stage_ = stage;
    micro_count_ = 0;
    auto all = model_.params();
    trainable_.clear();
    const bool lora_active = cfg_.lora.has_value();
    for (auto& p : all) {
        bool train = false;
        switch (p.group) {
            case ParamGroup::encoder:
                train = false;  // frozen always
                break;
            case ParamGroup::vlm:
                train = !lora_active;  // base weights freeze under adapters
                break;
            case ParamGroup::vlm_lora:
                train = true;
                break;
            case ParamGroup::det_head:
            case ParamGroup::fusion:
            case ParamGroup::decoder:
                train = stage == 1;
                break;
        }
        p.tensor.set_requires_grad(train);
        p.tensor.zero_grad();
        if (train) trainable_.push_back(p);
    }
}

LossBreakdown Trainer::train_step(const std::vector<Sample>& micro_batch, int stage) {
    if (stage != stage_) set_stage(stage);
    if (micro_batch.empty()) throw std::invalid_argument("train_step: empty micro-batch");

    Tape tape;
    ForwardOptions fwd;
    fwd.train_mode = true;
    fwd.dropout_rng = &dropout_rng_;

    Tensor det_sum;
    Tensor bce_sum, dice_sum;
    Tensor txt_sum;
    int n_tampered = 0, n_txt = 0;
    PromptEncoding prompt = model_.encode_default_prompt();

    for (const auto& s : micro_batch) {
        FullForwardOptions opts;
        opts.force_mask = s.label == Label::tampered;
        opts.fwd = fwd;
        SidaOutput out = model_.full_forward(tape, s.image, prompt, opts);
        Tensor d = ce_det(tape, out.det_logits, static_cast<int>(s.label));
        det_sum = det_sum.defined() ? tape.add(det_sum, d) : d;
        if (s.label == Label::tampered) {
            if (!s.mask) throw std::runtime_error("tampered sample '" + s.id + "' has no mask");
            Tensor b = bce_mask(tape, *out.mask, *s.mask);
            Tensor dc = dice_mask(tape, *out.mask, *s.mask);
            bce_sum = bce_sum.defined() ? tape.add(bce_sum, b) : b;
            dice_sum = dice_sum.defined() ? tape.add(dice_sum, dc) : dc;
            ++n_tampered;
        }
        if (stage == 2) {
            if (!s.description) {
                throw std::runtime_error("stage-2 sample '" + s.id + "' has no description");
            }
            std::vector<int> desc_ids = tokenize(model_.vlm().vocab(), *s.description);
            Tensor logits = model_.description_logits(tape, s.image, prompt, desc_ids, fwd);
            Tensor tc = text_ce(tape, logits, desc_ids, model_.vlm().vocab().pad_id);
            txt_sum = txt_sum.defined() ? tape.add(txt_sum, tc) : tc;
            ++n_txt;
        }
    }

    Tensor det = tape.scale(det_sum, 1.0 / micro_batch.size());
    std::optional<Tensor> bce, dice, txt;
    if (n_tampered > 0) {
        bce = tape.scale(bce_sum, 1.0 / n_tampered);
        dice = tape.scale(dice_sum, 1.0 / n_tampered);
    }
    if (stage == 2) txt = tape.scale(txt_sum, 1.0 / n_txt);

    Tensor total = total_loss_tensor(tape, det, bce, dice, txt, cfg_.weights, stage);
    Tensor scaled = tape.scale(total, 1.0 / cfg_.grad_accum_steps);
    tape.backward(scaled);

    ++micro_count_;
    if (micro_count_ % cfg_.grad_accum_steps == 0) {
        adam_.step(trainable_);
        for (auto& p : trainable_) p.tensor.zero_grad();
    }

    LossParts parts;
    parts.det = det.value();
    if (bce) {
        parts.bce = bce->value();
        parts.dice = dice->value();
    }
    if (txt) parts.txt = txt->value();
    return total_loss(parts, cfg_.weights, stage);
}

std::vector<LossBreakdown> Trainer::run_stage(const std::vector<Sample>& data, int stage) {
    std::vector<const Sample*> pool;
    for (const auto& s : data) {
        if (stage == 2 && !s.description) continue;
        pool.push_back(&s);
    }
    if (pool.empty()) {
        throw std::invalid_argument(stage == 2 ? "run_stage: no description-bearing samples"
                                               : "run_stage: empty dataset");
    }
    set_stage(stage);
    const int max_steps = stage == 1 ? cfg_.max_steps_stage1 : cfg_.max_steps_stage2;
    std::vector<LossBreakdown> log;
    log.reserve(max_steps);

    std::vector<int> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();  // trigger shuffle on first use
    std::uint64_t epoch = 0;

    for (int step = 0; step < max_steps; ++step) {
        std::vector<Sample> batch;
        batch.reserve(cfg_.batch_size);
        while (static_cast<int>(batch.size()) < cfg_.batch_size) {
            if (cursor >= order.size()) {
                Rng shuffle_rng = Rng(cfg_.seed).fork(0x5AFE0000ULL + (static_cast<std::uint64_t>(stage) << 32) + epoch);
                for (std::size_t i = order.size(); i > 1; --i) {
                    std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<int>(i))]);
                }
                cursor = 0;
                ++epoch;
            }
            batch.push_back(*pool[order[cursor++]]);
        }
        log.push_back(train_step(batch, stage));
    }
    return log;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'I', 'D', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
    auto n = read_pod<std::uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
    write_pod(out, static_cast<std::uint64_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::ifstream& in) {
    auto n = read_pod<std::uint64_t>(in);
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated data");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, SidaModel& model, const Adam* opt,
                     std::uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kMagic, 8);
    write_pod(out, kVersion);
    write_pod(out, config_hash);
    auto params = model.params();
    write_pod(out, static_cast<std::uint32_t>(params.size()));
    for (auto& p : params) {
        write_string(out, p.name);
        write_pod(out, static_cast<std::uint32_t>(p.tensor.shape().size()));
        for (int e : p.tensor.shape()) write_pod(out, static_cast<std::int32_t>(e));
        write_doubles(out, p.tensor.values());
    }
    write_pod(out, static_cast<std::uint8_t>(opt != nullptr));
    if (opt) {
        write_pod(out, static_cast<std::int64_t>(opt->step_count()));
        write_pod(out, static_cast<std::uint32_t>(opt->slots().size()));
        for (const auto& [name, slot] : opt->slots()) {
            write_string(out, name);
            write_doubles(out, slot.m);
            write_doubles(out, slot.v);
        }
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

void load_checkpoint(const std::string& path, SidaModel& model, Adam* opt,
                     std::uint64_t* config_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error(path + ": not a checkpoint file");
    }
    auto version = read_pod<std::uint32_t>(in);
    if (version != kVersion) {
        throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    auto hash = read_pod<std::uint64_t>(in);
    if (config_hash) *config_hash = hash;
    auto n = read_pod<std::uint32_t>(in);
    auto params = model.params();
    std::map<std::string, Tensor> by_name;
    for (auto& p : params) by_name.emplace(p.name, p.tensor);
    std::size_t matched = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(in);
        auto ndim = read_pod<std::uint32_t>(in);
        Shape shape(ndim);
        for (auto& e : shape) e = read_pod<std::int32_t>(in);
        auto data = read_doubles(in);
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw std::runtime_error(path + ": checkpoint parameter '" + name +
                                     "' not present in model");
        }
        if (it->second.shape() != shape) {
            throw std::runtime_error(path + ": shape mismatch for '" + name + "': checkpoint " +
                                     shape_str(shape) + " vs model " + shape_str(it->second.shape()));
        }
        it->second.values() = std::move(data);
        ++matched;
    }
    if (matched != by_name.size()) {
        throw std::runtime_error(path + ": checkpoint covers " + std::to_string(matched) + " of " +
                                 std::to_string(by_name.size()) + " model parameters");
    }
    auto has_opt = read_pod<std::uint8_t>(in);
    if (has_opt && opt) {
        opt->set_step_count(static_cast<long>(read_pod<std::int64_t>(in)));
        auto n_slots = read_pod<std::uint32_t>(in);
        opt->slots().clear();
        for (std::uint32_t i = 0; i < n_slots; ++i) {
            std::string name = read_string(in);
            Adam::Slot slot;
            slot.m = read_doubles(in);
            slot.v = read_doubles(in);
            opt->slots().emplace(std::move(name), std::move(slot));
        }
    }
}

CheckpointSummary inspect_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error(path + ": not a checkpoint file");
    }
    CheckpointSummary s;
    s.version = read_pod<std::uint32_t>(in);
    s.config_hash = read_pod<std::uint64_t>(in);
    auto n = read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(in);
        auto ndim = read_pod<std::uint32_t>(in);
        Shape shape(ndim);
        for (auto& e : shape) e = read_pod<std::int32_t>(in);
        auto count = read_pod<std::uint64_t>(in);
        in.seekg(static_cast<std::streamoff>(count * sizeof(double)), std::ios::cur);
        s.params.emplace_back(std::move(name), std::move(shape));
    }
    auto has_opt = read_pod<std::uint8_t>(in);
    s.has_optimizer = has_opt != 0;
    if (s.has_optimizer) s.optimizer_steps = static_cast<long>(read_pod<std::int64_t>(in));
    return s;
}

}  // namespace sida
