#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "taskvec/mlp.hpp"
#include "taskvec/synth.hpp"

namespace taskvec {

enum class Objective { cross_entropy, negated_cross_entropy, reconstruction };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct TrainConfig {
    std::int64_t steps = 500;
    std::int64_t batch_size = 32;
    double peak_lr = 1e-2;
    std::int64_t warmup_steps = 50;
    double weight_decay = 1e-4;
    Objective objective = Objective::cross_entropy;
    std::uint64_t seed = 0;
    std::int64_t snapshot_every = 0; // 0 = record only the final step
    std::vector<std::string> freeze; // exact tensor names, never updated

    void validate() const;
};

// Linear warmup to peak_lr over warmup_steps, then cosine decay to ~0 at the
// last step: steps < warmup get peak * (step+1)/warmup, the rest get
// peak * 0.5 * (1 + cos(pi * (step - warmup) / (steps - warmup))).
// Throws ConfigError outside [0, cfg.steps).
double lr_at(std::int64_t step, const TrainConfig& cfg);

// Per-parameter loss gradients, keyed like the model's TensorMap. Tensors
// the objective never touches (e.g. the classification head under the
// reconstruction loss) are present with zero entries.
using GradMap = std::map<std::string, std::vector<double>>;

struct Batch {
    const float* x = nullptr;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    const std::int32_t* labels = nullptr;  // classification objectives
    const float* recon_targets = nullptr;  // defaults to x when null
};

struct LossGrads {
    double loss = 0.0;
    GradMap grads;
};

// Mean loss over the batch plus gradients, all math in double.
//   cross_entropy          mean softmax cross entropy over labels
//   negated_cross_entropy  exactly the negation (loss and every gradient)
//   reconstruction         mean squared error of the reconstruction head
//                          against recon_targets, averaged over batch * dim
LossGrads loss_and_grads(const Checkpoint& model, const MlpSpec& spec,
                         const Batch& batch, Objective objective);

struct Snapshot {
    std::int64_t step = 0; // number of update steps applied
    Checkpoint ckpt;
};

struct FineTuneResult {
    Checkpoint final;
    std::vector<Snapshot> snapshots;
    std::vector<double> loss_history;
};

// AdamW (beta1 0.9, beta2 0.999, eps 1e-8, decoupled weight decay, bias
// correction) over the dataset's train split. Batches come from a seeded
// permutation that is reshuffled each epoch; a batch may straddle the
// reshuffle boundary. Frozen tensors are never touched. Deterministic:
// same start, data, and config give bit-identical results.
FineTuneResult fine_tune(const Checkpoint& start, const MlpSpec& spec,
                         const Dataset& data, const TrainConfig& cfg);

} // namespace taskvec
