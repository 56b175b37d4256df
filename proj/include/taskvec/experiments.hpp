#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "taskvec/eval.hpp"
#include "taskvec/sweep.hpp"
#include "taskvec/synth.hpp"
#include "taskvec/train.hpp"

namespace taskvec {

// Shared experiment setup: one architecture, one pre-training recipe (all
// tensors trainable) and one fine-tuning recipe (classification head frozen
// so per-task skill lands in the trunk, where vector arithmetic composes).
struct LabConfig {
    MlpSpec arch;
    TrainConfig pretrain;
    TrainConfig finetune;
    std::uint64_t seed = 17;
    int threads = 1; // fan-out cap for independent training units

    void validate() const;
};

LabConfig default_lab();

// A pre-trained base plus per-task fine-tunes and their task vectors.
struct TaskBank {
    MlpSpec arch;
    Dataset control;
    Checkpoint base;
    double base_control_val = 0.0;
    double base_control_test = 0.0;
    std::vector<Dataset> tasks;
    std::vector<Checkpoint> finetuned;
    std::vector<TaskVector> vectors;
    std::vector<double> ft_val_acc;
    std::vector<double> ft_test_acc;
};

// broad_pretrain = false pre-trains on the control task only (the base knows
// nothing about the bank tasks); true mixes the bank tasks' train splits
// into pre-training so the base starts with target skill worth erasing.
TaskBank build_bank(const LabConfig& lab, int num_tasks, bool broad_pretrain);

struct ReportRow {
    std::string desc;
    std::map<std::string, double> per_task_acc;
    std::map<std::string, double> normalized_acc;
    std::vector<double> coeffs;
    std::map<std::string, double> baselines;
    bool warning = false;
};

struct PlotPoint {
    std::string series;
    double x = 0.0;
    double y = 0.0;
};

struct EvalReport {
    std::string experiment_id;
    std::string config_digest;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> notes;
    std::vector<ReportRow> rows;
    std::vector<PlotPoint> plot;

    const ReportRow& row(const std::string& desc) const;
    bool has_row(const std::string& desc) const;

    std::string to_json_string() const;
    void write_json(const std::filesystem::path& path) const;
    // Long format: row,desc,field,key,value.
    void write_csv(const std::filesystem::path& path) const;
    // series,x,y triples for the figure analogs.
    void write_plot_csv(const std::filesystem::path& path) const;
};

// ---- the experiment suites ------------------------------------------------

struct ForgettingOptions {
    int num_targets = 4;
    CoeffGrid grid = CoeffGrid::fine();
    double retain = 0.95;
};

// Five-method comparison on each target task: pretrained, finetuned,
// gradient ascent, random matched vector, negated task vector. The base is
// pre-trained on a control + targets mixture so there is target skill to
// remove; control accuracy (validation split) is the retention metric.
EvalReport run_forgetting(const LabConfig& lab, const ForgettingOptions& opt);

enum class SubsetMode { pairs, all_subsets };

struct AdditionOptions {
    int num_tasks = 8;
    SubsetMode mode = SubsetMode::pairs;
    bool joint_baseline = false;
    CoeffGrid grid = CoeffGrid::fine();
};

// For every subset of the bank, sweep one shared coefficient on the mean of
// the subset tasks' validation accuracies, then report test accuracy on all
// bank tasks, normalized per task by its own fine-tuned model.
EvalReport run_addition(const LabConfig& lab, const AdditionOptions& opt);

struct AnalogyOptions {
    std::vector<int> fewshot_budgets = {1, 2, 4};
    CoeffGrid grid = CoeffGrid::coarse();
    bool sweep_three_row = false;
    TrainConfig fewshot; // defaulted by default_analogy_options()
};

AnalogyOptions default_analogy_options();

// One held-out cell of the 2x2 content x style grid: build
// tau_C + tau_B - tau_A from the other three cells, sweep the shared
// coefficient on the held-out cell's validation split, report zero-shot and
// few-shot accuracy from both the edited and the pre-trained start.
EvalReport run_analogy_grid(const LabConfig& lab, int heldout_cell,
                            const AnalogyOptions& opt,
                            std::uint64_t train_seed);

// All four held-out cells x the given training seeds, plus mean rows.
EvalReport run_analogy_suite(const LabConfig& lab, const AnalogyOptions& opt,
                             const std::vector<std::uint64_t>& train_seeds);

struct DomainOptions {
    CoeffGrid sup_grid = CoeffGrid::coarse();
    CoeffGrid unsup_grid = CoeffGrid::coarse();
};

// Auxiliary-domain supervision plus unsupervised (reconstruction) vectors
// from both domains; two independent coefficients swept on the target
// validation split. Rows: pretrained, aux_finetune, edited, target_finetune.
EvalReport run_domain_generalization(const LabConfig& lab,
                                     const DomainOptions& opt);

struct EnsembleOptions {
    int num_tasks = 8; // all C(n,2) pairs are used
};

// Weight averaging vs logit ensembling at 0.5, evaluated per pair on the
// union of both tasks' test splits; reports the Pearson correlation.
EvalReport run_ensemble_study(const LabConfig& lab,
                              const EnsembleOptions& opt);

struct CosimOptions {
    int num_tasks = 8;
    int same_task_reps = 3; // tasks re-fine-tuned with a second seed
};

// Cosine matrix over the bank plus same-task/different-seed cosines.
EvalReport run_cosine_structure(const LabConfig& lab,
                                const CosimOptions& opt);

struct TrajectoryOptions {
    std::int64_t snapshot_every = 25;
};

// Cosine of each snapshot's diff-from-start against the final task vector.
EvalReport run_trajectory(const LabConfig& lab, const TrajectoryOptions& opt);

struct LrSeedOptions {
    std::vector<double> lrs = {3e-4, 1e-3, 3e-3, 1e-2};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    CoeffGrid grid = CoeffGrid::fine();
};

// Two-task addition quality as a function of the fine-tuning learning rate,
// and its spread over a Cartesian grid of fine-tuning seed pairs.
EvalReport run_lr_seed_study(const LabConfig& lab, const LrSeedOptions& opt);

} // namespace taskvec
